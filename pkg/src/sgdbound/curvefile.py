"""One text format for every experiment output.

'#'-prefixed key = value header lines (including a JSON config echo), a
'# columns:' line, then comma-separated numeric rows. Floats are written
with repr(), which round-trips exactly, so re-running a config reproduces
the file byte for byte.
"""

from __future__ import annotations

import numpy as np

FORMAT_LINE = "# curvefile v1"


def _format_cell(value) -> str:
    v = float(value)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def write_curve(path, metadata, columns, rows) -> None:
    lines = [FORMAT_LINE]
    for key, value in metadata.items():
        text = str(value)
        if "\n" in text:
            raise ValueError(f"metadata value for '{key}' contains a newline")
        lines.append(f"# {key} = {text}")
    lines.append("# columns: " + ",".join(columns))
    for row in rows:
        cells = [_format_cell(v) for v in row]
        if len(cells) != len(columns):
            raise ValueError(f"row has {len(cells)} cells, expected {len(columns)}")
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_curve(path):
    """Return (metadata dict of strings, column names, float ndarray)."""
    metadata = {}
    columns = None
    rows = []
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != FORMAT_LINE:
        raise ValueError(f"{path}: not a curvefile (missing '{FORMAT_LINE}')")
    for line in lines[1:]:
        if line.startswith("# columns:"):
            columns = line[len("# columns:") :].strip().split(",")
        elif line.startswith("#"):
            key, _, value = line[1:].partition(" = ")
            metadata[key.strip()] = value
        elif line.strip():
            rows.append([float(c) for c in line.split(",")])
    if columns is None:
        raise ValueError(f"{path}: missing '# columns:' line")
    data = np.asarray(rows, dtype=float).reshape(len(rows), len(columns))
    return metadata, columns, data
