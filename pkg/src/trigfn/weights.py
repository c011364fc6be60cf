"""Plain-text weight files.

Layout::

    # trigfn-weights v1
    meta <key> <value ...>
    tensor <name> <rows> <cols>
    <cols values>            (one line per row, %.17g)

Values are written with 17 significant digits, so a load after a save
returns bit-identical float64 arrays.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

MAGIC = "# trigfn-weights v1"


class WeightFileError(ValueError):
    pass


def save_weights(path, tensors: dict, meta: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(MAGIC + "\n")
        for key, value in (meta or {}).items():
            if isinstance(value, (list, tuple)):
                value = " ".join(str(v) for v in value)
            fh.write(f"meta {key} {value}\n")
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.ndim != 2:
                raise WeightFileError(f"tensor {name} must be 2-D, got {arr.shape}")
            fh.write(f"tensor {name} {arr.shape[0]} {arr.shape[1]}\n")
            for row in arr:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_weights(path):
    """Return ``(meta, tensors)``; meta values are raw strings."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise WeightFileError(f"{path}: not a trigfn weight file")
    meta, tensors = {}, {}
    i = 1
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            key, _, value = rest.partition(" ")
            meta[key] = value
        elif kind == "tensor":
            try:
                name, r, c = rest.split()
                rows, cols = int(r), int(c)
            except ValueError:
                raise WeightFileError(f"{path}:{i}: malformed tensor header") from None
            block = lines[i:i + rows]
            if len(block) != rows:
                raise WeightFileError(f"{path}: tensor {name} truncated")
            arr = np.array([[float(v) for v in row.split()] for row in block], dtype=np.float64).reshape(rows, cols)
            tensors[name] = arr
            i += rows
        else:
            raise WeightFileError(f"{path}:{i}: unexpected line {line!r}")
    return meta, tensors
