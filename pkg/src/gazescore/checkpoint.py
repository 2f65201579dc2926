"""Versioned text container for named parameter arrays.

Format (one file, UTF-8):

    gazescore-checkpoint 1
    param <name> <dtype> <ndim> <dim0> <dim1> ...
    <value> <value> ... (row-major, %.17g, possibly wrapped over lines)
    param <name> ...
    ...

%.17g round-trips float64 exactly, so save followed by load is bit-exact.
Parameter names must not contain whitespace.
"""

from __future__ import annotations

import numpy as np

FORMAT_NAME = "gazescore-checkpoint"
FORMAT_VERSION = 1
_VALUES_PER_LINE = 8


class CheckpointError(ValueError):
    """Raised when a checkpoint file is malformed or version-incompatible."""


def save_checkpoint(path, named_arrays):
    """Write a mapping of name -> numpy array to ``path``.

    Accepts any mapping; iteration order is preserved in the file.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{FORMAT_NAME} {FORMAT_VERSION}\n")
        for name, arr in named_arrays.items():
            arr = np.asarray(arr)
            if any(ch.isspace() for ch in name):
                raise CheckpointError(f"parameter name contains whitespace: {name!r}")
            dims = " ".join(str(d) for d in arr.shape)
            fh.write(f"param {name} {arr.dtype.name} {arr.ndim} {dims}".rstrip() + "\n")
            flat = arr.reshape(-1)
            for start in range(0, flat.size, _VALUES_PER_LINE):
                chunk = flat[start:start + _VALUES_PER_LINE]
                fh.write(" ".join(f"{v:.17g}" for v in chunk) + "\n")


def load_checkpoint(path):
    """Read a checkpoint file back into a dict of name -> numpy array."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != FORMAT_NAME:
            raise CheckpointError(f"{path}: not a {FORMAT_NAME} file")
        if int(header[1]) != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported version {header[1]}, expected {FORMAT_VERSION}")
        arrays = {}
        name = None
        dtype = None
        shape = None
        values = []
        expected = 0

        def finish():
            if name is None:
                return
            if len(values) != expected:
                raise CheckpointError(
                    f"{path}: parameter {name!r} has {len(values)} values, expected {expected}")
            arrays[name] = np.array(values, dtype=dtype).reshape(shape)

        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("param "):
                finish()
                fields = line.split()
                if len(fields) < 4:
                    raise CheckpointError(f"{path}: malformed parameter header: {line!r}")
                name = fields[1]
                dtype = np.dtype(fields[2])
                ndim = int(fields[3])
                dims = [int(d) for d in fields[4:]]
                if len(dims) != ndim:
                    raise CheckpointError(f"{path}: dimension count mismatch in: {line!r}")
                shape = tuple(dims)
                expected = int(np.prod(shape)) if shape else 1
                values = []
                if name in arrays:
                    raise CheckpointError(f"{path}: duplicate parameter {name!r}")
            else:
                if name is None:
                    raise CheckpointError(f"{path}: values before any parameter header")
                values.extend(float(v) for v in line.split())
        finish()
    return arrays
