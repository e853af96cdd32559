"""Reader and writer for the CVF1 field file format.

Layout (all little-endian)::

    4 bytes   magic  b"CVF1"
    u32       N              ambient dimension
    u32       n_components   1 for scalars, n for vectors, n*n for matrices
    u32[N]    dims
    f64[N]    box
    payload   n_components blocks, each prod(dims) complex128 values
              (re, im pairs) in row-major (C) order

Matrix fields are stored entry by entry in row-major ``(i, j)`` order.
"""
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .grid import GridSpec, MatrixField, ScalarField, VectorField, make_grid

__all__ = ["CVFError", "MAGIC", "encode", "decode", "write_field", "read_field"]

MAGIC = b"CVF1"


class CVFError(ValueError):
    """Malformed CVF1 data."""


def encode(f) -> bytes:
    grid = f.grid
    if isinstance(f, ScalarField):
        blocks = f.values[None]
    elif isinstance(f, VectorField):
        blocks = f.components
    elif isinstance(f, MatrixField):
        blocks = f.entries.reshape(f.n * f.n, *grid.dims)
    else:
        raise TypeError(f"cannot encode {type(f).__name__}")
    header = MAGIC + struct.pack(
        f"<II{grid.N}I{grid.N}d", grid.N, blocks.shape[0], *grid.dims, *grid.box
    )
    return header + np.ascontiguousarray(blocks, dtype="<c16").tobytes()


def decode(data: bytes, kind: str = "auto"):
    """Decode CVF1 bytes.

    ``kind`` is ``"scalar"``, ``"vector"``, ``"matrix"`` or ``"auto"``; auto
    gives a scalar for one component and a vector field otherwise.
    """
    if data[:4] != MAGIC:
        raise CVFError("bad magic bytes, not a CVF1 file")
    try:
        N, ncomp = struct.unpack_from("<II", data, 4)
        off = 12
        dims = struct.unpack_from(f"<{N}I", data, off)
        off += 4 * N
        box = struct.unpack_from(f"<{N}d", data, off)
        off += 8 * N
    except struct.error as exc:
        raise CVFError(f"truncated header: {exc}") from exc
    grid = make_grid(N, dims, box)
    count = ncomp * grid.size
    payload = data[off:]
    if len(payload) != 16 * count:
        raise CVFError(f"payload has {len(payload)} bytes, expected {16 * count}")
    arr = np.frombuffer(payload, dtype="<c16").astype(np.complex128)
    arr = arr.reshape(ncomp, *grid.dims)
    if kind == "auto":
        kind = "scalar" if ncomp == 1 else "vector"
    if kind == "scalar":
        if ncomp != 1:
            raise CVFError(f"expected one component, found {ncomp}")
        return ScalarField(grid, arr[0])
    if kind == "vector":
        return VectorField(grid, arr)
    if kind == "matrix":
        n = int(round(np.sqrt(ncomp)))
        if n * n != ncomp:
            raise CVFError(f"{ncomp} components do not form a square matrix")
        return MatrixField(grid, arr.reshape(n, n, *grid.dims))
    raise ValueError(f"unknown kind {kind!r}")


def write_field(f, path, force: bool = False) -> None:
    """Write ``f`` atomically; refuses to overwrite unless ``force``."""
    path = Path(path)
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists (use force to overwrite)")
    data = encode(f)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=".cvf-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_field(path, kind: str = "auto"):
    return decode(Path(path).read_bytes(), kind=kind)
