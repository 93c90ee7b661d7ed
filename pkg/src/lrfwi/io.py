"""JFM1 binary matrix format and CSV sidecars.

Layout (little-endian):

====== ======================================================
offset content
====== ======================================================
0      8-byte magic ``JFIFMAT1``
8      u64 rows
16     u64 cols
24     u8 dtype: 0 = float64, 1 = complex float64 (re, im interleaved)
25     payload, row-major
====== ======================================================
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import BadSpecError

MAGIC = b"JFIFMAT1"
DTYPE_F64 = 0
DTYPE_C128 = 1
_HEADER = struct.Struct("<8sQQB")


def write_matrix(path, a) -> None:
    """Write a 2-D real or complex matrix as JFM1."""
    a = np.asarray(a)
    if a.ndim != 2:
        raise BadSpecError(f"JFM1 stores 2-D matrices, got ndim={a.ndim}")
    if np.iscomplexobj(a):
        code = DTYPE_C128
        payload = np.ascontiguousarray(a, dtype="<c16")
    else:
        code = DTYPE_F64
        payload = np.ascontiguousarray(a, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, a.shape[0], a.shape[1], code))
        fh.write(payload.tobytes(order="C"))


def read_matrix(path) -> np.ndarray:
    """Read a JFM1 file back into a numpy matrix."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise BadSpecError(f"{path}: truncated JFM1 header")
    magic, rows, cols, code = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadSpecError(f"{path}: bad magic {magic!r}")
    if code == DTYPE_F64:
        dtype, itemsize = "<f8", 8
    elif code == DTYPE_C128:
        dtype, itemsize = "<c16", 16
    else:
        raise BadSpecError(f"{path}: unknown dtype code {code}")
    expected = rows * cols * itemsize
    payload = raw[_HEADER.size:]
    if len(payload) != expected:
        raise BadSpecError(
            f"{path}: payload has {len(payload)} bytes, expected {expected}"
        )
    a = np.frombuffer(payload, dtype=dtype).reshape(rows, cols)
    return a.astype(np.float64 if code == DTYPE_F64 else np.complex128)


def write_mask(path, mask) -> None:
    """Store a boolean mask as a 0/1 float JFM1 matrix."""
    write_matrix(path, np.asarray(mask, dtype=np.float64))


def read_mask(path) -> np.ndarray:
    return read_matrix(path) != 0


def write_survey_csv(path, src_idx, rcv_idx) -> None:
    """CSV sidecar with the source and receiver grid indices."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["role", "index"])
        for i in np.asarray(src_idx).ravel():
            writer.writerow(["src", int(i)])
        for i in np.asarray(rcv_idx).ravel():
            writer.writerow(["rcv", int(i)])


def read_survey_csv(path):
    src, rcv = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["role", "index"]:
            raise BadSpecError(f"{path}: unexpected survey header {header}")
        for role, idx in reader:
            if role == "src":
                src.append(int(idx))
            elif role == "rcv":
                rcv.append(int(idx))
            else:
                raise BadSpecError(f"{path}: unknown role {role!r}")
    return np.array(src, dtype=int), np.array(rcv, dtype=int)
