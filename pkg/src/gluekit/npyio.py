"""Activation-matrix file I/O: headerless CSV and NPY v1.0, plus label files.

The NPY support is deliberately narrow: version 1.0, little-endian float32 or
float64, C-order, 2-D arrays.  Anything else is rejected with an explicit
error rather than silently reinterpreted.
"""

from __future__ import annotations

import ast
import struct
from pathlib import Path

import numpy as np

from .model import ManifoldEnsemble, build_ensemble

__all__ = ["read_npy_matrix", "write_npy_matrix", "read_csv_matrix", "write_csv_matrix",
           "read_labels", "write_labels", "load_activations"]

_MAGIC = b"\x93NUMPY"
_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


class FormatError(ValueError):
    """Malformed or unsupported activation file."""


def read_npy_matrix(path) -> np.ndarray:
    """Read a 2-D little-endian float NPY v1.0 file."""
    raw = Path(path).read_bytes()
    if len(raw) < 10 or raw[:6] != _MAGIC:
        raise FormatError(f"{path}: not an NPY file (bad magic)")
    major, minor = raw[6], raw[7]
    if (major, minor) != (1, 0):
        raise FormatError(f"{path}: unsupported NPY version {major}.{minor}")
    (header_len,) = struct.unpack("<H", raw[8:10])
    header_end = 10 + header_len
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated header")
    try:
        header = ast.literal_eval(raw[10:header_end].decode("latin1").strip())
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"{path}: malformed header: {exc}") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise FormatError(f"{path}: malformed header dict")
    if header["fortran_order"]:
        raise FormatError(f"{path}: fortran_order layout is not supported")
    descr = header["descr"]
    if descr not in _DTYPES:
        raise FormatError(f"{path}: unsupported dtype {descr!r} (need <f4 or <f8)")
    shape = header["shape"]
    if not (isinstance(shape, tuple) and len(shape) == 2):
        raise FormatError(f"{path}: need a 2-D array, got shape {shape}")
    dtype = _DTYPES[descr]
    expected = int(shape[0]) * int(shape[1]) * dtype.itemsize
    data = raw[header_end:]
    if len(data) != expected:
        raise FormatError(f"{path}: payload is {len(data)} bytes, expected {expected}")
    return np.frombuffer(data, dtype=dtype).reshape(shape).copy()


def write_npy_matrix(path, array) -> None:
    """Write a 2-D float array as NPY v1.0 (little-endian, C-order)."""
    arr = np.ascontiguousarray(array)
    if arr.ndim != 2:
        raise FormatError(f"can only write 2-D arrays, got ndim={arr.ndim}")
    if arr.dtype == np.float32:
        descr = "<f4"
    elif arr.dtype == np.float64:
        descr = "<f8"
    else:
        arr = arr.astype(np.float64)
        descr = "<f8"
    header = f"{{'descr': '{descr}', 'fortran_order': False, 'shape': {arr.shape!r}, }}"
    # pad so that data start is 64-byte aligned, header ends with newline
    pad = 64 - (10 + len(header) + 1) % 64
    header = header + " " * pad + "\n"
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(bytes([1, 0]))
        fh.write(struct.pack("<H", len(header)))
        fh.write(header.encode("latin1"))
        fh.write(arr.tobytes(order="C"))


def read_csv_matrix(path) -> np.ndarray:
    """Headerless comma-separated rows of floats."""
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = [float(tok) for tok in line.split(",")]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: unparseable row: {exc}") from exc
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise FormatError(f"{path}:{lineno}: row width {len(row)} != {width}")
            rows.append(row)
    if not rows:
        raise FormatError(f"{path}: empty activation file")
    return np.asarray(rows, dtype=np.float64)


def write_csv_matrix(path, array) -> None:
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim != 2:
        raise FormatError("can only write 2-D arrays")
    with open(path, "w", encoding="utf-8") as fh:
        for row in arr:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def read_labels(path) -> np.ndarray:
    """One integer label per line."""
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: labels must be integers: {exc}") from exc
    if not labels:
        raise FormatError(f"{path}: empty labels file")
    return np.asarray(labels, dtype=np.int64)


def write_labels(path, labels) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in np.asarray(labels).ravel():
            fh.write(f"{int(v)}\n")


def load_activations(path, fmt: str, labels_path) -> ManifoldEnsemble:
    """Read an activation matrix plus labels and group rows into manifolds."""
    if fmt == "csv":
        X = read_csv_matrix(path)
    elif fmt == "npy":
        X = read_npy_matrix(path)
    else:
        raise FormatError(f"unknown activation format {fmt!r} (use 'csv' or 'npy')")
    if not np.all(np.isfinite(X)):
        raise FormatError(f"{path}: NaN/Inf entries in activations")
    labels = read_labels(labels_path)
    if labels.shape[0] != X.shape[0]:
        raise FormatError(
            f"label count {labels.shape[0]} does not match {X.shape[0]} activation rows"
        )
    return build_ensemble(zip(labels.tolist(), np.asarray(X, dtype=np.float64)))
