"""Bulk matrix formats: headered CSV and raw little-endian float64 binary.

CSV files start with ``# rows=K cols=N`` followed by comma-separated rows.
Binary files carry a 16-byte header (8-byte magic, uint32 rows, uint32 cols,
little-endian) followed by row-major float64 data. ``read_matrix`` sniffs
the format from the file content.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError

MAGIC = b"FLOWGRND"
_HEADER = struct.Struct("<8sII")


def write_matrix_csv(path: str | Path, matrix: np.ndarray) -> None:
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError("matrix must be 2-D")
    rows, cols = arr.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# rows={rows} cols={cols}\n")
        for row in arr:
            fh.write(",".join(format(x, ".17g") for x in row) + "\n")


def read_matrix_csv(path: str | Path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValidationError(f"{path}: missing '# rows=K cols=N' header")
        try:
            fields = dict(
                part.split("=") for part in header.lstrip("#").split() if "=" in part
            )
            rows, cols = int(fields["rows"]), int(fields["cols"])
        except (KeyError, ValueError):
            raise ValidationError(f"{path}: malformed header {header!r}") from None
        data = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                row = [float(x) for x in line.split(",")]
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: non-numeric entry") from None
            if len(row) != cols:
                raise ValidationError(
                    f"{path}:{lineno}: expected {cols} columns, got {len(row)}"
                )
            data.append(row)
    if len(data) != rows:
        raise ValidationError(
            f"{path}: header says {rows} rows but data has {len(data)}"
        )
    return np.array(data, dtype=np.float64)


def write_matrix_binary(path: str | Path, matrix: np.ndarray) -> None:
    arr = np.ascontiguousarray(matrix, dtype="<f8")
    if arr.ndim != 2:
        raise ValidationError("matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_matrix_binary(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValidationError(f"{path}: truncated binary matrix")
    magic, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValidationError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + rows * cols * 8
    if len(raw) != expected:
        raise ValidationError(
            f"{path}: expected {expected} bytes for {rows}x{cols}, got {len(raw)}"
        )
    return (
        np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
        .reshape(rows, cols)
        .astype(np.float64)
    )


def read_matrix(path: str | Path) -> np.ndarray:
    """Read either format, sniffing the binary magic first."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
    if head == MAGIC:
        return read_matrix_binary(path)
    return read_matrix_csv(path)
