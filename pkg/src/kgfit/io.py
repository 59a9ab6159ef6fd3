"""Binary matrix files and small JSON/JSONL helpers.

Matrix files use a fixed little-endian layout::

    b"KGFE" | u16 version | u64 rows | u32 cols | rows*cols float32 (row-major)
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Iterable, Iterator

import numpy as np

MAGIC = b"KGFE"
VERSION = 1
_HEADER = struct.Struct("<4sHQI")


class MatrixFormatError(ValueError):
    pass


def write_matrix(path, matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise MatrixFormatError(f"expected a 2-d matrix, got shape {matrix.shape}")
    rows, cols = matrix.shape
    data = np.ascontiguousarray(matrix, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, rows, cols))
        fh.write(data.tobytes())


def read_matrix(path) -> np.ndarray:
    """Read a matrix file; returns float64 rows ordered as stored."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise MatrixFormatError(f"{path}: truncated header")
    magic, version, rows, cols = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise MatrixFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise MatrixFormatError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + rows * cols * 4
    if len(raw) != expected:
        raise MatrixFormatError(
            f"{path}: expected {expected} bytes for {rows}x{cols}, found {len(raw)}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size, count=rows * cols)
    return data.reshape(rows, cols).astype(np.float64)


def dump_json(obj: Any, path=None) -> str:
    """Serialize with fixed key order and shortest round-trip floats."""
    text = json.dumps(obj, indent=2, sort_keys=False, ensure_ascii=False) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def load_json(path) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def read_jsonl(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc})") from exc


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
