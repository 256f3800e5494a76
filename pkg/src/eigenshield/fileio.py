"""Binary matrix files, CSV matrices and lossless JSON text.

Matrix file layout (all little-endian)::

    magic   4 bytes  b"ESMX"
    version u32      MATRIX_FORMAT_VERSION
    rows    u64
    cols    u64
    payload rows * cols float64, row-major
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

from .errors import CorruptFileError, VersionMismatchError

MAGIC = b"ESMX"
MATRIX_FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write to a temporary sibling file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_matrix(matrix) -> bytes:
    m = np.asarray(matrix, dtype="<f8")
    if m.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {m.shape}")
    rows, cols = m.shape
    return _HEADER.pack(MAGIC, MATRIX_FORMAT_VERSION, rows, cols) + np.ascontiguousarray(m).tobytes()


def decode_matrix(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise CorruptFileError("matrix file shorter than its header")
    magic, version, rows, cols = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptFileError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != MATRIX_FORMAT_VERSION:
        raise VersionMismatchError(f"matrix format version {version}, expected {MATRIX_FORMAT_VERSION}")
    expected = rows * cols * 8
    payload = blob[_HEADER.size :]
    if len(payload) != expected:
        raise CorruptFileError(f"payload has {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(float)


def write_matrix(path, matrix) -> None:
    atomic_write_bytes(path, encode_matrix(matrix))


def read_matrix(path) -> np.ndarray:
    return decode_matrix(Path(path).read_bytes())


def read_csv_matrix(path) -> np.ndarray:
    """CSV with one header row; every other row is numeric."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(lines) < 2:
        raise CorruptFileError(f"{path}: CSV needs a header row and at least one data row")
    try:
        rows = [[float(tok) for tok in ln.split(",")] for ln in lines[1:]]
    except ValueError as exc:
        raise CorruptFileError(f"{path}: non-numeric CSV entry ({exc})") from exc
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise CorruptFileError(f"{path}: ragged CSV rows")
    return np.array(rows, dtype=float)


def load_matrix_any(path) -> np.ndarray:
    """Binary matrix file if it starts with the magic, CSV otherwise."""
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return read_matrix(path)
    return read_csv_matrix(path)


def write_csv_matrix(path, matrix, header=None) -> None:
    m = np.asarray(matrix, dtype=float)
    header = header or [f"x{i}" for i in range(m.shape[1])]
    lines = [",".join(header)] + [",".join(format(v, ".17g") for v in row) for row in m]
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# JSON with 17 significant digits
# ---------------------------------------------------------------------------


def _format(obj: Any, indent: int, level: int) -> str:
    pad = "\n" + " " * (indent * (level + 1)) if indent else ""
    end = "\n" + " " * (indent * level) if indent else ""
    sep = ", " if not indent else ","
    if obj is None or obj is True or obj is False:
        return {None: "null", True: "true", False: "false"}[obj]
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "null"
        text = format(x, ".17g")
        # keep floats recognizable as floats after a round trip
        return text if any(ch in text for ch in ".en") else text + ".0"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _format(obj.tolist(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_format(str(k), 0, 0)}: {_format(v, indent, level + 1)}" for k, v in obj.items()]
        return "{" + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        # numeric vectors stay on one line
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_format(v, 0, 0) for v in obj) + "]"
        items = [pad + _format(v, indent, level + 1) for v in obj]
        return "[" + sep.join(items) + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: Any, indent: int = 2) -> str:
    """JSON text with every float written as 17 significant digits.

    Non-finite floats become ``null``. Key order is preserved.
    """
    return _format(obj, indent, 0) + "\n"
