"""File formats: the FSTA tensor container, CSV tables and binary PGM images.

Tensor container layout (all little-endian)::

    b"FSTA" | version u8 | dtype u8 | rank u8 | rank x u32 extents | payload

dtype codes: 0 = float32, 1 = float64, 2 = uint8 (binary spike maps).
"""
from __future__ import annotations

import csv
import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FSTA"
VERSION = 1
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
CODE_FOR = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("uint8"): 2}


class ContainerError(ValueError):
    pass


def header_length(rank: int) -> int:
    return 4 + 1 + 1 + 1 + 4 * rank


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    code = CODE_FOR.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise ContainerError(f"unsupported dtype {arr.dtype}; use float32, float64 or uint8")
    if arr.ndim > 255:
        raise ContainerError("rank exceeds 255")
    head = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=DTYPE_CODES[code]).tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise ContainerError(f"bad magic {buf[:4]!r}; expected {MAGIC!r}")
    version, code, rank = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    if code not in DTYPE_CODES:
        raise ContainerError(f"unsupported dtype code {code}")
    hl = header_length(rank)
    if len(buf) < hl:
        raise ContainerError(f"header truncated: need {hl} bytes, have {len(buf)}")
    shape = struct.unpack_from(f"<{rank}I", buf, 7)
    dt = DTYPE_CODES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    if len(buf) - hl != expected:
        raise ContainerError(f"payload length {len(buf) - hl} does not match shape {shape} ({expected} bytes)")
    return np.frombuffer(buf, dtype=dt, offset=hl).reshape(shape).astype(dt.newbyteorder("="))


def save_tensor(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def load_tensor_container(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


# ----------------------------------------------------------------- tables
def write_csv(path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if v is None:
        return "n/a"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_csv(path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_matrix_csv(path, m: np.ndarray) -> None:
    m = np.asarray(m)
    write_csv(path, [f"c{j}" for j in range(m.shape[1])], m.tolist())


def to_gray8(m: np.ndarray) -> np.ndarray:
    """Per-map min-max normalisation to 0..255; a flat map becomes all zeros."""
    m = np.asarray(m, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi <= lo:
        return np.zeros(m.shape, dtype=np.uint8)
    return np.rint((m - lo) / (hi - lo) * 255).astype(np.uint8)


def write_pgm(path, m: np.ndarray) -> None:
    img = to_gray8(m)
    h, w = img.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only maxval 255 is supported")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
