"""Binary tensor files and portable image dumps.

Tensor format: a 16-byte header followed by raw little-endian C-order
data.  Header layout:

    bytes 0-3   magic  b"TGT1"
    byte  4     dtype code (1 = float64, 2 = uint8, 3 = int64, 4 = bool)
    byte  5     number of dimensions (1..4)
    bytes 6-13  shape, four little-endian uint16 (unused trailing dims = 1)
    bytes 14-15 reserved, zero

Frames for eyeballing are written as binary PGM (one channel) or PPM
(three channels), min-max scaled to 8 bits; this path is lossy by design
and never read back.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = ["write_tensor", "read_tensor", "write_image"]

_MAGIC = b"TGT1"
_DTYPES = {1: np.float64, 2: np.uint8, 3: np.int64, 4: np.bool_}
_CODES = {np.dtype(np.float64): 1, np.dtype(np.uint8): 2, np.dtype(np.int64): 3, np.dtype(np.bool_): 4}


class TensorIOError(ValueError):
    """Raised for malformed tensor files."""


def write_tensor(path, array: np.ndarray) -> None:
    """Write an array (up to 4 dims, each < 65536) in the binary format."""
    array = np.ascontiguousarray(array)
    if array.dtype not in _CODES:
        raise TensorIOError(f"unsupported dtype {array.dtype}")
    if array.ndim < 1 or array.ndim > 4:
        raise TensorIOError("tensor rank must be between 1 and 4")
    if any(s >= 1 << 16 for s in array.shape):
        raise TensorIOError("dimensions must fit in uint16")
    shape = list(array.shape) + [1] * (4 - array.ndim)
    header = _MAGIC + struct.pack("<BB4HH", _CODES[array.dtype], array.ndim, *shape, 0)
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(array.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    """Read a tensor written by :func:`write_tensor`."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != _MAGIC:
        raise TensorIOError(f"{path}: not a tensor file (bad magic)")
    code, ndim, s0, s1, s2, s3, _ = struct.unpack("<BB4HH", data[4:16])
    if code not in _DTYPES:
        raise TensorIOError(f"{path}: unknown dtype code {code}")
    if not 1 <= ndim <= 4:
        raise TensorIOError(f"{path}: invalid rank {ndim}")
    shape = (s0, s1, s2, s3)[:ndim]
    dtype = np.dtype(_DTYPES[code])
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(data) - 16 != expected:
        raise TensorIOError(f"{path}: payload size {len(data) - 16} != expected {expected}")
    return np.frombuffer(data[16:], dtype=dtype).reshape(shape).copy()


def write_image(path, frame: np.ndarray) -> None:
    """Write [H, W] as binary PGM or [3, H, W] as binary PPM, min-max scaled."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        frame = frame[None]
    if frame.ndim != 3 or frame.shape[0] not in (1, 3):
        raise TensorIOError("image must be [H, W], [1, H, W], or [3, H, W]")
    lo, hi = float(frame.min()), float(frame.max())
    scaled = np.zeros_like(frame) if hi - lo < 1e-30 else (frame - lo) / (hi - lo)
    bytes8 = np.round(scaled * 255.0).astype(np.uint8)
    _, height, width = frame.shape
    if frame.shape[0] == 1:
        header = f"P5\n{width} {height}\n255\n".encode()
        payload = bytes8[0].tobytes()
    else:
        header = f"P6\n{width} {height}\n255\n".encode()
        payload = np.moveaxis(bytes8, 0, -1).tobytes()
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(payload)
