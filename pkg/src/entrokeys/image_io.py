"""Frames, netpbm I/O and the preprocessing chain that feeds the entropy layer.

A frame is an ``(H, W, 3)`` float64 array with intensities in ``[0, 1]``.
Pixel coordinates are ``x = column``, ``y = row`` with the origin at the
top-left pixel centre.
"""
from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np
from scipy import ndimage

DIVISION_EPS = 1e-6
DEFAULT_BLUR_RADIUS = 2


class PNMError(ValueError):
    """Base class for netpbm parse failures."""


class BadMagicError(PNMError):
    pass


class MalformedHeaderError(PNMError):
    pass


class UnsupportedMaxvalError(PNMError):
    pass


class TruncatedPayloadError(PNMError):
    pass


def make_frame(data) -> np.ndarray:
    """Validate ``data`` as a frame and return a read-only float64 copy."""
    arr = np.array(data, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"frame must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("frame must have at least one pixel")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("frame intensities must lie in [0, 1]")
    arr.flags.writeable = False
    return arr


def quantize(frame: np.ndarray) -> np.ndarray:
    """8-bit quantization with round-half-up, as written by :func:`save_ppm`."""
    return np.floor(np.asarray(frame, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)


# Header tokens may be separated by whitespace and '#' comments.
_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*([^\s#]+)")


def _read_header(buf: bytes, magic: bytes) -> tuple[int, int, int, int]:
    if len(buf) < 2:
        raise MalformedHeaderError("file too short for a netpbm header")
    if buf[:2] != magic:
        raise BadMagicError(f"expected magic {magic!r}, got {buf[:2]!r}")
    pos = 2
    values = []
    for _ in range(3):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise MalformedHeaderError("incomplete header")
        tok = m.group(1)
        if not tok.isdigit():
            raise MalformedHeaderError(f"non-numeric header field {tok!r}")
        values.append(int(tok))
        pos = m.end()
    if pos >= len(buf) or buf[pos:pos + 1] not in (b" ", b"\n", b"\r", b"\t"):
        raise MalformedHeaderError("missing whitespace after maxval")
    width, height, maxval = values
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"invalid dimensions {width}x{height}")
    return width, height, maxval, pos + 1


def _read_bytes(path, magic: bytes, channels: int, max_maxval: int = 255):
    buf = Path(path).read_bytes()
    width, height, maxval, offset = _read_header(buf, magic)
    if maxval < 1 or maxval > max_maxval:
        raise UnsupportedMaxvalError(f"unsupported maxval {maxval}")
    n = width * height * channels
    payload = buf[offset:offset + n]
    if len(payload) < n:
        raise TruncatedPayloadError(f"expected {n} payload bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype=np.uint8)
    shape = (height, width, channels) if channels > 1 else (height, width)
    return data.reshape(shape), maxval


def load_ppm(path) -> np.ndarray:
    """Read a binary P6 file with maxval 255 into a frame."""
    data, maxval = _read_bytes(path, b"P6", 3)
    if maxval != 255:
        raise UnsupportedMaxvalError(f"P6 frames must use maxval 255, got {maxval}")
    return make_frame(data.astype(np.float64) / 255.0)


def save_ppm(frame: np.ndarray, path) -> None:
    frame = np.asarray(frame)
    h, w = frame.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(quantize(frame).tobytes())


def load_pgm(path) -> tuple[np.ndarray, int]:
    """Read a P5 file; returns the raw ``(H, W)`` uint8 values and maxval."""
    data, maxval = _read_bytes(path, b"P5", 1)
    return data.copy(), maxval


def save_pgm(values: np.ndarray, path, maxval: int = 255) -> None:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("PGM data must be 2-D")
    if not 1 <= maxval <= 255:
        raise ValueError(f"maxval must be in [1, 255], got {maxval}")
    if values.min(initial=0) < 0 or values.max(initial=0) > maxval:
        raise ValueError("PGM values out of range for maxval")
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        fh.write(values.astype(np.uint8).tobytes())


def list_frames(directory) -> list[Path]:
    """Frame files of a video directory in temporal (lexicographic) order."""
    return sorted(Path(directory).glob("frame_*.ppm"))


def load_video(directory) -> list[np.ndarray]:
    paths = list_frames(directory)
    if not paths:
        raise FileNotFoundError(f"no frame_*.ppm files in {os.fspath(directory)}")
    return [load_ppm(p) for p in paths]


def box_blur(frame: np.ndarray, radius: int) -> np.ndarray:
    """Mean over a ``(2r+1)x(2r+1)`` window per channel, replicate padding."""
    size = 2 * radius + 1
    return ndimage.uniform_filter(frame, size=(size, size, 1), mode="nearest")


def preprocess(frame: np.ndarray, blur_radius: int = DEFAULT_BLUR_RADIUS) -> np.ndarray:
    """Blur, unsharp-mask, then divide the sharp image by the smooth one.

    Returns an array of the frame's shape with values clamped to ``[0, 1]``.
    Flat regions map to ~1, intensity structure shows up as deviations.
    """
    if blur_radius < 1:
        raise ValueError("blur_radius must be >= 1")
    frame = np.asarray(frame, dtype=np.float64)
    smooth = box_blur(frame, blur_radius)
    sharp = np.clip(2.0 * frame - smooth, 0.0, 1.0)
    return np.clip(sharp / (smooth + DIVISION_EPS), 0.0, 1.0)
