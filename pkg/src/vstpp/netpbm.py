"""Binary PGM (P5) / PPM (P6) reading and writing, maxval 255 only."""

from __future__ import annotations

import os

import numpy as np

from .geometry import nearest_resize

__all__ = ["NetpbmError", "read_netpbm", "load_image", "load_gray", "save_gray", "save_image"]

_WHITESPACE = b" \t\n\r\v\f"


class NetpbmError(ValueError):
    pass


def _header_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(buf):
        ch = buf[pos : pos + 1]
        if ch == b"#":
            end = buf.find(b"\n", pos)
            pos = len(buf) if end < 0 else end + 1
        elif ch in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < len(buf) and buf[pos : pos + 1] not in _WHITESPACE and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise NetpbmError(f"unexpected end of header at byte {pos}")
    return buf[start:pos], pos


def _header_int(buf: bytes, pos: int, what: str) -> tuple[int, int]:
    tok, end = _header_token(buf, pos)
    if not tok.isdigit():
        raise NetpbmError(f"bad {what} {tok!r} at byte {end - len(tok)}")
    return int(tok), end


def parse_netpbm(buf: bytes) -> tuple[str, np.ndarray]:
    """Parse a P5/P6 byte string into (magic, uint8 array of shape (h, w) or (h, w, 3))."""
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise NetpbmError(f"unsupported magic {magic!r} at byte 0 (expected P5 or P6)")
    pos = 2
    width, pos = _header_int(buf, pos, "width")
    height, pos = _header_int(buf, pos, "height")
    maxval, pos = _header_int(buf, pos, "maxval")
    if width <= 0 or height <= 0:
        raise NetpbmError(f"non-positive dimensions {width}x{height} in header ending at byte {pos}")
    if maxval != 255:
        raise NetpbmError(f"unsupported maxval {maxval} at byte {pos} (only 255)")
    if pos >= len(buf) or buf[pos : pos + 1] not in _WHITESPACE:
        raise NetpbmError(f"missing whitespace after maxval at byte {pos}")
    pos += 1
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    actual = len(buf) - pos
    if actual < expected:
        raise NetpbmError(f"truncated payload at byte {pos}: expected {expected} bytes, got {actual}")
    data = np.frombuffer(buf, dtype=np.uint8, count=expected, offset=pos)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return magic.decode(), data.reshape(shape).copy()


def read_netpbm(path) -> tuple[str, np.ndarray]:
    with open(path, "rb") as fh:
        return parse_netpbm(fh.read())


def _fit(arr: np.ndarray, side: int | None, resize: bool, path) -> np.ndarray:
    if side is None or arr.shape[:2] == (side, side):
        return arr
    if not resize:
        raise NetpbmError(f"{path}: image is {arr.shape[1]}x{arr.shape[0]}, expected {side}x{side}")
    return nearest_resize(arr, (side, side))


def load_image(path, side: int | None = None, resize: bool = False) -> np.ndarray:
    """P6 colour image -> (h, w, 3) float64 in [0, 1]."""
    magic, arr = read_netpbm(path)
    if magic != "P6":
        raise NetpbmError(f"{path}: expected a P6 colour image, got {magic}")
    return _fit(arr.astype(np.float64) / 255.0, side, resize, path)


def load_gray(path, side: int | None = None, resize: bool = False) -> np.ndarray:
    """P5 grey image -> (h, w) float64 in [0, 1]."""
    magic, arr = read_netpbm(path)
    if magic != "P5":
        raise NetpbmError(f"{path}: expected a P5 grey image, got {magic}")
    return _fit(arr.astype(np.float64) / 255.0, side, resize, path)


def _to_bytes(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size and (v.min() < 0.0 or v.max() > 1.0 or not np.isfinite(v).all()):
        raise ValueError("pixel values must lie in [0, 1]")
    # round half up so 0.5 -> 128
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def save_gray(values, path) -> None:
    arr = _to_bytes(values)
    if arr.ndim != 2:
        raise ValueError(f"save_gray expects a 2D map, got shape {arr.shape}")
    h, w = arr.shape
    _write(path, b"P5\n%d %d\n255\n" % (w, h) + arr.tobytes())


def save_image(values, path) -> None:
    arr = _to_bytes(values)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"save_image expects an (h, w, 3) array, got shape {arr.shape}")
    h, w, _ = arr.shape
    _write(path, b"P6\n%d %d\n255\n" % (w, h) + arr.tobytes())


def _write(path, payload: bytes) -> None:
    d = os.path.dirname(os.fspath(path))
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(payload)
