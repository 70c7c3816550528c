"""Binary 8-bit PGM (P5) and PPM (P6) reading and writing."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class PNMError(ValueError):
    pass


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """First ``count`` whitespace-separated header tokens, skipping comments."""
    toks: list[bytes] = []
    i, n = 0, len(buf)
    while len(toks) < count:
        while i < n and buf[i : i + 1].isspace():
            i += 1
        if i >= n:
            raise PNMError("truncated header")
        if buf[i : i + 1] == b"#":
            while i < n and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not buf[j : j + 1].isspace() and buf[j : j + 1] != b"#":
            j += 1
        toks.append(buf[i:j])
        i = j
    # exactly one whitespace byte separates maxval from the raster
    if i >= n or not buf[i : i + 1].isspace():
        raise PNMError("missing whitespace before pixel data")
    return toks, i + 1


def decode(buf: bytes) -> np.ndarray:
    """Decode to a uint8 array shaped (channels, height, width)."""
    magic = buf[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise PNMError(f"unsupported magic {magic!r}; only binary P5/P6 are read")
    toks, start = _tokens(buf[2:], 3)
    try:
        width, height, maxval = (int(t) for t in toks)
    except ValueError as exc:
        raise PNMError(f"bad header fields {toks}") from exc
    if maxval != 255:
        raise PNMError(f"unsupported bit depth: maxval {maxval} (only 8-bit, maxval 255)")
    if width <= 0 or height <= 0:
        raise PNMError(f"bad dimensions {width}x{height}")
    raster = buf[2 + start :]
    need = width * height * channels
    if len(raster) < need:
        raise PNMError(f"truncated raster: {len(raster)} of {need} bytes")
    px = np.frombuffer(raster[:need], dtype=np.uint8).reshape(height, width, channels)
    return np.ascontiguousarray(px.transpose(2, 0, 1))


def encode(img: np.ndarray) -> bytes:
    """Encode a uint8 (H, W), (1, H, W) or (3, H, W) array."""
    a = np.asarray(img)
    if a.dtype != np.uint8:
        raise PNMError(f"expected uint8 pixels, got {a.dtype}")
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[0] not in (1, 3):
        raise PNMError(f"expected (1|3, H, W) pixels, got shape {a.shape}")
    c, h, w = a.shape
    header = f"{'P5' if c == 1 else 'P6'}\n{w} {h}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(a.transpose(1, 2, 0)).tobytes()


def read(path: str | Path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def write(path: str | Path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode(img))
