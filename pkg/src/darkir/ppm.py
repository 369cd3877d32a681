"""Binary PPM (P6, maxval 255) image I/O.

Images move through the engine as float tensors in [0, 1] with shape
(3, H, W); files store 8-bit RGB rows top to bottom.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .tensor import ShapeError, Tensor

__all__ = ["read_ppm", "write_ppm", "PpmError"]


class PpmError(ValueError):
    """Malformed PPM header or payload."""


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(buf):
        ch = buf[pos : pos + 1]
        if ch == b"#":  # comment runs to end of line
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < len(buf) and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise PpmError("unexpected end of header")
    return buf[start:pos], pos


def read_ppm(path) -> Tensor:
    buf = Path(path).read_bytes()
    magic, pos = _read_token(buf, 0)
    if magic != b"P6":
        raise PpmError(f"unsupported magic {magic!r}, want P6")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise PpmError(f"non-numeric header field {tok!r}")
        fields.append(int(tok))
    w, h, maxval = fields
    if maxval != 255:
        raise PpmError(f"unsupported maxval {maxval}, want 255")
    pos += 1  # single whitespace byte after maxval
    need = w * h * 3
    raw = buf[pos : pos + need]
    if len(raw) != need:
        raise PpmError(f"payload has {len(raw)} bytes, want {need}")
    img = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    chw = img.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0)
    return Tensor(chw)


def write_ppm(path, img: Tensor) -> None:
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"write_ppm wants (3, H, W), got {img.shape}")
    arr = np.clip(img.data, 0.0, 1.0)
    u8 = np.rint(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)
    h, w = u8.shape[0], u8.shape[1]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + u8.tobytes())
