"""Binary PGM (P5) and PPM (P6) files, 8-bit, round-trip exact."""

from __future__ import annotations

import numpy as np

from .errors import FormatError


def _write(path, magic, array):
    array = np.ascontiguousarray(array, dtype=np.uint8)
    h, w = array.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"{magic}\n{w} {h}\n255\n".encode("ascii"))
        fh.write(array.tobytes())


def write_pgm(path, image: np.ndarray):
    if image.ndim != 2:
        raise FormatError("PGM stores a single 2-d channel")
    _write(path, "P5", image)


def write_ppm(path, image: np.ndarray):
    if image.ndim != 3 or image.shape[2] != 3:
        raise FormatError("PPM stores an [H, W, 3] image")
    _write(path, "P6", image)


class _Header:
    """Whitespace/comment-aware scanner over the netpbm ASCII header."""

    def __init__(self, data: bytes, name: str):
        self.data = data
        self.name = name
        self.pos = 0

    def fail(self, what):
        raise FormatError(f"{self.name}: {what} at byte {self.pos}")

    def skip_space(self):
        while self.pos < len(self.data):
            c = self.data[self.pos]
            if c in b"#":
                while self.pos < len(self.data) and self.data[self.pos] not in b"\n":
                    self.pos += 1
            elif c in b" \t\r\n":
                self.pos += 1
            else:
                return
        self.fail("truncated header")

    def read_int(self, what):
        self.skip_space()
        start = self.pos
        while self.pos < len(self.data) and self.data[self.pos:self.pos + 1].isdigit():
            self.pos += 1
        if self.pos == start:
            self.fail(f"expected {what}")
        return int(self.data[start:self.pos])


def _read(path, expected_magic, channels):
    with open(path, "rb") as fh:
        data = fh.read()
    name = str(path)
    if len(data) < 2:
        raise FormatError(f"{name}: truncated magic at byte 0")
    magic = data[:2].decode("ascii", errors="replace")
    if magic != expected_magic:
        raise FormatError(f"{name}: bad magic {magic!r} at byte 0")
    hdr = _Header(data, name)
    hdr.pos = 2
    w = hdr.read_int("width")
    h = hdr.read_int("height")
    maxval = hdr.read_int("maxval")
    if maxval != 255:
        raise FormatError(f"{name}: only maxval 255 supported, got {maxval}")
    if hdr.pos >= len(data) or data[hdr.pos] not in b" \t\r\n":
        hdr.fail("expected single whitespace before payload")
    payload_at = hdr.pos + 1
    nbytes = w * h * channels
    if len(data) < payload_at + nbytes:
        raise FormatError(
            f"{name}: truncated payload at byte {len(data)} "
            f"(need {payload_at + nbytes})")
    arr = np.frombuffer(data, dtype=np.uint8, count=nbytes, offset=payload_at)
    shape = (h, w) if channels == 1 else (h, w, channels)
    return arr.reshape(shape).copy()


def read_pgm(path) -> np.ndarray:
    return _read(path, "P5", 1)


def read_ppm(path) -> np.ndarray:
    return _read(path, "P6", 3)
