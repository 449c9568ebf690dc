"""Bounds-checked reading of little-endian binary payloads."""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError


class Reader:
    """Bounds-checked cursor over a byte buffer."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, nbytes: int, what: str) -> memoryview:
        if nbytes < 0 or self.pos + nbytes > len(self.buf):
            raise FormatError(
                f"truncated file: {what} needs {nbytes} bytes, only {len(self.buf) - self.pos} remain",
                self.pos,
            )
        view = memoryview(self.buf)[self.pos : self.pos + nbytes]
        self.pos += nbytes
        return view

    def array(self, dtype: str, count: int, what: str) -> np.ndarray:
        size = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(size * count, what), dtype=dtype).copy()

    def unpack(self, fmt: struct.Struct, what: str):
        return fmt.unpack(self.take(fmt.size, what))
