"""Reference implementation of the scripted shim's deterministic patterns.

The model shim answers /v1/generate with patch-aligned binary pattern
images derived from a SHA-256 byte stream keyed on (configured seed,
request seed, input content). This module is the cross-language contract:
the recorded fixtures are produced here and the shim must reproduce them
byte for byte.

Key material:  b"ufid-shim" || le64(config_seed) || le64(request_seed) || content
  where content is the raw float32 payload for image inputs or the UTF-8
  prompt bytes for text inputs.
Byte stream:   SHA256(key || le32(0)) || SHA256(key || le32(1)) || ...
Pattern:       the first 16*C stream bytes set a 4x4 patch grid per channel;
  cell value is 1.0 where byte < 128 else 0.0, pixels constant per cell.
"""

from __future__ import annotations

import hashlib
import struct

MAGIC = b"UFIM"
HEADER = struct.Struct("<4sBIII")


def stream_bytes(key: bytes, count: int) -> bytes:
    out = bytearray()
    block = 0
    while len(out) < count:
        out.extend(hashlib.sha256(key + struct.pack("<I", block)).digest())
        block += 1
    return bytes(out[:count])


def pattern_cells(config_seed: int, request_seed: int, content: bytes,
                  channels: int) -> list[float]:
    key = hashlib.sha256(
        b"ufid-shim" + struct.pack("<QQ", config_seed, request_seed) + content
    ).digest()
    raw = stream_bytes(key, 16 * channels)
    return [1.0 if b < 128 else 0.0 for b in raw]


def pattern_payload(config_seed: int, request_seed: int, content: bytes,
                    shape: tuple[int, int, int]) -> bytes:
    """Row-major float32 payload of the patch-aligned pattern image."""
    h, w, c = shape
    if h % 4 or w % 4:
        raise ValueError(f"pattern shape must be divisible by 4, got {h}x{w}")
    cells = pattern_cells(config_seed, request_seed, content, c)
    ph, pw = h // 4, w // 4
    values = []
    for i in range(h):
        for j in range(w):
            for ch in range(c):
                values.append(cells[(i // ph) * 4 * c + (j // pw) * c + ch])
    return struct.pack(f"<{len(values)}f", *values)


def serialize_header(kind_byte: int, shape: tuple[int, int, int]) -> bytes:
    h, w, c = shape
    return HEADER.pack(MAGIC, kind_byte, h, w, c)
