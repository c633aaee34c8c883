"""Deterministic, labelled random streams.

One counter-based generator family (Philox 4x64) is keyed per stream by

    key = first 16 bytes of SHA-256( root_as_8_le_bytes || 0x00 || label_utf8 )

interpreted little-endian. Distinct labels give statistically independent
streams; equal (root, label) pairs give bit-identical draw sequences on any
platform. This is the only source of randomness in the package: modules
never share generator state, they derive fresh streams from explicit labels
such as ``"aug/<query id>/<j>"``.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

_MAX_U64 = 2**64 - 1

SEED_ENV_VAR = "UFID_SEED"
DEFAULT_ROOT_SEED = 20240101


@dataclass(frozen=True)
class RngSeed:
    """Root seed from which all labelled streams are derived."""

    root: int

    def __post_init__(self):
        if not (0 <= self.root <= _MAX_U64):
            raise ValidationError(f"root seed must be a uint64, got {self.root}")

    def stream(self, label: str) -> np.random.Generator:
        return derive_rng(self, label)


def derive_rng(seed: RngSeed, label: str) -> np.random.Generator:
    """Independent reproducible generator for (seed.root, label)."""
    digest = hashlib.sha256(
        seed.root.to_bytes(8, "little") + b"\x00" + label.encode("utf-8")
    ).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


def root_seed_from_env(default: int = DEFAULT_ROOT_SEED) -> RngSeed:
    """Root seed, overridable with the UFID_SEED environment variable."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return RngSeed(default)
    try:
        return RngSeed(int(raw))
    except ValueError as exc:
        raise ValidationError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from exc
