"""Core domain types and the raw tensor byte format.

Everything that flows between modules is one of these types: images (pixel
tensors in [0,1] or unbounded noise tensors), queries (a noise image or a
text prompt), and generated batches. All of them are immutable after
construction and safe to share across threads.

Byte format for an image: a 17-byte header followed by the row-major
little-endian float32 payload::

    magic   4 bytes  b"UFIM"
    kind    1 byte   0 = pixel, 1 = noise
    height  4 bytes  uint32 little-endian
    width   4 bytes  uint32 little-endian
    chans   4 bytes  uint32 little-endian

The wire protocol (see :mod:`ufid.backends`) transports only the payload,
base64-encoded, with shape and kind carried as JSON fields.
"""

from __future__ import annotations

import base64
import hashlib
import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional, Sequence

import numpy as np

from .errors import ValidationError

_HEADER = struct.Struct("<4sBIII")
_MAGIC = b"UFIM"


class ImageKind(str, Enum):
    PIXEL = "pixel"
    NOISE = "noise"


class QueryMode(str, Enum):
    UNCONDITIONAL = "unconditional"
    CONDITIONAL = "conditional"


@dataclass(frozen=True, eq=False)
class Image:
    """A dense H x W x C float32 tensor.

    ``pixel`` images hold values in [0, 1]; ``noise`` images hold arbitrary
    finite reals. The backing array is made read-only on construction.
    """

    data: np.ndarray
    kind: ImageKind = ImageKind.PIXEL

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ValidationError(f"image data must be 3-d (H, W, C), got ndim={arr.ndim}")
        if arr.size == 0:
            raise ValidationError("image data must be non-empty")
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        if not np.all(np.isfinite(arr)):
            raise ValidationError("image data must be finite")
        if self.kind is ImageKind.PIXEL and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValidationError(
                f"pixel image values must lie in [0,1], got range "
                f"[{arr.min():.6g}, {arr.max():.6g}]"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)  # type: ignore[return-value]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Image):
            return NotImplemented
        return self.kind is other.kind and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash((self.kind, self.data.tobytes()))


def serialize_image(img: Image) -> bytes:
    """Encode an image as header + little-endian float32 payload."""
    h, w, c = img.shape
    kind_byte = 0 if img.kind is ImageKind.PIXEL else 1
    return _HEADER.pack(_MAGIC, kind_byte, h, w, c) + image_payload(img)


def deserialize_image(blob: bytes) -> Image:
    """Inverse of :func:`serialize_image`. Raises on malformed input."""
    if len(blob) < _HEADER.size:
        raise ValidationError("image blob shorter than header")
    magic, kind_byte, h, w, c = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise ValidationError(f"bad image magic {magic!r}")
    if kind_byte not in (0, 1):
        raise ValidationError(f"bad image kind byte {kind_byte}")
    kind = ImageKind.PIXEL if kind_byte == 0 else ImageKind.NOISE
    return image_from_payload((h, w, c), kind, blob[_HEADER.size:])


def image_payload(img: Image) -> bytes:
    """Raw row-major little-endian float32 bytes, no header."""
    return img.data.astype("<f4", copy=False).tobytes(order="C")


def image_from_payload(shape: Sequence[int], kind: ImageKind, payload: bytes) -> Image:
    h, w, c = (int(x) for x in shape)
    expected = h * w * c * 4
    if len(payload) != expected:
        raise ValidationError(
            f"payload length {len(payload)} does not match shape {h}x{w}x{c} "
            f"(expected {expected} bytes)"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    return Image(data=arr, kind=kind)


def image_to_wire(img: Image) -> dict[str, Any]:
    """JSON-friendly form used by the HTTP protocols."""
    return {
        "shape": list(img.shape),
        "kind": img.kind.value,
        "data_b64": base64.b64encode(image_payload(img)).decode("ascii"),
    }


def image_from_wire(obj: dict[str, Any]) -> Image:
    try:
        shape = obj["shape"]
        kind = ImageKind(obj["kind"])
        payload = base64.b64decode(obj["data_b64"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed wire image: {exc}") from exc
    if not (isinstance(shape, list) and len(shape) == 3):
        raise ValidationError(f"malformed wire image shape: {shape!r}")
    return image_from_payload(shape, kind, payload)


def canonical_json(obj: Any) -> bytes:
    """Deterministic JSON bytes: sorted keys, no whitespace, UTF-8.

    Both HTTP clients serialize requests this way so recorded fixtures can
    be compared byte-for-byte across implementations.
    """
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


@dataclass(frozen=True)
class Query:
    """One incoming request: a noise image or a text prompt, plus an id.

    The id is an opaque string used to derive per-query random streams; two
    queries with equal content and ids behave identically everywhere.
    """

    mode: QueryMode
    id: str
    noise: Optional[Image] = None
    prompt: Optional[str] = None

    def __post_init__(self):
        if self.mode is QueryMode.UNCONDITIONAL:
            if self.noise is None or self.prompt is not None:
                raise ValidationError("unconditional query needs a noise image and no prompt")
            if self.noise.kind is not ImageKind.NOISE:
                raise ValidationError("unconditional query image must have kind=noise")
        elif self.mode is QueryMode.CONDITIONAL:
            if self.prompt is None or self.noise is not None:
                raise ValidationError("conditional query needs a prompt and no noise image")
            if not self.prompt.strip():
                raise ValidationError("prompt must be non-empty after trimming")
        if not self.id:
            raise ValidationError("query id must be non-empty")


def query_fingerprint(mode: QueryMode, *, noise: Optional[Image] = None,
                      prompt: Optional[str] = None) -> str:
    """Stable hex digest of query content.

    Used as the query id at the service boundary so that replaying identical
    request bytes reproduces identical random streams and verdicts.
    """
    h = hashlib.sha256()
    h.update(mode.value.encode("utf-8"))
    h.update(b"\x00")
    if noise is not None:
        h.update(serialize_image(noise))
    if prompt is not None:
        h.update(prompt.encode("utf-8"))
    return h.hexdigest()[:24]


def num_pairs(n: int) -> int:
    return n * (n - 1) // 2


def pair_index(m: int, n: int, size: int) -> int:
    """Position of unordered pair (m, n), m < n, in the condensed vector."""
    if not (0 <= m < n < size):
        raise ValidationError(f"bad pair ({m},{n}) for size {size}")
    return m * size - m * (m + 1) // 2 + (n - m - 1)


@dataclass(eq=False)
class GeneratedBatch:
    """Images generated for one augmented query batch.

    ``images[0]`` is always the generation for the unmodified input.
    ``pair_similarities`` is a condensed upper-triangular vector with one
    entry per unordered image pair, attached once by the scoring stage.
    """

    query_id: str
    images: tuple[Image, ...]
    pair_similarities: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.images = tuple(self.images)
        if not self.images:
            raise ValidationError("generated batch must contain at least one image")
        for img in self.images:
            if img.kind is not ImageKind.PIXEL:
                raise ValidationError("generated batch images must have kind=pixel")
        shapes = {img.shape for img in self.images}
        if len(shapes) != 1:
            raise ValidationError(f"generated batch images must share a shape, got {shapes}")
        if self.pair_similarities is not None:
            self._check_similarities(np.asarray(self.pair_similarities, dtype=np.float64))

    def _check_similarities(self, sims: np.ndarray):
        want = num_pairs(len(self.images))
        if sims.shape != (want,):
            raise ValidationError(
                f"pair_similarities must have {want} entries for {len(self.images)} images, "
                f"got shape {sims.shape}"
            )
        if want and (sims.min() < -1.0 or sims.max() > 1.0):
            raise ValidationError("pair similarities must lie in [-1, 1]")

    def attach_similarities(self, sims: np.ndarray) -> None:
        """Write-once attach of the condensed similarity vector."""
        if self.pair_similarities is not None:
            raise ValidationError("pair_similarities already attached")
        sims = np.asarray(sims, dtype=np.float64)
        self._check_similarities(sims)
        sims.flags.writeable = False
        self.pair_similarities = sims

    def pair_similarity(self, m: int, n: int) -> float:
        if self.pair_similarities is None:
            raise ValidationError("pair_similarities not attached")
        if m == n:
            return 1.0
        m, n = min(m, n), max(m, n)
        return float(self.pair_similarities[pair_index(m, n, len(self.images))])

    def __len__(self) -> int:
        return len(self.images)
