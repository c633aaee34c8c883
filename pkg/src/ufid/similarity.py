"""Pairwise image similarity: embedding cosine or model-free SSIM.

Two metric families are supported. ``encoder_cosine`` embeds images with a
pluggable encoder (an in-process synthetic one for tests, a remote HTTP one
for deployment) and scores pairs by cosine. ``ssim`` needs no encoder: it is
the windowed structural similarity index computed directly on pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional, Protocol, runtime_checkable

import httpx
import numpy as np

from .errors import MetricInputError, ProtocolError, ShapeMismatchError, ValidationError
from .http_client import post_json
from .types import Image, ImageKind, canonical_json, image_to_wire


@dataclass(frozen=True, eq=False)
class Embedding:
    """A finite real vector tagged with the encoder that produced it."""

    vector: np.ndarray
    encoder_id: str

    def __post_init__(self):
        vec = np.ascontiguousarray(self.vector, dtype=np.float64)
        if vec.ndim != 1 or vec.size < 1:
            raise ValidationError("embedding must be a non-empty 1-d vector")
        if not np.all(np.isfinite(vec)):
            raise ValidationError("embedding entries must be finite")
        vec.flags.writeable = False
        object.__setattr__(self, "vector", vec)

    @property
    def dim(self) -> int:
        return self.vector.size


def cosine(a: Embedding, b: Embedding) -> float:
    """Cosine similarity, clamped to [-1, 1] against rounding."""
    if a.encoder_id != b.encoder_id:
        raise MetricInputError(
            f"embeddings come from different encoders: {a.encoder_id!r} vs {b.encoder_id!r}"
        )
    if a.dim != b.dim:
        raise MetricInputError(f"embedding dimensions differ: {a.dim} vs {b.dim}")
    # pre-scale each vector by its largest magnitude so norms of tiny
    # (denormal-range) vectors do not underflow to zero
    ma = float(np.max(np.abs(a.vector)))
    mb = float(np.max(np.abs(b.vector)))
    if ma == 0.0 or mb == 0.0:
        raise MetricInputError("cosine is undefined for a zero vector")
    av = a.vector / ma
    bv = b.vector / mb
    if np.array_equal(av, bv):
        return 1.0  # self-similarity is exactly 1, not 1 minus rounding
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    return float(np.clip(np.dot(av, bv) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class SsimParams:
    """Uniform square window, stride 1; the usual stability constants."""

    window: int = 8
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    def __post_init__(self):
        if self.window < 1:
            raise ValidationError(f"ssim window must be >= 1, got {self.window}")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValidationError("ssim constants k1, k2 must be positive")
        if self.data_range <= 0:
            raise ValidationError("ssim data_range must be positive")


def ssim(a: Image, b: Image, params: SsimParams = SsimParams()) -> float:
    """Mean windowed SSIM over all sliding windows and channels.

    Uses the three-term luminance/contrast/structure product with
    C1 = (k1*L)^2, C2 = (k2*L)^2, C3 = C2/2 and population (divide by N)
    window statistics. Symmetric in its arguments by construction.
    """
    if a.shape != b.shape:
        raise ShapeMismatchError(f"ssim needs equal shapes, got {a.shape} vs {b.shape}")
    if a.kind is not ImageKind.PIXEL or b.kind is not ImageKind.PIXEL:
        raise MetricInputError("ssim is defined for pixel images only")
    w = params.window
    if a.height < w or a.width < w:
        raise MetricInputError(
            f"image {a.height}x{a.width} smaller than ssim window {w}"
        )
    if a == b:
        return 1.0  # identical images are maximally similar, exactly
    c1 = (params.k1 * params.data_range) ** 2
    c2 = (params.k2 * params.data_range) ** 2
    c3 = c2 / 2.0

    xa = a.data.astype(np.float64)
    xb = b.data.astype(np.float64)
    # (nH, nW, C, w, w) views of every sliding window
    wa = np.lib.stride_tricks.sliding_window_view(xa, (w, w), axis=(0, 1))
    wb = np.lib.stride_tricks.sliding_window_view(xb, (w, w), axis=(0, 1))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = wa.var(axis=(-2, -1))
    var_b = wb.var(axis=(-2, -1))
    cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
    sd_a = np.sqrt(np.maximum(var_a, 0.0))
    sd_b = np.sqrt(np.maximum(var_b, 0.0))

    lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    con = (2 * sd_a * sd_b + c2) / (var_a + var_b + c2)
    stru = (cov + c3) / (sd_a * sd_b + c3)
    return float(np.clip(np.mean(lum * con * stru), -1.0, 1.0))


@runtime_checkable
class Encoder(Protocol):
    """What the scoring stage needs from an embedding encoder."""

    encoder_id: str
    multimodal: bool

    def encode_images(self, images: list[Image]) -> list[Embedding]: ...

    def encode_texts(self, texts: list[str]) -> list[Embedding]: ...


@dataclass(frozen=True)
class EncoderDescriptor:
    """How to reach an encoder: in-process synthetic or remote HTTP."""

    kind: str = "synthetic"  # "synthetic" | "remote"
    url: Optional[str] = None
    name: str = "CLIP-ViT-B32"  # advisory model name for remote deployments

    def __post_init__(self):
        if self.kind not in ("synthetic", "remote"):
            raise ValidationError(f"unknown encoder kind {self.kind!r}")
        if self.kind == "remote" and not self.url:
            raise ValidationError("remote encoder descriptor needs a url")


@dataclass(frozen=True)
class SimilarityMetric:
    """Metric selection plus the parameters the chosen kind needs."""

    kind: str = "encoder_cosine"  # "encoder_cosine" | "ssim"
    encoder: Optional[EncoderDescriptor] = field(default_factory=EncoderDescriptor)
    ssim_params: Optional[SsimParams] = None

    def __post_init__(self):
        if self.kind == "encoder_cosine":
            if self.encoder is None:
                raise ValidationError("encoder_cosine metric needs an encoder descriptor")
        elif self.kind == "ssim":
            if self.ssim_params is None:
                object.__setattr__(self, "ssim_params", SsimParams())
        else:
            raise ValidationError(f"unknown metric kind {self.kind!r}")

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "SimilarityMetric":
        kind = obj.get("kind", "encoder_cosine")
        enc = None
        if "encoder" in obj and obj["encoder"] is not None:
            enc = EncoderDescriptor(**obj["encoder"])
        elif kind == "encoder_cosine":
            enc = EncoderDescriptor()
        sp = SsimParams(**obj["ssim_params"]) if obj.get("ssim_params") else None
        return cls(kind=kind, encoder=enc, ssim_params=sp)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        if self.encoder is not None:
            out["encoder"] = {"kind": self.encoder.kind, "url": self.encoder.url,
                              "name": self.encoder.name}
        if self.ssim_params is not None:
            p = self.ssim_params
            out["ssim_params"] = {"window": p.window, "k1": p.k1, "k2": p.k2,
                                  "data_range": p.data_range}
        return out


def embed(img: Image, encoder: Encoder) -> Embedding:
    """Embed one image. Deterministic for a fixed image and encoder."""
    return encoder.encode_images([img])[0]


class RemoteEncoder:
    """HTTP client for the /v1/embed protocol.

    Request body: ``{"images": [wire image, ...], "texts": [str, ...]}``
    (either list may be empty). Response: ``{"embeddings": [[...], ...],
    "encoder_id": "..."}`` with image embeddings first, text embeddings
    after, in request order.
    """

    def __init__(self, url: str, *, timeout_s: float = 30.0,
                 client: Optional[httpx.Client] = None):
        self.url = url.rstrip("/")
        self.multimodal = True
        self._client = client or httpx.Client(timeout=timeout_s)
        self._encoder_id: Optional[str] = None

    @property
    def encoder_id(self) -> str:
        if self._encoder_id is None:
            raise MetricInputError("remote encoder id unknown before the first call")
        return self._encoder_id

    def encode_images(self, images: list[Image]) -> list[Embedding]:
        return self._encode(images=images, texts=[])

    def encode_texts(self, texts: list[str]) -> list[Embedding]:
        return self._encode(images=[], texts=texts)

    def _encode(self, images: list[Image], texts: list[str]) -> list[Embedding]:
        payload = build_embed_request(images, texts)
        body = post_json(self._client, self.url + "/v1/embed", payload)
        vectors, encoder_id = parse_embed_response(body, expected=len(images) + len(texts))
        self._encoder_id = encoder_id
        return [Embedding(v, encoder_id) for v in vectors]

    def close(self):
        self._client.close()


def build_embed_request(images: list[Image], texts: list[str]) -> dict[str, Any]:
    return {
        "images": [image_to_wire(img) for img in images],
        "texts": list(texts),
    }


def embed_request_bytes(images: list[Image], texts: list[str]) -> bytes:
    return canonical_json(build_embed_request(images, texts))


def parse_embed_response(body: dict[str, Any], *, expected: int) -> tuple[list[np.ndarray], str]:
    if "embeddings" not in body or "encoder_id" not in body:
        raise ProtocolError("embed response missing 'embeddings' or 'encoder_id'")
    raw = body["embeddings"]
    if not isinstance(raw, list) or len(raw) != expected:
        raise ProtocolError(f"embed response has {len(raw) if isinstance(raw, list) else '?'} "
                            f"embeddings, expected {expected}")
    vectors = [np.asarray(v, dtype=np.float64) for v in raw]
    return vectors, str(body["encoder_id"])
