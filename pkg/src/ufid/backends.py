"""Model backends behind one interface: generate(queries) -> images.

Two implementations:

* ``SyntheticBackend``: an in-process generator with a closed-form law.
  Clean inputs map to draws around a clean mean image whose variance shrinks
  as the input variance grows (variance sigma_c / rho^2 for input variance
  rho^2); inputs carrying the trigger map to tight draws around the target
  image (variance sigma_b / rho^2). rho^2 is estimated from the input tensor
  itself, so the backend stays a black box. Conditional mode keys clean
  generation means on a hash of the full prompt, making distinct prompts
  produce distinct images.

* ``RemoteBackend``: an HTTP client for the /v1/generate wire protocol with
  bounded in-flight requests and transport-level retries.

The synthetic multimodal encoder also lives here because it shares the
pattern machinery with the conditional generator: text and generated images
for the same prompt embed near one another by construction.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from typing import Any, Optional

import httpx
import numpy as np

from .errors import (
    BackendStartupError,
    ModeMismatchError,
    ProtocolError,
    ShapeMismatchError,
    MetricInputError,
    ValidationError,
)
from .http_client import DEFAULT_ATTEMPTS, DEFAULT_BACKOFF_S, post_json
from .rng import RngSeed, derive_rng
from .similarity import Embedding
from .types import (
    Image,
    ImageKind,
    Query,
    QueryMode,
    canonical_json,
    image_from_wire,
    image_to_wire,
)

PATCH_GRID = 4  # patches per spatial axis; embeddings have 16 entries per channel
DEFAULT_TRIGGER_TOKEN = "mignneko"
SYNTHETIC_ENCODER_ID = "synthetic-pool16"

# rho^2 estimates below this are treated as degenerate (constant inputs)
_RHO2_FLOOR = 1e-6


def _require_patch_divisible(shape: tuple[int, int, int]):
    h, w, _ = shape
    if h % PATCH_GRID or w % PATCH_GRID:
        raise ValidationError(
            f"synthetic stack needs height and width divisible by {PATCH_GRID}, got {h}x{w}"
        )


def patch_pattern(key: bytes, shape: tuple[int, int, int]) -> np.ndarray:
    """Deterministic binary pattern, constant on each cell of the 4x4 patch
    grid. Keyed pseudo-randomly so distinct keys give independent patterns."""
    _require_patch_divisible(shape)
    h, w, c = shape
    rng = np.random.Generator(np.random.Philox(
        key=int.from_bytes(hashlib.sha256(key).digest()[:16], "little")))
    cells = (rng.random((PATCH_GRID, PATCH_GRID, c)) < 0.5).astype(np.float32)
    return np.repeat(np.repeat(cells, h // PATCH_GRID, axis=0), w // PATCH_GRID, axis=1)


def token_bag_key(text: str) -> bytes:
    """Order-insensitive hash of a prompt's whitespace tokens."""
    return hashlib.sha256("\x1f".join(sorted(text.split())).encode("utf-8")).digest()


_POOL_MATRICES: dict[tuple[int, int, int], np.ndarray] = {}
_POOL_LOCK = threading.Lock()


def pooling_matrix(shape: tuple[int, int, int]) -> np.ndarray:
    """(H*W*C, 16*C) matrix averaging each patch of each channel."""
    with _POOL_LOCK:
        cached = _POOL_MATRICES.get(shape)
        if cached is not None:
            return cached
        _require_patch_divisible(shape)
        h, w, c = shape
        ph, pw = h // PATCH_GRID, w // PATCH_GRID
        mat = np.zeros((h * w * c, PATCH_GRID * PATCH_GRID * c), dtype=np.float32)
        weight = 1.0 / (ph * pw)
        for i in range(h):
            for j in range(w):
                for k in range(c):
                    col = (i // ph) * PATCH_GRID * c + (j // pw) * c + k
                    mat[(i * w + j) * c + k, col] = weight
        mat.flags.writeable = False
        _POOL_MATRICES[shape] = mat
        return mat


def default_clean_mean(shape: tuple[int, int, int]) -> Image:
    return Image(np.full(shape, 0.5, dtype=np.float32), ImageKind.PIXEL)


def default_target_mean(shape: tuple[int, int, int]) -> Image:
    return Image(patch_pattern(b"ufid/default-target", shape), ImageKind.PIXEL)


def default_trigger(shape: tuple[int, int, int]) -> Image:
    pattern = patch_pattern(b"ufid/default-trigger", shape)
    return Image(np.where(pattern > 0.5, 1.0, -1.0).astype(np.float32), ImageKind.NOISE)


@dataclass(frozen=True)
class SyntheticParams:
    """Closed-form generation law parameters.

    sigma_c and sigma_b act as variances of the clean and target output
    distributions. The defaults keep sigma_c >= sigma_b + 2, the separation
    the variance-gap check in :mod:`ufid.theory` assumes.
    """

    shape: tuple[int, int, int] = (8, 8, 3)
    x_c: Optional[Image] = None
    sigma_c: float = 3.0
    x_b: Optional[Image] = None
    sigma_b: float = 0.5
    trigger: Optional[Image] = None
    trigger_threshold: float = 0.5
    blending_ratio: float = 0.0
    trigger_token: str = DEFAULT_TRIGGER_TOKEN
    substitution: Optional[tuple[str, str]] = None
    seed: RngSeed = field(default_factory=lambda: RngSeed(0))

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(x) for x in self.shape))
        _require_patch_divisible(self.shape)
        if self.sigma_c <= 0 or self.sigma_b <= 0:
            raise ValidationError("sigma_c and sigma_b must be positive")
        if not (0.0 < self.trigger_threshold < 1.0):
            raise ValidationError("trigger_threshold must lie in (0, 1)")
        if not (0.0 <= self.blending_ratio < 1.0):
            raise ValidationError("blending_ratio must lie in [0, 1)")
        if not self.trigger_token:
            raise ValidationError("trigger_token must be non-empty")
        if self.x_c is None:
            object.__setattr__(self, "x_c", default_clean_mean(self.shape))
        if self.x_b is None:
            object.__setattr__(self, "x_b", default_target_mean(self.shape))
        if self.trigger is None:
            object.__setattr__(self, "trigger", default_trigger(self.shape))
        for name in ("x_c", "x_b", "trigger"):
            img: Image = getattr(self, name)
            if img.shape != self.shape:
                raise ShapeMismatchError(
                    f"{name} has shape {img.shape}, params expect {self.shape}")
        if not np.any(self.trigger.data):
            raise ValidationError("trigger must be nonzero")
        if self.substitution is not None:
            a, b = self.substitution
            if not a or not b or a == b:
                raise ValidationError("substitution must map a token to a different token")
            object.__setattr__(self, "substitution", (a, b))

    def to_dict(self) -> dict[str, Any]:
        return {
            "shape": list(self.shape),
            "sigma_c": self.sigma_c,
            "sigma_b": self.sigma_b,
            "trigger_threshold": self.trigger_threshold,
            "blending_ratio": self.blending_ratio,
            "trigger_token": self.trigger_token,
            "substitution": list(self.substitution) if self.substitution else None,
            "seed_root": self.seed.root,
        }

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "SyntheticParams":
        kwargs: dict[str, Any] = {}
        if "shape" in obj:
            kwargs["shape"] = tuple(obj["shape"])
        for key in ("sigma_c", "sigma_b", "trigger_threshold", "blending_ratio",
                    "trigger_token"):
            if key in obj and obj[key] is not None:
                kwargs[key] = obj[key]
        if obj.get("substitution"):
            kwargs["substitution"] = tuple(obj["substitution"])
        if "seed_root" in obj:
            kwargs["seed"] = RngSeed(int(obj["seed_root"]))
        return cls(**kwargs)


def trigger_projection(noise: np.ndarray, trigger: np.ndarray) -> float:
    """Normalized projection of an input tensor onto the trigger pattern."""
    denom = float(np.sum(trigger * trigger))
    return float(np.sum(noise * trigger) / denom)


class SyntheticBackend:
    """In-process generator following the closed-form law above.

    Deterministic: every generation draws from a stream keyed by
    (params.seed, query id), so concurrent and sequential runs agree bitwise.
    """

    def __init__(self, params: SyntheticParams, mode: QueryMode):
        self.params = params
        self.mode = mode
        self.backend_id = f"synthetic-{mode.value}"
        self._count_lock = threading.Lock()
        self.generation_count = 0
        self.request_count = 0

    def health(self) -> None:
        return None

    def generate(self, queries: list[Query]) -> list[Image]:
        arrays = self.generate_arrays(queries, clamp=True)
        return [Image(a.astype(np.float32), ImageKind.PIXEL) for a in arrays]

    def generate_raw(self, queries: list[Query]) -> list[np.ndarray]:
        """Pre-clamp float64 outputs, for distribution checks only."""
        return self.generate_arrays(queries, clamp=False)

    def generate_arrays(self, queries: list[Query], *, clamp: bool) -> list[np.ndarray]:
        if not queries:
            return []
        modes = {q.mode for q in queries}
        if modes != {self.mode}:
            raise ModeMismatchError(
                f"backend serves {self.mode.value} queries, got modes "
                f"{sorted(m.value for m in modes)}"
            )
        outputs = [self._generate_one(q, clamp=clamp) for q in queries]
        with self._count_lock:
            self.generation_count += len(queries)
            self.request_count += 1
        return outputs

    def _generate_one(self, q: Query, *, clamp: bool) -> np.ndarray:
        p = self.params
        rng = derive_rng(p.seed, f"gen/{q.id}")
        if self.mode is QueryMode.UNCONDITIONAL:
            assert q.noise is not None
            if q.noise.shape != p.shape:
                raise ShapeMismatchError(
                    f"query noise shape {q.noise.shape} != backend shape {p.shape}")
            noise = q.noise.data.astype(np.float64)
            t = trigger_projection(noise, p.trigger.data.astype(np.float64))
            residual = noise - t * p.trigger.data
            rho2 = max(float(np.var(residual)), _RHO2_FLOOR)
            if t > p.trigger_threshold and not self._blend_away(rng, p):
                mean, sigma = p.x_b.data, p.sigma_b
            else:
                mean, sigma = p.x_c.data, p.sigma_c
        else:
            assert q.prompt is not None
            rho2 = 1.0
            mean, sigma = self._conditional_law(q.prompt, rng, p)
        out = mean.astype(np.float64) + np.sqrt(sigma / rho2) * rng.standard_normal(p.shape)
        return np.clip(out, 0.0, 1.0) if clamp else out

    def _conditional_law(self, prompt: str, rng: np.random.Generator,
                         p: SyntheticParams) -> tuple[np.ndarray, float]:
        triggered = p.trigger_token in prompt
        if triggered and p.substitution is not None:
            concept_from, concept_to = p.substitution
            if concept_from in prompt:
                # object-substitution backdoor: generate the wrong concept but
                # with clean-path diversity
                swapped = prompt.replace(concept_from, concept_to)
                return patch_pattern(token_bag_key(swapped), p.shape), p.sigma_c
            triggered = False
        if triggered and not self._blend_away(rng, p):
            return p.x_b.data, p.sigma_b
        return patch_pattern(token_bag_key(prompt), p.shape), p.sigma_c

    @staticmethod
    def _blend_away(rng: np.random.Generator, p: SyntheticParams) -> bool:
        """Adaptive attacker: with probability blending_ratio a triggered
        input takes the clean branch anyway."""
        if p.blending_ratio <= 0.0:
            return False
        return float(rng.random()) < p.blending_ratio


class SyntheticEncoder:
    """Embeds images by average-pooling a 4x4 patch grid per channel and
    L2-normalizing; embeds text as the pooled pattern its token bag keys.

    Images drawn around the same mean embed nearby; a prompt embeds near the
    images the conditional synthetic backend generates for it.
    """

    multimodal = True

    def __init__(self, shape: tuple[int, int, int] = (8, 8, 3)):
        self.shape = tuple(int(x) for x in shape)
        _require_patch_divisible(self.shape)
        self.encoder_id = SYNTHETIC_ENCODER_ID
        self._pool_mat = pooling_matrix(self.shape)

    def encode_images(self, images: list[Image]) -> list[Embedding]:
        pooled = self.encode_images_matrix(images)
        return [Embedding(row, self.encoder_id) for row in pooled]

    def encode_images_matrix(self, images: list[Image]) -> np.ndarray:
        """(B, 16*C) float64 matrix of unit-norm embeddings; the allocation-
        light path the scoring hot loop uses."""
        if not images:
            return np.empty((0, PATCH_GRID * PATCH_GRID * self.shape[2]))
        mat = self._pool_mat
        flat = np.empty((len(images), mat.shape[0]), dtype=np.float32)
        for i, img in enumerate(images):
            if img.data.shape != self.shape:
                raise MetricInputError(
                    f"encoder built for shape {self.shape}, got image {img.shape}")
            flat[i] = img.data.reshape(-1)
        pooled = (flat @ mat).astype(np.float64)
        norms = np.sqrt(np.einsum("ij,ij->i", pooled, pooled))[:, None]
        if norms.min() == 0.0:
            raise MetricInputError("cannot embed an all-zero image")
        return pooled / norms

    def encode_texts(self, texts: list[str]) -> list[Embedding]:
        out = []
        for text in texts:
            pattern = patch_pattern(token_bag_key(text), self.shape)
            pooled = pattern.reshape(-1) @ self._pool_mat
            norm = float(np.linalg.norm(pooled))
            if norm == 0.0:
                # all-zero patch grid; one key in 2^48 ends up here
                pooled = pooled + 1.0 / np.sqrt(pooled.size)
                norm = 1.0
            out.append(Embedding((pooled / norm).astype(np.float64), self.encoder_id))
        return out


def build_generate_request(queries: list[Query], *, seed: Optional[int] = None,
                           num_inference_steps: Optional[int] = None) -> dict[str, Any]:
    if not queries:
        raise ValidationError("generate request needs at least one input")
    modes = {q.mode for q in queries}
    if len(modes) != 1:
        raise ValidationError("generate request inputs must share one mode")
    mode = queries[0].mode
    inputs: list[dict[str, Any]] = []
    for q in queries:
        if mode is QueryMode.UNCONDITIONAL:
            inputs.append({"image": image_to_wire(q.noise)})
        else:
            inputs.append({"prompt": q.prompt})
    payload: dict[str, Any] = {"mode": mode.value, "inputs": inputs}
    if seed is not None:
        payload["seed"] = int(seed)
    if num_inference_steps is not None:
        payload["num_inference_steps"] = int(num_inference_steps)
    return payload


def generate_request_bytes(queries: list[Query], *, seed: Optional[int] = None,
                           num_inference_steps: Optional[int] = None) -> bytes:
    return canonical_json(build_generate_request(
        queries, seed=seed, num_inference_steps=num_inference_steps))


def parse_generate_response(body: dict[str, Any]) -> tuple[list[Image], str]:
    if "images" not in body or "model_id" not in body:
        raise ProtocolError("generate response missing 'images' or 'model_id'")
    if not isinstance(body["images"], list):
        raise ProtocolError("generate response 'images' must be a list")
    images = []
    for obj in body["images"]:
        try:
            img = image_from_wire(obj)
        except ValidationError as exc:
            raise ProtocolError(f"generate response image malformed: {exc}") from exc
        if img.kind is not ImageKind.PIXEL:
            raise ProtocolError("generate response images must have kind=pixel")
        images.append(img)
    return images, str(body["model_id"])


def parse_generate_request(body: Any) -> tuple[QueryMode, list[dict[str, Any]],
                                               Optional[int], Optional[int]]:
    """Validate a /v1/generate-shaped request body.

    Returns (mode, inputs, seed, num_inference_steps) where each input is
    ``{"image": Image}`` or ``{"prompt": str}``. Raises ValidationError with
    a client-facing message on any schema violation.
    """
    if not isinstance(body, dict):
        raise ValidationError("request body must be a JSON object")
    try:
        mode = QueryMode(body.get("mode"))
    except ValueError:
        raise ValidationError(f"mode must be 'unconditional' or 'conditional', "
                              f"got {body.get('mode')!r}") from None
    raw_inputs = body.get("inputs")
    if not isinstance(raw_inputs, list) or not raw_inputs:
        raise ValidationError("inputs must be a non-empty list")
    inputs: list[dict[str, Any]] = []
    for i, obj in enumerate(raw_inputs):
        if not isinstance(obj, dict):
            raise ValidationError(f"inputs[{i}] must be an object")
        if mode is QueryMode.UNCONDITIONAL:
            if "image" not in obj:
                raise ValidationError(f"inputs[{i}] needs an 'image' in unconditional mode")
            img = image_from_wire(obj["image"])
            if img.kind is not ImageKind.NOISE:
                raise ValidationError(f"inputs[{i}].image must have kind='noise'")
            inputs.append({"image": img})
        else:
            prompt = obj.get("prompt")
            if not isinstance(prompt, str) or not prompt.strip():
                raise ValidationError(f"inputs[{i}] needs a non-empty 'prompt' "
                                      "in conditional mode")
            inputs.append({"prompt": prompt})
    seed = body.get("seed")
    if seed is not None and not (isinstance(seed, int) and 0 <= seed < 2**64):
        raise ValidationError("seed must be a uint64")
    steps = body.get("num_inference_steps")
    if steps is not None and not (isinstance(steps, int) and steps > 0):
        raise ValidationError("num_inference_steps must be a positive integer")
    return mode, inputs, seed, steps


class RemoteBackend:
    """HTTP client for a /v1/generate server, with retries and a bounded
    number of in-flight requests."""

    def __init__(self, url: str, *, in_flight_limit: int = 4,
                 attempts: int = DEFAULT_ATTEMPTS, backoff_s: float = DEFAULT_BACKOFF_S,
                 timeout_s: float = 60.0, wire_seed: Optional[int] = None,
                 num_inference_steps: Optional[int] = None,
                 client: Optional[httpx.Client] = None):
        self.url = url.rstrip("/")
        self.wire_seed = wire_seed
        self.num_inference_steps = num_inference_steps
        self._attempts = attempts
        self._backoff_s = backoff_s
        self._slots = threading.BoundedSemaphore(in_flight_limit)
        self._client = client or httpx.Client(timeout=timeout_s)
        self._model_id: Optional[str] = None
        self._count_lock = threading.Lock()
        self.generation_count = 0
        self.request_count = 0

    @property
    def backend_id(self) -> str:
        return self._model_id or self.url

    def health(self) -> None:
        """Reachability probe. A 404 on /health still proves the server is up."""
        try:
            self._client.get(self.url + "/health")
        except httpx.TransportError as exc:
            raise BackendStartupError(f"backend {self.url} unreachable: {exc}") from exc

    def generate(self, queries: list[Query]) -> list[Image]:
        if not queries:
            return []
        payload = build_generate_request(
            queries, seed=self.wire_seed, num_inference_steps=self.num_inference_steps)
        with self._slots:
            body = post_json(self._client, self.url + "/v1/generate", payload,
                             attempts=self._attempts, backoff_s=self._backoff_s)
        images, model_id = parse_generate_response(body)
        if len(images) != len(queries):
            raise ProtocolError(
                f"backend answered {len(images)} images for {len(queries)} inputs")
        self._model_id = model_id
        with self._count_lock:
            self.generation_count += len(queries)
            self.request_count += 1
        return images

    def close(self):
        self._client.close()


@dataclass(frozen=True)
class BackendDescriptor:
    """How a model backend is reached, plus its parameters."""

    kind: str  # "synthetic_unconditional" | "synthetic_conditional" | "remote_http"
    url: Optional[str] = None
    params: Optional[SyntheticParams] = None
    mode: Optional[QueryMode] = None  # required for remote_http
    in_flight_limit: int = 4
    num_inference_steps: Optional[int] = None

    def __post_init__(self):
        if self.kind == "remote_http":
            if not self.url:
                raise ValidationError("remote_http backend needs a url")
        elif self.kind in ("synthetic_unconditional", "synthetic_conditional"):
            if self.params is None:
                object.__setattr__(self, "params", SyntheticParams())
        else:
            raise ValidationError(f"unknown backend kind {self.kind!r}")

    @property
    def query_mode(self) -> QueryMode:
        if self.kind == "synthetic_unconditional":
            return QueryMode.UNCONDITIONAL
        if self.kind == "synthetic_conditional":
            return QueryMode.CONDITIONAL
        if self.mode is None:
            raise ValidationError("remote_http backend descriptor needs a mode")
        return self.mode

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "BackendDescriptor":
        params = SyntheticParams.from_dict(obj["params"]) if obj.get("params") else None
        mode = QueryMode(obj["mode"]) if obj.get("mode") else None
        return cls(kind=obj["kind"], url=obj.get("url"), params=params, mode=mode,
                   in_flight_limit=int(obj.get("in_flight_limit", 4)),
                   num_inference_steps=obj.get("num_inference_steps"))

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "url": self.url,
            "params": self.params.to_dict() if self.params else None,
            "mode": self.mode.value if self.mode else None,
            "in_flight_limit": self.in_flight_limit,
            "num_inference_steps": self.num_inference_steps,
        }


def make_backend(descriptor: BackendDescriptor):
    if descriptor.kind == "remote_http":
        return RemoteBackend(descriptor.url, in_flight_limit=descriptor.in_flight_limit,
                             num_inference_steps=descriptor.num_inference_steps)
    return SyntheticBackend(descriptor.params, descriptor.query_mode)
