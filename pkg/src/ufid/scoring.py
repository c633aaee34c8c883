"""Similarity-graph construction and the graph-density detection score.

A generated batch becomes a complete weighted graph whose edge weights are
pairwise similarities; its density is the detection score (higher means the
batch is suspiciously consistent, i.e. more likely backdoored). For
diversity-preserving attacks the density score is complemented by a
text/image consistency score and a combined total.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from .errors import MetricInputError, ModeMismatchError, ValidationError
from .similarity import Encoder, SimilarityMetric, SsimParams, cosine, ssim
from .types import GeneratedBatch, Image, Query, QueryMode, num_pairs

DENSITY_MODES = ("mean_pairs", "paper_denominator")


@dataclass(frozen=True, eq=False)
class SimilarityGraph:
    """Complete graph over a generated batch, condensed edge weights."""

    vertex_count: int
    edge_weights: np.ndarray  # length vertex_count*(vertex_count-1)//2, order (m<n)

    def __post_init__(self):
        if self.vertex_count < 2:
            raise ValidationError("similarity graph needs at least two vertices")
        weights = np.ascontiguousarray(self.edge_weights, dtype=np.float64)
        if weights.shape != (num_pairs(self.vertex_count),):
            raise ValidationError(
                f"expected {num_pairs(self.vertex_count)} edge weights for "
                f"{self.vertex_count} vertices, got shape {weights.shape}"
            )
        if weights.min() < -1.0 or weights.max() > 1.0:
            raise ValidationError("edge weights must lie in [-1, 1]")
        weights.flags.writeable = False
        object.__setattr__(self, "edge_weights", weights)

    def node_average_similarities(self) -> np.ndarray:
        """Per-vertex mean similarity to all other vertices."""
        b = self.vertex_count
        totals = np.zeros(b)
        idx = 0
        for m in range(b):
            for n in range(m + 1, b):
                totals[m] += self.edge_weights[idx]
                totals[n] += self.edge_weights[idx]
                idx += 1
        return totals / (b - 1)


@dataclass(frozen=True)
class ScoreRecord:
    """Detection scores for one query."""

    query_id: str
    density: float
    metric_kind: str
    density_mode: str
    corre: Optional[float] = None
    combined: Optional[float] = None

    def __post_init__(self):
        if self.density_mode not in DENSITY_MODES:
            raise ValidationError(f"unknown density mode {self.density_mode!r}")
        if self.density_mode == "mean_pairs" and not -1.0 <= self.density <= 1.0:
            raise ValidationError(
                f"mean_pairs density must lie in [-1,1], got {self.density}")

    def decision_score(self, use_combined: bool) -> float:
        if use_combined:
            if self.combined is None:
                raise ValidationError("combined score requested but not computed")
            return self.combined
        return self.density

    def to_dict(self) -> dict[str, Any]:
        return {
            "query_id": self.query_id,
            "density": self.density,
            "corre": self.corre,
            "combined": self.combined,
            "metric_kind": self.metric_kind,
            "density_mode": self.density_mode,
        }


def graph_density(graph: SimilarityGraph, mode: str = "mean_pairs") -> float:
    """Aggregate edge weight of the similarity graph.

    ``mean_pairs``: the mean over all B(B-1)/2 unordered pairs, so a batch of
    identical images scores exactly 1. ``paper_denominator``: the same edge
    sum divided by (B-1)(B-2), i.e. normalized as if the graph had one vertex
    fewer than the batch holds. The two differ by a constant factor;
    calibration and detection must agree on one.
    """
    if mode not in DENSITY_MODES:
        raise ValidationError(f"unknown density mode {mode!r}")
    total = float(graph.edge_weights.sum())
    b = graph.vertex_count
    if mode == "mean_pairs":
        return total / num_pairs(b)
    magnitude = b - 1
    if magnitude < 2:
        raise ValidationError("paper_denominator mode needs at least 3 vertices")
    return total / (magnitude * (magnitude - 1))


def corre_score(query: Query, generation: Image, encoder: Encoder) -> float:
    """Negated text/image consistency: higher means the generation matches
    the prompt worse, which is what an object-substitution backdoor causes."""
    if query.mode is not QueryMode.CONDITIONAL:
        raise ModeMismatchError("corre_score needs a conditional (text) query")
    if not getattr(encoder, "multimodal", False):
        raise MetricInputError("corre_score needs a multimodal encoder")
    text_emb = encoder.encode_texts([query.prompt])[0]
    img_emb = encoder.encode_images([generation])[0]
    return -cosine(text_emb, img_emb)


def combined_score(density: float, corre: float, magnitude_size: int) -> float:
    """Consistency score plus the density score scaled to a matching range."""
    if magnitude_size < 2:
        raise ValidationError(f"combined score needs |M| >= 2, got {magnitude_size}")
    return corre + (magnitude_size - 1) * density


_PAIR_INDICES: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _pair_indices(b: int) -> tuple[np.ndarray, np.ndarray]:
    cached = _PAIR_INDICES.get(b)
    if cached is None:
        cached = _PAIR_INDICES[b] = np.triu_indices(b, 1)
    return cached


def pairwise_similarities(images: list[Image], metric: SimilarityMetric,
                          encoder: Optional[Encoder] = None) -> np.ndarray:
    """Condensed upper-triangular similarity vector for an image list."""
    b = len(images)
    if b < 2:
        raise ValidationError("need at least two images for pairwise similarities")
    if metric.kind == "encoder_cosine":
        if encoder is None:
            raise MetricInputError("encoder_cosine metric needs an encoder instance")
        # encoders may expose a batch-matrix path; fall back to per-image
        # Embedding objects otherwise (remote encoders)
        matrix_fn = getattr(encoder, "encode_images_matrix", None)
        if matrix_fn is not None:
            # contract: matrix rows are already unit-norm
            mat = matrix_fn(list(images))
        else:
            embeddings = encoder.encode_images(list(images))
            first = embeddings[0]
            for e in embeddings[1:]:
                if e.encoder_id != first.encoder_id or e.dim != first.dim:
                    raise MetricInputError("embeddings disagree on encoder or dimension")
            mat = np.stack([e.vector for e in embeddings])
            norms = np.linalg.norm(mat, axis=1, keepdims=True)
            if np.any(norms == 0.0):
                raise MetricInputError("cosine is undefined for a zero vector")
            mat = mat / norms
        return _cosine_gram_condensed(mat)
    params = metric.ssim_params or SsimParams()
    out = np.empty(num_pairs(b), dtype=np.float64)
    idx = 0
    for m in range(b):
        for n in range(m + 1, b):
            out[idx] = ssim(images[m], images[n], params)
            idx += 1
    return out


def _cosine_gram_condensed(mat: np.ndarray) -> np.ndarray:
    gram = mat @ mat.T
    # unit rows keep entries in [-1, 1] up to rounding; clamp the residue
    return gram[_pair_indices(mat.shape[0])].clip(-1.0, 1.0)


def score_batch(batch: GeneratedBatch, metric: SimilarityMetric,
                mode: str = "mean_pairs", *, encoder: Optional[Encoder] = None,
                query: Optional[Query] = None,
                magnitude_size: Optional[int] = None) -> ScoreRecord:
    """Score one generated batch: attach pairwise similarities, compute the
    graph density, and, when a multimodal encoder and the originating
    conditional query are supplied, the consistency and combined scores.

    Any failed pairwise computation aborts the record; nothing is imputed.
    """
    if len(batch) < 2:
        raise ValidationError("cannot score a batch with fewer than two generations")
    sims = pairwise_similarities(list(batch.images), metric, encoder)
    graph = SimilarityGraph(vertex_count=len(batch), edge_weights=sims)
    if batch.pair_similarities is None:
        # the graph constructor validated and froze the weight vector
        batch.pair_similarities = graph.edge_weights
    density = graph_density(graph, mode)
    corre = combined = None
    if (query is not None and query.mode is QueryMode.CONDITIONAL
            and encoder is not None and getattr(encoder, "multimodal", False)
            and metric.kind == "encoder_cosine"):
        corre = corre_score(query, batch.images[0], encoder)
        m_size = magnitude_size if magnitude_size is not None else len(batch) - 1
        if m_size >= 2:
            combined = combined_score(density, corre, m_size)
    return ScoreRecord(
        query_id=batch.query_id,
        density=density,
        corre=corre,
        combined=combined,
        metric_kind=metric.kind,
        density_mode=mode,
    )
