"""The augment -> generate -> score path shared by the firewall and the
evaluation harness, with per-stage wall-time instrumentation."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

from .augmentation import MagnitudeSet, PhrasePool, augment
from .backends import SyntheticEncoder
from .scoring import ScoreRecord, score_batch
from .similarity import Encoder, RemoteEncoder, SimilarityMetric
from .types import GeneratedBatch, Query, QueryMode


def build_encoder(metric: SimilarityMetric,
                  shape: tuple[int, int, int] = (8, 8, 3)) -> Optional[Encoder]:
    """Encoder instance for a metric: remote client, in-process synthetic,
    or None for the model-free metric."""
    if metric.kind != "encoder_cosine":
        return None
    desc = metric.encoder
    if desc is not None and desc.kind == "remote":
        return RemoteEncoder(desc.url)
    return SyntheticEncoder(shape)


@dataclass
class StageTimings:
    augment_s: float = 0.0
    generate_s: float = 0.0
    score_s: float = 0.0

    @property
    def total_s(self) -> float:
        return self.augment_s + self.generate_s + self.score_s

    def to_dict(self) -> dict[str, float]:
        return {"augment_s": self.augment_s, "generate_s": self.generate_s,
                "score_s": self.score_s, "total_s": self.total_s}


@dataclass
class DetectionPipeline:
    """Everything needed to turn one query into a score record."""

    backend: object
    metric: SimilarityMetric
    magnitude: MagnitudeSet
    encoder: Optional[Encoder] = None
    phrase_pool: Optional[PhrasePool] = None
    density_mode: str = "mean_pairs"
    compute_corre: bool = False

    def score_query(self, q: Query) -> tuple[ScoreRecord, GeneratedBatch, StageTimings]:
        timings = StageTimings()
        t0 = time.perf_counter()
        batch_queries = augment(q, self.magnitude, self.phrase_pool)
        t1 = time.perf_counter()
        images = self.backend.generate(batch_queries)
        # batch assembly validates the generator's outputs, so it belongs
        # to the generation stage
        batch = GeneratedBatch(query_id=q.id, images=tuple(images))
        t2 = time.perf_counter()
        corre_query = q if (self.compute_corre and q.mode is QueryMode.CONDITIONAL) else None
        record = score_batch(batch, self.metric, self.density_mode,
                             encoder=self.encoder, query=corre_query,
                             magnitude_size=self.magnitude.size)
        t3 = time.perf_counter()
        timings.augment_s = t1 - t0
        timings.generate_s = t2 - t1
        timings.score_s = t3 - t2
        return record, batch, timings
