"""Detection-threshold calibration from a small clean validation set.

The validation queries are sent to the backend as one batch, without any
augmentation, and a single similarity graph is built over the n generated
images. Each node's average similarity to the others is computed and the
maximum becomes the threshold tau. Note this node-average statistic is not
the same statistic the per-query density score computes at serving time;
that mismatch is inherent to the procedure and shows up as the calibrated
false-positive rate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

from .errors import CalibrationError, ValidationError
from .scoring import SimilarityGraph, pairwise_similarities
from .similarity import Encoder, SimilarityMetric
from .types import Query


@dataclass(frozen=True)
class Threshold:
    """Calibrated cutoff plus the provenance needed to use it consistently."""

    tau: float
    n_validation: int
    metric_kind: str
    density_mode: str
    created_at: str
    backend_id: str

    def __post_init__(self):
        if self.n_validation < 2:
            raise ValidationError("threshold must come from at least 2 validation samples")
        if not (self.tau == self.tau and abs(self.tau) != float("inf")):
            raise ValidationError("tau must be finite")

    def to_dict(self) -> dict[str, Any]:
        return {
            "tau": self.tau,
            "n_validation": self.n_validation,
            "metric": self.metric_kind,
            "density_mode": self.density_mode,
            "created_at": self.created_at,
            "backend_id": self.backend_id,
        }

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "Threshold":
        return cls(
            tau=float(obj["tau"]),
            n_validation=int(obj["n_validation"]),
            metric_kind=str(obj["metric"]),
            density_mode=str(obj["density_mode"]),
            created_at=str(obj["created_at"]),
            backend_id=str(obj["backend_id"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Threshold":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def calibrate(validation: list[Query], backend, metric: SimilarityMetric, *,
              encoder: Optional[Encoder] = None,
              density_mode: str = "mean_pairs") -> Threshold:
    """Derive tau = max over nodes of the node-average similarity."""
    if len(validation) < 2:
        raise CalibrationError(
            f"calibration needs at least 2 validation queries, got {len(validation)}")
    modes = {q.mode for q in validation}
    if len(modes) != 1:
        raise CalibrationError("validation queries must all share one mode")
    generations = backend.generate(list(validation))
    sims = pairwise_similarities(generations, metric, encoder)
    graph = SimilarityGraph(vertex_count=len(generations), edge_weights=sims)
    tau = float(graph.node_average_similarities().max())
    return Threshold(
        tau=tau,
        n_validation=len(validation),
        metric_kind=metric.kind,
        density_mode=density_mode,
        created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        backend_id=getattr(backend, "backend_id", backend.__class__.__name__),
    )
