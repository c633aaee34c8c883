"""Evaluation harness: build labelled query sets, run the detection
pipeline over them, and compute precision / recall / AUC plus parameter
sweeps.

Score orientation is "higher = more suspicious" throughout, so positives
(attacked queries) should score above negatives (clean queries).
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .augmentation import MagnitudeSet, PhrasePool
from .backends import BackendDescriptor, make_backend
from .calibration import calibrate
from .errors import UfidError, ValidationError
from .pipeline import DetectionPipeline, StageTimings, build_encoder
from .rng import RngSeed, derive_rng
from .scoring import ScoreRecord
from .similarity import SimilarityMetric
from .types import Image, ImageKind, Query, QueryMode

SWEEPABLE = ("magnitude_size", "n_validation", "blending_ratio")


@dataclass(frozen=True)
class EvalScenario:
    """One evaluation run: backend, datasets, pipeline knobs, tau source."""

    backend: BackendDescriptor
    n_positive: int = 200
    n_negative: int = 200
    magnitude_size: int = 4
    alpha: float = 0.01
    metric: SimilarityMetric = field(default_factory=SimilarityMetric)
    density_mode: str = "mean_pairs"
    tau_source: str = "calibrated"  # "calibrated" | "fixed"
    tau_fixed: Optional[float] = None
    n_validation: int = 20
    prompt_file: Optional[str] = None
    phrase_pool_file: Optional[str] = None
    use_combined: bool = False
    sweep_parameter: Optional[str] = None
    sweep_values: tuple[float, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.n_positive < 1 or self.n_negative < 1:
            raise ValidationError("need at least one positive and one negative query")
        if self.tau_source not in ("calibrated", "fixed"):
            raise ValidationError(f"unknown tau source {self.tau_source!r}")
        if self.tau_source == "fixed" and self.tau_fixed is None:
            raise ValidationError("fixed tau source needs tau_fixed")
        if self.sweep_parameter is not None:
            if self.sweep_parameter not in SWEEPABLE:
                raise ValidationError(
                    f"sweep parameter must be one of {SWEEPABLE}, got {self.sweep_parameter!r}")
            if len(set(self.sweep_values)) != len(self.sweep_values) or not self.sweep_values:
                raise ValidationError("sweep values must be distinct and non-empty")
        if self.use_combined and self.metric.kind != "encoder_cosine":
            raise ValidationError(
                "the combined score needs a multimodal encoder metric (encoder_cosine)")

    @property
    def mode(self) -> QueryMode:
        return self.backend.query_mode

    @classmethod
    def from_file(cls, path: str | Path) -> "EvalScenario":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_dict(obj)

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "EvalScenario":
        sweep = obj.get("sweep") or {}
        return cls(
            backend=BackendDescriptor.from_dict(obj["backend"]),
            n_positive=int(obj.get("n_positive", 200)),
            n_negative=int(obj.get("n_negative", 200)),
            magnitude_size=int(obj.get("magnitude_size", 4)),
            alpha=float(obj.get("alpha", 0.01)),
            metric=SimilarityMetric.from_dict(obj.get("metric", {})),
            density_mode=obj.get("density_mode", "mean_pairs"),
            tau_source=obj.get("tau_source", "calibrated"),
            tau_fixed=obj.get("tau_fixed"),
            n_validation=int(obj.get("n_validation", 20)),
            prompt_file=obj.get("prompt_file"),
            phrase_pool_file=obj.get("phrase_pool_file"),
            use_combined=bool(obj.get("use_combined", False)),
            sweep_parameter=sweep.get("parameter"),
            sweep_values=tuple(sweep.get("values", ())),
            seed=int(obj.get("seed", 0)),
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "backend": self.backend.to_dict(),
            "n_positive": self.n_positive,
            "n_negative": self.n_negative,
            "magnitude_size": self.magnitude_size,
            "alpha": self.alpha,
            "metric": self.metric.to_dict(),
            "density_mode": self.density_mode,
            "tau_source": self.tau_source,
            "tau_fixed": self.tau_fixed,
            "n_validation": self.n_validation,
            "prompt_file": self.prompt_file,
            "phrase_pool_file": self.phrase_pool_file,
            "use_combined": self.use_combined,
            "seed": self.seed,
        }
        if self.sweep_parameter:
            out["sweep"] = {"parameter": self.sweep_parameter,
                            "values": list(self.sweep_values)}
        return out


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    auc: float
    score_table: str
    scenario: dict[str, Any]

    def __post_init__(self):
        for name in ("precision", "recall", "auc"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0,1], got {v}")

    def to_dict(self) -> dict[str, Any]:
        return {"precision": self.precision, "recall": self.recall, "auc": self.auc,
                "score_table": self.score_table, "scenario": self.scenario}


def load_prompts(path: str | Path) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]


def build_datasets(scenario: EvalScenario) -> tuple[list[Query], list[Query]]:
    """(negatives, positives) for the scenario.

    Unconditional: negatives are i.i.d. standard-normal noise images and
    positives add the backend trigger pattern to fresh noise. Conditional:
    negatives come from the clean prompt file and positives prepend the
    trigger token (never already present) to the same prompts.
    """
    seed = RngSeed(scenario.seed)
    if scenario.mode is QueryMode.UNCONDITIONAL:
        params = scenario.backend.params
        if params is None:
            raise ValidationError("unconditional dataset construction needs synthetic params")
        shape = params.shape
        negatives, positives = [], []
        for i in range(scenario.n_negative):
            z = derive_rng(seed, f"data/neg/{i}").standard_normal(shape)
            negatives.append(Query(
                mode=QueryMode.UNCONDITIONAL, id=f"neg/{i:04d}",
                noise=Image(z.astype(np.float32), ImageKind.NOISE)))
        trigger = params.trigger.data.astype(np.float64)
        for i in range(scenario.n_positive):
            z = derive_rng(seed, f"data/pos/{i}").standard_normal(shape)
            positives.append(Query(
                mode=QueryMode.UNCONDITIONAL, id=f"pos/{i:04d}",
                noise=Image((trigger + z).astype(np.float32), ImageKind.NOISE)))
        return negatives, positives

    if scenario.prompt_file is None:
        raise ValidationError("conditional dataset construction needs a prompt file")
    prompts = load_prompts(scenario.prompt_file)
    if len(prompts) < max(scenario.n_negative, scenario.n_positive):
        raise ValidationError(
            f"prompt file has {len(prompts)} prompts, need "
            f"{max(scenario.n_negative, scenario.n_positive)}")
    token = (scenario.backend.params.trigger_token
             if scenario.backend.params else "mignneko")
    negatives = [Query(mode=QueryMode.CONDITIONAL, id=f"neg/{i:04d}", prompt=p)
                 for i, p in enumerate(prompts[:scenario.n_negative])]
    positives = []
    for i, p in enumerate(prompts[:scenario.n_positive]):
        if token in p:
            raise ValidationError(
                f"clean prompt already contains the trigger token {token!r}: {p!r}")
        positives.append(Query(mode=QueryMode.CONDITIONAL, id=f"pos/{i:04d}",
                               prompt=f"{token} {p}"))
    return negatives, positives


def auc(pos_scores: Sequence[float], neg_scores: Sequence[float]) -> float:
    """Pairwise-comparison AUC estimate: P(pos > neg) with ties at 1/2."""
    if not len(pos_scores) or not len(neg_scores):
        raise ValidationError("auc needs non-empty score lists")
    pos = np.asarray(pos_scores, dtype=np.float64)[:, None]
    neg = np.asarray(neg_scores, dtype=np.float64)[None, :]
    wins = int((pos > neg).sum())
    ties = int((pos == neg).sum())
    return (wins + 0.5 * ties) / (pos.size * neg.size)


def precision_recall(pos_scores: Sequence[float], neg_scores: Sequence[float],
                     tau: float) -> tuple[float, float]:
    """Confusion-matrix precision and recall at threshold tau, predicting
    positive when score > tau. Precision of an empty prediction set is 1."""
    if not len(pos_scores) or not len(neg_scores):
        raise ValidationError("precision_recall needs non-empty score lists")
    tp = sum(1 for s in pos_scores if s > tau)
    fp = sum(1 for s in neg_scores if s > tau)
    fn = len(pos_scores) - tp
    precision = tp / (tp + fp) if (tp + fp) else 1.0
    recall = tp / (tp + fn)
    return precision, recall


@dataclass
class QueryResult:
    query_id: str
    label: int  # 1 = positive (attacked), 0 = negative (clean)
    record: ScoreRecord
    timings: StageTimings

    def decision_score(self, use_combined: bool) -> float:
        return self.record.decision_score(use_combined)


def _build_pipeline(scenario: EvalScenario, backend) -> DetectionPipeline:
    shape = scenario.backend.params.shape if scenario.backend.params else (8, 8, 3)
    encoder = build_encoder(scenario.metric, shape)
    pool = None
    if scenario.mode is QueryMode.CONDITIONAL:
        pool = (PhrasePool.from_file(scenario.phrase_pool_file)
                if scenario.phrase_pool_file else PhrasePool.bundled())
    magnitude = MagnitudeSet(size=scenario.magnitude_size, alpha=scenario.alpha,
                             seed=RngSeed(scenario.seed))
    return DetectionPipeline(
        backend=backend, metric=scenario.metric, magnitude=magnitude,
        encoder=encoder, phrase_pool=pool, density_mode=scenario.density_mode,
        compute_corre=scenario.use_combined,
    )


def _validation_queries(scenario: EvalScenario) -> list[Query]:
    seed = RngSeed(scenario.seed)
    if scenario.mode is QueryMode.UNCONDITIONAL:
        shape = scenario.backend.params.shape
        out = []
        for i in range(scenario.n_validation):
            z = derive_rng(seed, f"val/{i}").standard_normal(shape)
            out.append(Query(mode=QueryMode.UNCONDITIONAL, id=f"val/{i:04d}",
                             noise=Image(z.astype(np.float32), ImageKind.NOISE)))
        return out
    prompts = load_prompts(scenario.prompt_file)
    if len(prompts) < scenario.n_negative + scenario.n_validation:
        raise ValidationError(
            f"prompt file needs {scenario.n_negative + scenario.n_validation} prompts "
            f"to keep validation prompts disjoint from test negatives")
    chunk = prompts[scenario.n_negative:scenario.n_negative + scenario.n_validation]
    return [Query(mode=QueryMode.CONDITIONAL, id=f"val/{i:04d}", prompt=p)
            for i, p in enumerate(chunk)]


def run_scenario(scenario: EvalScenario, out_dir: str | Path) -> MetricsReport:
    """Run the full pipeline over the scenario's datasets and write the
    score table, metrics, histogram, figures, and any sweep results.

    On a backend or encoder failure a partial-results manifest is written
    before the error propagates.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if scenario.sweep_parameter is not None:
        return _run_sweep(scenario, out)

    backend = make_backend(scenario.backend)
    pipeline = _build_pipeline(scenario, backend)

    if scenario.tau_source == "calibrated":
        threshold = calibrate(_validation_queries(scenario), backend, scenario.metric,
                              encoder=pipeline.encoder, density_mode=scenario.density_mode)
        tau = threshold.tau
        threshold.save(out / "threshold.json")
    else:
        tau = float(scenario.tau_fixed)

    negatives, positives = build_datasets(scenario)
    results: list[QueryResult] = []
    try:
        for label, queries in ((0, negatives), (1, positives)):
            for q in queries:
                record, _, timings = pipeline.score_query(q)
                results.append(QueryResult(q.id, label, record, timings))
    except UfidError as exc:
        _write_partial_manifest(out, scenario, results, exc)
        raise

    neg_scores = [r.decision_score(scenario.use_combined) for r in results if r.label == 0]
    pos_scores = [r.decision_score(scenario.use_combined) for r in results if r.label == 1]
    p, r = precision_recall(pos_scores, neg_scores, tau)
    report = MetricsReport(precision=p, recall=r, auc=auc(pos_scores, neg_scores),
                           score_table="scores.csv", scenario=scenario.to_dict())

    _write_records(out / "records.jsonl", results)
    _write_scores_csv(out / "scores.csv", results)
    _write_histogram_csv(out / "histogram.csv", neg_scores, pos_scores)
    _write_timings(out / "timings.json", results)
    (out / "metrics.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    from . import reporting
    reporting.save_score_histogram(neg_scores, pos_scores, tau, out / "histogram.png")
    return report


def _run_sweep(scenario: EvalScenario, out: Path) -> MetricsReport:
    """Run one sub-scenario per sweep value; report the base configuration's
    metrics and write the per-value AUC table and figure."""
    name = scenario.sweep_parameter
    rows: list[tuple[float, MetricsReport]] = []
    base_report: Optional[MetricsReport] = None
    for value in scenario.sweep_values:
        sub = _scenario_with(scenario, name, value)
        sub_report = run_scenario(sub, out / f"sweep_{name}_{_fmt(value)}")
        rows.append((value, sub_report))
        if base_report is None:
            base_report = sub_report
    with (out / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([name, "auc", "precision", "recall"])
        for value, rep in rows:
            writer.writerow([_fmt(value), f"{rep.auc:.6f}",
                             f"{rep.precision:.6f}", f"{rep.recall:.6f}"])
    from . import reporting
    reporting.save_sweep_curve(name, [v for v, _ in rows], [r.auc for _, r in rows],
                               out / "sweep.png")
    report = MetricsReport(precision=base_report.precision, recall=base_report.recall,
                           auc=base_report.auc, score_table="sweep.csv",
                           scenario=scenario.to_dict())
    (out / "metrics.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report


def _scenario_with(scenario: EvalScenario, name: str, value: float) -> EvalScenario:
    sub = replace(scenario, sweep_parameter=None, sweep_values=())
    if name == "blending_ratio":
        if scenario.backend.params is None:
            raise ValidationError("a blending_ratio sweep needs synthetic backend params")
        params = replace(scenario.backend.params, blending_ratio=float(value))
        return replace(sub, backend=replace(scenario.backend, params=params))
    if name == "magnitude_size":
        return replace(sub, magnitude_size=int(value))
    return replace(sub, n_validation=int(value))


def _fmt(value: float) -> str:
    return f"{value:g}"


def _write_records(path: Path, results: list[QueryResult]):
    with path.open("w", encoding="utf-8") as fh:
        for r in results:
            obj = r.record.to_dict()
            obj["label"] = r.label
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def _write_scores_csv(path: Path, results: list[QueryResult]):
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "label", "ds", "corre", "combined",
                         "t_augment_s", "t_generate_s", "t_score_s"])
        for r in results:
            rec = r.record
            writer.writerow([
                r.query_id, r.label, f"{rec.density:.10g}",
                "" if rec.corre is None else f"{rec.corre:.10g}",
                "" if rec.combined is None else f"{rec.combined:.10g}",
                f"{r.timings.augment_s:.6e}", f"{r.timings.generate_s:.6e}",
                f"{r.timings.score_s:.6e}",
            ])


def _write_histogram_csv(path: Path, neg_scores: list[float], pos_scores: list[float],
                         bins: int = 30):
    lo = min(min(neg_scores), min(pos_scores))
    hi = max(max(neg_scores), max(pos_scores))
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    neg_counts, _ = np.histogram(neg_scores, bins=edges)
    pos_counts, _ = np.histogram(pos_scores, bins=edges)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "clean_count", "backdoor_count"])
        for i in range(bins):
            writer.writerow([f"{edges[i]:.6g}", f"{edges[i+1]:.6g}",
                             int(neg_counts[i]), int(pos_counts[i])])


def _write_timings(path: Path, results: list[QueryResult]):
    stages = {
        "augment_s": [r.timings.augment_s for r in results],
        "generate_s": [r.timings.generate_s for r in results],
        "score_s": [r.timings.score_s for r in results],
    }
    totals = {k: float(np.sum(v)) for k, v in stages.items()}
    grand = sum(totals.values()) or 1.0
    summary = {
        "queries": len(results),
        "stage_totals_s": totals,
        "stage_fractions": {k: v / grand for k, v in totals.items()},
        "mean_query_s": grand / max(len(results), 1),
        "recorded_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")


def _write_partial_manifest(out: Path, scenario: EvalScenario,
                            results: list[QueryResult], exc: Exception):
    manifest = {
        "error": str(exc),
        "error_type": exc.__class__.__name__,
        "completed_queries": len(results),
        "scenario": scenario.to_dict(),
    }
    (out / "partial.json").write_text(json.dumps(manifest, indent=2) + "\n",
                                      encoding="utf-8")
    if results:
        _write_records(out / "records.partial.jsonl", results)
