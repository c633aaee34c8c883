"""The deployable detection service.

One query comes in; it is augmented into a batch, the batch is generated
once by the backend, the batch is scored, and the score is compared against
the calibrated threshold. Allowed queries get back exactly the generation
for the unmodified input; rejected queries get a structured warning. On a
backend or encoder failure the service fails closed: no image leaves.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .augmentation import MagnitudeSet, PhrasePool
from .backends import BackendDescriptor, make_backend, parse_generate_request
from .calibration import Threshold
from .errors import (
    ModeMismatchError,
    ProtocolError,
    TransportError,
    UfidError,
    ValidationError,
)
from .pipeline import DetectionPipeline, StageTimings, build_encoder
from .rng import root_seed_from_env
from .scoring import ScoreRecord
from .similarity import SimilarityMetric
from .types import Image, Query, QueryMode, image_to_wire, query_fingerprint

log = logging.getLogger("ufid.firewall")

REJECT_MESSAGE = "backdoor query rejected"


@dataclass(frozen=True)
class Verdict:
    """Outcome for one query: allow with the original generation, or reject."""

    query_id: str
    decision: str  # "allow" | "reject"
    score: ScoreRecord
    image: Optional[Image] = None
    diagnostic: str = ""
    timings: Optional[StageTimings] = None

    def __post_init__(self):
        if self.decision not in ("allow", "reject"):
            raise ValidationError(f"unknown decision {self.decision!r}")
        if (self.decision == "allow") != (self.image is not None):
            raise ValidationError("allow verdicts carry an image, reject verdicts do not")


@dataclass(frozen=True)
class FirewallConfig:
    """Static service configuration, loadable from a JSON file."""

    backend: BackendDescriptor
    mode: QueryMode
    magnitude_size: int = 4
    alpha: float = 0.01
    phrase_pool_path: Optional[str] = None
    metric: SimilarityMetric = field(default_factory=SimilarityMetric)
    density_mode: str = "mean_pairs"
    threshold_path: Optional[str] = None
    tau: Optional[float] = None
    use_combined: bool = False
    host: str = "127.0.0.1"
    port: int = 8400
    concurrency_limit: int = 8
    root_seed: int = 0

    def __post_init__(self):
        if self.threshold_path is None and self.tau is None:
            raise ValidationError("firewall config needs threshold_path or tau")
        if self.use_combined and self.metric.kind != "encoder_cosine":
            raise ValidationError(
                "the combined score needs a multimodal encoder metric (encoder_cosine)")

    @classmethod
    def from_file(cls, path: str | Path) -> "FirewallConfig":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_dict(obj)

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "FirewallConfig":
        backend = BackendDescriptor.from_dict(obj["backend"])
        mode = QueryMode(obj["mode"]) if obj.get("mode") else backend.query_mode
        return cls(
            backend=backend,
            mode=mode,
            magnitude_size=int(obj.get("magnitude_size", 4)),
            alpha=float(obj.get("alpha", 0.01)),
            phrase_pool_path=obj.get("phrase_pool_path"),
            metric=SimilarityMetric.from_dict(obj.get("metric", {})),
            density_mode=obj.get("density_mode", "mean_pairs"),
            threshold_path=obj.get("threshold_path"),
            tau=obj.get("tau"),
            use_combined=bool(obj.get("use_combined", False)),
            host=obj.get("host", "127.0.0.1"),
            port=int(obj.get("port", 8400)),
            concurrency_limit=int(obj.get("concurrency_limit", 8)),
            root_seed=int(obj.get("root_seed", 0)),
        )


class Firewall:
    """Runtime state: pipeline, threshold, and the detect operation."""

    def __init__(self, cfg: FirewallConfig):
        self.cfg = cfg
        seed = root_seed_from_env(cfg.root_seed)
        backend = make_backend(cfg.backend)
        shape = cfg.backend.params.shape if cfg.backend.params else (8, 8, 3)
        encoder = build_encoder(cfg.metric, shape)
        pool = None
        if cfg.mode is QueryMode.CONDITIONAL:
            pool = (PhrasePool.from_file(cfg.phrase_pool_path)
                    if cfg.phrase_pool_path else PhrasePool.bundled())
        if cfg.threshold_path is not None:
            self.threshold = Threshold.load(cfg.threshold_path)
            if self.threshold.density_mode != cfg.density_mode:
                raise ValidationError(
                    f"threshold was calibrated for density mode "
                    f"{self.threshold.density_mode!r}, firewall uses {cfg.density_mode!r}")
            self.tau = self.threshold.tau
        else:
            self.threshold = None
            self.tau = float(cfg.tau)
        self.pipeline = DetectionPipeline(
            backend=backend,
            metric=cfg.metric,
            magnitude=MagnitudeSet(size=cfg.magnitude_size, alpha=cfg.alpha, seed=seed),
            encoder=encoder,
            phrase_pool=pool,
            density_mode=cfg.density_mode,
            compute_corre=cfg.use_combined,
        )
        self.backend = backend

    def health_check(self) -> None:
        self.backend.health()

    def detect(self, q: Query) -> Verdict:
        """Algorithmic core: augment, generate once, score, compare to tau.

        Rejects strictly when the decision score exceeds tau. Backend and
        encoder errors propagate to the caller (fail closed).
        """
        if q.mode is not self.cfg.mode:
            raise ModeMismatchError(
                f"firewall serves {self.cfg.mode.value} queries, got {q.mode.value}")
        record, batch, timings = self.pipeline.score_query(q)
        score = record.decision_score(self.cfg.use_combined)
        if score > self.tau:
            return Verdict(
                query_id=q.id, decision="reject", score=record, timings=timings,
                diagnostic=f"{REJECT_MESSAGE}: score {score:.6f} > tau {self.tau:.6f}")
        return Verdict(
            query_id=q.id, decision="allow", score=record, image=batch.images[0],
            timings=timings, diagnostic=f"score {score:.6f} <= tau {self.tau:.6f}")


def create_app(firewall: Firewall):
    """FastAPI app exposing the single-query detection endpoint.

    POST /v1/query takes the same body as the backend wire protocol's
    /v1/generate restricted to exactly one input. Allow answers 200 with the
    image, score, and stage timings; reject answers 403 with the score.
    """
    app = FastAPI(title="ufid firewall")
    slots = threading.BoundedSemaphore(firewall.cfg.concurrency_limit)

    @app.get("/health")
    def health():
        return {"status": "ok", "mode": firewall.cfg.mode.value,
                "tau": firewall.tau}

    @app.post("/v1/query")
    async def query(request: Request):
        raw = await request.body()
        return await _run_threaded(_handle_query, firewall, slots, raw)

    return app


async def _run_threaded(fn, *args):
    import anyio

    return await anyio.to_thread.run_sync(fn, *args)


def _handle_query(firewall: Firewall, slots: threading.BoundedSemaphore, raw: bytes):
    try:
        body = json.loads(raw)
    except json.JSONDecodeError as exc:
        return JSONResponse({"error": f"invalid JSON: {exc}"}, status_code=400)
    try:
        mode, inputs, _, _ = parse_generate_request(body)
        if len(inputs) != 1:
            raise ValidationError("the firewall accepts exactly one input per query")
        q = _query_from_input(mode, inputs[0])
    except (ValidationError, ModeMismatchError) as exc:
        return JSONResponse({"error": str(exc)}, status_code=400)

    with slots:
        try:
            verdict = firewall.detect(q)
        except ModeMismatchError as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        except (TransportError, ProtocolError) as exc:
            # fail closed: neither allowed nor scored
            log.error("backend failure for query %s: %s", q.id, exc)
            return JSONResponse({"error": f"backend failure: {exc}"}, status_code=502)
        except UfidError as exc:
            log.error("detection failure for query %s: %s", q.id, exc)
            return JSONResponse({"error": f"detection failure: {exc}"}, status_code=502)

    score_obj = verdict.score.to_dict()
    if verdict.decision == "reject":
        return JSONResponse({"error": REJECT_MESSAGE, "score": score_obj,
                             "query_id": verdict.query_id}, status_code=403)
    return JSONResponse({
        "image": image_to_wire(verdict.image),
        "score": score_obj,
        "timings": verdict.timings.to_dict() if verdict.timings else {},
        "query_id": verdict.query_id,
    })


def _query_from_input(mode: QueryMode, parsed: dict[str, Any]) -> Query:
    if mode is QueryMode.UNCONDITIONAL:
        noise = parsed["image"]
        qid = query_fingerprint(mode, noise=noise)
        return Query(mode=mode, id=qid, noise=noise)
    prompt = parsed["prompt"]
    qid = query_fingerprint(mode, prompt=prompt)
    return Query(mode=mode, id=qid, prompt=prompt)


def serve(cfg: FirewallConfig) -> None:
    """Build the firewall, health-check the backend, and serve until
    interrupted. Uvicorn drains in-flight requests on shutdown."""
    import uvicorn

    logging.basicConfig(level=os.environ.get("UFID_LOG", "INFO").upper())
    firewall = Firewall(cfg)
    firewall.health_check()
    app = create_app(firewall)
    log.info("firewall listening on %s:%d (mode=%s, tau=%.6f)",
             cfg.host, cfg.port, cfg.mode.value, firewall.tau)
    uvicorn.run(app, host=cfg.host, port=cfg.port,
                log_level=os.environ.get("UFID_LOG", "info").lower())
