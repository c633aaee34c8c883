"""Command-line entry points: serve, calibrate, eval, theory."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import UfidError
from .rng import RngSeed, root_seed_from_env


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ufid",
        description="Inference-time backdoor-detection firewall for generative models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run the detection firewall service")
    p_serve.add_argument("--config", required=True, help="firewall config JSON")

    p_cal = sub.add_parser("calibrate", help="derive the detection threshold")
    p_cal.add_argument("--config", required=True, help="firewall config JSON")
    p_cal.add_argument("--validation", required=True, help="validation manifest JSON")
    p_cal.add_argument("--out", required=True, help="output threshold JSON path")

    p_eval = sub.add_parser("eval", help="run an evaluation scenario")
    p_eval.add_argument("--scenario", required=True, help="scenario JSON")
    p_eval.add_argument("--out", required=True, help="output directory")

    p_theory = sub.add_parser("theory", help="run the statistical verification checks")
    p_theory.add_argument("--check", action="append", required=True,
                          choices=["lemma1", "theorem1", "corollary1", "norm-bounds", "all"],
                          help="which check to run (repeatable)")
    p_theory.add_argument("--params", default=None,
                          help="JSON object with check parameters "
                               "(sigma_c, sigma_b, rho2, N, sigma, samples)")

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except UfidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "serve":
        from .firewall import FirewallConfig, serve

        serve(FirewallConfig.from_file(args.config))
        return 0
    if args.command == "calibrate":
        return _calibrate(args)
    if args.command == "eval":
        from .evaluation import EvalScenario, run_scenario

        report = run_scenario(EvalScenario.from_file(args.scenario), args.out)
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
        return 0
    if args.command == "theory":
        return _theory(args)
    raise AssertionError(f"unhandled command {args.command}")


def _calibrate(args: argparse.Namespace) -> int:
    from .backends import make_backend
    from .calibration import calibrate
    from .firewall import FirewallConfig
    from .manifest import load_validation_manifest
    from .pipeline import build_encoder

    cfg_obj = json.loads(Path(args.config).read_text(encoding="utf-8"))
    cfg_obj.setdefault("tau", 0.0)  # calibration does not need a threshold yet
    cfg = FirewallConfig.from_dict(cfg_obj)
    queries = load_validation_manifest(args.validation)
    backend = make_backend(cfg.backend)
    shape = cfg.backend.params.shape if cfg.backend.params else (8, 8, 3)
    threshold = calibrate(queries, backend, cfg.metric,
                          encoder=build_encoder(cfg.metric, shape),
                          density_mode=cfg.density_mode)
    threshold.save(args.out)
    print(json.dumps(threshold.to_dict(), indent=2))
    return 0


def _theory(args: argparse.Namespace) -> int:
    from . import theory

    params = json.loads(args.params) if args.params else {}
    seed = root_seed_from_env(int(params.pop("seed", 0)))
    checks = args.check
    if "all" in checks:
        checks = ["norm-bounds", "lemma1", "theorem1", "corollary1"]

    any_failed = False
    for name in checks:
        for report in _run_check(theory, name, params, seed):
            print(json.dumps(report.to_dict(), sort_keys=True))
            if not report.passed:
                any_failed = True
    return 1 if any_failed else 0


def _run_check(theory, name: str, params: dict, seed: RngSeed):
    samples = params.get("samples")
    if name == "norm-bounds":
        dims = params.get("N", [1, 4, 16, 256])
        dims = dims if isinstance(dims, list) else [dims]
        for n in dims:
            yield theory.verify_norm_bounds(
                int(n), float(params.get("sigma", 1.0)),
                samples=int(samples or theory.DEFAULT_SCALAR_SAMPLES), seed=seed)
    elif name == "lemma1":
        rho2s = params.get("rho2", [1.0, 2.0, 4.0])
        rho2s = rho2s if isinstance(rho2s, list) else [rho2s]
        for rho2 in rho2s:
            yield theory.verify_lemma1(
                float(rho2), float(params.get("sigma_c", 3.0)),
                samples=int(samples or theory.DEFAULT_TENSOR_SAMPLES), seed=seed)
    elif name == "theorem1":
        yield theory.verify_theorem1(
            float(params.get("sigma_c", 5.0)), float(params.get("sigma_b", 1.0)),
            float(params.get("rho2", 2.0)),
            samples=int(samples or theory.DEFAULT_TENSOR_SAMPLES), seed=seed)
    elif name == "corollary1":
        yield theory.verify_corollary1(
            int(params.get("N", 4)), float(params.get("sigma_c", 3.0)),
            float(params.get("sigma_b", 1.0)),
            samples=int(samples or theory.DEFAULT_SCALAR_SAMPLES), seed=seed)
    else:
        raise AssertionError(name)


if __name__ == "__main__":
    sys.exit(main())
