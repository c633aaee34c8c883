"""Monte Carlo checks of the Gaussian separation claims the detector rests on.

Four checks, each returning a machine-readable report:

* ``verify_norm_bounds``: for x ~ N(0, sigma^2 I_N), the scaled expected
  norm sigma^-1 E||x|| lies in [N/sqrt(N+1), sqrt(N)].
* ``verify_lemma1``: the synthetic backend's clean branch maps inputs of
  variance rho^2 to outputs of variance sigma_c / rho^2 around the clean
  mean.
* ``verify_theorem1``: under the assumption sigma_c >= sigma_b + rho^2,
  the post-perturbation output-variance gap sigma'_c - sigma'_b is at
  least 1 and equals (sigma_c - sigma_b) / rho^2.
* ``verify_corollary1``: the expected pairwise-distance gap
  E(||x1 - x2|| - ||x3 - x4||) clears its lower bound. The bound is checked
  in both circulating forms, (N(sigma_c - sigma_b) - sigma_b)/sqrt(N+1) and
  the same with an extra sqrt(2) factor, because the two derivations
  disagree by exactly that factor.

Convention: the generator law treats sigma_c and sigma_b as variances
(``verify_lemma1``/``verify_theorem1``), while the norm-bound material
treats sigma as a standard-deviation scale (``verify_norm_bounds``/
``verify_corollary1``, where x1 - x2 has per-element std sqrt(2)*sigma_c).
Pass/fail uses a three-standard-error rule throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .backends import SyntheticBackend, SyntheticParams
from .errors import AssumptionError, ValidationError
from .rng import RngSeed, derive_rng
from .types import Image, ImageKind, Query, QueryMode

DEFAULT_SCALAR_SAMPLES = 100_000
DEFAULT_TENSOR_SAMPLES = 10_000
_SE_FACTOR = 3.0


@dataclass(frozen=True)
class BoundReport:
    """Outcome of one verification run."""

    claim: str
    parameters: dict[str, Any]
    empirical: float
    std_error: float
    bounds: dict[str, float]
    checks: dict[str, bool]
    passed: bool
    applicable: bool = True
    details: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "claim": self.claim,
            "parameters": self.parameters,
            "empirical": self.empirical,
            "std_error": self.std_error,
            "bounds": self.bounds,
            "checks": self.checks,
            "passed": self.passed,
            "applicable": self.applicable,
            "details": self.details,
        }


def norm_bound_interval(n_dim: int) -> tuple[float, float]:
    """[N/sqrt(N+1), sqrt(N)], the bracket for sigma^-1 E||x||."""
    if n_dim < 1:
        raise ValidationError(f"dimension must be >= 1, got {n_dim}")
    return n_dim / math.sqrt(n_dim + 1), math.sqrt(n_dim)


def expected_std_normal_norm(n_dim: int) -> float:
    """Closed form E||z|| = sqrt(2) * Gamma((N+1)/2) / Gamma(N/2)."""
    return math.sqrt(2.0) * math.exp(
        math.lgamma((n_dim + 1) / 2.0) - math.lgamma(n_dim / 2.0))


def verify_norm_bounds(n_dim: int, sigma: float = 1.0,
                       samples: int = DEFAULT_SCALAR_SAMPLES,
                       seed: RngSeed = RngSeed(0)) -> BoundReport:
    """Monte Carlo check that sigma^-1 E||x|| sits strictly inside its
    bracket, beyond three standard errors on each side."""
    if samples < 10_000:
        raise ValidationError(f"need at least 1e4 samples, got {samples}")
    lb, ub = norm_bound_interval(n_dim)
    rng = derive_rng(seed, f"theory/norm-bounds/{n_dim}/{sigma}")
    norms = np.linalg.norm(sigma * rng.standard_normal((samples, n_dim)), axis=1)
    scaled = norms / sigma
    empirical = float(scaled.mean())
    se = float(scaled.std(ddof=1) / math.sqrt(samples))
    checks = {
        "above_lower": empirical - lb > _SE_FACTOR * se,
        "below_upper": ub - empirical > _SE_FACTOR * se,
    }
    return BoundReport(
        claim="norm-bounds",
        parameters={"N": n_dim, "sigma": sigma, "samples": samples, "seed": seed.root},
        empirical=empirical,
        std_error=se,
        bounds={"lower": lb, "upper": ub},
        checks=checks,
        passed=all(checks.values()),
        details={"closed_form": sigma and expected_std_normal_norm(n_dim)},
    )


def _noise_queries(shape: tuple[int, int, int], rho2: float, count: int,
                   seed: RngSeed, label: str, offset: Image | None = None) -> list[Query]:
    scale = math.sqrt(rho2)
    base = offset.data.astype(np.float64) if offset is not None else 0.0
    queries = []
    for i in range(count):
        z = derive_rng(seed, f"{label}/{i}").standard_normal(shape)
        noise = Image((base + scale * z).astype(np.float32), ImageKind.NOISE)
        queries.append(Query(mode=QueryMode.UNCONDITIONAL, id=f"{label}/{i}", noise=noise))
    return queries


def _output_moments(backend: SyntheticBackend, queries: list[Query],
                    mean_image: Image, batch: int = 2000) -> tuple[np.ndarray, float, int]:
    """Per-element mean error and pooled variance of pre-clamp outputs."""
    mean_ref = mean_image.data.astype(np.float64)
    total = np.zeros(mean_ref.shape)
    total_sq = 0.0
    count = 0
    for start in range(0, len(queries), batch):
        outs = backend.generate_raw(queries[start:start + batch])
        for out in outs:
            delta = out - mean_ref
            total += delta
            total_sq += float(np.sum(delta * delta))
            count += 1
    n_elem = mean_ref.size
    mean_err = total / count
    pooled_var = total_sq / (count * n_elem)
    return mean_err, pooled_var, count


def verify_lemma1(rho2: float, sigma_c: float = 3.0,
                  samples: int = DEFAULT_TENSOR_SAMPLES,
                  seed: RngSeed = RngSeed(0),
                  shape: tuple[int, int, int] = (8, 8, 3),
                  tolerance: float = 0.05) -> BoundReport:
    """Feed inputs of variance rho2 to the clean branch and check the output
    law N(x_c, sigma_c/rho2 I), pre-clamp."""
    if rho2 <= 0:
        raise ValidationError(f"rho2 must be positive, got {rho2}")
    params = SyntheticParams(shape=shape, sigma_c=sigma_c, seed=seed)
    backend = SyntheticBackend(params, QueryMode.UNCONDITIONAL)
    queries = _noise_queries(shape, rho2, samples, seed, f"theory/lemma1/{rho2}")
    mean_err, pooled_var, count = _output_moments(backend, queries, params.x_c)

    expected_var = sigma_c / rho2
    var_se = expected_var * math.sqrt(2.0 / (count * mean_err.size))
    rel_err = abs(pooled_var - expected_var) / expected_var
    # per-element mean errors are ~N(0, expected_var/count); their RMS
    # concentrates at one standard error, so 3x is a stable summary gate
    elem_se = math.sqrt(expected_var / count)
    mean_rms = float(np.sqrt(np.mean(mean_err**2)))
    checks = {
        "variance_within_tolerance": rel_err <= tolerance,
        "mean_matches_clean_mean": mean_rms <= _SE_FACTOR * elem_se,
    }
    return BoundReport(
        claim="lemma1",
        parameters={"rho2": rho2, "sigma_c": sigma_c, "samples": samples,
                    "shape": list(shape), "seed": seed.root},
        empirical=pooled_var,
        std_error=var_se,
        bounds={"expected_variance": expected_var, "tolerance": tolerance},
        checks=checks,
        passed=all(checks.values()),
        details={"relative_variance_error": rel_err, "mean_rms_error": mean_rms,
                 "mean_rms_gate": _SE_FACTOR * elem_se},
    )


def verify_theorem1(sigma_c: float, sigma_b: float, rho2: float,
                    samples: int = DEFAULT_TENSOR_SAMPLES,
                    seed: RngSeed = RngSeed(0),
                    shape: tuple[int, int, int] = (8, 8, 3),
                    tolerance: float = 0.05) -> BoundReport:
    """Drive both branches with inputs of variance rho2 and check the output
    variance gap: at least 1, and equal to (sigma_c - sigma_b)/rho2."""
    if sigma_c < sigma_b + rho2:
        raise AssumptionError(
            f"theorem assumption sigma_c >= sigma_b + rho^2 violated: "
            f"{sigma_c} < {sigma_b} + {rho2}")
    params = SyntheticParams(shape=shape, sigma_c=sigma_c, sigma_b=sigma_b, seed=seed)
    backend = SyntheticBackend(params, QueryMode.UNCONDITIONAL)

    clean = _noise_queries(shape, rho2, samples, seed, f"theory/thm1-clean/{rho2}")
    _, var_clean, count = _output_moments(backend, clean, params.x_c)
    triggered = _noise_queries(shape, rho2, samples, seed, f"theory/thm1-bd/{rho2}",
                               offset=params.trigger)
    _, var_bd, _ = _output_moments(backend, triggered, params.x_b)

    gap = var_clean - var_bd
    analytic = (sigma_c - sigma_b) / rho2
    n_elem = shape[0] * shape[1] * shape[2]
    gap_se = math.sqrt(2.0 / (count * n_elem)) * math.sqrt(
        (sigma_c / rho2) ** 2 + (sigma_b / rho2) ** 2)
    checks = {
        "gap_at_least_one": gap >= 1.0 - _SE_FACTOR * gap_se,
        "gap_matches_analytic": abs(gap - analytic) / analytic <= tolerance,
    }
    return BoundReport(
        claim="theorem1",
        parameters={"sigma_c": sigma_c, "sigma_b": sigma_b, "rho2": rho2,
                    "samples": samples, "shape": list(shape), "seed": seed.root},
        empirical=gap,
        std_error=gap_se,
        bounds={"analytic_gap": analytic, "minimum_gap": 1.0, "tolerance": tolerance},
        checks=checks,
        passed=all(checks.values()),
        details={"variance_clean": var_clean, "variance_backdoor": var_bd},
    )


def corollary1_bounds(n_dim: int, sigma_c: float, sigma_b: float) -> dict[str, float]:
    main = (n_dim * (sigma_c - sigma_b) - sigma_b) / math.sqrt(n_dim + 1)
    return {"main_text": main, "appendix": math.sqrt(2.0) * main}


def verify_corollary1(n_dim: int, sigma_c: float, sigma_b: float,
                      samples: int = DEFAULT_SCALAR_SAMPLES,
                      seed: RngSeed = RngSeed(0)) -> BoundReport:
    """Monte Carlo check of the expected pairwise-distance gap.

    sigma_c and sigma_b are standard-deviation scales here: x1 - x2 is
    sampled as sqrt(2)*sigma_c*z, matching the derivation's convention.
    When sigma_c - sigma_b <= 1 the bound's premise fails and the report is
    flagged inapplicable instead of raising, so the degenerate case stays
    observable.
    """
    if n_dim < 1:
        raise ValidationError(f"dimension must be >= 1, got {n_dim}")
    bounds = corollary1_bounds(n_dim, sigma_c, sigma_b)
    applicable = (sigma_c - sigma_b > 1.0) and bounds["main_text"] > 0.0

    rng = derive_rng(seed, f"theory/corollary1/{n_dim}/{sigma_c}/{sigma_b}")
    d_clean = np.linalg.norm(
        math.sqrt(2.0) * sigma_c * rng.standard_normal((samples, n_dim)), axis=1)
    d_bd = np.linalg.norm(
        math.sqrt(2.0) * sigma_b * rng.standard_normal((samples, n_dim)), axis=1)
    diffs = d_clean - d_bd
    empirical = float(diffs.mean())
    se = float(diffs.std(ddof=1) / math.sqrt(samples))
    checks = {
        "exceeds_main_text": empirical - bounds["main_text"] > _SE_FACTOR * se,
        "exceeds_appendix": empirical - bounds["appendix"] > _SE_FACTOR * se,
    }
    return BoundReport(
        claim="corollary1",
        parameters={"N": n_dim, "sigma_c": sigma_c, "sigma_b": sigma_b,
                    "samples": samples, "seed": seed.root},
        empirical=empirical,
        std_error=se,
        bounds=bounds,
        checks=checks,
        passed=all(checks.values()),
        applicable=applicable,
    )


CHECKS = {
    "norm-bounds": verify_norm_bounds,
    "lemma1": verify_lemma1,
    "theorem1": verify_theorem1,
    "corollary1": verify_corollary1,
}
