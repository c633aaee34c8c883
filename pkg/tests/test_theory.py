"""Monte Carlo verification routines and their closed-form anchors."""

import math

import pytest

from ufid.errors import AssumptionError, ValidationError
from ufid.rng import RngSeed
from ufid.theory import (
    corollary1_bounds,
    expected_std_normal_norm,
    norm_bound_interval,
    verify_corollary1,
    verify_lemma1,
    verify_norm_bounds,
    verify_theorem1,
)

SEED = RngSeed(20240101)


class TestNormBounds:
    def test_interval_values(self):
        lb, ub = norm_bound_interval(1)
        assert lb == pytest.approx(1 / math.sqrt(2))
        assert ub == 1.0
        lb, ub = norm_bound_interval(4)
        assert lb == pytest.approx(4 / math.sqrt(5))
        assert ub == 2.0

    def test_half_normal_closed_form(self):
        # E|z| for one dimension is sqrt(2/pi)
        assert expected_std_normal_norm(1) == pytest.approx(math.sqrt(2 / math.pi))
        assert expected_std_normal_norm(1) == pytest.approx(0.79788, abs=5e-6)

    def test_one_dimension(self):
        report = verify_norm_bounds(1, seed=SEED)
        assert report.passed
        assert report.empirical == pytest.approx(math.sqrt(2 / math.pi), abs=0.002)

    def test_four_dimensions(self):
        report = verify_norm_bounds(4, seed=SEED)
        assert report.passed
        assert 4 / math.sqrt(5) < report.empirical < 2.0
        # the truth is the chi mean; the estimate should be near it
        assert report.empirical == pytest.approx(expected_std_normal_norm(4), abs=0.01)

    def test_sigma_scales_out(self):
        # sigma = 2 and N = 256: the scaled statistic matches sigma = 1
        report = verify_norm_bounds(256, sigma=2.0, seed=SEED)
        assert report.passed
        assert report.bounds["lower"] == pytest.approx(256 / math.sqrt(257))
        assert report.bounds["upper"] == 16.0

    def test_sample_floor(self):
        with pytest.raises(ValidationError):
            verify_norm_bounds(4, samples=100, seed=SEED)


class TestLemma1:
    @pytest.mark.parametrize("rho2,sigma_c,expected", [
        (1.0, 3.0, 3.0),
        (1.25, 3.0, 2.4),
        (2.0, 3.0, 1.5),
        (4.0, 2.0, 0.5),
    ])
    def test_variance_scaling(self, rho2, sigma_c, expected):
        report = verify_lemma1(rho2, sigma_c, samples=4000, seed=SEED)
        assert report.passed, report.to_dict()
        assert report.empirical == pytest.approx(expected, rel=0.05)

    def test_rejects_nonpositive_rho2(self):
        with pytest.raises(ValidationError):
            verify_lemma1(0.0, seed=SEED)


class TestTheorem1:
    def test_boundary_case_analytic_gap_one(self):
        # sigma_c = sigma_b + rho^2 exactly: analytic gap is 1.0
        report = verify_theorem1(3.0, 1.0, 2.0, samples=4000, seed=SEED)
        assert report.bounds["analytic_gap"] == pytest.approx(1.0)
        assert report.passed, report.to_dict()

    def test_headline_parameters(self):
        report = verify_theorem1(5.0, 1.0, 2.0, samples=4000, seed=SEED)
        assert report.bounds["analytic_gap"] == pytest.approx(2.0)
        assert report.empirical == pytest.approx(2.0, rel=0.05)
        assert report.empirical >= 1.0
        assert report.passed

    def test_assumption_violation_is_typed_error(self):
        with pytest.raises(AssumptionError) as err:
            verify_theorem1(2.5, 1.0, 2.0, seed=SEED)
        assert "sigma_c >= sigma_b + rho^2" in str(err.value)


class TestCorollary1:
    def test_bound_values(self):
        bounds = corollary1_bounds(4, 3.0, 1.0)
        assert bounds["main_text"] == pytest.approx(7 / math.sqrt(5))
        assert bounds["main_text"] == pytest.approx(3.1305, abs=5e-5)
        assert bounds["appendix"] == pytest.approx(math.sqrt(2) * 7 / math.sqrt(5))
        assert bounds["appendix"] == pytest.approx(4.4272, abs=5e-5)

    def test_headline_parameters_exceed_both_bounds(self):
        report = verify_corollary1(4, 3.0, 1.0, seed=SEED)
        assert report.applicable
        assert report.passed, report.to_dict()
        assert report.empirical - report.bounds["appendix"] > 3 * report.std_error
        # analytic value: sqrt(2) * (sigma_c - sigma_b) * E||z_4||
        analytic = math.sqrt(2) * 2.0 * expected_std_normal_norm(4)
        assert report.empirical == pytest.approx(analytic, rel=0.01)

    def test_equal_sigmas_flagged_inapplicable(self):
        report = verify_corollary1(4, 2.0, 2.0, seed=SEED)
        assert not report.applicable
        assert report.empirical == pytest.approx(0.0, abs=0.05)
        assert report.bounds["main_text"] < 0

    def test_large_dimension(self):
        report = verify_corollary1(16, 4.0, 1.0, seed=SEED)
        assert report.applicable and report.passed
        assert report.empirical - report.bounds["appendix"] > 3 * report.std_error


def test_reports_are_reproducible():
    a = verify_corollary1(4, 3.0, 1.0, samples=20_000, seed=SEED)
    b = verify_corollary1(4, 3.0, 1.0, samples=20_000, seed=SEED)
    assert a.empirical == b.empirical
    assert a.std_error == b.std_error
    c = verify_norm_bounds(4, samples=20_000, seed=SEED)
    d = verify_norm_bounds(4, samples=20_000, seed=SEED)
    assert c.empirical == d.empirical


def test_report_serializes_to_json():
    import json

    report = verify_norm_bounds(4, samples=20_000, seed=SEED)
    blob = json.dumps(report.to_dict())
    again = json.loads(blob)
    assert again["claim"] == "norm-bounds"
    assert again["passed"] is True
