import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hamnoise.averaging import build_averaged_drift
from hamnoise.errors import NoRootError
from hamnoise.perturbation import NoiseFloor, PerturbationSeries
from hamnoise.pipeline import analyze, scenario
from hamnoise.regime import (SIGMA1, SIGMA2, SIGMA3, RegimePrediction, StructureFit, classify,
                             horizon_sigma2, sigma_class, solve_q3, solve_reduced)


def q3(lam, lin, mu, m, z):
    return lam * z**m + lin * z + mu


@pytest.mark.parametrize("lam,lin,mu,m,expect", [
    (-0.5, 1.0, 0.5, 2, 1 + math.sqrt(2)),
    (0.5, -1.0, 0.25, 2, 1 - math.sqrt(0.5)),
    (-1.0, 0.0, 1.0, 2, 1.0),
])
def test_q3_closed_forms(lam, lin, mu, m, expect):
    xi = solve_q3(lam, lin, mu, m)
    assert abs(xi - expect) < 1e-10
    assert abs(q3(lam, lin, mu, m, xi)) <= 1e-10
    assert m * lam * xi ** (m - 1) + lin < 0


@given(st.floats(-3, -0.05), st.floats(-2, 2), st.floats(0.01, 2), st.integers(2, 4))
def test_q3_root_has_negative_slope(lam, lin, mu, m):
    xi = solve_q3(lam, lin, mu, m)
    assert abs(q3(lam, lin, mu, m, xi)) <= 1e-10 * max(1.0, abs(lam) * xi**m)
    assert m * lam * xi ** (m - 1) + lin < 0


def test_q3_without_root():
    with pytest.raises(NoRootError):
        solve_q3(1.0, 1.0, 1.0, 2)


@given(st.integers(1, 6), st.integers(1, 12), st.data())
def test_sigma_classes_are_exhaustive(p, q, data):
    n = data.draw(st.integers(1, 2 * p))
    cls = sigma_class(n, p, q)
    members = [n < 2 * p and n <= q, n == 2 * p, q < n < 2 * p and n != 2 * p]
    assert sum(members) == 1
    assert cls == [SIGMA1, SIGMA2, SIGMA3][members.index(True)]


def test_sigma2_takes_precedence():
    assert sigma_class(4, 2, 3) == SIGMA2
    assert sigma_class(2, 1, 1) == SIGMA2


def test_horizon_branches():
    assert horizon_sigma2(1, 3, 0.5, 0.1, 100.0) == pytest.approx(0.02 * 100 ** (2 / 3))
    assert horizon_sigma2(1, 2, 0.5, 0.1, 100.0) == pytest.approx(100 * math.expm1(0.02))
    assert math.isinf(horizon_sigma2(2, 3, 0.5, 0.1, 100.0))


def test_sigma1_formulas():
    fit = StructureFit(n=2, p=2, q=2, m=1, lam_n=-2.0)
    pred = classify(fit, NoiseFloor(0.5))
    assert (pred.sigma_class, pred.theta, pred.xi, pred.stable) == (SIGMA1, 1.0, 0.5, True)
    bad = classify(StructureFit(n=2, p=2, q=2, m=1, lam_n=-0.5), NoiseFloor(0.5))
    assert bad.verdict == "unstable/unclassified" and bad.failed


def test_nonlinear_cases_from_synthetic_fits():
    I = classify(StructureFit(n=1, p=2, q=2, m=2, lam_nm=-0.5, d=1, lam_nd=0.5), NoiseFloor(0.5))
    assert (I.case_label, I.theta) == ("I", 0.5) and I.xi == pytest.approx(2.0)
    II = classify(StructureFit(n=1, p=2, q=3, m=2, lam_nm=-1.0, d=2, lam_nd=0.5), NoiseFloor(1.0))
    assert (II.case_label, II.theta, II.xi) == ("II", 0.5, 1.0)
    III = classify(StructureFit(n=2, p=2, q=3, m=2, lam_nm=-0.5, d=1, lam_nd=2 / 3), NoiseFloor(0.5))
    assert III.case_label == "III" and III.theta == pytest.approx(1 / 3)
    assert III.xi == pytest.approx(1 + math.sqrt(2), abs=1e-10)


GOLDEN = [
    ("ex1-s1", SIGMA1, "ass21", 1.0, 0.5),
    ("ex1-s3", SIGMA3, "limiting-like", 0.0, 0.5),
    ("ex2-s1", SIGMA1, "I", 0.5, 2.0),
    ("ex2-s2", SIGMA1, "II", 0.5, 1.0),
    ("ex2-s3a", SIGMA1, "III", 1 / 3, 1 + math.sqrt(2)),
    ("ex2-s3b", SIGMA1, "III", 1 / 3, 1 - math.sqrt(0.5)),
]


@pytest.mark.parametrize("name,cls,case,theta,xi", GOLDEN)
def test_classification_golden_values(analysis, name, cls, case, theta, xi):
    pred = analysis(name).prediction
    assert (pred.sigma_class, pred.case_label) == (cls, case)
    assert pred.theta == pytest.approx(theta)
    assert pred.xi == pytest.approx(xi, rel=1e-6)
    assert pred.stable


def test_ex1_cycle_root(analysis):
    an = analysis("ex1-s2")
    pred = an.prediction
    assert pred.sigma_class == SIGMA2 and pred.stable
    assert an.fit.n == 2
    assert pred.kappa["slope"] < 0
    # leading-order estimate c^2/|2a+b^2|
    assert pred.xi == pytest.approx(1 / 1.99, rel=0.05)


def test_autoresonance_predictions(analysis):
    p2 = analysis("par-s2").prediction
    assert p2.sigma_class == SIGMA1 and p2.xi == pytest.approx(1.35, rel=0.05)
    p1 = analysis("par-s1").prediction
    assert p1.sigma_class == SIGMA2 and p1.stable
    assert p1.xi == pytest.approx(p1.inputs["xi_leading"], rel=0.1)


def test_ex1_fit_structure(analysis):
    fit = analysis("ex1-s1").fit
    assert (fit.n, fit.m) == (2, 1)
    assert fit.lam_n == pytest.approx(-2.0, rel=1e-3)
    fit = analysis("ex2-s1").fit
    assert (fit.n, fit.m, fit.d) == (1, 2, 1)
    assert fit.lam_nm == pytest.approx(-0.5, rel=1e-3)
    assert fit.lam_nd == pytest.approx(0.5, rel=1e-3)


def test_scale_consistency_in_noise_amplitude(analysis):
    base = analysis("ex1-s1").prediction.xi
    cfg = scenario("ex1-s1")
    cfg.params["c"] = 0.5
    assert analyze(cfg).prediction.xi == pytest.approx(base / 4, rel=1e-6)
    base2 = analysis("ex2-s2").prediction.xi
    cfg = scenario("ex2-s2")
    cfg.params["c"] = 0.5
    assert analyze(cfg).prediction.xi == pytest.approx(base2 / 2, rel=1e-6)


def test_sigma3_sign_check(analysis):
    an = analysis("ex1-s3")
    pred = an.prediction
    assert pred.kappa["slope"] < 0 and pred.kappa["Lambda_n(xi)"] != 0
    cfg = scenario("ex1-s3", xi_star=1.4)
    bad = analyze(cfg).prediction
    assert not bad.stable and any("E_max" in f for f in bad.failed)


def test_reduced_equation_with_zero_drift(harmonic_atlas):
    avg = build_averaged_drift(harmonic_atlas, PerturbationSeries(harmonic_atlas.model, q=2), N=2)
    pred = RegimePrediction(SIGMA1, "ass21", 0.0, None, None, inputs={"n": 1})
    traj = solve_reduced(avg, pred, t0=1.0, u0=0.3, t_end=1e4)
    assert np.all(traj.u == 0.3) and not traj.exited


def test_reduced_ex1_reaches_limit(analysis):
    an = analysis("ex1-s1")
    traj = solve_reduced(an.averaged, an.prediction, t0=100.0, t_end=1e6)
    assert traj.zeta[-1] == pytest.approx(0.5, rel=0.02)


def test_prediction_json_keys(analysis):
    d = analysis("ex1-s2").prediction.to_dict()
    assert {"class", "case", "theta", "xi", "stable", "kappa", "horizon", "inputs"} <= set(d)
    assert d["horizon"] > 0
