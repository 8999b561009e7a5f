import math

import numpy as np
import pytest

from hamnoise.errors import ConfigError, RefusedRunError
from hamnoise.models import AutoresonanceConstants, make_model
from hamnoise.regime import SIGMA1, RegimePrediction
from hamnoise.sde import (SimConfig, autoresonance_to_model, autoresonance_to_original,
                          capture_deviation, envelope_exponent, run_ensemble, scaled_energy,
                          simulate_path, wilson_interval)


def conservative_pendulum():
    return make_model("ex1", dict(a=0.0, b=0.0, c=0.0, p=2, q=2, h=2))


def test_conservation_without_noise():
    s = conservative_pendulum()
    x0 = math.acos(0.5)  # H0 = 0.5 at rest
    path = simulate_path(s, SimConfig(t0=1.0, t_end=100.0, dt=1e-3, record_stride=1), (x0, 0.0))
    assert path.status == "ok"
    assert np.max(np.abs(path.energies - 0.5)) <= 1e-6


def test_rho_vanishes_on_conservative_path():
    s = conservative_pendulum()
    path = simulate_path(s, SimConfig(t0=1.0, t_end=50.0), (0.8, 0.1))
    rho, sup = scaled_energy(path, (float(path.energies[0]), 0.0))
    assert sup < 1e-7 and len(rho) == len(path.times)


@pytest.mark.parametrize("a", [-1.0, 1.0])
def test_wkb_envelope_exponent(a):
    s = make_model("ex0", dict(a=a, c=0.0, p=2, q=2, r_max=1e3, E_max=1e5))
    path = simulate_path(s, SimConfig(t0=10.0, t_end=1e4, dt=1e-2, record_stride=2), (1.0, 0.0))
    assert path.status == "ok"
    assert envelope_exponent(path) == pytest.approx(a / 2, abs=0.05)


def test_same_seed_gives_identical_paths():
    s = make_model("ex0", dict(a=0.0, c=1.0, p=2, q=2))
    cfg = SimConfig(t0=1.0, t_end=200.0, seed=7)
    p1 = simulate_path(s, cfg, (0.5, 0.0), path_id=3)
    p2 = simulate_path(s, cfg, (0.5, 0.0), path_id=3)
    p3 = simulate_path(s, cfg, (0.5, 0.0), path_id=4)
    assert np.array_equal(p1.x, p2.x) and np.array_equal(p1.y, p2.y)
    assert not np.array_equal(p1.x, p3.x)


@pytest.mark.parametrize("scheme", ["euler-maruyama", "drift-rk4-plus-noise"])
def test_variance_matches_noise_integral(scheme):
    c, t0, t1 = 1.0, 1.0, 11.0
    s = make_model("ex0", dict(a=0.0, c=c, p=2, q=2))
    cfg = SimConfig(t0=t0, t_end=t1, dt=1e-2, seed=11, scheme=scheme, record_stride=100)
    ends = np.array([[p.x[-1], p.y[-1]] for p in
                     (simulate_path(s, cfg, (0.0, 0.0), path_id=i) for i in range(500))])
    # rotation preserves |z|^2, so E|z|^2 equals the integral of c^2 s^-2
    expected = c * c * (1 / t0 - 1 / t1)
    assert np.mean(np.sum(ends**2, axis=1)) == pytest.approx(expected, rel=0.10)


def test_ball_exit_is_reported():
    s = make_model("ex0", dict(a=1.0, c=0.0, p=2, q=2))
    path = simulate_path(s, SimConfig(t0=10.0, t_end=1e3), (1.0, 0.0))
    assert path.status == "ball-exit" and path.stop_time < 1e3
    _, sup = scaled_energy(path, (0.5, 0.0))
    assert math.isinf(sup)
    with pytest.raises(ConfigError):
        simulate_path(s, SimConfig(), (10.0, 0.0))


def test_sim_config_validation():
    for bad in (dict(t0=0.0), dict(dt=-1.0), dict(t_end=50.0), dict(scheme="milstein"),
                dict(record_stride=0), dict(seed=-1)):
        with pytest.raises(ConfigError):
            SimConfig(**bad)


def test_wilson_interval():
    lo, hi = wilson_interval(0, 200)
    assert lo == 0.0 and hi == pytest.approx(0.0188, abs=5e-4)
    lo, hi = wilson_interval(100, 200)
    assert lo < 0.5 < hi


def test_zero_noise_stable_case_never_exceeds():
    s = conservative_pendulum()
    pred = RegimePrediction(SIGMA1, "ass21", 0.0, 0.4, True, inputs={"n": 2, "p": 2, "q": 2})
    rep = run_ensemble(s, pred, SimConfig(t0=10.0, t_end=200.0), 8, epsilon1=0.01, delta0=0.0)
    assert rep.exceed_fraction == 0.0


def test_refusal_for_unstable_prediction(analysis):
    an = analysis("ex1-s1-unstable")
    assert not an.prediction.stable
    with pytest.raises(RefusedRunError):
        run_ensemble(an.series, an.prediction, SimConfig(), 4, 0.1, 0.01)


@pytest.fixture(scope="module")
def short_runs(analysis):
    an = analysis("ex1-s1")
    xi = an.prediction.xi
    cfg = SimConfig(t0=100.0, t_end=600.0, seed=3)

    def run(eps, delta, config=cfg, n=40):
        return run_ensemble(an.series, an.prediction, config, n, eps * xi, delta * xi)

    return run


def test_exceedance_monotone_in_band(short_runs):
    narrow, wide = short_runs(0.3, 0.1), short_runs(1.5, 0.1)
    assert np.array_equal(narrow.sup_rho, wide.sup_rho)
    assert wide.exceed_fraction <= narrow.exceed_fraction


def test_exceedance_monotone_in_spread(short_runs):
    assert short_runs(0.3, 0.02).exceed_fraction <= short_runs(0.3, 0.9).exceed_fraction


def test_later_start_does_not_worsen(short_runs):
    early = short_runs(0.6, 0.1)
    late = short_runs(0.6, 0.1, SimConfig(t0=1000.0, t_end=1500.0, seed=3))
    assert late.exceed_fraction <= early.exceed_fraction


def test_ensemble_exports(tmp_path, short_runs):
    rep = short_runs(0.5, 0.1)
    rep.to_csv(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "path_id,sup_rho,exceeded" and len(lines) == 41
    summary = rep.summary()
    assert summary["seed"] == 3 and 0 <= summary["exceed_fraction"] <= 1


def test_path_csv(tmp_path):
    s = make_model("ex0", dict(a=-1.0, c=1.0, p=2, q=2))
    path = simulate_path(s, SimConfig(t0=1.0, t_end=20.0), (0.5, 0.0))
    scaled_energy(path, (0.1, 1.0))
    path.to_csv(tmp_path / "p.csv")
    rows = np.loadtxt(tmp_path / "p.csv", delimiter=",", skiprows=1)
    assert rows.shape == (len(path.times), 5)
    assert (tmp_path / "p.csv").read_text().startswith("t,x,y,H0,rho")


def test_autoresonance_constants_and_bridge(rng):
    cst = AutoresonanceConstants.from_params(1.0, 0.5, 0.5)
    assert cst.psi0 == pytest.approx(5 * math.pi / 6)
    assert cst.gamma == pytest.approx(0.75**0.25) and cst.gamma == pytest.approx(0.9306, abs=1e-4)
    x, y = rng.normal(size=(2, 20)) * 0.1
    t = rng.uniform(10, 1e4, 20)
    psi, en, tau = autoresonance_to_original(x, y, t, cst)
    x2, y2, t2 = autoresonance_to_model(psi, en, tau, cst)
    assert np.allclose(x2, x) and np.allclose(y2, y) and np.allclose(t2, t)
    # the particular solution sits at zero deviation up to its own corrections
    psi, en, tau = autoresonance_to_original(np.zeros(1), np.zeros(1), np.array([1e6]), cst)
    assert capture_deviation(psi, en, tau, cst)[0] < 1e-2
    with pytest.raises(ConfigError):
        AutoresonanceConstants.from_params(1.0, 0.5, 1.5)
