import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hamnoise.errors import ConfigError, NoNoiseFloorError
from hamnoise.models import make_model
from hamnoise.perturbation import PerturbationSeries, diffusion_at, drift_at, noise_floor, validate
from hamnoise.models import harmonic, pendulum


def test_ex1_drift_matches_formula(ex1_case1, rng):
    x, y = rng.uniform(-1, 1, (2, 20))
    t = 37.0
    ax, ay = drift_at(ex1_case1, (x, y), t)
    assert np.allclose(ax, y)
    assert np.allclose(ay, -np.sin(x) - 2.0 * y / t)


def test_drift_vanishes_at_origin(ex1_case1):
    for t in (1.0, 10.0, 1e5):
        assert np.all(drift_at(ex1_case1, (0.0, 0.0), t) == 0)
        assert np.all(drift_at(ex1_case1, (0.0, 0.0), t, N=4) == 0)


def test_ex2_drift_at_t4(rng):
    s = make_model("ex2", dict(a=-1.0, b=0.5, c=1.0, p=2, q=2, h=1, d=1))
    x, y = rng.uniform(-1, 1, (2, 10))
    F1 = -x * x * y / (1 + x * x)
    _, ay = drift_at(s, (x, y), 4.0)
    assert np.allclose(ay, -x + 0.5 * F1 + 0.25 * 0.5 * y)
    _, ay_series = drift_at(s, (x, y), 4.0, N=4)
    assert np.allclose(ay, ay_series)


def test_ex1_diffusion_and_decay(ex1_case1):
    x = np.array([0.3])
    A = diffusion_at(ex1_case1, (x, np.zeros(1)), 9.0)
    assert np.allclose(A[:, :, 0], [[0, 0], [0, (1 + 0.5 * math.sin(0.3)) / 9.0]])
    assert np.max(np.abs(diffusion_at(ex1_case1, (x, x), 1e12))) < 1e-11


def test_ex0_diffusion_entry():
    s = make_model("ex0", dict(a=0.0, c=1.0, p=1, q=2))
    z = (np.zeros(1), np.zeros(1))
    assert diffusion_at(s, z, 16.0)[1, 1, 0] == pytest.approx(0.25)
    assert diffusion_at(s, z, 4.0)[1, 1, 0] == pytest.approx(0.5)


def test_nonpositive_time_is_rejected(ex1_case1):
    with pytest.raises(ConfigError):
        drift_at(ex1_case1, (0.1, 0.1), 0.0)
    with pytest.raises(ConfigError):
        diffusion_at(ex1_case1, (0.1, 0.1), -1.0)


def test_noise_floor_examples():
    assert noise_floor(make_model("ex1", dict(a=-2, b=0.5, c=1.0, p=2, q=2, h=2))).mu_2p == 0.5
    s2 = make_model("ex1", dict(a=-1, b=0.1, c=1.0, p=1, q=2, h=2))
    nf = noise_floor(s2, with_bound=True)
    assert nf.mu_bound == pytest.approx(0.605, rel=1e-6)
    ident = PerturbationSeries(harmonic(), q=2, diffusion_terms={1: lambda x, y: ((1.0, 0.0), (0.0, 1.0))})
    assert noise_floor(ident).mu_2p == 1.0


@settings(max_examples=30)
@given(st.floats(0, 2 * math.pi), st.floats(0.1, 3))
def test_noise_floor_is_rotation_invariant(angle, scale):
    R = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    A = np.array([[scale, 0.3], [-0.2, 0.7]])
    B = R @ A @ R.T
    sa = PerturbationSeries(harmonic(), q=2, diffusion_terms={1: lambda x, y: A.tolist()})
    sb = PerturbationSeries(harmonic(), q=2, diffusion_terms={1: lambda x, y: B.tolist()})
    assert noise_floor(sa).mu_2p == pytest.approx(noise_floor(sb).mu_2p, rel=1e-12)


def test_no_noise_floor():
    s = make_model("ex0", dict(a=-1.0, c=0.0))
    with pytest.raises(NoNoiseFloorError):
        noise_floor(s)


def test_validate_reports():
    rep = validate(make_model("ex1", dict(a=-2, b=0.5, c=1.0, p=2, q=2, h=2)))
    assert rep.valid and rep.p == 2
    bad = PerturbationSeries(pendulum(), q=2, drift_terms={1: lambda x, y: (1.0 + 0 * x, 0 * y)},
                             diffusion_terms={2: lambda x, y: ((0, 0), (0, 1.0))})
    rep = validate(bad)
    assert not rep.valid
    assert any("a_1" in v for v in rep.violations)
    par = validate(make_model("autoresonance", dict(a=1.0, b=0.5, c=0.5, beta1=0.0, beta2=-0.5)))
    assert par.valid and (par.p, par.q) == (1, 6)


@pytest.mark.parametrize("name,params", [
    ("ex1", dict(a=-2, b=0.5, c=1.0, p=2, q=2, h=2)),
    ("ex2", dict(a=-1, b=2 / 3, c=1.0, p=2, q=3, h=2, d=1)),
    ("autoresonance", dict(a=1.0, b=0.5, c=0.5, beta1=0.25, beta2=-0.25)),
])
def test_truncated_series_tracks_closed_form(name, params, rng):
    s = make_model(name, params)
    r = 0.5 * s.hamiltonian.r_max
    x, y = rng.uniform(-r, r, (2, 30))
    N = s.max_order
    ratios = []
    for t in np.geomspace(1e2, 1e6, 9):
        gap = np.max(np.abs(drift_at(s, (x, y), t) - drift_at(s, (x, y), t, N=N)))
        ratios.append(gap / t ** (-(N + 1) / s.q))
    assert np.all(np.isfinite(ratios))
    # bounded ratio: no growth across four decades
    assert max(ratios) <= 10 * max(ratios[0], 1e-300) + 1e-6
