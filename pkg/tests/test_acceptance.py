"""Acceptance criteria with pinned tolerances.

Each check prints one ``CRITERION n: PASS|FAIL`` line (also repeated in the
pytest terminal summary) and then asserts the same condition.
"""
import filecmp
import math
import sys
import time

import numpy as np
import pytest
from scipy.special import ellipk

from conftest import ACCEPTANCE_LINES, scenario_analysis
from hamnoise.cli import main as cli_main
from hamnoise.hamiltonian import build_atlas, build_orbit
from hamnoise.models import AutoresonanceConstants, make_model, pendulum
from hamnoise.pipeline import analyze, leading_cycle_energy, scenario, verify
from hamnoise.regime import SIGMA1, SIGMA2, SIGMA3, solve_reduced
from hamnoise.sde import SimConfig, envelope_exponent, simulate_path

STABLE = ["ex1-s1", "ex1-s2", "ex1-s3", "ex2-s1", "ex2-s2", "ex2-s3a", "ex2-s3b", "par-s1", "par-s2"]
GOLDEN_EIGHT = ["ex1-s1", "ex1-s2", "ex1-s3", "ex2-s1", "ex2-s2", "ex2-s3a", "par-s1", "par-s2"]


def report(n: int, ok: bool, detail: str, sub: str = "") -> None:
    tag = f"CRITERION {n}{sub}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(tag)
    ACCEPTANCE_LINES.append(tag)


# 1 ---------------------------------------------------------------------------

def test_criterion_1_orbit_oracle():
    start = time.perf_counter()
    model = pendulum()
    worst = 0.0
    for E in (0.1, 0.5, 1.0, 1.5):
        nu_oracle = 2 * math.pi / (4 * ellipk(E / 2))
        worst = max(worst, abs(build_orbit(model, E).frequency - nu_oracle))
    small = np.linspace(0.02, 0.5, 13)
    atlas = build_atlas(model, np.linspace(0.02, 0.5, 13))
    series_ok = bool(np.all(np.abs(atlas.nu - (1 - small / 8)) <= 0.5 * small**2))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and series_ok and elapsed < 5
    report(1, ok, f"max |nu - oracle| = {worst:.2e}, small-E bound ok = {series_ok}, "
                  f"runtime {elapsed:.1f}s")
    assert ok


# 2 ---------------------------------------------------------------------------

def test_criterion_2_averaging():
    start = time.perf_counter()
    an = analyze(scenario("ex1-s1"))
    elapsed = time.perf_counter() - start
    avg = an.averaged
    a, c = an.series.params["a"], an.series.params["c"]
    odd = max(np.max(np.abs(avg.Lambda(1))), np.max(np.abs(avg.Lambda(3)))) / avg.scale
    slope_err = abs(avg.fits[2].coefficient(1) / a - 1)
    floor_err = abs(avg.fits[4].coefficient(0) / (c * c / 2) - 1)
    resid = max(avg.residual(k) for k in avg.orders)
    mean = max(avg.mean_defect(k) for k in avg.orders)
    ok = (odd <= 1e-8 and slope_err <= 0.02 and floor_err <= 0.05 and resid <= 1e-5
          and mean <= 1e-9 and elapsed < 60)
    report(2, ok, f"odd orders {odd:.1e}, slope err {slope_err:.1e}, floor err {floor_err:.1e}, "
                  f"residual {resid:.1e}, zero-mean {mean:.1e}, runtime {elapsed:.1f}s")
    assert ok


# 3 ---------------------------------------------------------------------------

def _golden_checks():
    checks = {}
    p = scenario_analysis("ex1-s1").prediction
    checks["ex1-s1 xi0=0.5"] = (p.sigma_class == SIGMA1 and p.theta == 1.0
                                and abs(p.xi - 0.5) <= 1e-6 * 0.5, p.xi)
    an = scenario_analysis("ex1-s2")
    prm = an.series.params
    target = prm["c"] ** 2 / abs(2 * prm["a"] + prm["b"] ** 2)
    p = an.prediction
    checks["ex1-s2 xi*~c^2/|2a+b^2| (3%)"] = (
        p.sigma_class == SIGMA2 and p.stable and abs(p.xi / target - 1) <= 0.03, p.xi)
    p = scenario_analysis("ex1-s3").prediction
    checks["ex1-s3 Sigma3 verdict"] = (p.sigma_class == SIGMA3 and p.stable is True, p.verdict)
    p = scenario_analysis("ex2-s1").prediction
    checks["ex2-s1 xi1=2"] = (p.case_label == "I" and abs(p.xi - 2) <= 1e-6 * 2, p.xi)
    p = scenario_analysis("ex2-s2").prediction
    checks["ex2-s2 xi2=1"] = (p.case_label == "II" and abs(p.xi - 1) <= 1e-6, p.xi)
    p = scenario_analysis("ex2-s3a").prediction
    checks["ex2-s3a xi3=1+sqrt2"] = (p.case_label == "III"
                                     and abs(p.xi - (1 + math.sqrt(2))) <= 1e-10, p.xi)
    p = scenario_analysis("ex2-s3b").prediction
    checks["ex2-s3b xi3=1-sqrt0.5"] = (p.case_label == "III"
                                       and abs(p.xi - (1 - math.sqrt(0.5))) <= 1e-10, p.xi)
    p = scenario_analysis("par-s2").prediction
    checks["par-s2 xi0~1.35 (5%)"] = (p.sigma_class == SIGMA1 and abs(p.xi / 1.35 - 1) <= 0.05, p.xi)
    an = scenario_analysis("par-s1")
    p = an.prediction
    prm = an.series.params
    cst = AutoresonanceConstants.from_params(prm["a"], prm["b"], prm["c"])
    mu = an.noise.mu_2p
    direct = mu / (cst.b * cst.c) * (1.5 * cst.gamma**2) ** (1 / 3)
    same = abs(leading_cycle_energy(mu, cst) - direct) <= 1e-12 * direct
    same = same and abs(p.inputs["xi_leading"] - direct) <= 1e-12 * direct
    checks["par-s1 xi*0 formula"] = (p.sigma_class == SIGMA2 and p.stable and same,
                                     f"{direct:.6g} (root {p.xi:.6g})")
    return checks


def test_criterion_3_classifier_golden_table():
    start = time.perf_counter()
    for name in GOLDEN_EIGHT + ["ex2-s3b"]:
        scenario_analysis(name)
    checks = _golden_checks()
    elapsed = time.perf_counter() - start
    for label, (ok, value) in checks.items():
        report(3, ok, f"{label}: {value}", sub=f"[{label.split()[0]}]")
    ok = all(v[0] for v in checks.values()) and elapsed < 300
    report(3, ok, f"{sum(v[0] for v in checks.values())}/{len(checks)} rows, runtime {elapsed:.1f}s")
    assert ok


# 4 ---------------------------------------------------------------------------

def test_criterion_4_reduced_equation():
    for name in STABLE:
        scenario_analysis(name)
    start = time.perf_counter()
    gaps = {}
    for name in STABLE:
        an = scenario_analysis(name)
        traj = solve_reduced(an.averaged, an.prediction, t0=100.0, t_end=1e6)
        gaps[name] = (abs(traj.zeta[-1] / an.prediction.xi - 1), traj.exited)
    elapsed = time.perf_counter() - start
    for name, (gap, exited) in gaps.items():
        report(4, gap <= 0.02 and not exited, f"relative gap {gap:.2e} at t=1e6", sub=f"[{name}]")
    ok = all(g <= 0.02 and not e for g, e in gaps.values()) and elapsed < 60
    report(4, ok, f"{sum(g <= 0.02 for g, _ in gaps.values())}/{len(gaps)} within 2%, "
                  f"runtime {elapsed:.1f}s")
    assert ok


# 5 ---------------------------------------------------------------------------

MC = dict(n_paths=200, eps1_frac=0.3, delta0_frac=0.1, horizon_C=None, series_paths=0)
MC_SIM = dict(t0=1e2, t_end=1e4, dt=1e-3, seed=2024, record_stride=100)


def _ensemble(name, force=False):
    cfg = scenario(name, sim=MC_SIM, ensemble={**MC, "force": force})
    an = scenario_analysis(name)
    an = type(an)(cfg, an.series, an.atlas, an.averaged, an.fit, an.noise, an.prediction)
    report_, _, _ = verify(an, keep_series=False)
    return report_


@pytest.mark.slow
def test_criterion_5_monte_carlo():
    for name in STABLE + ["ex1-s1-unstable"]:
        scenario_analysis(name)
    start = time.perf_counter()
    rows = {}
    for name in STABLE:
        rep = _ensemble(name)
        ok = rep.exceed_fraction <= 0.15 and rep.ci_high <= 0.25
        rows[name] = ok
        stopped = sum(s != "ok" for s in rep.statuses)
        report(5, ok, f"exceed {rep.exceed_fraction:.3f} (Wilson95 {rep.ci_low:.3f}-{rep.ci_high:.3f}), "
                      f"stopped paths {stopped}", sub=f"[{name}]")
    rep = _ensemble("ex1-s1-unstable", force=True)
    rows["ex1-s1-unstable"] = rep.exceed_fraction >= 0.5
    report(5, rows["ex1-s1-unstable"], f"exceed {rep.exceed_fraction:.3f} (needs >= 0.5)",
           sub="[ex1-s1-unstable]")
    elapsed = time.perf_counter() - start
    ok = all(rows.values()) and elapsed < 15 * 60
    report(5, ok, f"{sum(rows.values())}/{len(rows)} scenarios, runtime {elapsed / 60:.1f} min "
                  f"(dt=1e-3, thinning 100)")
    assert ok


# 6 ---------------------------------------------------------------------------

def test_criterion_6_wkb():
    start = time.perf_counter()
    exps = {}
    for a in (-1.0, 1.0):
        s = make_model("ex0", dict(a=a, c=0.0, p=2, q=2, r_max=1e3, E_max=1e5))
        path = simulate_path(s, SimConfig(t0=10.0, t_end=1e4, dt=1e-2, record_stride=2), (1.0, 0.0))
        exps[a] = envelope_exponent(path)
    elapsed = time.perf_counter() - start
    ok = all(abs(e - a / 2) <= 0.05 for a, e in exps.items()) and elapsed < 30
    report(6, ok, f"exponents a=-1: {exps[-1.0]:.4f}, a=+1: {exps[1.0]:.4f}, runtime {elapsed:.1f}s")
    assert ok


# 7 ---------------------------------------------------------------------------

def test_criterion_7_determinism(tmp_path, capsys):
    mismatches = []
    for name in ("ex1-s2", "par-s2"):
        dirs = []
        for workers in (1, 8):
            out = tmp_path / f"{name}-{workers}"
            argv = ["verify", "--scenario", name, "--seed", "99", "--paths", "16",
                    "--t-end", "1000", "--series-paths", "4", "--workers", str(workers),
                    "--out", str(out)]
            assert cli_main(argv) == 0
            assert cli_main(["classify", "--scenario", name, "--out", str(out)]) == 0
            dirs.append(out)
        capsys.readouterr()
        files = sorted(p.name for p in dirs[0].iterdir())
        _, bad, errs = filecmp.cmpfiles(dirs[0], dirs[1], files, shallow=False)
        mismatches += [f"{name}/{f}" for f in bad + errs]
    ok = not mismatches
    report(7, ok, "1 vs 8 workers byte-identical" if ok else f"differ: {mismatches}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
