"""Path simulation of the full Ito system, scaled-energy diagnostics,
Monte Carlo ensembles and the autoresonance coordinate bridge."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numba as nb
import numpy as np
from scipy.stats import binomtest

from .errors import ConfigError, RefusedRunError
from .hamiltonian import points_on_level_sets
from .models import AutoresonanceConstants
from .perturbation import PerturbationSeries, diffusion_at, drift_at
from .regime import SIGMA2, ReducedTrajectory, RegimePrediction, horizon_sigma2

SCHEMES = ("euler-maruyama", "drift-rk4-plus-noise")
STATUS = {0: "ok", 1: "blow-up", 2: "ball-exit"}


@dataclass(frozen=True)
class SimConfig:
    t0: float = 100.0
    t_end: float = 1e4
    dt: float = 1e-2
    seed: int = 0
    scheme: str = "drift-rk4-plus-noise"
    record_stride: int = 10
    workers: int = 1

    def __post_init__(self):
        if not self.t0 > 0:
            raise ConfigError(f"t0 must be positive, got {self.t0}")
        if not self.t_end > self.t0:
            raise ConfigError(f"t_end={self.t_end} must exceed t0={self.t0}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.record_stride < 1 or self.workers < 1:
            raise ConfigError("record_stride and workers must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


def path_rng(seed: int, path_id: int) -> np.random.Generator:
    """Independent counter-based stream for one path of an ensemble."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(path_id)])))


@dataclass
class SamplePath:
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    energies: np.ndarray
    status: str = "ok"
    stop_time: float | None = None
    path_id: int = 0
    seed: int = 0
    rho: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.times)
        if not (len(self.x) == len(self.y) == len(self.energies) == n):
            raise ValueError("path arrays must have equal length")

    def to_csv(self, path) -> None:
        rho = self.rho if self.rho is not None else np.full(len(self.times), np.nan)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "H0", "rho"])
            for row in zip(self.times, self.x, self.y, self.energies, rho):
                w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# integrators

@nb.njit(nogil=True, cache=True)
def _step_count(t0, t_end, dt):
    return max(1, int(math.ceil((t_end - t0) / dt - 1e-9)))


@nb.njit(nogil=True, cache=True)
def _run_kernel(drift, diffusion, prm, x, y, t0, t_end, dt, rk4, stride, r_max, rng,
                out_t, out_x, out_y):
    n = _step_count(t0, t_end, dt)
    h = (t_end - t0) / n
    sq = math.sqrt(h)
    out_t[0], out_x[0], out_y[0] = t0, x, y
    rec = 1
    r2 = r_max * r_max
    for i in range(n):
        t = t0 + i * h
        if rk4:
            k1x, k1y = drift(x, y, t, prm)
            k2x, k2y = drift(x + 0.5 * h * k1x, y + 0.5 * h * k1y, t + 0.5 * h, prm)
            k3x, k3y = drift(x + 0.5 * h * k2x, y + 0.5 * h * k2y, t + 0.5 * h, prm)
            k4x, k4y = drift(x + h * k3x, y + h * k3y, t + h, prm)
            nx = x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
            ny = y + h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
        else:
            ax, ay = drift(x, y, t, prm)
            nx = x + h * ax
            ny = y + h * ay
        a11, a12, a21, a22 = diffusion(x, y, t, prm)
        if a11 != 0.0 or a12 != 0.0 or a21 != 0.0 or a22 != 0.0:
            w1 = sq * rng.standard_normal()
            w2 = sq * rng.standard_normal()
            nx += a11 * w1 + a12 * w2
            ny += a21 * w1 + a22 * w2
        x, y = nx, ny
        status = 0
        if not (math.isfinite(x) and math.isfinite(y)):
            status = 1
        elif x * x + y * y > r2:
            status = 2
        if status or (i + 1) % stride == 0 or i == n - 1:
            out_t[rec], out_x[rec], out_y[rec] = t + h, x, y
            rec += 1
        if status:
            return rec, status
    return rec, 0


def _run_python(series, x, y, t0, t_end, dt, rk4, stride, r_max, rng):
    n = int(math.ceil((t_end - t0) / dt - 1e-9)) or 1
    h = (t_end - t0) / n
    sq = math.sqrt(h)
    ts, xs, ys = [t0], [x], [y]
    status = 0

    def a(x, y, t):
        v = drift_at(series, (np.array(x), np.array(y)), t)
        return float(v[0]), float(v[1])

    for i in range(n):
        t = t0 + i * h
        if rk4:
            k1 = a(x, y, t)
            k2 = a(x + 0.5 * h * k1[0], y + 0.5 * h * k1[1], t + 0.5 * h)
            k3 = a(x + 0.5 * h * k2[0], y + 0.5 * h * k2[1], t + 0.5 * h)
            k4 = a(x + h * k3[0], y + h * k3[1], t + h)
            nx = x + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            ny = y + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        else:
            k1 = a(x, y, t)
            nx, ny = x + h * k1[0], y + h * k1[1]
        A = diffusion_at(series, (np.array(x), np.array(y)), t)
        if np.any(A != 0):
            w = sq * rng.standard_normal(2)
            nx += float(A[0, 0] * w[0] + A[0, 1] * w[1])
            ny += float(A[1, 0] * w[0] + A[1, 1] * w[1])
        x, y = nx, ny
        if not (math.isfinite(x) and math.isfinite(y)):
            status = 1
        elif x * x + y * y > r_max * r_max:
            status = 2
        if status or (i + 1) % stride == 0 or i == n - 1:
            ts.append(t + h)
            xs.append(x)
            ys.append(y)
        if status:
            break
    return np.array(ts), np.array(xs), np.array(ys), status


def effective_dt(series: PerturbationSeries, dt: float) -> float:
    """Base step capped at 1/200 of the small-oscillation period."""
    ham = series.hamiltonian
    H = [float(np.ravel(v)[0]) for v in ham.hessian(np.zeros(1), np.zeros(1))]
    omega = math.sqrt(max(H[0] * H[2] - H[1] ** 2, 1e-300))
    return min(dt, 2 * math.pi / omega / 200)


def simulate_path(series: PerturbationSeries, config: SimConfig, z0, path_id: int = 0,
                  rng: np.random.Generator | None = None) -> SamplePath:
    """Integrate one sample path from z0 at t0 to t_end.

    Leaving the ball |z| <= r_max or producing non-finite values stops the
    path and is reported in ``status``; both are outcomes, not errors.
    """
    x0, y0 = float(z0[0]), float(z0[1])
    r_max = series.hamiltonian.r_max
    if x0 * x0 + y0 * y0 > r_max * r_max:
        raise ConfigError(f"initial point {z0} lies outside the ball of radius {r_max}")
    if rng is None:
        rng = path_rng(config.seed, path_id)
    dt = effective_dt(series, config.dt)
    rk4 = config.scheme == "drift-rk4-plus-noise"
    stride = config.record_stride
    if series.kernel is not None:
        n = _step_count(config.t0, config.t_end, dt)
        size = n // stride + 3
        ts, xs, ys = np.empty(size), np.empty(size), np.empty(size)
        k = series.kernel
        rec, status = _run_kernel(k.drift, k.diffusion, k.params, x0, y0, config.t0,
                                  config.t_end, dt, rk4, stride, r_max, rng, ts, xs, ys)
        ts, xs, ys = ts[:rec], xs[:rec], ys[:rec]
    else:
        ts, xs, ys, status = _run_python(series, x0, y0, config.t0, config.t_end, dt, rk4,
                                         stride, r_max, rng)
    with np.errstate(all="ignore"):
        H = np.asarray(series.hamiltonian.h0(xs, ys), dtype=float)
    return SamplePath(times=ts, x=xs, y=ys, energies=H, status=STATUS[status],
                      stop_time=float(ts[-1]) if status else None, path_id=path_id,
                      seed=config.seed)


# ---------------------------------------------------------------------------
# diagnostics

def _center_fn(center) -> tuple[Callable, float]:
    if isinstance(center, RegimePrediction):
        if center.xi is None:
            raise ConfigError("prediction carries no limit value")
        xi = center.xi
        return (lambda t: np.full(np.shape(t), float(xi))), center.theta
    if isinstance(center, ReducedTrajectory):
        return center.center, center.theta
    if isinstance(center, tuple):
        xi, theta = center
        if callable(xi):
            return xi, float(theta)
        return (lambda t: np.full(np.shape(t), float(xi))), float(theta)
    raise ConfigError("center must be a prediction, a reduced trajectory or (xi, theta)")


def scaled_energy(path: SamplePath, center, window=None):
    """rho(t) = t**theta * H0(z(t)) - center(t), and sup |rho| over the window.

    A path that stopped early (blow-up or ball exit) has sup |rho| = inf.
    """
    fn, theta = _center_fn(center)
    t = path.times
    rho = t**theta * path.energies - fn(t)
    path.rho = rho
    lo, hi = (t[0], t[-1]) if window is None else window
    sel = (t >= lo) & (t <= hi)
    if path.status != "ok" and (path.stop_time is None or path.stop_time <= hi):
        return rho, math.inf
    sup = float(np.max(np.abs(rho[sel]))) if np.any(sel) else 0.0
    return rho, sup


@dataclass
class EnsembleReport:
    n_paths: int
    epsilon1: float
    delta0: float
    exceed_fraction: float
    ci_low: float
    ci_high: float
    sup_rho: np.ndarray
    exceeded: np.ndarray
    statuses: list
    window: tuple
    seed: int
    notes: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "epsilon1": self.epsilon1,
            "delta0": self.delta0,
            "exceed_fraction": self.exceed_fraction,
            "wilson95": [self.ci_low, self.ci_high],
            "window": list(self.window),
            "seed": self.seed,
            "stopped_paths": sum(s != "ok" for s in self.statuses),
            "notes": self.notes,
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "sup_rho", "exceeded"])
            for i, (s, e) in enumerate(zip(self.sup_rho, self.exceeded)):
                w.writerow([i, repr(float(s)), int(e)])


def wilson_interval(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    ci = binomtest(k, n).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def initial_draw(rng: np.random.Generator, delta0: float) -> tuple[float, float]:
    """Energy offset in (-delta0, delta0) and a uniform phase."""
    return rng.uniform(-delta0, delta0), rng.uniform(0.0, 2 * math.pi)


def initial_points(series: PerturbationSeries, draws, t0: float, center: float, theta: float):
    """Points on the level sets t0**-theta * (center + offset) at the drawn phases."""
    off, phase = (np.array(v, dtype=float) for v in zip(*draws))
    E = t0 ** (-theta) * (center + off)
    return points_on_level_sets(series.hamiltonian, E, phase)


def ensemble_window(prediction: RegimePrediction, config: SimConfig, delta0: float,
                    mu: float | None, horizon_C: float | None = 1.0):
    """Observation window and notes; the limit-cycle class is cut at its horizon."""
    notes = []
    hi = config.t_end
    if prediction.sigma_class == SIGMA2:
        p, q = prediction.inputs["p"], prediction.inputs["q"]
        if 2 * p > q:
            notes.append("infinite horizon truncated at t_end")
        elif horizon_C is None or math.isinf(horizon_C):
            notes.append("horizon truncation disabled (C = inf)")
        else:
            T = horizon_sigma2(p, q, mu, delta0, config.t0, horizon_C)
            if config.t0 + T < hi:
                hi = config.t0 + T
                notes.append(f"window truncated at t0 + T = {hi:.6g} (C={horizon_C})")
    return (config.t0, hi), notes


def run_ensemble(series: PerturbationSeries, prediction: RegimePrediction, config: SimConfig,
                 n_paths: int, epsilon1: float, delta0: float,
                 center: ReducedTrajectory | Callable | None = None, force: bool = False,
                 horizon_C: float | None = 1.0, mu: float | None = None,
                 keep_paths: bool = False):
    """Estimate P(sup_window |rho| > epsilon1) over independent seeded paths.

    Path i uses the stream (seed, i) for both its initial point and its
    increments, so the result does not depend on the number of workers.
    """
    if not prediction.stable and not force:
        why = "; ".join(prediction.failed) or "prediction is not stable"
        raise RefusedRunError(f"refusing to run an ensemble for an unstable prediction: {why}")
    if prediction.xi is None:
        raise ConfigError("prediction carries no limit value")
    if n_paths < 1 or epsilon1 <= 0 or delta0 < 0:
        raise ConfigError("need n_paths >= 1, epsilon1 > 0 and delta0 >= 0")
    theta = prediction.theta
    if center is None:
        center_arg = (prediction.xi, theta)
    elif isinstance(center, ReducedTrajectory):
        center_arg = center
    else:
        center_arg = (center, theta)
    fn, _ = _center_fn(center_arg)
    start = float(fn(np.array([config.t0]))[0])
    window, notes = ensemble_window(prediction, config, delta0, mu, horizon_C)
    cfg = config if window[1] >= config.t_end else SimConfig(
        **{**config.__dict__, "t_end": window[1]})

    rngs = [path_rng(config.seed, i) for i in range(n_paths)]
    xs, ys = initial_points(series, [initial_draw(r, delta0) for r in rngs], config.t0, start,
                            theta)

    def one(i):
        path = simulate_path(series, cfg, (xs[i], ys[i]), path_id=i, rng=rngs[i])
        _, sup = scaled_energy(path, center_arg, window)
        return sup, path.status, (path if keep_paths else None)

    if config.workers == 1:
        results = [one(i) for i in range(n_paths)]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(one, range(n_paths)))
    sup = np.array([r[0] for r in results])
    exceeded = sup > epsilon1
    k = int(exceeded.sum())
    lo, hi = wilson_interval(k, n_paths)
    report = EnsembleReport(n_paths=n_paths, epsilon1=epsilon1, delta0=delta0,
                            exceed_fraction=k / n_paths, ci_low=lo, ci_high=hi, sup_rho=sup,
                            exceeded=exceeded, statuses=[r[1] for r in results],
                            window=window, seed=config.seed, notes=notes)
    if keep_paths:
        return report, [r[2] for r in results]
    return report


def envelope_exponent(path: SamplePath, t_min: float | None = None) -> float:
    """Log-log slope of the peaks of |x(t)| against t."""
    ax = np.abs(path.x)
    peaks = np.nonzero((ax[1:-1] > ax[:-2]) & (ax[1:-1] >= ax[2:]))[0] + 1
    if t_min is not None:
        peaks = peaks[path.times[peaks] >= t_min]
    if len(peaks) < 3:
        raise ConfigError("too few oscillation peaks to fit an envelope")
    return float(np.polyfit(np.log(path.times[peaks]), np.log(ax[peaks]), 1)[0])


# ---------------------------------------------------------------------------
# autoresonance coordinates

def _tau_of_t(t, gamma):
    return (1.5 * np.asarray(t, dtype=float) / gamma) ** (2.0 / 3.0)


def autoresonance_to_original(x, y, t, cst: AutoresonanceConstants):
    """(x, y, t) -> (phase mismatch Psi, energy-like variable, tau)."""
    tau = _tau_of_t(t, cst.gamma)
    psi = cst.psi0 + cst.psi1 / tau + np.asarray(x)
    en = cst.a * tau + cst.e0 + cst.gamma * np.sqrt(tau) * np.asarray(y)
    return psi, en, tau


def autoresonance_to_model(psi, en, tau, cst: AutoresonanceConstants):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ConfigError("tau must be positive")
    x = np.asarray(psi) - cst.psi0 - cst.psi1 / tau
    y = (np.asarray(en) - cst.a * tau - cst.e0) / (cst.gamma * np.sqrt(tau))
    t = 2.0 * cst.gamma / 3.0 * tau**1.5
    return x, y, t


def capture_deviation(psi, en, tau, cst: AutoresonanceConstants):
    """Distance from the phase-locked regime: |Psi - pi + asin c| + |E - a tau| / sqrt(tau)."""
    tau = np.asarray(tau, dtype=float)
    return (np.abs(np.asarray(psi) - math.pi + math.asin(cst.c))
            + np.abs(np.asarray(en) - cst.a * tau) / np.sqrt(tau))
