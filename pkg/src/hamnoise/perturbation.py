"""Decaying drift/diffusion expansion of the full Ito system.

The drift is ``a0(z) + sum_k t**(-k/q) a_k(z)`` and the diffusion matrix is
``sum_k t**(-k/q) A_k(z)``.  Coefficient fields are plain callables of
``(x, y)`` returning nested sequences of arrays (length-2 for drift terms,
2x2 for diffusion terms).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.optimize import minimize

from .errors import ConfigError, NoNoiseFloorError
from .hamiltonian import HamiltonianModel


def _as_vector(val, shape) -> np.ndarray:
    return np.stack([np.broadcast_to(np.asarray(v, dtype=float), shape) for v in val])


def _as_matrix(val, shape) -> np.ndarray:
    return np.stack([_as_vector(row, shape) for row in val])


@dataclass(frozen=True)
class PerturbationSeries:
    hamiltonian: HamiltonianModel
    q: int
    drift_terms: Mapping[int, Callable] = field(default_factory=dict)
    diffusion_terms: Mapping[int, Callable] = field(default_factory=dict)
    p: int | None = None
    closed_drift: Callable | None = None
    closed_diffusion: Callable | None = None
    kernel: object | None = None
    name: str = "custom"
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 1:
            raise ConfigError(f"q must be a positive integer, got {self.q}")
        for k in list(self.drift_terms) + list(self.diffusion_terms):
            if int(k) != k or k < 1:
                raise ConfigError(f"expansion orders must be positive integers, got {k}")
        if self.p is None:
            object.__setattr__(self, "p", self._detect_p())

    def _detect_p(self):
        zero = np.zeros(1)
        for k in sorted(self.diffusion_terms):
            if np.any(np.abs(self.diffusion(k, zero, zero)) > 0):
                return k
        return None

    @property
    def max_order(self) -> int:
        return max([0, *self.drift_terms, *self.diffusion_terms])

    def a0(self, x, y) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return _as_vector(self.hamiltonian.vector_field(x, y), x.shape)

    def drift(self, k: int, x, y) -> np.ndarray:
        """a_k at the points (x, y); zeros when order k has no drift term."""
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        fn = self.drift_terms.get(k)
        if fn is None:
            return np.zeros((2,) + x.shape)
        return _as_vector(fn(x, y), x.shape)

    def diffusion(self, k: int, x, y) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        fn = self.diffusion_terms.get(k)
        if fn is None:
            return np.zeros((2, 2) + x.shape)
        return _as_matrix(fn(x, y), x.shape)

    def has_drift(self, k: int) -> bool:
        return k in self.drift_terms

    def has_diffusion(self, k: int) -> bool:
        return k in self.diffusion_terms


def _check_time(t):
    if np.any(np.asarray(t) <= 0):
        raise ConfigError("time must be positive (coefficients are singular at t = 0)")


def drift_at(series: PerturbationSeries, z, t, N: int | None = None) -> np.ndarray:
    """Full drift at (z, t): the closed form when present (and N is None),
    otherwise the series truncated at order N."""
    _check_time(t)
    x, y = np.asarray(z[0], dtype=float), np.asarray(z[1], dtype=float)
    if series.closed_drift is not None and N is None:
        x, y, t = np.broadcast_arrays(x, y, np.asarray(t, dtype=float))
        return _as_vector(series.closed_drift(x, y, t), x.shape)
    out = series.a0(x, y)
    top = series.max_order if N is None else N
    for k in sorted(series.drift_terms):
        if k <= top:
            out = out + np.asarray(t, dtype=float) ** (-k / series.q) * series.drift(k, x, y)
    return out


def diffusion_at(series: PerturbationSeries, z, t, N: int | None = None) -> np.ndarray:
    _check_time(t)
    x, y = np.asarray(z[0], dtype=float), np.asarray(z[1], dtype=float)
    if series.closed_diffusion is not None and N is None:
        x, y, t = np.broadcast_arrays(x, y, np.asarray(t, dtype=float))
        return _as_matrix(series.closed_diffusion(x, y, t), x.shape)
    x, y = np.broadcast_arrays(x, y)
    out = np.zeros((2, 2) + np.broadcast_shapes(x.shape, np.shape(t)))
    top = series.max_order if N is None else N
    for k in sorted(series.diffusion_terms):
        if k <= top:
            out = out + np.asarray(t, dtype=float) ** (-k / series.q) * series.diffusion(k, x, y)
    return out


@dataclass(frozen=True)
class NoiseFloor:
    mu_2p: float
    mu_bound: float | None = None


def noise_floor(series: PerturbationSeries, with_bound: bool = False,
                t_range=(1e2, 1e6), n_grid: int = 121) -> NoiseFloor:
    """Leading noise intensity 0.5*sum(A_p(0)**2) and optionally the global
    bound of 0.5*|tr(A^T A)| * t**(2p/q) over the ball and the time range."""
    if series.p is None:
        raise NoNoiseFloorError("all diffusion coefficients vanish at the origin")
    zero = np.zeros(1)
    Ap = series.diffusion(series.p, zero, zero)
    mu = 0.5 * float(np.sum(Ap**2))
    if not with_bound:
        return NoiseFloor(mu_2p=mu)

    r = series.hamiltonian.r_max
    scale = 2.0 * series.p / series.q

    def density(x, y, logt):
        t = np.exp(logt)
        A = diffusion_at(series, (x, y), t)
        return 0.5 * np.abs(np.einsum("ij...,ij...->...", A, A)) * t**scale

    g = np.linspace(-r, r, n_grid)
    gx, gy = np.meshgrid(g, g)
    inside = gx**2 + gy**2 <= r * r
    gx, gy = gx[inside], gy[inside]
    best, arg = -np.inf, None
    for lt in np.linspace(np.log(t_range[0]), np.log(t_range[1]), 9):
        vals = density(gx, gy, np.full_like(gx, lt))
        i = int(np.argmax(vals))
        if vals[i] > best:
            best, arg = float(vals[i]), np.array([gx[i], gy[i], lt])

    def neg(v):
        x, y, lt = v
        if x * x + y * y > r * r or not (np.log(t_range[0]) <= lt <= np.log(t_range[1])):
            return 0.0
        return -float(density(np.array([x]), np.array([y]), np.array([lt]))[0])

    res = minimize(neg, arg, method="Nelder-Mead", options=dict(xatol=1e-10, fatol=1e-14))
    return NoiseFloor(mu_2p=mu, mu_bound=max(best, -float(res.fun)))


@dataclass
class ValidationReport:
    valid: bool
    p: int | None
    q: int
    violations: list[str]
    lipschitz: dict[str, float]


def validate(series: PerturbationSeries, sample_count: int = 200, seed: int = 0) -> ValidationReport:
    """Check the structural assumptions on the expansion at sampled points."""
    issues = []
    zero = np.zeros(1)
    for k in sorted(series.drift_terms):
        v = series.drift(k, zero, zero)
        if np.max(np.abs(v)) > 1e-12:
            issues.append(f"drift term a_{k} does not vanish at the origin: {v.ravel().tolist()}")
    if series.p is None:
        issues.append("no diffusion term is nonzero at the origin")
    else:
        for k in sorted(series.diffusion_terms):
            if k < series.p and np.max(np.abs(series.diffusion(k, zero, zero))) > 1e-12:
                issues.append(f"diffusion term A_{k} with k < p={series.p} is nonzero at the origin")
        if np.max(np.abs(series.diffusion(series.p, zero, zero))) == 0:
            issues.append(f"A_p(0) vanishes for the declared p={series.p}")

    rng = np.random.default_rng(seed)
    r = series.hamiltonian.r_max
    rad = r * np.sqrt(rng.uniform(0, 1, sample_count))
    ang = rng.uniform(0, 2 * np.pi, sample_count)
    x, y = rad * np.cos(ang), rad * np.sin(ang)
    a0 = series.a0(x, y)
    if not np.all(np.isfinite(a0)):
        issues.append("limiting vector field is not finite inside the ball")

    lip = {}
    step = rng.normal(size=(2, sample_count))
    step *= 1e-3 * r / np.linalg.norm(step, axis=0)
    for k in sorted(set(series.drift_terms) | set(series.diffusion_terms)):
        da = series.drift(k, x + step[0], y + step[1]) - series.drift(k, x, y)
        dA = series.diffusion(k, x + step[0], y + step[1]) - series.diffusion(k, x, y)
        n = np.linalg.norm(step, axis=0)
        lip[f"a_{k}"] = float(np.max(np.linalg.norm(da, axis=0) / n))
        lip[f"A_{k}"] = float(np.max(np.sqrt(np.sum(dA**2, axis=(0, 1))) / n))
        if not (np.isfinite(lip[f"a_{k}"]) and np.isfinite(lip[f"A_{k}"])):
            issues.append(f"order {k} coefficients are not Lipschitz-finite inside the ball")
    return ValidationReport(valid=not issues, p=series.p, q=series.q, violations=issues, lipschitz=lip)
