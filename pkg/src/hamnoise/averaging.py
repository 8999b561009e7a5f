"""Averaging in energy-angle variables.

The SDE is pulled back to (E, phi) along the atlas; order by order a
near-identity change ``V_N = E + sum_k t**(-k/q) v_k(E, phi)`` removes the
phase dependence of the energy drift up to order N, leaving the averaged
coefficients ``Lambda_k(E)``.  Everything is done on tables: phase
derivatives and antiderivatives spectrally, energy derivatives with
finite-difference stencils on the (possibly nonuniform) energy grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ChartDomainError, ConfigError, SequencingError
from .hamiltonian import OrbitAtlas
from .numerics import (TrigInterpolant, diff_nonuniform, periodic_antiderivative,
                       periodic_derivative, periodic_fd_derivative)
from .perturbation import PerturbationSeries

COMPOSITION_CAP = 3
FIT_DECADE = 10.0


# ---------------------------------------------------------------------------
# geometry of the chart on the grid

@dataclass
class ChartGeometry:
    """Gradients and Hessians of the energy and phase functions on the grid."""

    E: np.ndarray          # (nE,)
    nu: np.ndarray         # (nE, 1)
    X: np.ndarray
    Y: np.ndarray
    grad_I: np.ndarray     # (2, nE, nphi)
    grad_phi: np.ndarray
    hess_I: np.ndarray     # (2, 2, nE, nphi)
    hess_phi: np.ndarray

    @classmethod
    def from_atlas(cls, atlas: OrbitAtlas) -> "ChartGeometry":
        model = atlas.model
        X, Y = atlas.X, atlas.Y
        nu = atlas.nu[:, None]
        gx, gy = model.grad_h0(X, Y)
        grad_I = np.stack([np.broadcast_to(gx, X.shape), np.broadcast_to(gy, X.shape)]).astype(float)
        hxx, hxy, hyy = (np.broadcast_to(v, X.shape) for v in model.hessian(X, Y))
        hess_I = np.array([[hxx, hxy], [hxy, hyy]], dtype=float)
        grad_phi = np.stack([nu * atlas.dY_dE, -nu * atlas.dX_dE])

        def d_x(F):
            return -nu * atlas.dY_dphi * d_E(F) + nu * atlas.dY_dE * periodic_derivative(F)

        def d_y(F):
            return nu * atlas.dX_dphi * d_E(F) - nu * atlas.dX_dE * periodic_derivative(F)

        def d_E(F):
            return diff_nonuniform(F, atlas.energies, 1, axis=0)

        pxx = d_x(grad_phi[0])
        pyy = d_y(grad_phi[1])
        pxy = 0.5 * (d_y(grad_phi[0]) + d_x(grad_phi[1]))
        hess_phi = np.array([[pxx, pxy], [pxy, pyy]])
        return cls(E=atlas.energies, nu=nu, X=X, Y=Y, grad_I=grad_I, grad_phi=grad_phi,
                   hess_I=hess_I, hess_phi=hess_phi)


def _trace_term(Ai, H, Aj):
    """tr(Ai^T H Aj) pointwise; all arguments carry the 2x2 indices first."""
    return np.einsum("rm...,rs...,sm...->...", Ai, H, Aj)


@dataclass(frozen=True)
class PullbackTables:
    k: int
    f: np.ndarray
    g: np.ndarray
    B: np.ndarray    # (2, 2, nE, nphi)


def _pullback(geo: ChartGeometry, series: PerturbationSeries, k: int) -> PullbackTables:
    if k < 1:
        raise ConfigError(f"pullback order must be >= 1, got {k}")
    X, Y = geo.X, geo.Y
    a_k = series.drift(k, X, Y)
    f = np.einsum("i...,i...->...", geo.grad_I, a_k)
    g = np.einsum("i...,i...->...", geo.grad_phi, a_k)
    for i in sorted(series.diffusion_terms):
        j = k - i
        if j < 1 or not series.has_diffusion(j):
            continue
        Ai, Aj = series.diffusion(i, X, Y), series.diffusion(j, X, Y)
        f = f + 0.5 * _trace_term(Ai, geo.hess_I, Aj)
        g = g + 0.5 * _trace_term(Ai, geo.hess_phi, Aj)
    A_k = series.diffusion(k, X, Y)
    grads = np.stack([geo.grad_I, geo.grad_phi])        # (row, s, ...)
    B = np.einsum("rs...,sm...->rm...", grads, A_k)
    return PullbackTables(k=k, f=f, g=g, B=B)


def pullback(atlas: OrbitAtlas, series: PerturbationSeries, k: int) -> PullbackTables:
    """Energy drift f_k, phase drift g_k and diffusion rows B_k on the grid."""
    if series.hamiltonian is not atlas.model:
        raise ConfigError("atlas was built for a different Hamiltonian than the series")
    return _pullback(ChartGeometry.from_atlas(atlas), series, k)


# ---------------------------------------------------------------------------
# small-energy fits

@dataclass(frozen=True)
class SmallEFit:
    """Least-squares fit sum_j coef[j] * E**powers[j] on the lowest decade."""

    powers: tuple[int, ...]
    coef: tuple[float, ...]
    window: tuple[float, float]
    rel_residual: float

    def __call__(self, E):
        E = np.asarray(E, dtype=float)
        return sum(c * E**p for p, c in zip(self.powers, self.coef))

    def derivative(self, E, order: int = 1):
        E = np.asarray(E, dtype=float)
        out = np.zeros_like(E)
        for p, c in zip(self.powers, self.coef):
            if p >= order:
                out = out + c * math.perm(p, order) * E ** (p - order)
        return out

    def coefficient(self, power: int) -> float:
        return dict(zip(self.powers, self.coef)).get(power, 0.0)


def fit_small_energy(E: np.ndarray, values: np.ndarray, powers) -> SmallEFit:
    E = np.asarray(E, dtype=float)
    sel = E <= FIT_DECADE * E[0] * (1 + 1e-12)
    if sel.sum() < len(powers) + 2:
        sel = np.zeros_like(E, dtype=bool)
        sel[: len(powers) + 2] = True
    e, v = E[sel], values[sel]
    scale_e = e[-1]
    M = np.column_stack([(e / scale_e) ** p for p in powers])
    sol, *_ = np.linalg.lstsq(M, v, rcond=None)
    resid = M @ sol - v
    ref = max(np.max(np.abs(v)), 1e-300)
    coef = tuple(float(s / scale_e**p) for s, p in zip(sol, powers))
    return SmallEFit(powers=tuple(powers), coef=coef, window=(float(e[0]), float(e[-1])),
                     rel_residual=float(np.max(np.abs(resid)) / ref))


# ---------------------------------------------------------------------------
# averaged drift

@dataclass
class AveragedDrift:
    """Tables Lambda_k(E) and v_k(E, phi) for k = 1..N (k-1 indexing)."""

    atlas: OrbitAtlas
    series: PerturbationSeries
    N: int
    lam: list = field(default_factory=list)        # Lambda_k on the E grid
    v: list = field(default_factory=list)          # v_k on the (E, phi) grid
    f: list = field(default_factory=list)
    R: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    _geo: ChartGeometry | None = field(default=None, repr=False)
    _pull: dict = field(default_factory=dict, repr=False)
    _splines: dict = field(default_factory=dict, repr=False)
    _v_interp: dict = field(default_factory=dict, repr=False)

    @property
    def orders(self) -> list[int]:
        return list(range(1, len(self.lam) + 1))

    @property
    def energies(self) -> np.ndarray:
        return self.atlas.energies

    @property
    def q(self) -> int:
        return self.series.q

    @property
    def scale(self) -> float:
        """Largest |Lambda_k| over all orders and grid nodes."""
        return max([float(np.max(np.abs(L))) for L in self.lam] + [1e-300])

    def Lambda(self, k: int) -> np.ndarray:
        return self.lam[k - 1]

    def shape(self, k: int) -> np.ndarray:
        return self.v[k - 1]

    def is_zero(self, k: int, rel_tol: float = 1e-8) -> bool:
        return float(np.max(np.abs(self.lam[k - 1]))) <= rel_tol * self.scale

    # -- evaluation -----------------------------------------------------------
    def _spline(self, k):
        if k not in self._splines:
            self._splines[k] = CubicSpline(self.energies, self.lam[k - 1])
        return self._splines[k]

    def lambda_at(self, k: int, E, deriv: int = 0) -> np.ndarray:
        """Lambda_k at arbitrary energies: spline on the grid, the small-energy
        fit below the grid."""
        E = np.asarray(E, dtype=float)
        if np.any(E > self.atlas.E_hi * (1 + 1e-12)):
            raise ChartDomainError(f"energy above the averaged range (E_max={self.atlas.E_hi:g})",
                                   energy=float(np.max(E)))
        lo = E < self.atlas.E_lo
        out = np.empty_like(E)
        spl = self._spline(k)
        out[~lo] = spl(E[~lo], deriv) if deriv else spl(E[~lo])
        if np.any(lo):
            fit = self.fits[k]
            out[lo] = fit.derivative(E[lo], deriv) if deriv else fit(E[lo])
        return out

    def residual(self, k: int, method: str = "fd") -> float:
        """Sup-norm residual of nu * d(v_k)/dphi = Lambda_k - f_k - R_k.

        The phase derivative is an independent eighth-order difference
        ("fd") or the spectral one ("spec"); the result is relative to the
        largest |f_j + R_j| over all computed orders.
        """
        vk = self.v[k - 1]
        dphi = periodic_fd_derivative(vk, order=8) if method == "fd" else periodic_derivative(vk)
        rhs = self.lam[k - 1][:, None] - self.f[k - 1] - self.R[k - 1]
        res = self.atlas.nu[:, None] * dphi - rhs
        return float(np.max(np.abs(res))) / self.forcing_scale

    @property
    def forcing_scale(self) -> float:
        return max(max(float(np.max(np.abs(f + R))) for f, R in zip(self.f, self.R)), 1e-300)

    def mean_defect(self, k: int) -> float:
        """max_E |<v_k>_phi| relative to max |v_k|."""
        vk = self.v[k - 1]
        ref = max(float(np.max(np.abs(vk))), 1e-300)
        return float(np.max(np.abs(vk.mean(axis=1)))) / ref

    def evaluate_V_N(self, E, phi, t):
        """E + sum_k t**(-k/q) v_k(E, phi) by table interpolation."""
        E, phi, t = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (E, phi, t)))
        self.atlas.check_range(E)
        flatE, flatphi = E.ravel(), np.mod(phi.ravel(), 2 * np.pi)
        e = self.energies
        i = np.clip(np.searchsorted(e, flatE, side="right") - 1, 0, len(e) - 2)
        h = e[i + 1] - e[i]
        s = (flatE - e[i]) / h
        h00, h10, h01, h11 = 2 * s**3 - 3 * s**2 + 1, s**3 - 2 * s**2 + s, -2 * s**3 + 3 * s**2, s**3 - s**2
        out = flatE.copy()
        for k, vk in enumerate(self.v, start=1):
            if not np.any(vk):
                continue
            if k not in self._v_interp:
                self._v_interp[k] = (TrigInterpolant(vk),
                                     TrigInterpolant(diff_nonuniform(vk, e, 1, axis=0)))
            f, df = self._v_interp[k]
            vals = (h00 * f(i, flatphi) + h10 * h * df(i, flatphi)
                    + h01 * f(i + 1, flatphi) + h11 * h * df(i + 1, flatphi))
            out = out + t.ravel() ** (-k / self.q) * vals
        return out.reshape(E.shape)

    # -- export -------------------------------------------------------------
    def to_csv(self, lambda_path, v_path=None) -> None:
        E = self.energies
        rows = np.column_stack([np.repeat(self.orders, len(E)), np.tile(E, len(self.orders)),
                                np.concatenate(self.lam)])
        np.savetxt(lambda_path, rows, delimiter=",", fmt=["%d", "%.17g", "%.17g"],
                   header="k,E,Lambda", comments="")
        if v_path is not None:
            phi = self.atlas.phi
            blocks = []
            for k, vk in enumerate(self.v, start=1):
                blocks.append(np.column_stack([
                    np.full(vk.size, k), np.repeat(E, len(phi)), np.tile(phi, len(E)), vk.ravel()]))
            np.savetxt(v_path, np.vstack(blocks), delimiter=",",
                       fmt=["%d", "%.17g", "%.17g", "%.17g"], header="k,E,phi,v", comments="")


def _powers_of_shift(v_list, k_max):
    """coefficients [delta^m]_s of (sum_i eps^i v_i)^m for m <= cap, s <= k_max."""
    pw = {1: {s: v_list[s - 1] for s in range(1, k_max + 1)}}
    for m in range(2, COMPOSITION_CAP + 1):
        prev = pw[m - 1]
        cur = {}
        for s in range(1, k_max + 1):
            acc = None
            for i in range(1, s):
                if (s - i) in prev and np.any(prev[s - i]) and np.any(v_list[i - 1]):
                    term = prev[s - i] * v_list[i - 1]
                    acc = term if acc is None else acc + term
            if acc is not None:
                cur[s] = acc
        pw[m] = cur
    return pw


def _remainder(avg: AveragedDrift, k: int) -> np.ndarray:
    geo = avg._geo
    q = avg.q
    E = geo.E
    shape = geo.X.shape
    R = np.zeros(shape)
    v = avg.v

    dE_v, dphi_v = {}, {}
    for i in range(1, k):
        if np.any(v[i - 1]):
            dE_v[i] = diff_nonuniform(v[i - 1], E, 1, axis=0)
            dphi_v[i] = periodic_derivative(v[i - 1])

    # transport of lower shape functions by the drift
    for i in dE_v:
        pb = avg._pull[k - i]
        R += dE_v[i] * pb.f + dphi_v[i] * pb.g

    # explicit time dependence of t**(-j/q) v_j
    j = k - q
    if j >= 1:
        R -= (j / q) * v[j - 1]

    # second-order Ito terms of the shape functions
    for j in dE_v:
        pairs = [(i, k - j - i) for i in range(1, k - j)]
        pairs = [(i, m) for i, m in pairs if avg.series.has_diffusion(i) and avg.series.has_diffusion(m)]
        if not pairs:
            continue
        vEE = diff_nonuniform(v[j - 1], E, 2, axis=0, width=7)
        vEp = periodic_derivative(dE_v[j])
        vpp = periodic_derivative(dphi_v[j])
        H = np.array([[vEE, vEp], [vEp, vpp]])
        for i, m in pairs:
            R += 0.5 * _trace_term(avg._pull[i].B, H, avg._pull[m].B)

    # expansion of Lambda_j(E + delta) around E
    if dE_v:
        pw = _powers_of_shift(v, k - 1)
        for j in range(1, k):
            Lj = avg.lam[j - 1]
            if not np.any(Lj):
                continue
            for m in range(1, COMPOSITION_CAP + 1):
                term = pw[m].get(k - j)
                if term is None:
                    continue
                dL = diff_nonuniform(Lj, E, m, axis=0, width=5 + 2 * (m > 1))
                R -= dL[:, None] / math.factorial(m) * term
    return R


def averaged_order(avg: AveragedDrift, k: int):
    """Compute Lambda_k and v_k given orders 1..k-1 already stored in ``avg``.

    Appends the new order to ``avg`` and returns (Lambda_k, v_k).
    """
    if avg.orders != list(range(1, k)):
        raise SequencingError(f"order {k} requested but orders {avg.orders} are available")
    if avg._geo is None:
        avg._geo = ChartGeometry.from_atlas(avg.atlas)
    for j in range(1, k + 1):
        if j not in avg._pull:
            avg._pull[j] = _pullback(avg._geo, avg.series, j)
    f = avg._pull[k].f
    R = _remainder(avg, k)
    h = f + R
    lam = h.mean(axis=1)
    vk = -periodic_antiderivative(h) / avg._geo.nu
    vk -= vk.mean(axis=1, keepdims=True)
    avg.lam.append(lam)
    avg.v.append(vk)
    avg.f.append(f)
    avg.R.append(R)
    avg._splines.pop(k, None)
    return lam, vk


def build_averaged_drift(atlas: OrbitAtlas, series: PerturbationSeries, N: int | None = None,
                         check_range: bool = True) -> AveragedDrift:
    if series.hamiltonian is not atlas.model:
        raise ConfigError("atlas was built for a different Hamiltonian than the series")
    p = series.p
    if N is None:
        if p is None:
            raise ConfigError("no noise floor: give the truncation order N explicitly")
        N = 2 * p
    if check_range and p is not None and not (2 * p <= N <= 4 * p):
        raise ConfigError(f"truncation order N={N} outside [2p, 4p] = [{2 * p}, {4 * p}]")
    avg = AveragedDrift(atlas=atlas, series=series, N=N)
    for k in range(1, N + 1):
        averaged_order(avg, k)
    two_p = 2 * p if p is not None else N + 1
    for k in range(1, N + 1):
        powers = (0, 1, 2, 3) if k >= two_p else (1, 2, 3)
        avg.fits[k] = fit_small_energy(atlas.energies, avg.lam[k - 1], powers)
    return avg
