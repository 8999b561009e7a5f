"""Limiting Hamiltonian system, its periodic orbits and the energy-angle chart.

Orbits are traced with a fixed-step classical Runge-Kutta scheme, all energy
levels of an atlas at once (the arrays carry one entry per level).  Energy
derivatives of the orbit tables come from the variational equations
integrated alongside the orbit, so they are as accurate as the orbit itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .errors import ChartDomainError, ConfigError, NonPeriodicOrbitError
from .numerics import TrigInterpolant

TWO_PI = 2.0 * math.pi
ATLAS_FORMAT = "hamnoise-atlas v1"


@dataclass(frozen=True)
class HamiltonianModel:
    """A planar Hamiltonian with a nondegenerate minimum at the origin.

    ``h0(x, y)`` and ``grad_h0(x, y)`` must accept numpy arrays.  The optional
    ``hess_h0`` returns ``(hxx, hxy, hyy)``; without it the Hessian is taken
    by centered differences of the gradient.
    """

    h0: Callable
    grad_h0: Callable
    E_max: float
    r_max: float
    E_min: float | None = None
    hess_h0: Callable | None = None
    name: str = "custom"

    def __post_init__(self):
        if self.E_min is None:
            object.__setattr__(self, "E_min", 1e-3 * self.E_max)
        if not (0 < self.E_min < self.E_max) or self.r_max <= 0:
            raise ConfigError(
                f"need 0 < E_min < E_max and r_max > 0, got E_min={self.E_min}, "
                f"E_max={self.E_max}, r_max={self.r_max}")
        origin = np.zeros(1)
        g = np.ravel(self.grad_h0(origin, origin))
        if abs(float(np.ravel(self.h0(origin, origin))[0])) > 1e-12 or np.max(np.abs(g)) > 1e-12:
            raise ConfigError("h0 must vanish together with its gradient at the origin")

    def vector_field(self, x, y):
        gx, gy = self.grad_h0(x, y)
        return gy, -gx

    def hessian(self, x, y):
        if self.hess_h0 is not None:
            return self.hess_h0(x, y)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        h = 1e-5 * (1.0 + np.hypot(x, y))
        gxp, gyp = self.grad_h0(x + h, y)
        gxm, gym = self.grad_h0(x - h, y)
        gxq, gyq = self.grad_h0(x, y + h)
        gxr, gyr = self.grad_h0(x, y - h)
        hxx = (gxp - gxm) / (2 * h)
        hyy = (gyq - gyr) / (2 * h)
        hxy = 0.5 * ((gyp - gym) + (gxq - gxr)) / (2 * h)
        return hxx, hxy, hyy

    def normalization_constant(self, n_samples: int = 2000, seed: int = 0) -> float:
        """Estimate C in |h0(z) - |z|^2/2| <= C |z|^3 over the ball."""
        rng = np.random.default_rng(seed)
        r = self.r_max * np.sqrt(rng.uniform(1e-6, 1.0, n_samples))
        ang = rng.uniform(0, TWO_PI, n_samples)
        x, y = r * np.cos(ang), r * np.sin(ang)
        dev = np.abs(self.h0(x, y) - 0.5 * r**2)
        return float(np.max(dev / r**3))


@dataclass(frozen=True)
class PeriodicOrbit:
    energy: float
    period: float
    frequency: float
    dnu_dE: float
    phi: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    dX_dE: np.ndarray
    dY_dE: np.ndarray
    dX_dphi: np.ndarray
    dY_dphi: np.ndarray


# ---------------------------------------------------------------------------
# orbit tracing

def _turning_points(model: HamiltonianModel, energies: np.ndarray) -> np.ndarray:
    """Smallest x0 > 0 with h0(x0, 0) = E, for each E."""
    xs = np.linspace(0.0, model.r_max, 4001)
    hv = np.asarray(model.h0(xs, np.zeros_like(xs)), dtype=float)
    out = np.empty(len(energies))
    f = lambda s, e: float(model.h0(np.array([s]), np.zeros(1))[0]) - e  # noqa: E731
    for j, e in enumerate(energies):
        above = np.nonzero(hv[1:] >= e)[0]
        if len(above) == 0:
            raise ChartDomainError(
                f"no level curve h0 = {e:g} crosses the positive x-axis inside r_max="
                f"{model.r_max:g}", energy=float(e))
        i = above[0] + 1
        out[j] = xs[i] if hv[i] == e else brentq(f, xs[i - 1], xs[i], args=(e,), xtol=1e-15, rtol=1e-15)
    return out


def _rk4(f, state, dt):
    k1 = f(*state)
    k2 = f(*(s + 0.5 * dt * k for s, k in zip(state, k1)))
    k3 = f(*(s + 0.5 * dt * k for s, k in zip(state, k2)))
    k4 = f(*(s + dt * k for s, k in zip(state, k3)))
    return tuple(s + dt / 6.0 * (a + 2 * b + 2 * c + d)
                 for s, a, b, c, d in zip(state, k1, k2, k3, k4))


def _return_times(model: HamiltonianModel, x0: np.ndarray, energies: np.ndarray,
                  steps_per_radian: int = 400, max_turns: float = 64.0) -> np.ndarray:
    """First return time to the half-line {y = 0, x > 0}."""
    f = lambda x, y: tuple(np.asarray(v, dtype=float) for v in model.vector_field(x, y))  # noqa: E731
    dt = 1.0 / steps_per_radian
    x, y = x0.copy(), np.zeros_like(x0)
    T = np.full(len(x0), np.nan)
    t = 0.0
    max_steps = int(max_turns * TWO_PI * steps_per_radian)
    for _ in range(max_steps):
        xn, yn = _rk4(f, (x, y), dt)
        hit = np.isnan(T) & (y > 0) & (yn <= 0) & (xn > 0)
        for j in np.nonzero(hit)[0]:
            z = (np.array([x[j]]), np.array([y[j]]))
            g = lambda s: float(_rk4(f, z, s)[1][0])  # noqa: E731
            T[j] = t + brentq(g, 0.0, dt, xtol=1e-15, rtol=1e-15)
        x, y, t = xn, yn, t + dt
        if not np.isnan(T).any():
            return T
    bad = energies[np.isnan(T)]
    raise NonPeriodicOrbitError(
        f"no return to the x-axis within {max_turns:g} radians of time for E={bad[0]:g}",
        energy=float(bad[0]))


def trace_orbits(model: HamiltonianModel, energies, n_phi: int = 256,
                 min_steps: int = 4096, closure_tol: float = 1e-7) -> dict:
    """Trace the level curves h0 = E and tabulate them on a uniform phase grid.

    Returns a dict of arrays with one row per energy.
    """
    E = np.atleast_1d(np.asarray(energies, dtype=float))
    x0 = _turning_points(model, E)
    T = _return_times(model, x0, E)

    m = max(1, -(-min_steps // n_phi))
    n_steps = n_phi * m
    dt = T / n_steps

    def flow(x, y, u, w):
        fx, fy = model.vector_field(x, y)
        hxx, hxy, hyy = model.hessian(x, y)
        return (np.asarray(fx, dtype=float), np.asarray(fy, dtype=float),
                hxy * u + hyy * w, -hxx * u - hxy * w)

    shape = (len(E), n_phi)
    xs, ys, us, ws = (np.empty(shape) for _ in range(4))
    state = (x0.copy(), np.zeros_like(x0), np.ones_like(x0), np.zeros_like(x0))
    for i in range(n_steps):
        if i % m == 0:
            j = i // m
            xs[:, j], ys[:, j], us[:, j], ws[:, j] = state
        state = _rk4(flow, state, dt)
    x_end, y_end, _, w_end = state

    gap = np.hypot(x_end - x0, y_end)
    bad = gap > closure_tol * (1.0 + x0)
    if bad.any():
        j = int(np.argmax(bad))
        raise NonPeriodicOrbitError(
            f"orbit at E={E[j]:g} fails to close (gap {gap[j]:.3g})", energy=float(E[j]))

    xdot, ydot = (np.asarray(v, dtype=float) for v in model.vector_field(xs, ys))
    _, ydot_end = model.vector_field(x_end, y_end)
    gx0, _ = model.grad_h0(x0, np.zeros_like(x0))
    dx0_dE = 1.0 / np.asarray(gx0, dtype=float)
    dT_dE = -w_end / np.asarray(ydot_end, dtype=float) * dx0_dE

    nu = TWO_PI / T
    phi = TWO_PI * np.arange(n_phi) / n_phi
    t_i = np.outer(T, phi / TWO_PI)
    shift = (t_i * (dT_dE / T)[:, None])
    return dict(
        energies=E, phi=phi, period=T, nu=nu, dnu_dE=-TWO_PI * dT_dE / T**2,
        X=xs, Y=ys,
        dX_dE=us * dx0_dE[:, None] + xdot * shift,
        dY_dE=ws * dx0_dE[:, None] + ydot * shift,
        dX_dphi=xdot / nu[:, None], dY_dphi=ydot / nu[:, None],
    )


def build_orbit(model: HamiltonianModel, E: float, n_phi: int = 256) -> PeriodicOrbit:
    if n_phi < 64:
        raise ConfigError("n_phi must be at least 64")
    if not (model.E_min <= E <= model.E_max):
        raise ChartDomainError(
            f"E={E:g} outside chart range [{model.E_min:g}, {model.E_max:g}]", energy=E)
    tab = trace_orbits(model, [E], n_phi)
    return PeriodicOrbit(
        energy=float(E), period=float(tab["period"][0]), frequency=float(tab["nu"][0]),
        dnu_dE=float(tab["dnu_dE"][0]), phi=tab["phi"],
        **{k: tab[k][0] for k in ("X", "Y", "dX_dE", "dY_dE", "dX_dphi", "dY_dphi")})


# ---------------------------------------------------------------------------
# atlas and chart

@dataclass(frozen=True)
class OrbitAtlas:
    """Orbit tables on an (E, phi) grid plus interpolation in both directions.

    Interpolation is trigonometric in phi and cubic Hermite in E (the exact
    E-derivative tables serve as Hermite slopes).
    """

    model: HamiltonianModel
    energies: np.ndarray
    phi: np.ndarray
    nu: np.ndarray
    dnu_dE: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    dX_dE: np.ndarray
    dY_dE: np.ndarray
    dX_dphi: np.ndarray
    dY_dphi: np.ndarray
    _interp: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("X", "Y", "dX_dE", "dY_dE"):
            self._interp[name] = TrigInterpolant(getattr(self, name))

    @property
    def n_phi(self) -> int:
        return len(self.phi)

    @property
    def E_lo(self) -> float:
        return float(self.energies[0])

    @property
    def E_hi(self) -> float:
        return float(self.energies[-1])

    def orbit(self, i: int) -> PeriodicOrbit:
        nu = float(self.nu[i])
        return PeriodicOrbit(
            energy=float(self.energies[i]), period=TWO_PI / nu, frequency=nu,
            dnu_dE=float(self.dnu_dE[i]), phi=self.phi, X=self.X[i], Y=self.Y[i],
            dX_dE=self.dX_dE[i], dY_dE=self.dY_dE[i],
            dX_dphi=self.dX_dphi[i], dY_dphi=self.dY_dphi[i])

    def jacobian_residual(self) -> float:
        """max |nu (X_phi Y_E - X_E Y_phi) - 1| over all nodes."""
        jac = self.nu[:, None] * (self.dX_dphi * self.dY_dE - self.dX_dE * self.dY_dphi)
        return float(np.max(np.abs(jac - 1.0)))

    def energy_error(self) -> float:
        h = self.model.h0(self.X, self.Y)
        return float(np.max(np.abs(h - self.energies[:, None])))

    def frequency(self, E) -> np.ndarray:
        """Cubic Hermite interpolation of nu(E)."""
        E = np.asarray(E, dtype=float)
        i, s, h = self._locate(E)
        h00, h10, h01, h11 = _hermite_basis(s)
        return (h00 * self.nu[i] + h10 * h * self.dnu_dE[i]
                + h01 * self.nu[i + 1] + h11 * h * self.dnu_dE[i + 1])

    def check_range(self, E):
        E = np.asarray(E, dtype=float)
        lo, hi = self.E_lo, self.E_hi
        tol = 1e-12 * hi
        bad = (E < lo - tol) | (E > hi + tol) | ~np.isfinite(E)
        if np.any(bad):
            e = float(np.ravel(E)[np.argmax(np.ravel(bad))])
            raise ChartDomainError(f"energy {e:g} outside chart range [{lo:g}, {hi:g}]", energy=e)

    def _locate(self, E):
        e = self.energies
        i = np.clip(np.searchsorted(e, E, side="right") - 1, 0, len(e) - 2)
        h = e[i + 1] - e[i]
        return i, (E - e[i]) / h, h

    def _eval(self, E, phi, deriv: int = 0):
        i, s, h = self._locate(E)
        h00, h10, h01, h11 = _hermite_basis(s)
        out = []
        for v, dv in (("X", "dX_dE"), ("Y", "dY_dE")):
            f, df = self._interp[v], self._interp[dv]
            out.append(h00 * f(i, phi, deriv) + h10 * h * df(i, phi, deriv)
                       + h01 * f(i + 1, phi, deriv) + h11 * h * df(i + 1, phi, deriv))
        return out[0], out[1]

    def from_energy_angle(self, E, phi):
        """Point (x, y) on the level curve E at phase phi."""
        E, phi = np.broadcast_arrays(np.asarray(E, dtype=float), np.asarray(phi, dtype=float))
        self.check_range(E)
        x, y = self._eval(E.ravel(), np.mod(phi.ravel(), TWO_PI))
        return x.reshape(E.shape), y.reshape(E.shape)

    def to_energy_angle(self, x, y, newton_steps: int = 8):
        """Energy and phase of the point(s) (x, y)."""
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        shape = x.shape
        x, y = x.ravel(), y.ravel()
        E = np.asarray(self.model.h0(x, y), dtype=float)
        self.check_range(E)
        i, s, h = self._locate(E)
        h00, h10, h01, h11 = (b[:, None] for b in _hermite_basis(s))
        hh = h[:, None]
        gx = h00 * self.X[i] + h10 * hh * self.dX_dE[i] + h01 * self.X[i + 1] + h11 * hh * self.dX_dE[i + 1]
        gy = h00 * self.Y[i] + h10 * hh * self.dY_dE[i] + h01 * self.Y[i + 1] + h11 * hh * self.dY_dE[i + 1]
        j = np.argmin((gx - x[:, None]) ** 2 + (gy - y[:, None]) ** 2, axis=1)
        phi = self.phi[j]
        for _ in range(newton_steps):
            px, py = self._eval(E, phi)
            dx, dy = self._eval(E, phi, 1)
            ddx, ddy = self._eval(E, phi, 2)
            g = (px - x) * dx + (py - y) * dy
            dg = dx * dx + dy * dy + (px - x) * ddx + (py - y) * ddy
            step = np.clip(g / dg, -0.5, 0.5)
            phi = phi - step
            if np.max(np.abs(step)) < 1e-14:
                break
        return E.reshape(shape), np.mod(phi, TWO_PI).reshape(shape)

    # -- serialization ------------------------------------------------------
    def to_csv(self, path) -> None:
        n_e, n_phi = self.X.shape
        E = np.repeat(self.energies, n_phi)
        cols = [E, np.tile(self.phi, n_e), self.X.ravel(), self.Y.ravel(),
                self.dX_dE.ravel(), self.dY_dE.ravel(), self.dX_dphi.ravel(),
                self.dY_dphi.ravel(), np.repeat(self.nu, n_phi), np.repeat(self.dnu_dE, n_phi)]
        header = (f"# {ATLAS_FORMAT} model={self.model.name} n_E={n_e} n_phi={n_phi}\n"
                  "E,phi,X,Y,dX_dE,dY_dE,dX_dphi,dY_dphi,nu,dnu_dE")
        np.savetxt(path, np.column_stack(cols), delimiter=",", fmt="%.17g",
                   header=header, comments="")

    @classmethod
    def from_csv(cls, path, model: HamiltonianModel) -> "OrbitAtlas":
        with open(path) as fh:
            first = fh.readline()
        if ATLAS_FORMAT not in first:
            raise ConfigError(f"{path}: not an atlas file ({ATLAS_FORMAT} header missing)")
        meta = dict(tok.split("=") for tok in first.split() if "=" in tok)
        n_e, n_phi = int(meta["n_E"]), int(meta["n_phi"])
        data = np.loadtxt(path, delimiter=",", skiprows=2)
        tab = lambda c: data[:, c].reshape(n_e, n_phi)  # noqa: E731
        return cls(model=model, energies=tab(0)[:, 0].copy(), phi=tab(1)[0].copy(),
                   nu=tab(8)[:, 0].copy(), dnu_dE=tab(9)[:, 0].copy(),
                   X=tab(2), Y=tab(3), dX_dE=tab(4), dY_dE=tab(5),
                   dX_dphi=tab(6), dY_dphi=tab(7))


def _hermite_basis(s):
    s2, s3 = s * s, s * s * s
    return 2 * s3 - 3 * s2 + 1, s3 - 2 * s2 + s, -2 * s3 + 3 * s2, s3 - s2


def default_energy_grid(model: HamiltonianModel, ratio: float = 1.075,
                        max_step: float | None = None) -> np.ndarray:
    """Geometric grid from E_min, switching to uniform steps once the
    geometric step would exceed ``max_step`` (default E_max/64)."""
    lo, hi = model.E_min, model.E_max
    max_step = hi / 64 if max_step is None else max_step
    knee = min(max(max_step / (ratio - 1.0), lo), hi)
    n_geo = max(2, int(math.ceil(math.log(knee / lo) / math.log(ratio))) + 1)
    geo = np.geomspace(lo, knee, n_geo)
    n_lin = int(math.ceil((hi - knee) / max_step))
    if n_lin == 0:
        return geo
    return np.concatenate([geo, np.linspace(knee, hi, n_lin + 1)[1:]])


def build_atlas(model: HamiltonianModel, E_grid=None, n_phi: int = 256,
                min_steps: int = 4096) -> OrbitAtlas:
    if n_phi < 64:
        raise ConfigError("n_phi must be at least 64")
    E = default_energy_grid(model) if E_grid is None else np.asarray(E_grid, dtype=float)
    if len(E) < 5 or np.any(np.diff(E) <= 0):
        raise ConfigError("energy grid must be strictly increasing with at least 5 nodes")
    tol = 1e-12 * model.E_max
    out = (E < model.E_min - tol) | (E > model.E_max + tol)
    if out.any():
        e = float(E[np.argmax(out)])
        raise ChartDomainError(
            f"grid energy {e:g} outside [{model.E_min:g}, {model.E_max:g}]", energy=e)
    tab = trace_orbits(model, E, n_phi, min_steps=min_steps)
    return OrbitAtlas(model=model, energies=E, phi=tab["phi"], nu=tab["nu"], dnu_dE=tab["dnu_dE"],
                      X=tab["X"], Y=tab["Y"], dX_dE=tab["dX_dE"], dY_dE=tab["dY_dE"],
                      dX_dphi=tab["dX_dphi"], dY_dphi=tab["dY_dphi"])


def points_on_level_sets(model: HamiltonianModel, energies, phases, n_phi: int = 128):
    """Exact points at phase ``phases[i]`` on the level curve ``energies[i]``.

    Used to draw initial conditions whose energies may lie outside an atlas.
    """
    E = np.atleast_1d(np.asarray(energies, dtype=float))
    phases = np.broadcast_to(np.asarray(phases, dtype=float), E.shape)
    tab = trace_orbits(model, E, n_phi)
    rows = np.arange(len(E))
    x = TrigInterpolant(tab["X"])(rows, phases)
    y = TrigInterpolant(tab["Y"])(rows, phases)
    return x, y


def save_atlas(atlas: OrbitAtlas, path) -> Path:
    path = Path(path)
    atlas.to_csv(path)
    return path
