"""Built-in models: damped linear oscillator (ex0), perturbed pendulum (ex1),
oscillator with nonlinear damping (ex2) and stochastic parametric
autoresonance in its asymptotically autonomous form."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
from typing import Callable

import numba as nb
import numpy as np

from .errors import ConfigError
from .hamiltonian import HamiltonianModel
from .perturbation import PerturbationSeries


@dataclass(frozen=True)
class SimKernel:
    """Compiled drift/diffusion pair used by the path simulator.

    ``drift(x, y, t, prm) -> (ax, ay)``,
    ``diffusion(x, y, t, prm) -> (A11, A12, A21, A22)``.
    """

    drift: Callable
    diffusion: Callable
    params: np.ndarray


@dataclass(frozen=True)
class ModelParams:
    a: float = 0.0
    b: float = 0.0
    c: float = 1.0
    p: int | None = None
    q: int | None = None
    h: int | None = None
    d: int | None = None
    beta1: float = 0.0
    beta2: float = -0.5
    alpha1: float = 0.25
    alpha2: float = 0.15
    exact_time_change: bool = False
    E_max: float | None = None
    r_max: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# limiting Hamiltonians

def harmonic(E_max: float = 2.0, r_max: float = 4.0) -> HamiltonianModel:
    return HamiltonianModel(
        h0=lambda x, y: 0.5 * (x * x + y * y),
        grad_h0=lambda x, y: (1.0 * x, 1.0 * y),
        hess_h0=lambda x, y: (np.ones_like(x), np.zeros_like(x), np.ones_like(x)),
        E_max=E_max, r_max=r_max, name="harmonic")


def pendulum(E_max: float = 1.5, r_max: float = 3.0) -> HamiltonianModel:
    return HamiltonianModel(
        h0=lambda x, y: 1.0 - np.cos(x) + 0.5 * y * y,
        grad_h0=lambda x, y: (np.sin(x), 1.0 * y),
        hess_h0=lambda x, y: (np.cos(x), np.zeros_like(x), np.ones_like(y)),
        E_max=E_max, r_max=r_max, name="pendulum")


# ---------------------------------------------------------------------------
# compiled kernels (parameters are packed into a float array)

@nb.njit(cache=True)
def _ex0_drift(x, y, t, prm):
    # prm: a, c, h/q, p/q
    return y, -x + prm[0] * y * t ** (-prm[2])


@nb.njit(cache=True)
def _ex0_diffusion(x, y, t, prm):
    return 0.0, 0.0, 0.0, prm[1] * t ** (-prm[3])


@nb.njit(cache=True)
def _ex1_drift(x, y, t, prm):
    # prm: a, b, c, h/q, p/q
    return y, -math.sin(x) + prm[0] * y * t ** (-prm[3])


@nb.njit(cache=True)
def _ex1_diffusion(x, y, t, prm):
    return 0.0, 0.0, 0.0, (prm[2] + prm[1] * math.sin(x)) * t ** (-prm[4])


@nb.njit(cache=True)
def _ex2_drift(x, y, t, prm):
    # prm: a, b, c, h/q, (h+d)/q, p/q
    f1 = prm[0] * x * x * y / (1.0 + x * x)
    return y, -x + f1 * t ** (-prm[3]) + prm[1] * y * t ** (-prm[4])


@nb.njit(cache=True)
def _ex2_diffusion(x, y, t, prm):
    return 0.0, 0.0, 0.0, prm[2] * t ** (-prm[5])


@nb.njit(cache=True)
def _par_drift(x, y, t, prm):
    # prm: a, b, c, gamma, psi0, psi1, e0, alpha1, alpha2, e1, e2
    a, b, c, gam, psi0, psi1, e0 = prm[0], prm[1], prm[2], prm[3], prm[4], prm[5], prm[6]
    tau = (1.5 * t / gam) ** (2.0 / 3.0)
    psi = psi0 + psi1 / tau
    en = a * tau + e0
    cc = (2.0 / (3.0 * gam * gam)) ** (1.0 / 3.0)
    s = t ** (-1.0 / 3.0)
    P = y + b * s * (math.cos(x + psi) - math.cos(psi)) * cc
    Q = (en * s * s * (math.sin(x + psi) - math.sin(psi)) * cc * cc
         + y * s * (math.sin(x + psi) - c) * cc - y / (3.0 * t))
    return P, Q


@nb.njit(cache=True)
def _par_diffusion(x, y, t, prm):
    return prm[7] * t ** (-prm[9]), 0.0, 0.0, prm[8] * t ** (-prm[10])


# ---------------------------------------------------------------------------
# model factories

def _need_int(name, value, default=None):
    v = default if value is None else value
    if v is None or int(v) != v or v < 1:
        raise ConfigError(f"parameter {name} must be a positive integer, got {value}")
    return int(v)


def make_ex0(prm: ModelParams) -> PerturbationSeries:
    p, q = _need_int("p", prm.p, 2), _need_int("q", prm.q, 2)
    a, c = prm.a, prm.c
    ham = harmonic(prm.E_max or 2.0, prm.r_max or 4.0)
    drift = {q: lambda x, y: (0.0 * y, a * y)}
    diffusion = {p: lambda x, y: ((0.0, 0.0), (0.0, c))} if c != 0 else {}
    kern = SimKernel(_ex0_drift, _ex0_diffusion, np.array([a, c, 1.0, p / q]))
    return PerturbationSeries(
        hamiltonian=ham, q=q, drift_terms=drift, diffusion_terms=diffusion,
        closed_drift=lambda x, y, t: (y, -x + a * y / t),
        closed_diffusion=lambda x, y, t: ((0.0, 0.0), (0.0, c * t ** (-p / q))),
        kernel=kern, name="ex0", params=dict(a=a, c=c, p=p, q=q))


def make_ex1(prm: ModelParams) -> PerturbationSeries:
    p, q = _need_int("p", prm.p, 2), _need_int("q", prm.q, 2)
    h = _need_int("h", prm.h, q)
    a, b, c = prm.a, prm.b, prm.c
    ham = pendulum(prm.E_max or 1.5, prm.r_max or 3.0)
    drift = {h: lambda x, y: (0.0 * y, a * y)}
    diffusion = {p: lambda x, y: ((0.0, 0.0), (0.0, c + b * np.sin(x)))}
    kern = SimKernel(_ex1_drift, _ex1_diffusion, np.array([a, b, c, h / q, p / q]))
    return PerturbationSeries(
        hamiltonian=ham, q=q, drift_terms=drift, diffusion_terms=diffusion,
        closed_drift=lambda x, y, t: (y, -np.sin(x) + a * y * t ** (-h / q)),
        closed_diffusion=lambda x, y, t: ((0.0, 0.0), (0.0, (c + b * np.sin(x)) * t ** (-p / q))),
        kernel=kern, name="ex1", params=dict(a=a, b=b, c=c, p=p, q=q, h=h))


def make_ex2(prm: ModelParams) -> PerturbationSeries:
    p, q = _need_int("p", prm.p, 2), _need_int("q", prm.q, 2)
    h, d = _need_int("h", prm.h, 1), _need_int("d", prm.d, 1)
    a, b, c = prm.a, prm.b, prm.c
    ham = harmonic(prm.E_max or 2.0, prm.r_max or 4.0)

    def f1(x, y):
        return a * x * x * y / (1.0 + x * x)

    drift = {h: lambda x, y: (0.0 * y, f1(x, y)), h + d: lambda x, y: (0.0 * y, b * y)}
    diffusion = {p: lambda x, y: ((0.0, 0.0), (0.0, c))}
    kern = SimKernel(_ex2_drift, _ex2_diffusion, np.array([a, b, c, h / q, (h + d) / q, p / q]))
    return PerturbationSeries(
        hamiltonian=ham, q=q, drift_terms=drift, diffusion_terms=diffusion,
        closed_drift=lambda x, y, t: (y, -x + f1(x, y) * t ** (-h / q) + b * y * t ** (-(h + d) / q)),
        closed_diffusion=lambda x, y, t: ((0.0, 0.0), (0.0, c * t ** (-p / q))),
        kernel=kern, name="ex2", params=dict(a=a, b=b, c=c, p=p, q=q, h=h, d=d))


@dataclass(frozen=True)
class AutoresonanceConstants:
    a: float
    b: float
    c: float
    gamma: float
    psi0: float
    psi1: float
    e0: float

    @classmethod
    def from_params(cls, a: float, b: float, c: float) -> "AutoresonanceConstants":
        if not (0.0 < c < 1.0):
            raise ConfigError(f"autoresonance requires 0 < c < 1, got c={c}")
        if a <= 0:
            raise ConfigError(f"autoresonance requires a > 0, got a={a}")
        psi0 = math.pi - math.asin(c)
        return cls(a=a, b=b, c=c, gamma=(a * a * (1.0 - c * c)) ** 0.25, psi0=psi0,
                   psi1=1.0 / math.cos(psi0), e0=-b * math.cos(psi0))

    @property
    def stiffness(self) -> float:
        """a / gamma**2, the prefactor of the potential."""
        return self.a / self.gamma**2

    @property
    def well_depth(self) -> float:
        """Energy of the saddle bounding the potential well on the left."""
        xs = 2.0 * math.asin(self.c) - math.pi
        return self.stiffness * (xs * self.c + math.cos(xs + self.psi0) - math.cos(self.psi0))


def _noise_exponents(beta1: float, beta2: float):
    e1 = Fraction(1 + 4 * Fraction(beta1).limit_denominator(1000), 6)
    e2 = Fraction(3 + 4 * Fraction(beta2).limit_denominator(1000), 6)
    if e1 <= 0 or e2 <= 0:
        raise ConfigError(
            f"noise exponents (1+4*beta1)/6={e1} and (3+4*beta2)/6={e2} must be positive")
    return e1, e2


def autoresonance_noise(cst: AutoresonanceConstants, alpha1: float, alpha2: float,
                        beta1: float, beta2: float, exact_time_change: bool = False):
    """Noise amplitudes and exponents in the (x, y, t) variables.

    With ``exact_time_change`` the Wiener time change dt = gamma*sqrt(tau)*dtau
    contributes an extra factor gamma**-0.5 to both amplitudes.
    """
    e1, e2 = _noise_exponents(beta1, beta2)
    g = cst.gamma
    amp1 = alpha1 * (2 * g / 3) ** float(e1)
    amp2 = alpha2 / g * (2 * g / 3) ** float(e2)
    if exact_time_change:
        amp1 /= math.sqrt(g)
        amp2 /= math.sqrt(g)
    return amp1, amp2, e1, e2


def make_autoresonance(prm: ModelParams) -> PerturbationSeries:
    cst = AutoresonanceConstants.from_params(prm.a, prm.b, prm.c)
    amp1, amp2, e1, e2 = autoresonance_noise(cst, prm.alpha1, prm.alpha2, prm.beta1,
                                             prm.beta2, prm.exact_time_change)
    q = math.lcm(3, e1.denominator, e2.denominator)
    if prm.q is not None and prm.q != q:
        if prm.q % q:
            raise ConfigError(f"q={prm.q} incompatible with the noise exponents (need a multiple of {q})")
        q = int(prm.q)
    k1, k2 = int(e1 * q), int(e2 * q)
    step = q // 3  # order index of one power of t**(-1/3)

    a, b, c = cst.a, cst.b, cst.c
    K, psi0, psi1, e0 = cst.stiffness, cst.psi0, cst.psi1, cst.e0
    C = (2.0 / (3.0 * cst.gamma**2)) ** (1.0 / 3.0)
    D = (2.0 * cst.gamma / 3.0) ** (2.0 / 3.0)
    cos0 = math.cos(psi0)

    def g0(x):
        return np.cos(x + psi0) - cos0

    def g1(x):
        return np.sin(x + psi0) - c

    drift = {
        step: lambda x, y: (b * C * g0(x), y * C * g1(x)),
        2 * step: lambda x, y: (0.0 * x, a * psi1 * C * C * g0(x) + e0 * C * C * g1(x)),
        3 * step: lambda x, y: (-b * C * psi1 * D * g1(x),
                                y * C * psi1 * D * np.cos(x + psi0) - y / 3.0),
        4 * step: lambda x, y: (0.0 * x, -K * psi1**2 * D * D * g1(x) / 2.0
                                + e0 * C * C * psi1 * D * g0(x)),
    }
    diffusion = {}
    mats = {k1: np.array([[amp1, 0.0], [0.0, 0.0]]), k2: np.array([[0.0, 0.0], [0.0, amp2]])}
    if k1 == k2:
        mats = {k1: np.diag([amp1, amp2])}
    for k, M in mats.items():
        diffusion[k] = (lambda M: lambda x, y: M.tolist())(M)

    def closed_drift(x, y, t):
        tau = (1.5 * t / cst.gamma) ** (2.0 / 3.0)
        psi = psi0 + psi1 / tau
        en = a * tau + e0
        s = t ** (-1.0 / 3.0)
        P = y + b * s * (np.cos(x + psi) - np.cos(psi)) * C
        Q = (en * s * s * (np.sin(x + psi) - np.sin(psi)) * C * C
             + y * s * (np.sin(x + psi) - c) * C - y / (3.0 * t))
        return P, Q

    def closed_diffusion(x, y, t):
        return ((amp1 * t ** (-float(e1)), 0.0), (0.0, amp2 * t ** (-float(e2))))

    ham = HamiltonianModel(
        h0=lambda x, y: K * (x * c + np.cos(x + psi0) - cos0) + 0.5 * y * y,
        grad_h0=lambda x, y: (K * (c - np.sin(x + psi0)), 1.0 * y),
        hess_h0=lambda x, y: (-K * np.cos(x + psi0), np.zeros_like(x), np.ones_like(y)),
        E_max=prm.E_max or 0.8 * cst.well_depth,
        r_max=prm.r_max or abs(2.0 * math.asin(c) - math.pi),
        name="autoresonance")
    kern = SimKernel(_par_drift, _par_diffusion, np.array(
        [a, b, c, cst.gamma, psi0, psi1, e0, amp1, amp2, float(e1), float(e2)]))
    return PerturbationSeries(
        hamiltonian=ham, q=q, drift_terms=drift, diffusion_terms=diffusion,
        closed_drift=closed_drift, closed_diffusion=closed_diffusion, kernel=kern,
        name="autoresonance",
        params=dict(a=a, b=b, c=c, beta1=prm.beta1, beta2=prm.beta2, alpha1=prm.alpha1,
                    alpha2=prm.alpha2, amp1=amp1, amp2=amp2, gamma=cst.gamma,
                    exact_time_change=prm.exact_time_change))


REGISTRY = {
    "ex0": make_ex0,
    "ex1": make_ex1,
    "ex2": make_ex2,
    "autoresonance": make_autoresonance,
}


def make_model(name: str, params: ModelParams | dict | None = None) -> PerturbationSeries:
    if name not in REGISTRY:
        raise ConfigError(f"unknown model {name!r}; available: {', '.join(sorted(REGISTRY))}")
    if params is None:
        params = ModelParams()
    elif isinstance(params, dict):
        unknown = set(params) - set(ModelParams.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model parameters: {sorted(unknown)}")
        params = ModelParams(**params)
    return REGISTRY[name](params)


def with_params(params: ModelParams, **changes) -> ModelParams:
    return replace(params, **changes)
