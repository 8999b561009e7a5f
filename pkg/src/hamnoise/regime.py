"""Structure of the averaged drift near zero energy, regime classification,
predicted asymptotic states and the scalar reduced equation."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .averaging import AveragedDrift, fit_small_energy
from .errors import AmbiguousFitError, DegenerateModelError, NoRootError
from .perturbation import NoiseFloor

SIGMA1, SIGMA2, SIGMA3 = "Sigma1", "Sigma2", "Sigma3"
FIT_TERMS = 6  # powers m..m+5 in the small-energy refit of a leading coefficient


@dataclass
class StructureFit:
    n: int
    p: int
    q: int
    m: int | None = None                 # leading power of Lambda_n (None when n >= 2p)
    lam_n: float | None = None           # linear coefficient when m == 1
    lam_nm: float | None = None          # leading coefficient when m >= 2
    d: int | None = None
    lam_nd: float | None = None
    roots: list = field(default_factory=list)      # (xi, Lambda_n'(xi))
    slopes: dict = field(default_factory=dict)     # log-log slope per order
    fit_residuals: dict = field(default_factory=dict)
    E_max: float = math.inf

    def to_dict(self) -> dict:
        return asdict(self)


def _loglog_slope(E, values) -> float:
    sel = E <= 10.0 * E[0] * (1 + 1e-12)
    e, v = E[sel], np.abs(values[sel])
    if np.any(v == 0) or np.any(np.sign(values[sel]) != np.sign(values[sel][0])):
        return math.nan
    return float(np.polyfit(np.log(e), np.log(v), 1)[0])


def _identify_power(slope: float, k: int, max_power: int = 5) -> int:
    if not math.isfinite(slope):
        raise AmbiguousFitError(f"Lambda_{k} changes sign or vanishes on the lowest decade",
                                candidates=list(range(1, max_power + 1)))
    cand = np.arange(1, max_power + 1)
    dist = np.abs(cand - slope)
    order = np.argsort(dist, kind="stable")
    if dist[order[0]] > 0.3:
        raise AmbiguousFitError(
            f"log-log slope {slope:.3f} of Lambda_{k} is not close to an integer power",
            candidates=[int(c) for c in cand[order[:2]]])
    return int(cand[order[0]])


def fit_structure(avg: AveragedDrift, p: int, q: int, threshold: float = 1e-8) -> StructureFit:
    """Leading order n, its small-energy power law, the secondary linear
    order and (for n >= 2p or n > q) the zeros of Lambda_n."""
    E = avg.energies
    nonzero = [k for k in avg.orders if not avg.is_zero(k, threshold)]
    if not nonzero:
        raise DegenerateModelError(f"all averaged coefficients vanish up to order N={avg.N}")
    n = nonzero[0]
    fit = StructureFit(n=n, p=p, q=q, E_max=avg.atlas.E_hi)
    for k in nonzero:
        fit.slopes[k] = _loglog_slope(E, avg.Lambda(k))
        fit.fit_residuals[k] = avg.fits[k].rel_residual

    if n < 2 * p:
        m = _identify_power(fit.slopes[n], n)
        refit = fit_small_energy(E, avg.Lambda(n), tuple(range(m, m + FIT_TERMS)))
        fit.fit_residuals[n] = refit.rel_residual
        fit.m = m
        if m == 1:
            fit.lam_n = refit.coefficient(1)
        else:
            fit.lam_nm = refit.coefficient(m)
            for k in nonzero[1:]:
                if k >= 2 * p:
                    break
                slope = fit.slopes[k]
                if math.isfinite(slope) and abs(slope - 1.0) <= 0.3:
                    fit.d = k - n
                    fit.lam_nd = fit_small_energy(E, avg.Lambda(k),
                                                  tuple(range(1, 1 + FIT_TERMS))).coefficient(1)
                    break
    if n >= 2 * p or n > q:
        fit.roots = find_roots(avg, n)
    return fit


def find_roots(avg: AveragedDrift, k: int) -> list:
    """Zeros of Lambda_k on the grid with the derivative there."""
    E = avg.energies
    L = avg.Lambda(k)
    out = []
    f = lambda e: float(avg.lambda_at(k, np.array([e]))[0])  # noqa: E731
    for i in np.nonzero(np.sign(L[:-1]) * np.sign(L[1:]) < 0)[0]:
        xi = brentq(f, E[i], E[i + 1], xtol=1e-14, rtol=1e-14)
        h = 1e-5 * xi
        dl = (f(xi + h) - f(xi - h)) / (2 * h)
        out.append((float(xi), float(dl)))
    return out


# ---------------------------------------------------------------------------
# classification

def sigma_class(n: int, p: int, q: int) -> str | None:
    """Class of (n, p, q); n = 2p is assigned to Sigma2 even when 2p > q."""
    if n < 2 * p and n <= q:
        return SIGMA1
    if n == 2 * p:
        return SIGMA2
    if q < n < 2 * p:
        return SIGMA3
    return None


@dataclass
class RegimePrediction:
    sigma_class: str | None
    case_label: str
    theta: float
    xi: float | None
    stable: bool | None
    kappa: dict = field(default_factory=dict)
    horizon: float | None = None
    failed: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    inputs: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        if self.stable is None:
            return "undetermined"
        return "stable" if self.stable else "unstable/unclassified"

    def to_dict(self) -> dict:
        horizon = self.horizon
        return {
            "class": self.sigma_class,
            "case": self.case_label,
            "theta": self.theta,
            "xi": self.xi,
            "stable": self.stable,
            "verdict": self.verdict,
            "kappa": self.kappa,
            "horizon": None if horizon is None or math.isinf(horizon) else horizon,
            "horizon_infinite": horizon is not None and math.isinf(horizon),
            "failed_conditions": self.failed,
            "notes": self.notes,
            "inputs": self.inputs,
        }


def solve_q3(lam_nm: float, lin: float, mu: float, m: int, zeta_max: float = 1e8) -> float:
    """Smallest positive root of lam_nm*z**m + lin*z + mu with negative slope."""
    Q = lambda z: lam_nm * z**m + lin * z + mu  # noqa: E731
    grid = np.concatenate([[0.0], np.geomspace(1e-12, zeta_max, 2000)])
    vals = Q(grid)
    for i in range(len(grid) - 1):
        if vals[i] > 0 and vals[i + 1] <= 0:
            if vals[i + 1] == 0:
                return float(grid[i + 1])
            return float(brentq(Q, grid[i], grid[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps))
    raise NoRootError("Q3 has no positive root with negative slope (Case III misclassified?)")


def horizon_sigma2(p: int, q: int, mu: float, delta0: float, t0: float, C: float = 1.0) -> float:
    if 2 * p < q:
        return C * delta0**2 / mu * t0 ** (2 * p / q)
    if 2 * p == q:
        return t0 * math.expm1(C * delta0**2 / mu)
    return math.inf


def _kron(i: int, j: int) -> int:
    return int(i == j)


def classify(fit: StructureFit, noise: NoiseFloor, xi_star: float | None = None,
             delta0: float | None = None, t0: float = 100.0, C: float = 1.0,
             xi_limit_frac: float = 0.8) -> RegimePrediction:
    n, p, q = fit.n, fit.p, fit.q
    mu = noise.mu_2p
    inputs = dict(n=n, p=p, q=q, m=fit.m, d=fit.d, lambda_n=fit.lam_n, lambda_nm=fit.lam_nm,
                  lambda_nd=fit.lam_nd, mu_2p=mu, mu_bound=noise.mu_bound)

    # Sigma1 with a nonlinear leading term uses the secondary order
    if fit.m is not None and fit.m >= 2:
        return _classify_nonlinear(fit, mu, inputs)

    cls = sigma_class(n, p, q)
    if cls == SIGMA1:
        th0 = (2 * p - n) / q
        lin = fit.lam_n + _kron(n, q) * th0
        pred = RegimePrediction(SIGMA1, "ass21", th0, mu / abs(lin) if lin != 0 else None,
                                lin < 0, inputs=inputs)
        k0 = min(1.0 / q, th0)
        pred.kappa = {"kappa0": k0, "varkappa0": min(k0, abs(lin))}
        if lin >= 0:
            pred.failed.append(f"lambda_n + delta(n,q)*theta0 = {lin:.6g} is not negative")
        if n < q:
            pred.notes.append("n < q: the reduced solution is only known to stay within O(1) of xi0")
        return pred

    if cls == SIGMA2:
        pred = RegimePrediction(SIGMA2, "cycle", 0.0, None, False, inputs=inputs)
        cands = [(x, d) for x, d in fit.roots if d < 0]
        if xi_star is not None:
            cands = sorted(fit.roots, key=lambda r: abs(r[0] - xi_star))[:1]
        if not fit.roots:
            pred.failed.append("Lambda_n has no zero on the energy grid")
            return pred
        if not cands:
            pred.failed.append("no zero of Lambda_n with negative slope")
            pred.xi = fit.roots[0][0]
            return pred
        xi, slope = cands[0]
        pred.xi = xi
        pred.stable = slope < 0
        if slope >= 0:
            pred.failed.append(f"Lambda_n'(xi*) = {slope:.6g} is not negative")
        if xi > xi_limit_frac * fit.E_max:
            pred.stable = False
            pred.failed.append(f"xi*={xi:.6g} exceeds {xi_limit_frac} * E_max")
        pred.kappa = {"varkappa_star": min(1.0 / q, abs(slope)), "slope": slope}
        mu_b = noise.mu_bound if noise.mu_bound is not None else mu
        d0 = 0.1 * xi if delta0 is None else delta0
        pred.horizon = horizon_sigma2(p, q, mu_b, d0, t0, C)
        pred.inputs.update(delta0=d0, t0=t0, C=C, mu_for_horizon=mu_b)
        if 2 * p < q:
            pred.notes.append("2p < q: the reduced solution is only known to stay within O(1) of xi*")
        return pred

    if cls == SIGMA3:
        pred = RegimePrediction(SIGMA3, "limiting-like", 0.0, xi_star, None, inputs=inputs)
        if xi_star is None:
            pred.notes.append("Sigma3 admits a family of limits; supply xi_star to verify it")
            return pred
        pred.stable = True
        lam = fit.roots  # not used for the verdict; kept for reporting
        pred.inputs["roots"] = lam
        return pred

    pred = RegimePrediction(None, "unclassified", 0.0, None, False, inputs=inputs)
    pred.failed.append(f"(n, p, q) = ({n}, {p}, {q}) belongs to no class")
    return pred


def check_sigma3(pred: RegimePrediction, avg: AveragedDrift, xi_limit_frac: float = 0.8):
    """Verify the sign conditions for a user-chosen limit in Sigma3."""
    if pred.sigma_class != SIGMA3 or pred.xi is None:
        return pred
    n = pred.inputs["n"]
    xi = pred.xi
    val = float(avg.lambda_at(n, np.array([xi]))[0])
    slope = float(avg.lambda_at(n, np.array([xi]), 1)[0])
    pred.kappa = {"Lambda_n(xi)": val, "slope": slope}
    if abs(val) <= 1e-8 * avg.scale:
        pred.stable = False
        pred.failed.append("Lambda_n(xi*) vanishes")
    if slope >= 0:
        pred.stable = False
        pred.failed.append(f"Lambda_n'(xi*) = {slope:.6g} is not negative")
    if xi > xi_limit_frac * avg.atlas.E_hi:
        pred.stable = False
        pred.failed.append(f"xi*={xi:.6g} exceeds {xi_limit_frac} * E_max")
    return pred


def _classify_nonlinear(fit: StructureFit, mu: float, inputs: dict) -> RegimePrediction:
    n, p, q, m = fit.n, fit.p, fit.q, fit.m
    lam = fit.lam_nm
    if fit.d is None:
        pred = RegimePrediction(sigma_class(n, p, q), "unclassified", 0.0, None, False, inputs=inputs)
        pred.failed.append("nonlinear leading term without a secondary linear order below 2p")
        return pred
    d, lam_d = fit.d, fit.lam_nd
    cls = sigma_class(n + d, p, q)
    if cls != SIGMA1:
        pred = RegimePrediction(cls, "unclassified", 0.0, None, False, inputs=inputs)
        pred.failed.append(f"(n+d, p, q) = ({n + d}, {p}, {q}) is not in Sigma1")
        return pred
    ratio = Fraction(2 * p - n, 2 * p - n - d)
    dq = _kron(n + d, q)
    th1 = d / (q * (m - 1))
    th2 = (2 * p - n) / (q * m)
    inputs.update(ratio=str(ratio))

    if m > ratio:
        lin = lam_d + dq * th1
        xi = abs(lin / lam) ** (1.0 / (m - 1))
        pred = RegimePrediction(SIGMA1, "I", th1, xi, lam < 0 and lin > 0, inputs=inputs)
        if lam >= 0:
            pred.failed.append("lambda_{n,m} is not negative")
        if lin <= 0:
            pred.failed.append("lambda_{n+d} + delta*theta1 is not positive")
        k1 = min(1.0 / q, th1)
        q1_slope = m * lam * xi ** (m - 1) + lin
        pred.kappa = {"kappa1": k1, "varkappa1": min(k1, abs(q1_slope))}
        return pred

    if m < ratio:
        xi = (mu / abs(lam)) ** (1.0 / m)
        pred = RegimePrediction(SIGMA1, "II", th2, xi, lam < 0, inputs=inputs)
        if lam >= 0:
            pred.failed.append("lambda_{n,m} is not negative")
        pred.kappa = {"kappa2": min(1.0 / q, th2)}
        pred.notes.append("Case II: the reduced solution is only known to stay within O(1) of xi2")
        return pred

    lin = lam_d + dq * th2
    K = abs(lin / (m * lam)) ** (m / (m - 1))
    ok = lam < 0 or (lam > 0 and lin < 0 and mu < lam * (m - 1) * K)
    pred = RegimePrediction(SIGMA1, "III", th2, None, ok, inputs=inputs)
    pred.inputs["K"] = K
    if not ok:
        pred.failed.append("Case III sign conditions fail")
        return pred
    xi = solve_q3(lam, lin, mu, m)
    pred.xi = xi
    k2 = min(1.0 / q, th2)
    q3_slope = m * lam * xi ** (m - 1) + lin
    pred.kappa = {"kappa2": k2, "varkappa3": min(k2, abs(q3_slope))}
    return pred


# ---------------------------------------------------------------------------
# reduced equation

@dataclass
class ReducedTrajectory:
    t: np.ndarray
    u: np.ndarray
    theta: float
    exited: bool = False
    exit_time: float | None = None
    message: str = ""

    @property
    def zeta(self) -> np.ndarray:
        return self.t**self.theta * self.u

    def center(self, t):
        """Scaled reduced solution t**theta * u(t) interpolated in log t."""
        return np.interp(np.log(t), np.log(self.t), self.zeta)


def _rhs_factory(avg: AveragedDrift, n: int, N: int | None = None):
    q = avg.q
    E_hi = avg.atlas.E_hi
    orders = [k for k in avg.orders if k >= n and (N is None or k <= N) and not avg.is_zero(k, 0.0)]

    def lam(u, t):
        u_arr = np.array([min(max(u, 0.0), E_hi)])
        return sum(t ** (-k / q) * float(avg.lambda_at(k, u_arr)[0]) for k in orders)

    return lam


def solve_reduced(avg: AveragedDrift, pred: RegimePrediction, t0: float = 100.0,
                  u0: float | None = None, t_end: float = 1e6, n_out: int = 400,
                  rtol: float = 1e-9, atol: float = 1e-10, method: str = "RK45") -> ReducedTrajectory:
    """Integrate du/dt = sum_k t**(-k/q) Lambda_k(u) from t0 to t_end.

    The unknown is the scaled variable zeta = t**theta * u, integrated in
    s = log t.  Without ``u0`` the start is t0**(-theta) * xi; for the
    limiting-like class the particular solution converging to xi is found
    by integrating backward from a far horizon.
    """
    n = pred.inputs.get("n", 1)
    theta = pred.theta
    lam = _rhs_factory(avg, n)
    E_hi = avg.atlas.E_hi

    def f(s, z):
        t = math.exp(s)
        u = z[0] * t ** (-theta)
        return [theta * z[0] + t ** (1.0 + theta) * lam(u, t)]

    def leave_top(s, z):
        return E_hi - z[0] * math.exp(s) ** (-theta)
    leave_top.terminal = True

    def leave_bottom(s, z):
        return z[0]
    leave_bottom.terminal = True

    if u0 is None:
        if pred.xi is None:
            raise NoRootError("prediction carries no limit; give u0 explicitly")
        if pred.sigma_class == SIGMA3 and pred.case_label == "limiting-like":
            u0 = _sigma3_start(avg, pred, t0, t_end, lam, rtol, atol)
        else:
            u0 = t0 ** (-theta) * pred.xi

    s_eval = np.linspace(math.log(t0), math.log(t_end), n_out)
    sol = solve_ivp(f, (s_eval[0], s_eval[-1]), [u0 * t0**theta], method=method, t_eval=s_eval,
                    rtol=rtol, atol=atol, events=(leave_top, leave_bottom))
    t = np.exp(sol.t)
    u = sol.y[0] * t ** (-theta)
    traj = ReducedTrajectory(t=t, u=u, theta=theta, message=sol.message)
    if sol.status == 1:
        traj.exited = True
        fired = [ev for ev in sol.t_events if len(ev)]
        traj.exit_time = float(math.exp(fired[0][0])) if fired else None
    return traj


def _sigma3_start(avg, pred, t0, t_end, lam, rtol, atol) -> float:
    n, q = pred.inputs["n"], avg.q
    xi = pred.xi
    t_far = 1e3 * t_end
    ln = float(avg.lambda_at(n, np.array([xi]))[0])
    u_far = xi - q / (n - q) * ln * t_far ** (1.0 - n / q)
    sol = solve_ivp(lambda s, z: [math.exp(s) * lam(z[0], math.exp(s))],
                    (math.log(t_far), math.log(t0)), [u_far], method="RK45", rtol=rtol, atol=atol)
    return float(sol.y[0, -1])
