"""Experiment configuration, built-in scenarios and the analysis chain
atlas -> averaging -> structure fit -> classification -> reduced ODE -> ensemble."""
from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .averaging import AveragedDrift, build_averaged_drift
from .errors import ConfigError
from .hamiltonian import OrbitAtlas, build_atlas
from .models import REGISTRY, AutoresonanceConstants, ModelParams, make_model
from .perturbation import NoiseFloor, PerturbationSeries, noise_floor
from .regime import (SIGMA2, RegimePrediction, ReducedTrajectory, StructureFit,
                     check_sigma3, classify, fit_structure, solve_reduced)
from .sde import SimConfig, autoresonance_to_original, capture_deviation, run_ensemble

OUT_ENV = "HAMNOISE_OUT"
DEFAULT_OUT = "hamnoise-out"

SIM_DEFAULTS = dict(t0=100.0, t_end=1e4, dt=1e-2, seed=0, scheme="drift-rk4-plus-noise",
                    record_stride=10)
ENSEMBLE_DEFAULTS = dict(n_paths=200, eps1_frac=0.3, delta0_frac=0.1, horizon_C=1.0,
                         force=False, series_paths=20)
REDUCE_DEFAULTS = dict(t0=100.0, t_end=1e6)


@dataclass
class ExperimentConfig:
    model: str
    params: dict = field(default_factory=dict)
    N: int | None = None
    n_phi: int = 256
    E_points: int | None = None
    xi_star: float | None = None
    reduce: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)
    ensemble: dict = field(default_factory=dict)
    name: str = "custom"
    # runtime-only settings; not part of the replay record
    out_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.model not in REGISTRY:
            raise ConfigError(f"unknown model {self.model!r}; available: {', '.join(sorted(REGISTRY))}")
        unknown = set(self.params) - {f.name for f in fields(ModelParams)}
        if unknown:
            raise ConfigError(f"unknown model parameters: {sorted(unknown)}")
        self.reduce = {**REDUCE_DEFAULTS, **self.reduce}
        self.sim = {**SIM_DEFAULTS, **self.sim}
        self.ensemble = {**ENSEMBLE_DEFAULTS, **self.ensemble}
        for key, known in (("reduce", REDUCE_DEFAULTS), ("sim", SIM_DEFAULTS),
                           ("ensemble", ENSEMBLE_DEFAULTS)):
            extra = set(getattr(self, key)) - set(known)
            if extra:
                raise ConfigError(f"unknown {key} settings: {sorted(extra)}")
        if self.n_phi < 64:
            raise ConfigError(f"n_phi must be at least 64, got {self.n_phi}")

    def series(self) -> PerturbationSeries:
        return make_model(self.model, self.params)

    def sim_config(self) -> SimConfig:
        return SimConfig(**self.sim, workers=self.workers)

    def to_dict(self) -> dict:
        return {"name": self.name, "model": self.model, "params": dict(self.params), "N": self.N,
                "n_phi": self.n_phi, "E_points": self.E_points, "xi_star": self.xi_star,
                "reduce": dict(self.reduce), "sim": dict(self.sim),
                "ensemble": dict(self.ensemble)}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = data.get("config", data)
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "model" not in data:
            raise ConfigError("config must name a model")
        return cls(**copy.deepcopy(data))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def output_dir(self) -> Path:
        out = Path(self.out_dir or os.environ.get(OUT_ENV) or DEFAULT_OUT)
        out.mkdir(parents=True, exist_ok=True)
        return out


_ex1 = dict(p=2, q=2, h=2)
SCENARIOS = {
    "ex1-s1": dict(model="ex1", params=dict(a=-2.0, b=0.5, c=1.0, **_ex1), N=4),
    "ex1-s1-unstable": dict(model="ex1", params=dict(a=-0.5, b=0.5, c=1.0, **_ex1), N=4),
    "ex1-s2": dict(model="ex1", params=dict(a=-1.0, b=0.1, c=1.0, p=1, q=2, h=2), N=2),
    "ex1-s3": dict(model="ex1", params=dict(a=-1.0, b=1.0, c=math.sqrt(0.5), p=2, q=2, h=3),
                   N=4, xi_star=0.5),
    "ex2-s1": dict(model="ex2", params=dict(a=-1.0, b=0.5, c=1.0, p=2, q=2, h=1, d=1), N=4),
    "ex2-s2": dict(model="ex2", params=dict(a=-1.0, b=0.5, c=1.0, p=2, q=3, h=1, d=2), N=4),
    "ex2-s3a": dict(model="ex2", params=dict(a=-1.0, b=2 / 3, c=1.0, p=2, q=3, h=2, d=1), N=4),
    "ex2-s3b": dict(model="ex2", params=dict(a=1.0, b=-4 / 3, c=math.sqrt(0.5), p=2, q=3, h=2,
                                             d=1), N=4),
    "par-s1": dict(model="autoresonance", params=dict(a=1.0, b=0.5, c=0.5, alpha1=0.25,
                                                      alpha2=0.15, beta1=0.0, beta2=-0.5), N=2),
    "par-s2": dict(model="autoresonance", params=dict(a=1.0, b=0.5, c=0.5, alpha1=0.75,
                                                      alpha2=0.5, beta1=0.25, beta2=-0.25), N=2),
}


def scenario(name: str, **overrides) -> ExperimentConfig:
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; available: {', '.join(SCENARIOS)}")
    data = copy.deepcopy(SCENARIOS[name])
    data["name"] = name
    data.update(overrides)
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------

@dataclass
class Analysis:
    config: ExperimentConfig
    series: PerturbationSeries
    atlas: OrbitAtlas
    averaged: AveragedDrift
    fit: StructureFit
    noise: NoiseFloor
    prediction: RegimePrediction

    def provenance(self) -> dict:
        avg = self.averaged
        return {
            "n_E": int(len(avg.energies)),
            "n_phi": int(self.atlas.n_phi),
            "E_range": [float(avg.energies[0]), float(avg.energies[-1])],
            "N": avg.N,
            "p": self.series.p,
            "q": self.series.q,
            "fit_residuals": {str(k): float(v) for k, v in self.fit.fit_residuals.items()},
            "equation_residuals": {str(k): float(avg.residual(k)) for k in avg.orders},
        }


def atlas_for(cfg: ExperimentConfig, series: PerturbationSeries | None = None) -> OrbitAtlas:
    series = series or cfg.series()
    grid = None
    if cfg.E_points is not None:
        model = series.hamiltonian
        grid = np.geomspace(model.E_min, model.E_max, cfg.E_points)
    return build_atlas(series.hamiltonian, E_grid=grid, n_phi=cfg.n_phi)


def analyze(cfg: ExperimentConfig) -> Analysis:
    series = cfg.series()
    atlas = atlas_for(cfg, series)
    avg = build_averaged_drift(atlas, series, cfg.N)
    fit = fit_structure(avg, series.p, series.q)
    with_bound = fit.n == 2 * series.p
    noise = noise_floor(series, with_bound=with_bound)
    t0 = cfg.sim["t0"]
    C = cfg.ensemble["horizon_C"]
    pred = classify(fit, noise, xi_star=cfg.xi_star, t0=t0, C=1.0 if C is None else C)
    pred = check_sigma3(pred, avg)
    if series.name == "autoresonance" and pred.sigma_class == SIGMA2:
        cst = AutoresonanceConstants.from_params(series.params["a"], series.params["b"],
                                                 series.params["c"])
        pred.inputs["xi_leading"] = leading_cycle_energy(noise.mu_2p, cst)
    return Analysis(cfg, series, atlas, avg, fit, noise, pred)


def leading_cycle_energy(mu: float, cst: AutoresonanceConstants) -> float:
    """Small-noise limit cycle energy mu/(b c) * (3 gamma^2 / 2)^(1/3)."""
    return mu / (cst.b * cst.c) * (1.5 * cst.gamma**2) ** (1.0 / 3.0)


def reduce(an: Analysis) -> ReducedTrajectory:
    r = an.config.reduce
    return solve_reduced(an.averaged, an.prediction, t0=r["t0"], t_end=r["t_end"])


def verify(an: Analysis, force: bool | None = None, keep_series: bool = True):
    """Monte Carlo check of the predicted regime around the reduced solution."""
    cfg = an.config
    ens = cfg.ensemble
    pred = an.prediction
    simc = cfg.sim_config()
    center = solve_reduced(an.averaged, pred, t0=simc.t0, t_end=simc.t_end) if pred.xi else None
    report, paths = run_ensemble(
        an.series, pred, simc, ens["n_paths"], ens["eps1_frac"] * (pred.xi or 1.0),
        ens["delta0_frac"] * (pred.xi or 1.0), center=center,
        force=ens["force"] if force is None else force, horizon_C=ens["horizon_C"],
        mu=an.noise.mu_bound if an.noise.mu_bound is not None else an.noise.mu_2p,
        keep_paths=True)
    return report, paths[: ens["series_paths"]] if keep_series else [], center


# ---------------------------------------------------------------------------
# output helpers

def _fmt(v) -> str:
    return repr(float(v))


def write_rows(path: Path, header, rows) -> Path:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if not isinstance(v, (int, np.integer)) else str(v)
                              for v in row) + "\n")
    return path


def figure_rows(paths, prediction: RegimePrediction):
    """t, path_id, t^theta H0, reference value."""
    theta, xi = prediction.theta, prediction.xi
    for p in paths:
        scaled = p.times**theta * p.energies
        for t, s in zip(p.times, scaled):
            yield (t, p.path_id, s, xi)


def deviation_rows(paths, series: PerturbationSeries, prediction: RegimePrediction):
    """tau, path_id, Psi, energy, capture deviation, reference 4*sqrt(xi)*tau^(-3 theta/4)."""
    prm = series.params
    cst = AutoresonanceConstants.from_params(prm["a"], prm["b"], prm["c"])
    xi = prediction.inputs.get("xi_leading", prediction.xi)
    for p in paths:
        psi, en, tau = autoresonance_to_original(p.x, p.y, p.times, cst)
        dev = capture_deviation(psi, en, tau, cst)
        ref = 4.0 * math.sqrt(xi) * tau ** (-0.75 * prediction.theta)
        for row in zip(tau, [p.path_id] * len(tau), psi, en, dev, ref):
            yield row


def dump_json(obj, path: Path | None = None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
