"""Command-line interface: ``hamnoise <command> [options]``.

Exit codes: 0 on success (an unstable verdict is a successful answer),
2 for configuration errors, 3 for numerical failures.
"""
from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import pipeline as pl
from .errors import ConfigError, NumericError
from .hamiltonian import build_orbit, points_on_level_sets
from .models import ModelParams
from .regime import RegimePrediction, solve_reduced
from .sde import scaled_energy, simulate_path

MODEL_FLAGS = ("a", "b", "c", "p", "q", "h", "d", "beta1", "beta2", "alpha1", "alpha2",
               "E_max", "r_max")
INT_FLAGS = {"p", "q", "h", "d"}
SIM_FLAGS = {"t0": "t0", "t_end": "t_end", "dt": "dt", "seed": "seed", "scheme": "scheme",
             "stride": "record_stride"}
ENS_FLAGS = {"paths": "n_paths", "eps1_frac": "eps1_frac", "delta0_frac": "delta0_frac",
             "horizon_C": "horizon_C", "series_paths": "series_paths"}


def _common(sub: argparse.ArgumentParser) -> None:
    g = sub.add_argument_group("experiment")
    g.add_argument("--config", help="JSON config (a previous result JSON also works)")
    g.add_argument("--scenario", choices=sorted(pl.SCENARIOS), help="built-in scenario")
    g.add_argument("--model", help="model name (ex0, ex1, ex2, autoresonance)")
    g.add_argument("--out", help=f"output directory (default ${pl.OUT_ENV} or ./{pl.DEFAULT_OUT})")
    m = sub.add_argument_group("model parameters")
    for name in MODEL_FLAGS:
        m.add_argument(f"--{name.replace('_', '-')}", dest=name,
                       type=int if name in INT_FLAGS else float)
    m.add_argument("--exact-time-change", action="store_true", default=None)
    a = sub.add_argument_group("analysis")
    a.add_argument("--N", type=int, help="averaging order, 2p <= N <= 4p")
    a.add_argument("--n-phi", type=int)
    a.add_argument("--E-points", type=int, help="geometric energy grid size")
    a.add_argument("--xi-star", type=float, help="target energy for the limiting-like class")


def _sim_flags(sub: argparse.ArgumentParser) -> None:
    s = sub.add_argument_group("simulation")
    s.add_argument("--t0", type=float)
    s.add_argument("--t-end", type=float)
    s.add_argument("--dt", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--scheme", choices=["euler-maruyama", "drift-rk4-plus-noise"])
    s.add_argument("--stride", type=int, help="record every n-th step")
    s.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hamnoise", description=__doc__.splitlines()[0])
    subs = ap.add_subparsers(dest="command", required=True)

    p = subs.add_parser("orbit", help="trace one periodic orbit of the limiting system")
    _common(p)
    p.add_argument("--energy", type=float, required=True)

    p = subs.add_parser("atlas", help="tabulate the energy-angle chart")
    _common(p)

    p = subs.add_parser("average", help="averaged drift coefficients and shape functions")
    _common(p)

    p = subs.add_parser("classify", help="regime, exponent, limit and stability verdict")
    _common(p)
    p.add_argument("--t0", type=float, help="start time used for the cycle horizon")
    p.add_argument("--horizon-C", type=float)

    p = subs.add_parser("reduce", help="integrate the scalar reduced equation")
    _common(p)
    p.add_argument("--t0", type=float)
    p.add_argument("--t-end", type=float)
    p.add_argument("--u0", type=float, help="initial energy (default: on the predicted curve)")

    p = subs.add_parser("simulate", help="one sample path of the full system")
    _common(p)
    _sim_flags(p)
    p.add_argument("--x0", type=float)
    p.add_argument("--y0", type=float)
    p.add_argument("--energy", type=float, help="start on this level set instead of (x0, y0)")
    p.add_argument("--phase", type=float, default=0.0)
    p.add_argument("--track", action="store_true", help="attach rho for the classified regime")

    p = subs.add_parser("verify", help="Monte Carlo check of the predicted regime")
    _common(p)
    _sim_flags(p)
    e = p.add_argument_group("ensemble")
    e.add_argument("--paths", type=int)
    e.add_argument("--eps1-frac", type=float, help="band half-width as a fraction of xi")
    e.add_argument("--delta0-frac", type=float, help="initial spread as a fraction of xi")
    e.add_argument("--horizon-C", type=float, help="cycle horizon constant (inf disables)")
    e.add_argument("--series-paths", type=int, help="paths written to the figure CSV")
    e.add_argument("--force", action="store_true", help="run even without a stability result")
    return ap


def resolve_config(args: argparse.Namespace) -> pl.ExperimentConfig:
    if args.config and args.scenario:
        raise ConfigError("use either --config or --scenario, not both")
    if args.config:
        cfg = pl.ExperimentConfig.load(args.config)
    elif args.scenario:
        cfg = pl.scenario(args.scenario)
    elif args.model:
        cfg = pl.ExperimentConfig(model=args.model)
    else:
        raise ConfigError("one of --config, --scenario or --model is required")
    data = cfg.to_dict()
    if args.model and (args.config or args.scenario) and args.model != data["model"]:
        data["model"] = args.model
    v = vars(args)
    for name in MODEL_FLAGS:
        if v.get(name) is not None:
            data["params"][name] = v[name]
    if v.get("exact_time_change"):
        data["params"]["exact_time_change"] = True
    for key in ("N", "n_phi", "E_points", "xi_star"):
        if v.get(key) is not None:
            data[key] = v[key]
    for flag, key in SIM_FLAGS.items():
        if v.get(flag) is not None:
            data["sim"][key] = v[flag]
    for flag, key in ENS_FLAGS.items():
        if v.get(flag) is not None:
            data["ensemble"][key] = v[flag]
    if data["ensemble"].get("horizon_C") is not None and math.isinf(data["ensemble"]["horizon_C"]):
        data["ensemble"]["horizon_C"] = None
    if v.get("force"):
        data["ensemble"]["force"] = True
    if args.command == "reduce":
        for flag in ("t0", "t_end"):
            if v.get(flag) is not None:
                data["reduce"][flag] = v[flag]
    data["out_dir"] = args.out
    data["workers"] = v.get("workers") or 1
    cfg = pl.ExperimentConfig.from_dict(data)
    ModelParams(**cfg.params)  # validates the record
    return cfg


def _emit(name: str, payload: dict, cfg: pl.ExperimentConfig) -> None:
    payload = {"command": name, "config": cfg.to_dict(), **payload}
    out = cfg.output_dir() / f"{name}.json"
    text = pl.dump_json(payload, out)
    print(text)


def cmd_orbit(args, cfg):
    series = cfg.series()
    orb = build_orbit(series.hamiltonian, args.energy, cfg.n_phi)
    out = cfg.output_dir()
    pl.write_rows(out / "orbit.csv", ["phi", "x", "y"], zip(orb.phi, orb.X, orb.Y))
    _emit("orbit", {"energy": args.energy, "period": orb.period, "frequency": orb.frequency,
                    "csv": "orbit.csv"}, cfg)


def cmd_atlas(args, cfg):
    atlas = pl.atlas_for(cfg)
    atlas.to_csv(cfg.output_dir() / "atlas.csv")
    _emit("atlas", {"n_E": len(atlas.energies), "n_phi": atlas.n_phi,
                    "E_range": [atlas.E_lo, atlas.E_hi],
                    "jacobian_residual": atlas.jacobian_residual(),
                    "energy_error": atlas.energy_error(), "csv": "atlas.csv"}, cfg)


def cmd_average(args, cfg):
    series = cfg.series()
    atlas = pl.atlas_for(cfg, series)
    avg = pl.build_averaged_drift(atlas, series, cfg.N)
    out = cfg.output_dir()
    avg.to_csv(out / "lambda.csv", out / "shape.csv")
    orders = {}
    for k in avg.orders:
        orders[str(k)] = {"zero": avg.is_zero(k), "residual": avg.residual(k),
                          "mean_defect": avg.mean_defect(k),
                          "small_E_fit": dict(zip(map(str, avg.fits[k].powers),
                                                  map(float, avg.fits[k].coef)))}
    _emit("average", {"N": avg.N, "p": series.p, "q": series.q, "orders": orders,
                      "csv": ["lambda.csv", "shape.csv"]}, cfg)


def cmd_classify(args, cfg):
    an = pl.analyze(cfg)
    _emit("classify", {"prediction": an.prediction.to_dict(), "structure": an.fit.to_dict(),
                       "provenance": an.provenance()}, cfg)


def cmd_reduce(args, cfg):
    an = pl.analyze(cfg)
    pred = an.prediction
    r = cfg.reduce
    traj = solve_reduced(an.averaged, pred, t0=r["t0"], t_end=r["t_end"], u0=args.u0)
    out = cfg.output_dir()
    pl.write_rows(out / "reduced.csv", ["t", "u", "scaled_u", "xi"],
                  zip(traj.t, traj.u, traj.zeta, np.full(len(traj.t), pred.xi or math.nan)))
    _emit("reduce", {"prediction": pred.to_dict(), "final_scaled_u": float(traj.zeta[-1]),
                     "relative_gap": (float(traj.zeta[-1] / pred.xi - 1) if pred.xi else None),
                     "exited": traj.exited, "exit_time": traj.exit_time,
                     "csv": "reduced.csv"}, cfg)


def cmd_simulate(args, cfg):
    series = cfg.series()
    simc = cfg.sim_config()
    pred: RegimePrediction | None = pl.analyze(cfg).prediction if args.track else None
    if args.energy is not None:
        x, y = points_on_level_sets(series.hamiltonian, [args.energy], [args.phase])
        z0 = (float(x[0]), float(y[0]))
    elif args.x0 is not None and args.y0 is not None:
        z0 = (args.x0, args.y0)
    elif pred is not None and pred.xi is not None:
        E = simc.t0 ** (-pred.theta) * pred.xi
        x, y = points_on_level_sets(series.hamiltonian, [E], [args.phase])
        z0 = (float(x[0]), float(y[0]))
    else:
        raise ConfigError("give --x0/--y0, --energy, or --track with a classified limit")
    path = simulate_path(series, simc, z0)
    sup = None
    if pred is not None and pred.xi is not None:
        _, sup = scaled_energy(path, pred)
    out = cfg.output_dir()
    path.to_csv(out / "path.csv")
    _emit("simulate", {"z0": list(z0), "status": path.status, "stop_time": path.stop_time,
                       "records": len(path.times), "sup_abs_rho": sup,
                       "seed": simc.seed, "csv": "path.csv"}, cfg)


def cmd_verify(args, cfg):
    if os.environ.get("CI") and args.seed is None:
        raise ConfigError("--seed is mandatory for verify when CI is set")
    an = pl.analyze(cfg)
    pred = an.prediction
    report, paths, center = pl.verify(an)
    out = cfg.output_dir()
    report.to_csv(out / "ensemble.csv")
    pl.write_rows(out / "figure.csv", ["t", "path_id", "scaled_H0", "reference"],
                  pl.figure_rows(paths, pred))
    files = ["ensemble.csv", "figure.csv"]
    if an.series.name == "autoresonance":
        pl.write_rows(out / "deviation.csv",
                      ["tau", "path_id", "psi", "energy", "deviation", "reference"],
                      pl.deviation_rows(paths, an.series, pred))
        files.append("deviation.csv")
    if center is not None:
        pl.write_rows(out / "center.csv", ["t", "scaled_u"], zip(center.t, center.zeta))
        files.append("center.csv")
    _emit("verify", {"prediction": pred.to_dict(), "ensemble": report.summary(),
                     "csv": files}, cfg)


COMMANDS = {"orbit": cmd_orbit, "atlas": cmd_atlas, "average": cmd_average,
            "classify": cmd_classify, "reduce": cmd_reduce, "simulate": cmd_simulate,
            "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"hamnoise: configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"hamnoise: numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
