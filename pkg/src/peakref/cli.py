"""Command-line interface.

Subcommands: validate | boundaries | policy-table | sensitivity | simulate |
hitting-times | asymptotics | verify.  All artifacts embed the parameter
set, seed, and schema version so reruns with the same inputs are
byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import analytics, verify
from .errors import PeakrefError
from .model import ModelParams, load_config, validate
from .dual import DualSolver
from .policy import PolicySolver
from .simulate import PathConfig, Simulator

SCHEMA_VERSION = 1


def _params_from_args(args) -> ModelParams:
    if args.config:
        return load_config(args.config)
    return verify.P0


def _emit(args, text: str):
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _csv_header(params: ModelParams, seed=None, extra=None) -> list[str]:
    meta = dict(schema_version=SCHEMA_VERSION, params=params.to_dict())
    if seed is not None:
        meta["seed"] = seed
    if extra:
        meta.update(extra)
    return ["# " + json.dumps(meta, sort_keys=True)]


def _csv(rows: dict, columns: list[str], header: list[str]) -> str:
    lines = list(header)
    lines.append(",".join(columns))
    n = len(rows[columns[0]])
    for i in range(n):
        cells = []
        for c in columns:
            v = rows[c][i]
            cells.append(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def cmd_validate(args) -> int:
    try:
        params = _params_from_args(args)
        derived = validate(params)
    except PeakrefError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"config parse error: {exc}", file=sys.stderr)
        return 1
    report = dict(schema_version=SCHEMA_VERSION, params=params.to_dict(),
                  derived=derived.to_dict(), assumption_a1="satisfied")
    _emit(args, json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0


def _emit_table(args, params, rows, columns, extra=None):
    if args.format == "json":
        payload = dict(schema_version=SCHEMA_VERSION, params=params.to_dict())
        if extra:
            payload.update(extra)
        payload["rows"] = [
            {c: (float(rows[c][i]) if isinstance(rows[c][i], (float, np.floating))
                 else rows[c][i]) for c in columns}
            for i in range(len(rows[columns[0]]))]
        _emit(args, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    else:
        _emit(args, _csv(rows, columns, _csv_header(params, extra=extra)))


def cmd_boundaries(args) -> int:
    params = _params_from_args(args)
    dual = DualSolver(params)
    policy = PolicySolver(dual)
    hs = np.linspace(args.h_min, args.h_max, args.h_points)
    tab = policy.boundary_table(hs)
    regime = verify.classify_regime(params, args.h_min, args.h_max, args.h_points)
    rows = dict(h=tab["h"], x_zero=tab["x_zero"], x_aggr=tab["x_aggr"],
                x_lavs=tab["x_lavs"],
                regime=["separated" if s else "coincident" for s in tab["separated"]])
    if args.dump_coefs:
        b = dual.bundle(hs)
        crows = dict(h=hs, y1=b["y1"], y2=b["y2"], y3=b["y3"], c2=b["c2"],
                     c3=b["c3"], c4=b["c4"], c5=b["c5"], c6=b["c6"])
        text = _csv(crows, list(crows.keys()), _csv_header(params))
        with open(args.dump_coefs, "w", encoding="utf-8") as fh:
            fh.write(text)
    _emit_table(args, params, rows, ["h", "x_zero", "x_aggr", "x_lavs", "regime"],
                extra=dict(regime=regime))
    return 0


def cmd_policy_table(args) -> int:
    params = _params_from_args(args)
    policy = PolicySolver(DualSolver(params))
    xl = policy.wealth_boundaries(args.h).x_lavs
    x_max = args.x_max if args.x_max > 0 else 1.05 * xl
    xs = np.linspace(max(args.x_min, 1e-6), x_max, args.x_points)
    tab = policy.policy_table(xs, args.h)
    rows = dict(x=tab["x"], h=tab["h"], region=tab["region"], f=tab["f"],
                c_star=tab["c_star"], pi_star=tab["pi_star"], value=tab["value"])
    _emit_table(args, params, rows,
                ["x", "h", "region", "f", "c_star", "pi_star", "value"])
    return 0


def cmd_sensitivity(args) -> int:
    base = _params_from_args(args)
    if args.param not in ("lambda", "mu"):
        print("sensitivity parameter must be 'lambda' or 'mu'", file=sys.stderr)
        return 1
    values = [float(v) for v in args.values.split(",")]
    h = args.h
    out_rows = {k: [] for k in ("sweep_value", "x", "value", "c_star", "pi_star",
                                "x_zero", "x_aggr", "x_lavs")}
    for v in values:
        d = base.to_dict()
        d[args.param] = v
        try:
            params = ModelParams.from_dict(d)
            policy = PolicySolver(DualSolver(params))
        except PeakrefError as exc:
            print(f"{type(exc).__name__} at {args.param}={v}: {exc}", file=sys.stderr)
            return 1
        bl = policy.wealth_boundaries(h)
        x_max = args.x_max if args.x_max > 0 else 1.5 * bl.x_lavs
        xs = np.linspace(max(args.x_min, 1e-6), x_max, args.x_points)
        tab = policy.policy_table(xs, h)
        for i, x in enumerate(xs):
            out_rows["sweep_value"].append(v)
            out_rows["x"].append(x)
            out_rows["value"].append(tab["value"][i])
            out_rows["c_star"].append(tab["c_star"][i])
            out_rows["pi_star"].append(tab["pi_star"][i])
            out_rows["x_zero"].append(bl.x_zero)
            out_rows["x_aggr"].append(bl.x_aggr)
            out_rows["x_lavs"].append(bl.x_lavs)
    header = _csv_header(base, extra=dict(sweep=args.param, h=h))
    _emit(args, _csv(out_rows, list(out_rows.keys()), header))
    return 0


def cmd_simulate(args) -> int:
    params = _params_from_args(args)
    policy = PolicySolver(DualSolver(params))
    sim = Simulator(policy)
    cfg = PathConfig(dt=args.dt, horizon=args.horizon, n_paths=args.paths,
                     seed=args.seed, antithetic=args.antithetic)
    ve = sim.estimate_value(args.x, args.h, cfg)
    st, _ = sim._run_primal(args.x, args.h, cfg)
    (bm, bse), (xmm, xmse) = sim.budget_from_primal(st, cfg)
    report = dict(schema_version=SCHEMA_VERSION, params=params.to_dict(),
                  x=args.x, h=args.h,
                  estimate=ve.mean, std_error=ve.std_error, analytic=ve.analytic,
                  tail_half_width=ve.tail_half_width,
                  budget=dict(estimate=bm, std_error=bse),
                  wealth_supermartingale=dict(estimate=xmm, std_error=xmse),
                  n_paths=cfg.n_paths, dt=cfg.dt, horizon=cfg.horizon, seed=cfg.seed)
    if args.trajectories > 0:
        from . import reference
        rng = np.random.Generator(np.random.Philox(key=[np.uint64(args.seed), np.uint64(0)]))
        n_steps = min(cfg.n_steps, 100000)
        z = rng.standard_normal((args.trajectories, n_steps))
        rec = reference.primal_paths(policy, args.x, args.h, cfg.dt, n_steps, z,
                                     record_stride=max(1, args.stride))
        rows = {k: [] for k in ("path", "t", "x", "h", "c", "pi", "region")}
        nrec = rec["x"].shape[0]
        for i in range(args.trajectories):
            for j in range(nrec):
                rows["path"].append(i)
                rows["t"].append(rec["t"][j])
                for key in ("x", "h", "c", "pi", "region"):
                    rows[key].append(rec[key][j][i])
        text = _csv(rows, ["path", "t", "x", "h", "c", "pi", "region"],
                    _csv_header(params, seed=args.seed))
        with open(args.trajectories_out, "w", encoding="utf-8") as fh:
            fh.write(text)
    _emit(args, json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_hitting_times(args) -> int:
    params = _params_from_args(args)
    policy = PolicySolver(DualSolver(params))
    sim = Simulator(policy)
    bl = policy.wealth_boundaries(args.h)
    xs = [bl.x_zero + f * (bl.x_lavs - bl.x_zero) for f in (0.35, 0.6, 0.85)]
    rows = []
    for x in xs:
        entry = dict(x=x, h=args.h,
                     tau_lavs_analytic=analytics.expected_time_to_new_max(policy, x, args.h))
        for fam in ("paper", "drift"):
            try:
                entry[f"tau_zero_{fam}"] = analytics.expected_time_to_zero_consumption(
                    policy, x, args.h, family=fam)
            except PeakrefError as exc:
                entry[f"tau_zero_{fam}"] = f"{type(exc).__name__}"
        if args.paths > 0:
            cfg = PathConfig(dt=args.dt, horizon=args.horizon, n_paths=args.paths,
                             seed=args.seed)
            tau, cens = sim.hitting_times_primal(x, args.h, cfg, boundary="peak")
            entry["tau_lavs_mc"] = float(np.mean(tau))
            entry["tau_lavs_censored"] = float(np.mean(cens))
        rows.append(entry)
    report = dict(schema_version=SCHEMA_VERSION, params=params.to_dict(),
                  seed=args.seed, rows=rows)
    _emit(args, json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_asymptotics(args) -> int:
    params = _params_from_args(args)
    rep = analytics.asymptotic_ratios(params)
    policy = PolicySolver(DualSolver(params))
    fr = analytics.long_run_fractions(policy)
    report = dict(schema_version=SCHEMA_VERSION, params=params.to_dict(),
                  asymptotics=rep.to_dict(), long_run_fractions=fr.to_dict())
    _emit(args, json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_verify(args) -> int:
    params = _params_from_args(args)
    report = verify.run_verification(
        params=params, seed=args.seed, n_paths=args.paths, dt=args.dt,
        horizon=args.horizon, occupancy_paths=args.occupancy_paths,
        occupancy_horizon=args.occupancy_horizon, hitting_paths=args.hitting_paths,
        skip_mc=args.skip_mc, fast=args.fast)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    _emit(args, text)
    for c in report["checks"]:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"[{status}] {c['name']}", file=sys.stderr)
    return 0 if report["all_passed"] else 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="peakref",
                                 description="loss-averse consumption with a spending-peak reference")
    ap.add_argument("--config", help="JSON parameter file (default: built-in baseline)")
    ap.add_argument("--out", help="write the primary artifact to this path")
    ap.add_argument("--format", choices=["csv", "json"], default=None,
                    help="artifact format where a choice applies")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("validate", help="check parameters and print derived constants")

    b = sub.add_parser("boundaries", help="boundary curves over an h grid (CSV)")
    b.add_argument("--h-min", type=float, default=0.1)
    b.add_argument("--h-max", type=float, default=10.0)
    b.add_argument("--h-points", type=int, default=200)
    b.add_argument("--dump-coefs", help="also write (h, y1..y3, C2..C6) CSV here")

    t = sub.add_parser("policy-table", help="policy columns over an x grid (CSV)")
    t.add_argument("--h", type=float, default=1.0)
    t.add_argument("--x-min", type=float, default=0.0)
    t.add_argument("--x-max", type=float, default=-1.0)
    t.add_argument("--x-points", type=int, default=200)

    s = sub.add_parser("sensitivity", help="sweep lambda or mu at fixed h (CSV)")
    s.add_argument("--param", required=True, choices=["lambda", "mu"])
    s.add_argument("--values", required=True, help="comma-separated sweep values")
    s.add_argument("--h", type=float, default=1.0)
    s.add_argument("--x-min", type=float, default=0.0)
    s.add_argument("--x-max", type=float, default=-1.0)
    s.add_argument("--x-points", type=int, default=60)

    m = sub.add_parser("simulate", help="Monte Carlo value/budget at a state (JSON)")
    m.add_argument("--x", type=float, default=2.0)
    m.add_argument("--h", type=float, default=1.0)
    m.add_argument("--paths", type=int, default=2000)
    m.add_argument("--dt", type=float, default=1e-2)
    m.add_argument("--horizon", type=float, default=200.0)
    m.add_argument("--seed", type=int, default=1)
    m.add_argument("--antithetic", action="store_true")
    m.add_argument("--trajectories", type=int, default=0,
                   help="also dump this many sample paths as CSV")
    m.add_argument("--trajectories-out", default="trajectories.csv")
    m.add_argument("--stride", type=int, default=100)

    ht = sub.add_parser("hitting-times", help="hitting-time table (JSON)")
    ht.add_argument("--h", type=float, default=1.0)
    ht.add_argument("--paths", type=int, default=0, help="MC paths (0: analytic only)")
    ht.add_argument("--dt", type=float, default=1e-2)
    ht.add_argument("--horizon", type=float, default=600.0)
    ht.add_argument("--seed", type=int, default=1)

    sub.add_parser("asymptotics", help="large-wealth limits and occupancy candidates (JSON)")

    v = sub.add_parser("verify", help="run the verification suite (JSON report)")
    v.add_argument("--seed", type=int, default=20240801)
    v.add_argument("--paths", type=int, default=20000)
    v.add_argument("--dt", type=float, default=1e-3)
    v.add_argument("--horizon", type=float, default=200.0)
    v.add_argument("--occupancy-paths", type=int, default=1000)
    v.add_argument("--occupancy-horizon", type=float, default=1000.0)
    v.add_argument("--hitting-paths", type=int, default=8000)
    v.add_argument("--skip-mc", action="store_true",
                   help="analytic checks only (no Monte Carlo)")
    v.add_argument("--fast", action="store_true",
                   help="smoke-test Monte Carlo profile (tolerances unchanged)")
    return ap


COMMANDS = {
    "validate": cmd_validate,
    "boundaries": cmd_boundaries,
    "policy-table": cmd_policy_table,
    "sensitivity": cmd_sensitivity,
    "simulate": cmd_simulate,
    "hitting-times": cmd_hitting_times,
    "asymptotics": cmd_asymptotics,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except PeakrefError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"config parse error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
