"""Command-line entry point: solve, simulate, mdp, littles.

Every artifact embeds the scenario fingerprint and the seed. Bodies are
deterministic for a given manifest; wall-clock data goes to metadata.json.
Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DomainError, HTQueueError, InvariantViolation, NumericalError
from .scenario import SCHEMA, ScenarioParams, builtin_scenario, load_scenario, reduction, validate

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
MANIFEST_SCHEMA = "htqueue.manifest/1"


def _scenario(arg: str) -> ScenarioParams:
    p = Path(arg)
    if not p.exists() and not p.suffix and "/" not in arg:
        try:
            return builtin_scenario(arg)
        except ConfigError:
            pass
    if not p.exists():
        raise FileNotFoundError(f"scenario file not found: {arg}")
    return load_scenario(p)


def _seed(s: str) -> int:
    try:
        v = int(s, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {s!r}")
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _n_list(s: str) -> list[int]:
    try:
        out = [int(x) for x in s.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad n-list {s!r}")
    if not out or any(n < 1 for n in out):
        raise argparse.ArgumentTypeError("n-list needs positive integers")
    return out


class _Out:
    def __init__(self, root, params: ScenarioParams, seed: int, manifest: dict):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.stamp = {"fingerprint": params.fingerprint(), "seed": seed}
        self.manifest = manifest
        self.t0 = time.perf_counter()

    def json(self, name, doc):
        body = {**self.stamp, **doc}
        (self.root / name).write_text(json.dumps(_plain(body), indent=2, sort_keys=True) + "\n")

    def csv(self, name, header, rows):
        with open(self.root / name, "w", newline="") as fh:
            fh.write(f"# fingerprint={self.stamp['fingerprint']} seed={self.stamp['seed']}\n")
            wr = csv.writer(fh)
            if header:
                wr.writerow(header)
            for row in rows:
                wr.writerow([_fmt(v) for v in row])

    def finish(self):
        self.json("manifest.json", {"manifest": self.manifest})
        meta = {"created_utc": datetime.now(timezone.utc).isoformat(), "elapsed_s": time.perf_counter() - self.t0,
                "version": __version__, "out": str(self.root)}
        (self.root / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _manifest(args, params) -> dict:
    skip = {"func", "out"}  # the output location goes to metadata.json
    return {"schema": MANIFEST_SCHEMA, "subcommand": args.cmd,
            **{k: v for k, v in sorted(vars(args).items()) if k not in skip and k != "cmd"}}


def _apply_overrides(params: ScenarioParams, args) -> ScenarioParams:
    if getattr(args, "eps", None) is not None:
        params = params.replace(epsilon=args.eps)
    if getattr(args, "n", None) is not None:
        params = params.replace(n=args.n)
    return params


# ----------------------------------------------------------------------
def cmd_solve(args) -> int:
    from .fbp import solve_bellman

    params = _apply_overrides(_scenario(args.scenario), args)
    derived = validate(params)
    red = reduction(params, derived)
    sol = solve_bellman(derived, red, grid_size=args.grid)
    out = _Out(args.out, params, args.seed, _manifest(args, params))
    out.csv("solution.csv", ["w", "V", "Vp"], zip(sol.grid, sol.V, sol.Vp))
    out.json("summary.json", {"summary": sol.summary(), "istar": red.istar + 1, "scenario": params.to_dict()})
    out.finish()
    print(f"xstar = {sol.xstar:.6f}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .qsim import cost_estimate, run, ssc_deviation

    params = _apply_overrides(_scenario(args.scenario), args)
    validate(params)
    ns = args.n_list or [params.n]
    out = _Out(args.out, params, args.seed, _manifest(args, params))
    rows = []
    summary = []
    for n in ns:
        p = params.replace(n=n)
        red = reduction(p)
        J, se, det = cost_estimate(p, args.policy, args.replications, args.horizon, args.seed, details=True)
        k = min(args.replications, args.ssc_replications)
        recs = [run(p, args.policy, args.horizon, args.sample_dt, args.seed, rep=r) for r in range(k)]
        ssc = np.array([ssc_deviation(rc, red) for rc in recs])
        forced = np.array([rc.counts["forced"] for rc in recs])
        rec0 = recs[0]
        out.csv(f"trajectory_n{n}.csv",
                ["t", *[f"Xhat_{i + 1}" for i in range(p.I)], "workload", *[f"Zhat_{i + 1}" for i in range(p.I)]],
                rec0.trajectory_rows())
        row = {"n": n, "J": J, "std_error": se, "forced_mean": float(det["forced"].mean()),
               "ssc_mean": float(ssc.mean()), "ssc_median": float(np.median(ssc)),
               "forced_per_class": forced.mean(axis=0).tolist(), "astar": det["astar"],
               "truncation_bound": det["truncation_bound"], "replications": args.replications}
        summary.append(row)
        rows.append([n, J, se, row["forced_mean"], row["ssc_mean"], row["ssc_median"]])
        print(f"n={n}: J = {J:.6g} +- {se:.3g}, forced rejections {row['forced_mean']:.3g}, "
              f"SSC deviation {row['ssc_median']:.3g}")
    out.csv("summary.csv", ["n", "J", "std_error", "forced_mean", "ssc_mean", "ssc_median"], rows)
    out.json("summary.json", {"policy": args.policy, "horizon": args.horizon, "rows": summary})
    out.finish()
    return EXIT_OK


def cmd_mdp(args) -> int:
    from .mdp import curve_mass, mdp_spec, ratio_curve, simulate_optimal, value_iteration

    params = _apply_overrides(_scenario(args.scenario), args)
    validate(params)
    ns = args.n_list or [params.n]
    out = _Out(args.out, params, args.seed, _manifest(args, params))
    info = []
    for n in ns:
        p = params.replace(n=n)
        spec = mdp_spec(p)
        sol = value_iteration(spec)
        hist = simulate_optimal(spec, sol, args.hist_horizon, args.seed)
        out.csv(f"value_n{n}.csv", None, sol.V)
        out.csv(f"serve_n{n}.csv", None, sol.serve)
        out.csv(f"admit1_n{n}.csv", None, sol.admit[..., 0].astype(int))
        out.csv(f"admit2_n{n}.csv", None, sol.admit[..., 1].astype(int))
        out.csv(f"histogram_n{n}.csv", None, hist)
        info.append({"n": n, "grid": list(spec.shape), "V_opt_x0": float(sol.V[spec.x0]),
                     "iterations": sol.iterations, "bellman_residual": sol.bellman_residual,
                     "curve_mass": curve_mass(hist, p, cell=1.0 / math.sqrt(min(ns)))})
        print(f"n={n}: grid {spec.shape[0]}x{spec.shape[1]}, V_opt(x0) = {sol.V[spec.x0]:.6g}")
    rc = ratio_curve(params, ns, args.seed, replications=args.replications, T_horizon=args.horizon)
    out.csv("ratio.csv", ["n", "ratio", "std_error"], [[r["n"], r["ratio"], r["std_error"]] for r in rc])
    out.json("summary.json", {"solutions": info, "ratio_curve": rc})
    out.finish()
    return EXIT_OK


def cmd_littles(args) -> int:
    from .metrics import compliance_check
    from .qsim import run

    params = _scenario(args.scenario)
    if params.d_i is None:
        raise ConfigError("the littles subcommand needs deadlines d_i in the scenario")
    b = tuple(l * d for l, d in zip(params.lambda_i, params.d_i))
    params = params.replace(b_i=b, epsilon=0.0 if args.eps is None else args.eps)
    if args.n is not None:
        params = params.replace(n=args.n)
    validate(params)
    ns = args.n_list or [params.n]
    out = _Out(args.out, params, args.seed, _manifest(args, params))
    records = {}
    for n in ns:
        p = params.replace(n=n)
        records[n] = [run(p, args.policy, args.horizon, args.sample_dt, args.seed + s, rep=r)
                      for s in range(args.seeds) for r in range(args.replications)]
    rep = compliance_check(records, params.d_i, params.lambda_i)
    doc = json.loads(rep.to_json())
    doc.update({"policy": args.policy, "derived_b": list(b), "horizon": args.horizon})
    out.json("report.json", doc)
    rows = []
    for n in ns:
        for s, (c, l) in enumerate(zip(rep.compliance[n], rep.little[n])):
            rows.append([n, records[n][s].seed, records[n][s].rep, *c, *l])
    I = params.I
    out.csv("statistics.csv", ["n", "seed", "rep", *[f"compliance_{i + 1}" for i in range(I)],
                               *[f"little_{i + 1}" for i in range(I)]], rows)
    out.finish()
    print(f"derived b = {list(b)}; compliance trend: {rep.compliance_trend['verdict']}; "
          f"Little trend: {rep.little_trend['verdict']}")
    return EXIT_OK


# ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="htqueue", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(sp, reps=200, horizon=50.0):
        sp.add_argument("--scenario", required=True, help="scenario JSON file (or a bundled name)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=_seed, default=0)
        sp.add_argument("--n", type=int, default=None, help="override the scale index n")
        sp.add_argument("--n-list", type=_n_list, default=None, help="sweep over n, e.g. 100,400,1600")
        sp.add_argument("--replications", type=int, default=reps)
        sp.add_argument("--horizon", type=float, default=horizon)
        sp.add_argument("--eps", type=float, default=None, help="override epsilon")

    sp = sub.add_parser("solve", help="solve the reduced free-boundary problem")
    common(sp)
    sp.add_argument("--grid", type=int, default=2000)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("simulate", help="simulate the n-th queueing system and estimate J^n")
    common(sp)
    sp.add_argument("--policy", choices=("ao", "fixed_priority"), default="ao")
    sp.add_argument("--sample-dt", type=float, default=0.01)
    sp.add_argument("--ssc-replications", type=int, default=10)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("mdp", help="two-class MDP oracle, histograms and ratio curve")
    common(sp, horizon=50.0)
    sp.add_argument("--hist-horizon", type=float, default=1000.0)
    sp.set_defaults(func=cmd_mdp)

    sp = sub.add_parser("littles", help="Little's-law residuals and compliance over an n-sweep")
    common(sp, reps=1)
    sp.add_argument("--policy", choices=("ao", "fixed_priority", "serve_first"), default="ao")
    sp.add_argument("--seeds", type=int, default=10, help="number of paired seeds")
    sp.add_argument("--sample-dt", type=float, default=0.01)
    sp.set_defaults(func=cmd_littles)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, InvariantViolation) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except HTQueueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
