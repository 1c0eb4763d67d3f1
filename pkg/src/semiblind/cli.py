"""Command-line interface: ``semiblind {synth,jisg,jisgot,track,ident,eval}``.

Exit codes: 0 success, 2 usage or input error, 3 search budget exceeded,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import io
from .evalkit import KroneckerExperiment, best_threshold, cnmse, nmse, run_synthetic_kronecker, write_reports_csv
from .exceptions import (
    BudgetExceededError,
    ConvergenceWarning,
    InconsistentDataError,
    NonIdentifiableError,
    NumericError,
    SemiBlindError,
)
from .graphmodel import (
    KRONECKER_SEED,
    KroneckerSpec,
    NoiseSpec,
    bandlimited_signals,
    kronecker_expand,
    laplacian,
    make_rng,
    random_schedule,
    rescale_to_stable,
    sample_adjacency,
    sample_observations,
    sem_synthesize,
    svarm_synthesize,
)
from .identifiability import MaskedObservationMatrix, check_as2, check_as3, noiseless_recovery_oracle
from .online import tracker_init, tracker_step
from .sem import jisg
from .svarm import jisgot

EXIT_OK, EXIT_USAGE, EXIT_BUDGET, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _version():
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:  # pragma: no cover - not installed
        return "0+unknown"


def _manifest(args, cfg, inputs, outputs, started):
    return {
        "command": args.command,
        "argv": sys.argv[1:] if args.argv is None else args.argv,
        "config": cfg,
        "inputs": inputs,
        "outputs": sorted(outputs),
        "seed": args.seed,
        "version": _version(),
        "wall_clock_s": time.perf_counter() - started,
    }


def _finish(args, stage, cfg, inputs, started):
    outputs = [p.name for p in stage.iterdir()]
    io.dump_json(_manifest(args, cfg, inputs, outputs, started), stage / "manifest.json")


def _need_out(args):
    if not args.out:
        raise UsageError(f"{args.command}: --out is required")
    return Path(args.out)


def _solver_overrides(args):
    keys = ("mu", "lambda1", "lambda2", "rho", "tol_outer", "tol_inner", "max_outer", "max_inner", "max_admm")
    out = {k: getattr(args, k, None) for k in keys}
    if args.seed is not None:
        out["seed"] = args.seed
    return out


def _read_obs(path):
    try:
        with open(path) as fh:
            return io.observations_from_json(json.load(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read observations {path}: {exc}") from exc


# ---------------------------------------------------------------- synth


def cmd_synth(args):
    out = _need_out(args)
    started = time.perf_counter()
    order = round(math.log(args.n, 3)) if args.n > 0 else -1
    if order < 1 or 3**order != args.n:
        raise UsageError("--n must be a power of 3 (Kronecker powers of the 3x3 seed)")
    seed = 0 if args.seed is None else args.seed
    rng = make_rng(seed)
    m = args.n if args.samples is None else args.samples
    noise = NoiseSpec(args.process_sigma, args.obs_sigma, seed)
    prob = kronecker_expand(KroneckerSpec(KRONECKER_SEED, order))
    adj = sample_adjacency(prob, rng).entries
    cfg = {"model": args.model, "n": args.n, "slots": args.slots, "samples": m, "bandwidth": args.bandwidth,
           "rescale": args.rescale, "noise": io.noise_to_json(noise)}
    with io.staged_output(out) as stage:
        if args.model == "bandlimited":
            sig = bandlimited_signals(laplacian(adj), args.bandwidth, args.slots, rng)
        elif args.model == "sem":
            if args.rescale:
                adj = rescale_to_stable(adj)
            sig = sem_synthesize(adj, noise, args.slots)
        else:
            lagged = sample_adjacency(prob, rng).entries
            if args.rescale:
                # keep the instantaneous part contractive and the transition stable
                adj = rescale_to_stable(adj, factor=2.0)
                trans = np.linalg.solve(np.eye(args.n) - adj, lagged)
                rho = np.max(np.abs(np.linalg.eigvals(trans)))
                if rho >= 1:
                    lagged = lagged / (1.1 * rho)
            z0 = np.zeros(args.n)
            sig = svarm_synthesize(adj, lagged, z0, noise, args.slots)
            io.write_matrix_csv(stage / "lagged.csv", lagged)
        io.write_matrix_csv(stage / "adjacency.csv", adj)
        io.write_matrix_csv(stage / "signals.csv", sig.values)
        sched = random_schedule(args.n, m, args.slots, rng)
        # SVAR trajectories carry s(0); sampling covers slots 1..T only
        obs = sample_observations(sig, sched, noise, rng)
        io.dump_json(io.schedule_to_json(sched), stage / "schedule.json")
        io.dump_json(io.observations_to_json(obs), stage / "observations.json")
        io.dump_json(io.noise_to_json(noise), stage / "noise.json")
        _finish(args, stage, cfg, {}, started)
    return EXIT_OK


# ---------------------------------------------------------------- solvers


def _truth_metrics(truth_dir, est_adj, est_sig, lagged_est=None):
    truth = Path(truth_dir)
    try:
        adj = io.read_matrix_csv(truth / "adjacency.csv")
        sig = io.read_matrix_csv(truth / "signals.csv")
        lag = io.read_matrix_csv(truth / "lagged.csv") if lagged_est is not None else None
    except OSError as exc:
        raise UsageError(f"cannot read ground truth: {exc}") from exc
    if lagged_est is not None:
        adj_true = (adj != 0) | (lag != 0)
        est = np.maximum(np.abs(est_adj), np.abs(lagged_est))
        sig = sig[:, 1:]
        est_sig = est_sig[:, 1:]
    else:
        adj_true, est = adj, est_adj
    th, e = best_threshold(adj_true, est)
    return {"eier": e, "threshold": th, "nmse": nmse(sig, est_sig)}


def cmd_jisg(args):
    out = _need_out(args)
    started = time.perf_counter()
    obs = _read_obs(args.obs)
    over = _solver_overrides(args)
    over["signal_solver"] = args.signal_solver
    cfg = io.load_config(args.config, "sem", over)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        res = jisg(obs, cfg)
    with io.staged_output(out) as stage:
        io.write_matrix_csv(stage / "adjacency.csv", res.adjacency.entries)
        io.write_matrix_csv(stage / "signals.csv", res.signals.values)
        io.write_matrix_csv(stage / "trace.csv", res.objective_trace[:, None])
        if args.truth:
            io.dump_json(_truth_metrics(args.truth, res.adjacency.entries, res.signals.values), stage / "metrics.json")
        summary = {"converged": res.converged, "iterations": res.iterations}
        io.dump_json(summary, stage / "summary.json")
        _finish(args, stage, io.config_to_dict(cfg), {"obs": args.obs, "truth": args.truth}, started)
    return EXIT_OK


def cmd_jisgot(args):
    out = _need_out(args)
    started = time.perf_counter()
    obs = _read_obs(args.obs)
    cfg = io.load_config(args.config, "svarm", _solver_overrides(args))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        res = jisgot(obs, cfg)
    with io.staged_output(out) as stage:
        io.write_matrix_csv(stage / "a0.csv", res.a0.entries)
        io.write_matrix_csv(stage / "a1.csv", res.a1.entries)
        io.write_matrix_csv(stage / "signals.csv", res.signals.values)
        io.write_matrix_csv(stage / "trace.csv", res.objective_trace[:, None])
        if args.truth:
            io.dump_json(
                _truth_metrics(args.truth, res.a0.entries, res.signals.values, res.a1.entries), stage / "metrics.json"
            )
        io.dump_json({"converged": res.converged, "iterations": res.iterations}, stage / "summary.json")
        _finish(args, stage, io.config_to_dict(cfg), {"obs": args.obs, "truth": args.truth}, started)
    return EXIT_OK


def cmd_track(args):
    started = time.perf_counter()
    over = _solver_overrides(args)
    over.update(lag=args.lag, beta=args.beta)
    cfg = io.load_config(args.config, "tracker", over)
    n = args.n if args.n is not None else (None if cfg.z0 is None else len(cfg.z0))
    if n is None:
        raise UsageError("track: pass --n or a config with z0")
    z0 = np.zeros(n) if cfg.z0 is None else cfg.z0
    state = tracker_init(z0, cfg)
    src = sys.stdin if args.stream in (None, "-") else open(args.stream)
    out = Path(args.out) if args.out else None
    records = []
    snapshots = {}
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            for idx, y in io.read_stream(src, n):
                step = tracker_step(state, y, idx, cfg)
                rec = {
                    "t": step.time,
                    "warmup": step.warmup,
                    "iterations": step.iterations,
                    "objective": float(step.objective_trace[-1]),
                    "estimate": [float(v) for v in step.filtered],
                }
                line = json.dumps(rec, sort_keys=True)
                print(line, flush=True)
                records.append(line)
                if args.snapshot_every and step.time % args.snapshot_every == 0:
                    snapshots[step.time] = (step.a0, step.a1)
    finally:
        if src is not sys.stdin:
            src.close()
    if out is not None:
        with io.staged_output(out) as stage:
            (stage / "steps.jsonl").write_text("".join(r + "\n" for r in records))
            for t, (a0, a1) in snapshots.items():
                io.write_matrix_csv(stage / f"a0_t{t:06d}.csv", a0)
                io.write_matrix_csv(stage / f"a1_t{t:06d}.csv", a1)
            if records:
                io.write_matrix_csv(stage / "a0.csv", state.a0)
                io.write_matrix_csv(stage / "a1.csv", state.a1)
            _finish(args, stage, io.config_to_dict(cfg), {"stream": args.stream or "-"}, started)
    return EXIT_OK


# ---------------------------------------------------------------- ident / eval


def _verdict_json(v):
    return {"satisfied": v.satisfied, "columns": [c + 1 for c in v.columns],
            "rows": None if v.rows is None else [r + 1 for r in v.rows], "kruskal": v.kruskal_value}


def cmd_ident(args):
    started = time.perf_counter()
    try:
        vals = io.read_matrix_csv(args.values)
        mask = io.read_matrix_csv(args.mask) != 0 if args.mask else np.ones(vals.shape, dtype=bool)
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    obs = MaskedObservationMatrix(vals, mask)
    result = {"sparsity": args.sparsity, "as2": _verdict_json(check_as2(obs, args.sparsity, axis=args.axis))}
    if not args.skip_as3:
        result["as3"] = _verdict_json(check_as3(obs, args.sparsity))
    if args.recover:
        try:
            a = noiseless_recovery_oracle(obs, args.sparsity)
            result["recovery"] = {"status": "unique", "adjacency": a.entries.tolist()}
        except NonIdentifiableError as exc:
            result["recovery"] = {"status": "non-identifiable", "row": exc.row + 1,
                                  "witnesses": [w.tolist() for w in exc.witnesses]}
        except InconsistentDataError as exc:
            result["recovery"] = {"status": "inconsistent", "row": exc.row + 1}
    text = io.dump_json(result)
    sys.stdout.write(text)
    if args.out:
        with io.staged_output(args.out) as stage:
            (stage / "verdict.json").write_text(text)
            _finish(args, stage, {"sparsity": args.sparsity, "axis": args.axis}, {"values": args.values,
                    "mask": args.mask}, started)
    return EXIT_OK


def cmd_eval(args):
    started = time.perf_counter()
    if args.experiment:
        out = _need_out(args)
        sem = io.load_config(args.config, "sem", {**_solver_overrides(args), "signal_solver": args.signal_solver})
        exp = KroneckerExperiment(
            m_values=tuple(args.m_values),
            seeds=tuple(range(args.seeds)) if args.seed is None else tuple(range(args.seed, args.seed + args.seeds)),
            slots=args.slots,
            bandwidth=args.bandwidth,
            sem=sem,
        )
        reports = run_synthetic_kronecker(exp)
        with io.staged_output(out) as stage:
            write_reports_csv(reports, stage / "report.csv")
            _finish(args, stage, {"m_values": list(exp.m_values), "seeds": list(exp.seeds), "slots": exp.slots,
                    "bandwidth": exp.bandwidth, "sem": io.config_to_dict(sem)}, {}, started)
        return EXIT_OK
    result = {}
    try:
        if args.adj_true and args.adj_est:
            th, e = best_threshold(io.read_matrix_csv(args.adj_true), io.read_matrix_csv(args.adj_est))
            result.update(eier=e, threshold=th)
        if args.signals_true and args.signals_est:
            st, se = io.read_matrix_csv(args.signals_true), io.read_matrix_csv(args.signals_est)
            result.update(nmse=nmse(st, se), cnmse=cnmse(st, se).tolist())
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    if not result:
        raise UsageError("eval: give --adj-true/--adj-est, --signals-true/--signals-est or --experiment")
    text = io.dump_json(result)
    sys.stdout.write(text)
    if args.out:
        with io.staged_output(args.out) as stage:
            (stage / "metrics.json").write_text(text)
            _finish(args, stage, {}, {k: getattr(args, k) for k in ("adj_true", "adj_est", "signals_true",
                    "signals_est")}, started)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _solver_flags(p):
    p.add_argument("--mu", type=float)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--tol-outer", dest="tol_outer", type=float)
    p.add_argument("--tol-inner", dest="tol_inner", type=float)
    p.add_argument("--max-outer", dest="max_outer", type=int)
    p.add_argument("--max-inner", dest="max_inner", type=int)
    p.add_argument("--max-admm", dest="max_admm", type=int)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="RNG seed (PCG64)")
    common.add_argument("--config", help="JSON config file; flags override it")
    common.add_argument("--out", help="output directory")
    common.add_argument("--truth", help="directory with ground-truth adjacency.csv / signals.csv")
    common.add_argument("--snapshot-every", dest="snapshot_every", type=int, default=0,
                        help="track: write topology snapshots every k slots")

    parser = argparse.ArgumentParser(prog="semiblind", description="Semi-blind graph topology and signal inference")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic data bundle")
    p.add_argument("--model", choices=("sem", "svarm", "bandlimited"), default="sem")
    p.add_argument("--n", type=int, required=True, help="node count, a power of 3")
    p.add_argument("--slots", type=int, default=100)
    p.add_argument("--samples", type=int, help="sampled nodes per slot (default: all)")
    p.add_argument("--bandwidth", type=int, default=10)
    p.add_argument("--process-sigma", dest="process_sigma", type=float, default=1.0)
    p.add_argument("--obs-sigma", dest="obs_sigma", type=float, default=0.0)
    p.add_argument("--rescale", action="store_true", help="shrink adjacencies to a stable spectral radius")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("jisg", parents=[common], help="joint SEM topology and signal inference")
    p.add_argument("--obs", required=True, help="observations.json")
    p.add_argument("--signal-solver", dest="signal_solver", choices=("gd", "exact"))
    _solver_flags(p)
    p.set_defaults(func=cmd_jisg)

    p = sub.add_parser("jisgot", parents=[common], help="joint SVAR topology and trajectory inference")
    p.add_argument("--obs", required=True, help="observations.json")
    _solver_flags(p)
    p.set_defaults(func=cmd_jisgot)

    p = sub.add_parser("track", parents=[common], help="online tracking from a JSON-lines stream")
    p.add_argument("--stream", help="JSON-lines file, '-' or omitted for stdin")
    p.add_argument("--n", type=int, help="node count")
    p.add_argument("--lag", type=int)
    p.add_argument("--beta", type=float)
    _solver_flags(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("ident", parents=[common], help="identifiability checks on masked data")
    p.add_argument("--values", required=True, help="node-by-slot CSV")
    p.add_argument("--mask", help="node-by-slot 0/1 CSV (default: fully observed)")
    p.add_argument("--sparsity", type=int, required=True)
    p.add_argument("--axis", choices=("slots", "nodes"), default="slots")
    p.add_argument("--skip-as3", dest="skip_as3", action="store_true")
    p.add_argument("--recover", action="store_true", help="also run the brute-force recovery")
    p.set_defaults(func=cmd_ident)

    p = sub.add_parser("eval", parents=[common], help="metrics or the synthetic Kronecker sweep")
    p.add_argument("--adj-true", dest="adj_true")
    p.add_argument("--adj-est", dest="adj_est")
    p.add_argument("--signals-true", dest="signals_true")
    p.add_argument("--signals-est", dest="signals_est")
    p.add_argument("--experiment", choices=("kronecker",))
    p.add_argument("--m-values", dest="m_values", type=int, nargs="+", default=[20, 40, 60, 81])
    p.add_argument("--seeds", type=int, default=10, help="number of seeds")
    p.add_argument("--slots", type=int, default=100)
    p.add_argument("--bandwidth", type=int, default=10)
    p.add_argument("--signal-solver", dest="signal_solver", choices=("gd", "exact"), default="exact")
    _solver_flags(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = None if argv is None else list(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BudgetExceededError as exc:
        print(f"error: {exc} (budget {exc.budget})", file=sys.stderr)
        return EXIT_BUDGET
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SemiBlindError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
