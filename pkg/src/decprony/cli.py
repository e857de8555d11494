"""Command-line front end: ``decprony {generate,solve,bounds,experiment}``.

Exit codes: 0 ok, 1 usage or parse error, 2 domain failure (solver failure,
non-regular point).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import bounds, experiments
from .model import (
    BASIC,
    KINDS,
    MeasurementVector,
    NoiseSpec,
    PronySignal,
    SamplingGrid,
    add_noise,
    forward,
    load_signal,
    regularity_failures,
    save_signal,
)
from .solvers import (
    DAMPING_INIT,
    MAX_ITER,
    SOLVERS,
    DecimationPlan,
    SolverError,
    run_solver,
    solve_classical_prony,
    solve_decimated,
)


class UsageError(Exception):
    pass


# --- file formats -----------------------------------------------------------

def write_measurements(meas: MeasurementVector, path) -> None:
    eps = "" if meas.noise_bound is None else repr(float(meas.noise_bound))
    with open(path, "w", newline="") as fh:
        fh.write(f"# eps={eps}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "re", "im"])
        for k, v in zip(meas.grid.indices, meas.values):
            w.writerow([int(k), repr(float(v.real)), repr(float(v.imag))])


def read_measurements(path) -> MeasurementVector:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise UsageError(f"cannot read measurements {path}: {err.strerror}") from err
    eps = None
    lines = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            if key.strip() == "eps" and val.strip():
                eps = float(val)
        elif line.strip():
            lines.append(line)
    rows = list(csv.DictReader(lines))
    if not rows or not {"k", "re", "im"} <= set(rows[0]):
        raise UsageError(f"{path}: expected columns k, re, im")
    try:
        k = np.array([int(r["k"]) for r in rows])
        vals = np.array([complex(float(r["re"]), float(r["im"])) for r in rows])
    except ValueError as err:
        raise UsageError(f"{path}: {err}") from err
    steps = np.diff(k)
    p = int(steps[0]) if len(k) > 1 else 1
    if len(k) > 1 and (p < 1 or np.any(steps != p)):
        raise UsageError(f"{path}: indices are not an arithmetic progression")
    return MeasurementVector(vals, SamplingGrid(int(k[0]), p, len(k)), eps)


def write_rows(rows, path) -> None:
    Path(path).write_text(experiments.rows_to_csv(rows))


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as err:
        raise UsageError(f"cannot read {path}: {err.strerror}") from err
    except json.JSONDecodeError as err:
        raise UsageError(f"{path}: invalid JSON ({err})") from err


def _read_signal(path) -> PronySignal:
    try:
        return load_signal(path)
    except OSError as err:
        raise UsageError(f"cannot read signal {path}: {err.strerror}") from err
    except (KeyError, TypeError, ValueError) as err:
        raise UsageError(f"{path}: invalid signal ({err})") from err


def _dump(obj, path=None):
    text = json.dumps(obj, indent=2, default=_json_default) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not serializable: {type(o).__name__}")


# --- subcommands ----------------------------------------------------------

def cmd_generate(args, config) -> int:
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    rng = np.random.default_rng(seed)
    if "signal" in config:
        try:
            signal = PronySignal.from_dict(config["signal"])
        except (KeyError, TypeError, ValueError) as err:
            raise UsageError(f"invalid signal in config: {err}") from err
    else:
        kind = args.kind or config.get("kind", BASIC)
        signal = bounds.random_signal(rng, kind, config.get("max_nodes", 3), config.get("max_mult", 3),
                                      config.get("min_delta", 0.5))
    g = config.get("grid", {})
    grid = SamplingGrid(g.get("t", 0), g.get("p", 1), args.n or g.get("n", max(4 * signal.R, 2 * signal.C + 2)))
    nz = config.get("noise", {})
    level = args.noise if args.noise is not None else nz.get("level", 0.0)
    noise = NoiseSpec(nz.get("law", "uniform"), level, seed)

    clean = forward(signal, grid)
    noisy = add_noise(clean, noise, np.random.default_rng([seed, 1]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_signal(signal, out / "signal.json")
    write_measurements(clean, out / "clean.csv")
    write_measurements(noisy, out / "noisy.csv")
    print(f"wrote {out / 'signal.json'}, {out / 'clean.csv'}, {out / 'noisy.csv'}")
    return 0


def cmd_solve(args, config) -> int:
    meas = read_measurements(args.measurements)
    sc = {**config.get("solver_config", {}), **{k: v for k, v in config.items() if k in
                                                 ("solver", "p", "max_iter", "damping_init", "seed")}}
    solver = args.solver or sc.get("solver", "esprit")
    if solver not in SOLVERS:
        raise UsageError(f"unknown solver {solver!r}")
    p = args.p or sc.get("p", 1)
    opts = {}
    if solver == "nls":
        opts = {"max_iter": sc.get("max_iter", MAX_ITER), "damping_init": sc.get("damping_init", DAMPING_INIT)}
    elif solver == "esprit":
        opts = {"max_iter": sc.get("max_iter", MAX_ITER)}

    reference = _read_signal(args.reference) if args.reference else None
    initial = _read_signal(args.initial) if args.initial else None
    template = initial or reference
    structure = config.get("structure", {})
    if args.mults:
        mults = [int(m) for m in args.mults.split(",")]
    elif template is not None:
        mults = list(template.mults)
    else:
        mults = structure.get("mults")
    K = args.K or (len(mults) if mults else None) or structure.get("K")
    if K is None:
        raise UsageError("model order unknown: pass --K/--mults, --reference or --initial")
    mults = mults or [1] * K
    kind = args.kind or (template.kind if template else structure.get("kind"))

    if p > 1:
        if meas.grid.t != 0 or meas.grid.p != 1:
            raise UsageError("decimation needs measurements on 0, 1, ..., N")
        prior = template.nodes if template is not None else None
        res = solve_decimated(meas, DecimationPlan(prior, p), solver, K, mults, kind, **opts)
    else:
        start = initial
        if solver == "nls" and start is None:
            start = solve_classical_prony(meas, K, mults, kind).recovered
        res = run_solver(solver, meas, K, mults, kind, initial=start, **opts)
    if reference is not None:
        res.with_reference(reference)
    out = res.to_dict()
    if reference is not None:
        out["node_errors"] = [float(e) for e in res.node_errors(reference)]
    Path(args.out).mkdir(parents=True, exist_ok=True)
    sys.stdout.write(_dump(out, Path(args.out) / "result.json"))
    if not res.converged:
        print(f"solver did not converge: {res.diagnostics.get('stop')}", file=sys.stderr)
        return 2
    return 0


def cmd_bounds(args, config) -> int:
    signal = _read_signal(args.signal)
    t = args.t if args.t is not None else config.get("t", 0)
    p = args.p if args.p is not None else config.get("p", 1)
    eps = args.eps if args.eps is not None else config.get("eps", 1e-3)
    failures = regularity_failures(signal, p)
    if failures:
        print("non-regular point: " + "; ".join(failures), file=sys.stderr)
        return 2
    confluent = args.map == "confluent" or (args.map is None and signal.kind == "confluent")
    report = bounds.bound_confluent(signal, t, p, eps) if confluent else bounds.bound_polynomial(signal, t, p, eps)
    if not report.regular:
        print("non-regular point: " + "; ".join(report.failures), file=sys.stderr)
        return 2
    N = args.N or config.get("N", signal.R)
    comparators = bounds.crb_comparators(signal, eps, N)
    out = {"stability": report.to_dict(), "comparators": comparators.to_dict()}
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    write_rows(report.rows(seed=args.seed), outdir / "bounds.csv")
    sys.stdout.write(_dump(out, outdir / "bounds.json"))
    return 0


def cmd_experiment(args, config) -> int:
    d = dict(config)
    if args.scenario:
        d["scenario"] = args.scenario
    if args.trials is not None:
        d["trials"] = args.trials
    if args.seed is not None:
        d["seed"] = args.seed
    if args.no_timing:
        d["timing"] = False
    try:
        cfg = experiments.ExperimentConfig.from_dict(d)
    except (TypeError, ValueError) as err:
        raise UsageError(f"invalid experiment config: {err}") from err
    rows = experiments.run(cfg)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    path = Path(cfg.out) if cfg.out else outdir / f"{cfg.scenario}.csv"
    write_rows(rows, path)
    verdict = experiment_verdict(cfg, rows)
    if verdict:
        sys.stdout.write(_dump(verdict))
    print(f"wrote {path}")
    return 0


def experiment_verdict(cfg, rows) -> dict:
    summary = [r for r in rows if r.get("trial") == "median"]
    out = {}
    if cfg.scenario == "fixed_samples":
        for solver in cfg.solvers:
            for eps in cfg.noise:
                out[f"{solver}@{eps}"] = experiments.monotone_verdict(experiments.cell_medians(summary, solver, eps))
    elif cfg.scenario == "fixed_budget":
        for solver in cfg.solvers:
            for eps in cfg.noise:
                v = experiments.flatness_verdict(experiments.cell_medians(summary, solver, eps))
                if cfg.timing:
                    rt = experiments.cell_medians(summary, solver, eps, key="runtime_ms")
                    v["runtime_ms"] = [rt[p] for p in sorted(rt)]
                    v["faster_at_max_p"] = bool(rt[max(rt)] < rt[min(rt)])
                out[f"{solver}@{eps}"] = v
    elif cfg.scenario == "dominance":
        out["violations"] = sum(not r["dominates"] for r in rows)
        out["entries"] = len(rows)
    elif cfg.scenario == "factorizations":
        worst = {}
        for r in rows:
            worst[r["identity"]] = max(worst.get(r["identity"], 0.0), r["residual"])
        out["max_residual"] = worst
    return out


# --- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="decprony", description="Decimated Prony systems: generate, solve, analyze.")
    ap.add_argument("--config", help="JSON configuration file")
    ap.add_argument("--seed", type=int, help="random seed (overrides the config)")
    ap.add_argument("--out", default=".", help="output directory")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a signal and its clean/noisy measurements")
    g.add_argument("--kind", choices=KINDS)
    g.add_argument("--n", type=int, help="number of samples")
    g.add_argument("--noise", type=float, help="noise level (eps for uniform, sigma for gaussian)")

    s = sub.add_parser("solve", help="recover a signal from a measurement CSV")
    s.add_argument("measurements")
    s.add_argument("--solver", choices=SOLVERS)
    s.add_argument("--p", type=int, help="decimation step")
    s.add_argument("--K", type=int)
    s.add_argument("--mults", help="comma-separated multiplicities")
    s.add_argument("--kind", choices=KINDS)
    s.add_argument("--initial", help="signal JSON with initial approximations")
    s.add_argument("--reference", help="signal JSON used for matching and error reporting")

    b = sub.add_parser("bounds", help="stability bounds and comparators for a signal")
    b.add_argument("signal")
    b.add_argument("--t", type=int)
    b.add_argument("--p", type=int)
    b.add_argument("--eps", type=float)
    b.add_argument("--N", type=int, help="sample count for the Cramer-Rao comparators")
    b.add_argument("--map", choices=["polynomial", "confluent"])

    e = sub.add_parser("experiment", help="run a Monte-Carlo or sweep scenario to CSV")
    e.add_argument("--scenario", choices=experiments.SCENARIOS)
    e.add_argument("--trials", type=int)
    e.add_argument("--no-timing", action="store_true", help="leave runtime_ms empty for byte-stable output")
    return ap


COMMANDS = {"generate": cmd_generate, "solve": cmd_solve, "bounds": cmd_bounds, "experiment": cmd_experiment}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        config = _read_json(args.config) if args.config else {}
        if not isinstance(config, dict):
            raise UsageError(f"{args.config}: top-level JSON must be an object")
        return COMMANDS[args.command](args, config)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except SolverError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return 2
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
