"""Monte-Carlo decimation experiments and the non-random sweeps behind the CLI."""

from __future__ import annotations

import csv
import io
import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bounds, structmat
from .jacobian import jacobian_confluent, jacobian_polynomial
from .model import BASIC, CONFLUENT, NoiseSpec, PronySignal, SamplingGrid, forward
from .solvers import DecimationPlan, SolverError, SubspaceGapWarning, max_decimation, solve_decimated

SCENARIOS = ("fixed_samples", "fixed_budget", "dominance", "factorizations")


@dataclass
class ExperimentConfig:
    scenario: str = "fixed_samples"
    trials: int = 200
    noise: list = field(default_factory=lambda: [1e-3])
    law: str = "uniform"
    sweep: list | None = None
    solvers: list = field(default_factory=lambda: ["esprit", "nls"])
    seed: int = 0
    samples: int | None = None
    top_index: int | None = None
    delta: float = 1e-2
    xi: float = 1.0
    coeffs: list = field(default_factory=lambda: [1.0, 1.0])
    prior_error: float = 0.0
    timing: bool = True
    points: int = 1000
    out: str | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.trials < 1:
            raise ValueError("trials must be positive")
        if self.scenario == "fixed_samples":
            self.samples = 66 if self.samples is None else self.samples
            self.sweep = [1, 3, 9, 21] if self.sweep is None else self.sweep
        elif self.scenario == "fixed_budget":
            self.top_index = 1600 if self.top_index is None else self.top_index
            self.sweep = [1, 2, 5, 10, 20, 50, 100] if self.sweep is None else self.sweep
            R = 2 * len(self.coeffs)
            top = max_decimation(self.top_index - 1, R)
            for p in self.sweep:
                if not 1 <= p <= top:
                    raise ValueError(f"p = {p} outside 1..{top} for indices 0..{self.top_index - 1} and R = {R}")
        self.noise = [float(x) for x in np.atleast_1d(self.noise)]
        self.sweep = [int(p) for p in self.sweep] if self.sweep is not None else None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self) -> dict:
        return asdict(self)


def two_node_signal(xi: float, delta: float, coeffs=(1.0, 1.0)) -> PronySignal:
    """Unit-circle nodes ``exp(i xi)`` and ``exp(i (xi + delta))``; extra coefficients add nodes spaced by delta."""
    K = len(coeffs)
    nodes = np.exp(1j * (xi + delta * np.arange(K)))
    return PronySignal(nodes, [1] * K, [[complex(c)] for c in coeffs], BASIC)


def noise_variance(law: str, level: float) -> float:
    """``E|delta_k|^2`` for one complex noise sample."""
    return 2 * level**2 / 3 if law == "uniform" else level**2


def snr_db(clean: np.ndarray, law: str, level: float) -> float:
    var = noise_variance(law, level)
    if var == 0:
        return math.inf
    return 10 * math.log10(np.sum(np.abs(clean) ** 2) / (len(clean) * var))


def trial_rng(seed: int, *keys) -> np.random.Generator:
    """Independent stream per (seed, cell, trial) so results do not depend on execution order."""
    return np.random.default_rng([seed, *keys])



def _run_decimation(cfg: ExperimentConfig, full_length) -> list[dict]:
    truth = two_node_signal(cfg.xi, cfg.delta, cfg.coeffs)
    K = truth.K
    rows = []
    for p in cfg.sweep:
        n_full = full_length(p)
        grid = SamplingGrid(0, 1, n_full)
        clean = forward(truth, grid)
        used = clean.values[::p]
        for ie, eps in enumerate(cfg.noise):
            spec = NoiseSpec(cfg.law, eps)
            snr = snr_db(used, cfg.law, eps)
            for trial in range(cfg.trials):
                rng = trial_rng(cfg.seed, p, ie, trial)
                noisy = clean.values + spec.sample(n_full, rng)
                meas = type(clean)(noisy, grid, eps if cfg.law == "uniform" else None)
                prior = truth.nodes
                if cfg.prior_error > 0:
                    prior = prior * np.exp(1j * rng.uniform(-cfg.prior_error, cfg.prior_error, K))
                for solver in cfg.solvers:
                    row = {"solver": solver, "p": p, "eps": eps, "trial": trial,
                           "sample_count": (n_full - 1) // p + 1, "snr_db": snr}
                    t0 = time.perf_counter()
                    try:
                        with warnings.catch_warnings():
                            warnings.simplefilter("ignore", SubspaceGapWarning)
                            res = solve_decimated(meas, DecimationPlan(prior, p), solver, K, truth.mults, truth.kind)
                        ms = 1e3 * (time.perf_counter() - t0)
                        nerr = res.node_errors(truth)
                        cerr = [float(np.max(e)) for e in res.coeff_errors(truth)]
                        status = "ok"
                    except (SolverError, np.linalg.LinAlgError, ValueError) as err:
                        ms = 1e3 * (time.perf_counter() - t0)
                        nerr = np.full(K, math.inf)
                        cerr = [math.inf] * K
                        status = f"failed: {err}"
                    for j in range(K):
                        row[f"node_error_{j + 1}"] = float(nerr[j])
                    for j in range(K):
                        row[f"coeff_error_{j + 1}"] = cerr[j]
                    row["runtime_ms"] = ms if cfg.timing else ""
                    row["status"] = status
                    rows.append(row)
    return rows


def fixed_samples(cfg: ExperimentConfig) -> list[dict]:
    """Constant sample count ``cfg.samples``; indices ``0, p, ..., (samples-1) p``."""
    return _run_decimation(cfg, lambda p: (cfg.samples - 1) * p + 1)


def fixed_budget(cfg: ExperimentConfig) -> list[dict]:
    """Constant index range ``0..top_index-1``; ``ceil(top_index / p)`` samples are used."""
    return _run_decimation(cfg, lambda p: cfg.top_index)


def _median(vals):
    vals = [v for v in vals if v != ""]
    return float(np.median(vals)) if vals else ""


def summarize(rows: list[dict]) -> list[dict]:
    """One ``trial="median"`` row per (solver, p, eps) cell."""
    cells = {}
    for r in rows:
        cells.setdefault((r["solver"], r["p"], r["eps"]), []).append(r)
    out = []
    for (solver, p, eps), rs in cells.items():
        s = {"solver": solver, "p": p, "eps": eps, "trial": "median",
             "sample_count": rs[0]["sample_count"], "snr_db": rs[0]["snr_db"]}
        for key in rs[0]:
            if key.startswith(("node_error", "coeff_error")) or key == "runtime_ms":
                s[key] = _median([r[key] for r in rs])
        s["node_error"] = float(np.median([max(v for k, v in r.items() if k.startswith("node_error")) for r in rs]))
        s["status"] = f"{sum(r['status'] == 'ok' for r in rs)}/{len(rs)} ok"
        out.append(s)
    return out


def cell_medians(summary, solver, eps=None, key="node_error") -> dict:
    return {s["p"]: s[key] for s in summary if s["solver"] == solver and (eps is None or s["eps"] == eps)}


def monotone_verdict(medians: dict, slack: float = 1.2, final_ratio: float = 0.2) -> dict:
    """Median error non-increasing in p up to ``slack`` and ``error(p_max)/error(p_min) <= final_ratio``."""
    ps = sorted(medians)
    errs = [medians[p] for p in ps]
    steps = all(b <= slack * a for a, b in zip(errs, errs[1:]))
    ratio = errs[-1] / errs[0]
    return {"p": ps, "median": errs, "monotone": steps, "ratio": ratio, "passed": bool(steps and ratio <= final_ratio)}


def flatness_verdict(medians: dict, max_ratio: float = 3.0) -> dict:
    errs = list(medians.values())
    ratio = max(errs) / min(errs)
    return {"p": sorted(medians), "median": [medians[p] for p in sorted(medians)], "ratio": ratio,
            "passed": bool(ratio <= max_ratio)}


def dominance(cfg: ExperimentConfig) -> list[dict]:
    rows = []
    for kind in ("polynomial", "confluent"):
        rep = bounds.dominance_sweep(bounds.SweepConfig(points=cfg.points, seed=cfg.seed, kind=kind))
        for r in rep.rows:
            r["dominates"] = r["bound"] >= r["exact"] * (1 - bounds.DOMINANCE_RTOL)
        rows.extend(rep.rows)
    return rows


def random_factorization_case(rng, max_nodes=3, max_mult=3, min_delta=0.2, max_t=20, max_p=50, confluent=None):
    """Random configuration for the factorization checks; resamples until the point is regular."""
    while True:
        conf = bool(rng.integers(0, 2)) if confluent is None else confluent
        kind = CONFLUENT if conf else "polynomial"
        s = bounds.random_signal(rng, kind, max_nodes, max_mult, min_delta, 0.1, 0.5)
        t = int(rng.integers(0, max_t + 1))
        p = int(rng.integers(1, max_p + 1))
        if bounds.separation(s.nodes, p)[1] > 1e-6:
            return s, t, p


def factorizations(cfg: ExperimentConfig) -> list[dict]:
    """Residuals of every structured factorization on random regular configurations."""
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for i in range(cfg.points):
        s, t, p = random_factorization_case(rng)
        n = s.R + int(rng.integers(0, 4))
        res = structmat.vandermonde_factorizations_check(s.nodes, list(s.mults), t, p)
        res["data_matrix"] = structmat.data_matrix_factorization_check(s, t, p)
        bundle = (jacobian_confluent if s.kind == CONFLUENT else jacobian_polynomial)(s, SamplingGrid(t, p, n))
        res["jacobian"] = bundle.factorized_discrepancy()
        res["jacobian_fd"] = bundle.fd_discrepancy()
        for k, v in res.items():
            rows.append({"point": i, "kind": s.kind, "t": t, "p": p, "identity": k, "residual": float(v)})
    return rows


RUNNERS = {"fixed_samples": fixed_samples, "fixed_budget": fixed_budget,
           "dominance": dominance, "factorizations": factorizations}


def run(cfg: ExperimentConfig) -> list[dict]:
    rows = RUNNERS[cfg.scenario](cfg)
    if cfg.scenario in ("fixed_samples", "fixed_budget"):
        rows = rows + summarize(rows)
    return rows


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    fields = []
    for r in rows:
        for k in r:
            if k not in fields:
                fields.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", restval="")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(v) for k, v in r.items()})
    return buf.getvalue()
