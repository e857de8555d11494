"""Parameter recovery: classical Prony, ESPRIT, nonlinear least squares, and
the decimation wrapper that feeds any of them every p-th sample."""

from __future__ import annotations

import itertools
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import hankel
from scipy.optimize import linear_sum_assignment

from .jacobian import jacobian_direct
from .model import (
    BASIC,
    CONFLUENT,
    POLYNOMIAL,
    MeasurementVector,
    PronySignal,
    SamplingGrid,
    evaluate,
    falling_factorial,
)

RANK_TOL = 1e-12
CLUSTER_TOL = 1e-4
GAP_WARN = 10.0
AMBIGUITY_TOL = 1e-9
STEP_TOL = 1e-12
MAX_ITER = 200
DAMPING_INIT = 1e-3
DAMPING_MAX = 1e20


class SolverError(RuntimeError):
    """Solver-reported failure (rank deficiency, aliasing, ambiguity, divergence)."""


class SubspaceGapWarning(UserWarning):
    pass


@dataclass
class SolveResult:
    recovered: PronySignal
    residual: float
    method: str
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)
    matched: tuple | None = None

    def node_errors(self, reference: PronySignal) -> np.ndarray:
        """``|z_j - z_hat_j|`` per reference node under the best matching."""
        perm = match_nodes(self.recovered.nodes, reference.nodes)
        return np.abs(self.recovered.nodes[list(perm)] - reference.nodes)

    def coeff_errors(self, reference: PronySignal) -> list:
        perm = match_nodes(self.recovered.nodes, reference.nodes)
        return [np.abs(self.recovered.coeffs[i] - c) if len(self.recovered.coeffs[i]) == len(c) else None
                for i, c in zip(perm, reference.coeffs)]

    def with_reference(self, reference: PronySignal) -> "SolveResult":
        self.matched = match_nodes(self.recovered.nodes, reference.nodes)
        return self

    def to_dict(self) -> dict:
        diag = {k: _jsonable(v) for k, v in self.diagnostics.items()}
        return {
            "method": self.method,
            "converged": self.converged,
            "residual": float(self.residual),
            "recovered": self.recovered.to_dict(),
            "matched": None if self.matched is None else [int(i) for i in self.matched],
            "diagnostics": diag,
        }


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    return v


def match_nodes(recovered, reference) -> tuple:
    """Permutation ``perm`` with ``recovered[perm[j]]`` paired to ``reference[j]``,
    minimizing the total node distance."""
    recovered = np.asarray(recovered, dtype=complex)
    reference = np.asarray(reference, dtype=complex)
    cost = np.abs(reference[:, None] - recovered[None, :])
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(reference), dtype=int)
    perm[rows] = cols
    return tuple(int(i) for i in perm)


def _structure(K, mults, kind):
    mults = [1] * K if mults is None else [int(m) for m in mults]
    if len(mults) != K:
        raise ValueError("need one multiplicity per node")
    if kind is None:
        kind = BASIC if all(m == 1 for m in mults) else POLYNOMIAL
    return mults, kind


def _consecutive(meas: MeasurementVector, need: int, name: str):
    if meas.grid.p != 1:
        raise ValueError(f"{name} takes consecutive samples; wrap it with solve_decimated for p > 1")
    if meas.grid.n < need:
        raise ValueError(f"{name} needs at least {need} samples, got {meas.grid.n}")


def cluster_roots(roots, mults) -> tuple[np.ndarray, list]:
    """Group ``sum(mults)`` roots into one cluster per node and return the
    cluster centroids together with the cluster diameters.

    Larger multiplicities are served first, each taking the tightest subset of
    the roots still available.
    """
    roots = list(np.asarray(roots, dtype=complex))
    if len(roots) != sum(mults):
        raise ValueError("number of roots does not match the multiplicities")
    nodes = np.zeros(len(mults), dtype=complex)
    diameters = [0.0] * len(mults)
    for j in sorted((j for j in range(len(mults)) if mults[j] > 1), key=lambda j: -mults[j]):
        best, best_d = None, math.inf
        for subset in itertools.combinations(range(len(roots)), mults[j]):
            d = max(abs(roots[a] - roots[b]) for a, b in itertools.combinations(subset, 2))
            if d < best_d:
                best, best_d = subset, d
        nodes[j] = np.mean([roots[i] for i in best])
        diameters[j] = best_d
        for i in sorted(best, reverse=True):
            roots.pop(i)
    for j in range(len(mults)):
        if mults[j] == 1:
            nodes[j] = roots.pop(0)
    return nodes, diameters


def basis_matrix(nodes, mults, indices, kind) -> np.ndarray:
    """Columns ``k^l z^k`` (basic/polynomial) or ``(k)_l z^(k-l)`` (confluent), node by node."""
    k = np.asarray(indices)
    kf = k.astype(float)
    cols = []
    for z, m in zip(nodes, mults):
        zk = np.power(complex(z), kf)
        for ell in range(m):
            if kind == CONFLUENT:
                ff = falling_factorial(k, ell)
                col = np.zeros(len(k), dtype=complex)
                live = ff != 0
                col[live] = ff[live] * np.power(complex(z), kf[live] - ell)
            else:
                col = zk * kf**ell
            cols.append(col)
    return np.column_stack(cols)


def fit_coefficients(nodes, mults, values, indices, kind) -> list:
    """Least-squares coefficients for fixed nodes (columns are normalized first)."""
    B = basis_matrix(nodes, mults, indices, kind)
    scale = np.linalg.norm(B, axis=0)
    scale[scale == 0] = 1.0
    sol = np.linalg.lstsq(B / scale, np.asarray(values), rcond=None)[0] / scale
    out, pos = [], 0
    for m in mults:
        out.append(sol[pos:pos + m])
        pos += m
    return out


def _finish(nodes, mults, kind, meas, method, diagnostics) -> SolveResult:
    if kind == POLYNOMIAL:
        nodes = nodes / np.abs(nodes)
    coeffs = fit_coefficients(nodes, mults, meas.values, meas.grid.indices, kind)
    signal = PronySignal(nodes, mults, coeffs, kind)
    resid = np.linalg.norm(evaluate(signal.nodes, signal.coeffs, meas.grid.indices, kind == CONFLUENT) - meas.values)
    return SolveResult(signal, float(resid), method, True, diagnostics)


def solve_classical_prony(meas: MeasurementVector, K: int, mults=None, kind=None) -> SolveResult:
    """Hankel nullspace vector -> characteristic polynomial -> roots -> coefficients."""
    mults, kind = _structure(K, mults, kind)
    C = sum(mults)
    _consecutive(meas, 2 * C, "classical Prony")
    m = meas.values
    n = len(m)
    H = hankel(m[: n - C], m[n - C - 1:])
    _, s, Vh = np.linalg.svd(H)
    if s[C - 1] <= RANK_TOL * s[0]:
        raise SolverError(f"Hankel matrix has numerical rank below {C} (model order mismatch?)")
    q = Vh[-1].conj()
    roots = np.roots(q[::-1])
    nodes, diameters = cluster_roots(roots, mults)
    diag = {
        "hankel_shape": list(H.shape),
        "hankel_condition": float(s[0] / s[C - 1]),
        "cluster_diameters": diameters,
    }
    if any(d > CLUSTER_TOL for d in diameters):
        diag["cluster_warning"] = f"root clusters wider than {CLUSTER_TOL}"
    return _finish(nodes, mults, kind, meas, "prony", diag)


def solve_esprit(meas: MeasurementVector, K: int, mults=None, kind=None, max_iter: int = MAX_ITER) -> SolveResult:
    """Shift invariance of the dominant left singular subspace of the data Hankel matrix.

    Simple nodes come straight from the eigenvalues of the shift operator.
    When a multiplicity exceeds 1 the eigenvalues are clustered and refined
    by :func:`solve_nls`.
    """
    mults, kind = _structure(K, mults, kind)
    C = sum(mults)
    _consecutive(meas, 2 * C, "ESPRIT")
    m = meas.values
    n = len(m)
    L = math.ceil((n + 1) / 2)
    if L < C + 1 or n - L + 1 < C:
        raise ValueError(f"ESPRIT window {L}x{n - L + 1} too small for {C} components")
    H = hankel(m[:L], m[L - 1:])
    U, s, _ = np.linalg.svd(H, full_matrices=False)
    gap = float(s[C - 1] / s[C]) if len(s) > C and s[C] > 0 else math.inf
    if gap < GAP_WARN:
        warnings.warn(f"weak signal/noise subspace separation (gap {gap:.3g})", SubspaceGapWarning, stacklevel=2)
    Us = U[:, :C]
    Phi = np.linalg.lstsq(Us[:-1], Us[1:], rcond=None)[0]
    eig = np.linalg.eigvals(Phi)
    diag = {"window": [L, n - L + 1], "subspace_gap": gap}
    if all(mm == 1 for mm in mults):
        return _finish(eig, mults, kind, meas, "esprit", diag)
    nodes, diameters = cluster_roots(eig, mults)
    diag["cluster_diameters"] = diameters
    start = _finish(nodes, mults, kind, meas, "esprit", diag)
    refined = solve_nls(meas, start.recovered, max_iter=max_iter)
    refined.method = "esprit"
    refined.diagnostics = {**diag, "nls": refined.diagnostics}
    return refined


class _Param:
    """Real parametrization of a signal: coefficients as (re, im), nodes as
    angles for polynomial signals and as (re, im) otherwise."""

    def __init__(self, template: PronySignal):
        self.mults = template.mults
        self.kind = template.kind
        self.angles = template.kind == POLYNOMIAL

    def pack(self, signal: PronySignal) -> np.ndarray:
        out = []
        for z, c in zip(signal.nodes, signal.coeffs):
            for a in c:
                out += [a.real, a.imag]
            out += [np.angle(z)] if self.angles else [z.real, z.imag]
        return np.array(out)

    def unpack(self, theta) -> PronySignal:
        nodes, coeffs, pos = [], [], 0
        for m in self.mults:
            c = theta[pos:pos + 2 * m:2] + 1j * theta[pos + 1:pos + 2 * m:2]
            pos += 2 * m
            if self.angles:
                z = np.exp(1j * theta[pos])
                pos += 1
            else:
                z = theta[pos] + 1j * theta[pos + 1]
                pos += 2
            coeffs.append(c)
            nodes.append(z)
        return PronySignal(nodes, self.mults, coeffs, self.kind)

    def real_jacobian(self, signal: PronySignal, grid: SamplingGrid) -> np.ndarray:
        J = jacobian_direct(signal, grid)
        cols, c = [], 0
        for z, m in zip(signal.nodes, self.mults):
            for _ in range(m):
                cols += [J[:, c], 1j * J[:, c]]
                c += 1
            if self.angles:
                cols.append(1j * z * J[:, c])
            else:
                cols += [J[:, c], 1j * J[:, c]]
            c += 1
        Jc = np.column_stack(cols)
        return np.vstack([Jc.real, Jc.imag])


def solve_nls(meas: MeasurementVector, initial: PronySignal, max_iter: int = MAX_ITER,
              damping_init: float = DAMPING_INIT, step_tol: float = STEP_TOL) -> SolveResult:
    """Levenberg-Marquardt on ``||forward(x) - m||_2`` with the analytic Jacobian.

    Only steps that do not increase the residual are accepted. Stops when the
    step norm drops to ``step_tol`` or after ``max_iter`` iterations.
    """
    if meas.grid.n < initial.R:
        raise ValueError(f"NLS needs at least R = {initial.R} samples, got {meas.grid.n}")
    grid = meas.grid
    par = _Param(initial)
    confluent = initial.kind == CONFLUENT
    target = np.asarray(meas.values)

    def residual(signal):
        r = evaluate(signal.nodes, signal.coeffs, grid.indices, confluent) - target
        return np.concatenate([r.real, r.imag])

    theta = par.pack(initial)
    signal = par.unpack(theta)
    r = residual(signal)
    cost = float(r @ r)
    lam = damping_init
    history = [math.sqrt(cost)]
    converged, reason, it = False, "max_iter", 0
    for it in range(1, max_iter + 1):
        Jr = par.real_jacobian(signal, grid)
        d = np.linalg.norm(Jr, axis=0)
        d[d == 0] = 1.0
        while True:
            A = np.vstack([Jr, math.sqrt(lam) * np.diag(d)])
            b = np.concatenate([-r, np.zeros(len(theta))])
            step = np.linalg.lstsq(A, b, rcond=None)[0]
            trial_theta = theta + step
            try:
                trial = par.unpack(trial_theta)
                rn = residual(trial)
                cost_n = float(rn @ rn)
            except ValueError:
                cost_n = math.inf
            if cost_n <= cost or np.linalg.norm(step) <= step_tol:
                break
            lam *= 4
            if lam > DAMPING_MAX:
                reason = "damping overflow without an accepted step"
                break
        if lam > DAMPING_MAX:
            break
        if cost_n > cost:
            converged, reason = True, "step"
            break
        theta, signal, r, cost = trial_theta, trial, rn, cost_n
        history.append(math.sqrt(cost))
        lam = max(lam / 3, 1e-15)
        if np.linalg.norm(step) <= step_tol:
            converged, reason = True, "step"
            break
    diag = {"iterations": it, "stop": reason, "damping": lam, "residual_history": history}
    return SolveResult(signal, math.sqrt(cost), "nls", converged or reason == "max_iter", diag)


@dataclass
class DecimationPlan:
    """A-priori node approximations and the decimation step built on them."""

    initial_nodes: np.ndarray | None
    p: int
    selection_rule: str = "fixed"

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("decimation step must be positive")
        if self.initial_nodes is not None:
            self.initial_nodes = np.asarray(self.initial_nodes, dtype=complex)
            w = self.initial_nodes**self.p
            K = len(w)
            if K > 1 and min(abs(w[i] - w[j]) for i in range(K) for j in range(i + 1, K)) <= 0:
                raise SolverError(f"aliasing: two initial nodes share the same {self.p}-th power")


def max_decimation(N: int, R: int) -> int:
    """Largest p with ``(R-1) p <= N`` (indices ``0..N``)."""
    return N if R <= 1 else N // (R - 1)


def choose_decimation(initial_nodes, N: int, R: int, p_max: int | None = None) -> DecimationPlan:
    """Grid search for the p maximizing the p-separation of the initial nodes
    (ties go to the larger p) subject to ``p <= floor(N / (R-1))``."""
    nodes = np.asarray(initial_nodes, dtype=complex)
    top = max_decimation(N, R) if p_max is None else min(p_max, max_decimation(N, R))
    best_p, best = 1, -1.0
    for p in range(1, top + 1):
        w = nodes**p
        dp = min((abs(w[i] - w[j]) for i in range(len(w)) for j in range(i + 1, len(w))), default=math.inf)
        if dp >= best:
            best_p, best = p, dp
    return DecimationPlan(nodes, best_p, "max-separation")


def nearest_root(w: complex, p: int, target: complex) -> complex:
    """The p-th root of ``w`` closest to ``target``."""
    r = abs(w) ** (1 / p)
    roots = r * np.exp(1j * (np.angle(w) + 2 * np.pi * np.arange(p)) / p)
    d = np.abs(roots - target)
    order = np.argsort(d)
    if p > 1 and d[order[1]] - d[order[0]] <= AMBIGUITY_TOL:
        raise SolverError(f"ambiguous {p}-th root of {w:.6g} relative to initial node {target:.6g}")
    return complex(roots[order[0]])


SOLVERS = ("prony", "esprit", "nls")


def run_solver(name, meas, K, mults=None, kind=None, initial: PronySignal | None = None, **opts) -> SolveResult:
    mults, kind = _structure(K, mults, kind)
    if name == "prony":
        return solve_classical_prony(meas, K, mults, kind)
    if name == "esprit":
        return solve_esprit(meas, K, mults, kind, **opts)
    if name == "nls":
        if initial is None:
            raise ValueError("NLS needs an initial signal")
        return solve_nls(meas, initial, **opts)
    raise ValueError(f"unknown solver {name!r}")


def initial_nodes_from_prefix(meas: MeasurementVector, K: int, mults=None, kind=None) -> np.ndarray:
    """Node approximations from classical Prony on the shortest usable prefix."""
    mults, kind = _structure(K, mults, kind)
    need = max(sum(mults) + K, 2 * sum(mults))
    prefix = MeasurementVector(meas.values[:need], SamplingGrid(meas.grid.t, 1, need))
    return solve_classical_prony(prefix, K, mults, kind).recovered.nodes


def solve_decimated(meas_full: MeasurementVector, plan: DecimationPlan, inner: str = "nls", K: int | None = None,
                    mults=None, kind=None, **opts) -> SolveResult:
    """Run ``inner`` on the samples ``m_0, m_p, m_2p, ...`` and lift the nodes back.

    The inner solver sees a consecutive system in ``w = z^p`` with coefficients
    ``b_i = a_i p^i``. Each ``w_j`` is mapped to the p-th root nearest to its
    initial node. Polynomial coefficients are unscaled by ``p^i``; confluent
    coefficients are refitted on the true sample indices.
    """
    g = meas_full.grid
    if g.t != 0 or g.p != 1:
        raise ValueError("solve_decimated takes the full grid 0, 1, ..., N")
    if K is None:
        if plan.initial_nodes is None:
            raise ValueError("need K or initial nodes")
        K = len(plan.initial_nodes)
    mults, kind = _structure(K, mults, kind)
    init = plan.initial_nodes
    if init is None:
        init = initial_nodes_from_prefix(meas_full, K, mults, kind)
        plan = DecimationPlan(init, plan.p, plan.selection_rule)
    p = plan.p
    R = sum(mults) + K
    if p > max_decimation(g.n - 1, R):
        raise ValueError(f"p = {p} leaves fewer than R = {R} samples in 0..{g.n - 1}")

    t0 = time.perf_counter()
    dec = meas_full.decimate(p)
    local = MeasurementVector(dec.values, SamplingGrid(0, 1, dec.grid.n), dec.noise_bound)
    start = None
    if inner == "nls":
        w0 = init**p
        if kind == POLYNOMIAL:
            w0 = w0 / np.abs(w0)
        b0 = fit_coefficients(w0, mults, local.values, local.grid.indices, kind)
        start = PronySignal(w0, mults, b0, kind)
    res = run_solver(inner, local, K, mults, kind, initial=start, **opts)
    if p == 1:
        res.diagnostics.update(p=1, samples=local.grid.n, solve_ms=1e3 * (time.perf_counter() - t0))
        return res

    w = res.recovered.nodes
    perm = match_nodes(w, init**p)
    nodes, coeffs = [], []
    for j in range(K):
        i = perm[j]
        z = nearest_root(w[i], p, init[j])
        nodes.append(z / abs(z) if kind == POLYNOMIAL else z)
        coeffs.append(res.recovered.coeffs[i] / float(p) ** np.arange(mults[j]))
    mj = [res.recovered.mults[perm[j]] for j in range(K)]
    if kind == CONFLUENT:
        coeffs = fit_coefficients(nodes, mj, dec.values, dec.grid.indices, kind)
    signal = PronySignal(nodes, mj, coeffs, kind)
    resid = np.linalg.norm(evaluate(signal.nodes, signal.coeffs, dec.grid.indices, kind == CONFLUENT) - dec.values)
    diag = {**res.diagnostics, "p": p, "samples": dec.grid.n, "selection_rule": plan.selection_rule,
            "solve_ms": 1e3 * (time.perf_counter() - t0)}
    return SolveResult(signal, float(resid), res.method, res.converged, diag)
