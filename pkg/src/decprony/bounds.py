"""Closed-form stability bounds, improvement factors and comparator estimates."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from math import comb, factorial

import numpy as np

from .jacobian import SingularJacobianError, inverse_jacobian_rows
from .model import BASIC, CONFLUENT, POLYNOMIAL, PronySignal, SamplingGrid
from .structmat import stirling1_unsigned, stirling2

SEPARATION_FLOOR = 1e-6
# float slack when comparing a bound against an exact value it can equal
DOMINANCE_RTOL = 1e-9


def separation(nodes, p: int = 1) -> tuple[float, float]:
    """``(delta, delta_p)``: minimal distance between nodes and between their p-th powers."""
    nodes = np.atleast_1d(np.asarray(nodes, dtype=complex))
    if len(nodes) < 2:
        return math.inf, math.inf
    iu = np.triu_indices(len(nodes), 1)
    d = np.abs(nodes[:, None] - nodes[None, :])[iu]
    w = nodes**p
    dp = np.abs(w[:, None] - w[None, :])[iu]
    return float(d.min()), float(dp.min())


def constant_C1(ell: int, ell_j: int) -> float:
    if not 0 <= ell <= ell_j - 1:
        raise ValueError("need 0 <= ell <= ell_j - 1")
    return (
        2 / factorial(ell)
        * (ell_j - ell) ** 3
        * max(1, comb(ell_j - 1, ell_j - ell))
        * max(1, stirling1_unsigned(ell_j, ell))
    )


def constant_C2(ell: int, ell_j: int) -> float:
    if not 0 <= ell <= ell_j - 1:
        raise ValueError("need 0 <= ell <= ell_j - 1")
    return (
        2 / factorial(ell)
        * (ell_j - ell) ** 4
        * max(1, comb(ell_j - 1, ell_j - ell))
        * max(1, stirling1_unsigned(ell_j, ell))
        * max(1, stirling2(ell_j, ell))
    )


def _separation_factors(delta_p: float, R: int) -> tuple[float, float]:
    """``(2/delta_p)^R`` and ``1/2 + R/delta_p``.

    A single node has no separation; its first factor is taken as 1 and the
    second as ``1/2 + R/2`` (the value at the largest separation, 2, on the
    closed unit disk).
    """
    if math.isinf(delta_p):
        return 1.0, 0.5 + R / 2
    if delta_p == 0:
        return math.inf, math.inf
    return (2 / delta_p) ** R, 0.5 + R / delta_p


@dataclass
class StabilityReport:
    kind: str
    labels: list
    bound: np.ndarray
    exact: np.ndarray
    delta: float
    delta_p: float
    rho: list
    t: int
    p: int
    eps: float
    regular: bool = True
    failures: list = field(default_factory=list)

    @property
    def ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.bound / self.exact

    @property
    def dominance(self) -> np.ndarray:
        return self.bound >= self.exact * (1 - DOMINANCE_RTOL)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bound"] = [float(b) for b in self.bound]
        d["exact"] = [float(e) for e in self.exact]
        d["dominance"] = [bool(x) for x in self.dominance]
        return d

    def rows(self, seed=None) -> list[dict]:
        return [
            {
                "param_id": lab,
                "kind": self.kind,
                "bound": float(b),
                "exact": float(e),
                "ratio": float(r),
                "delta": self.delta,
                "delta_p": self.delta_p,
                "t": self.t,
                "p": self.p,
                "eps": self.eps,
                "seed": seed,
            }
            for lab, b, e, r in zip(self.labels, self.bound, self.exact, self.ratio)
        ]


def _theoretical(signal: PronySignal, t: int, p: int, eps: float, confluent: bool) -> np.ndarray:
    R = signal.R
    _, delta_p = separation(signal.nodes, p)
    sep, lin = _separation_factors(delta_p, R)
    out = []
    for z, coeffs in zip(signal.nodes, signal.coeffs):
        ell_j = len(coeffs)
        lead = abs(coeffs[-1])
        az = abs(z)
        for ell in range(ell_j):
            prev = abs(coeffs[ell - 1]) if ell > 0 else 0.0
            shift = max(1.0, float(t) ** (ell_j - ell))
            if confluent:
                const = constant_C2(ell, ell_j) * az ** (ell - t - p * ell_j)
            else:
                const = constant_C1(ell, ell_j)
            out.append(const * sep * lin ** (ell_j - ell) * (1 + prev / lead) * shift / p**ell * eps)
        node = 2 / factorial(ell_j) * sep / (lead * p**ell_j) * eps
        if confluent:
            node *= az ** (ell_j - t - p * ell_j)
        out.append(node)
    return np.array(out)


def _report(signal, t, p, eps, confluent):
    kind = CONFLUENT if confluent else (signal.kind if signal.kind != CONFLUENT else POLYNOMIAL)
    delta, delta_p = separation(signal.nodes, p)
    bound = _theoretical(signal, t, p, eps, confluent)
    grid = SamplingGrid(t, p, signal.R)
    target = signal
    if confluent and signal.kind != CONFLUENT:
        target = PronySignal(signal.nodes, signal.mults, signal.coeffs, CONFLUENT)
    try:
        exact = inverse_jacobian_rows(target, grid).acc_loc(eps)
        regular, failures = True, []
    except SingularJacobianError as err:
        exact = np.full(signal.R, np.nan)
        regular, failures = False, err.failures or [str(err)]
    rho = [improvement_rho(signal, j, p) if signal.K > 1 else math.nan for j in range(signal.K)]
    return StabilityReport(kind, signal.param_labels(), bound, exact, delta, delta_p, rho, t, p, eps, regular, failures)


def bound_polynomial(signal: PronySignal, t: int, p: int, eps: float) -> StabilityReport:
    """Per-parameter accuracy bounds for the polynomial map next to the exact values."""
    if signal.kind == CONFLUENT:
        raise ValueError("bound_polynomial needs a basic or polynomial signal")
    return _report(signal, t, p, eps, confluent=False)


def bound_confluent(signal: PronySignal, t: int, p: int, eps: float) -> StabilityReport:
    """Per-parameter accuracy bounds for the confluent map; nodes must satisfy ``0 < |z| <= 1``."""
    if np.any(np.abs(signal.nodes) > 1 + 1e-12):
        raise ValueError("the confluent bound needs |z_j| <= 1")
    if signal.kind == POLYNOMIAL and any(m > 1 for m in signal.mults):
        raise ValueError("bound_confluent needs a basic or confluent signal")
    return _report(signal, t, p, eps, confluent=True)


def improvement_rho(signal: PronySignal, j: int, p: int) -> float:
    """``(delta_p / delta)^R p^(l_j)``: non-decimated over decimated error amplification."""
    delta, delta_p = separation(signal.nodes, p)
    if signal.K < 2:
        raise ValueError("the improvement function needs at least two nodes")
    if p == 1:
        return 1.0
    return (delta_p / delta) ** signal.R * float(p) ** signal.mults[j]


def improvement_rho_two_nodes(xi: float, p: int, R: int, ell_j: int) -> float:
    """Closed form for nodes ``1`` and ``exp(-i xi)``."""
    return abs(math.sin(p * xi / 2) / math.sin(xi / 2)) ** R * float(p) ** ell_j


def accuracy_increases(signal: PronySignal, j: int, p: int) -> bool:
    """``p^(-l_j) / delta_p^R < 1 / delta^R``."""
    delta, delta_p = separation(signal.nodes, p)
    R = signal.R
    return float(p) ** (-signal.mults[j]) / delta_p**R < 1 / delta**R


def alpha(r: float) -> float:
    """``sqrt(2 (1 - cos r)) / r``, written as ``2 sin(r/2) / r`` to keep precision near 0."""
    if not 0 < r < 2 * math.pi:
        raise ValueError("alpha is defined on (0, 2 pi)")
    return 2 * math.sin(r / 2) / r


def superres_check(delta0: float, p: int, r0: float, R: int = 4, ell_j: int = 1, xi1: float = 0.0) -> dict:
    """Check ``delta_p > alpha(r0) p delta0`` and ``rho > alpha(r0)^R p^(R + l_j)``
    for the two nodes ``exp(i xi1)``, ``exp(i (xi1 + delta0))``."""
    if not p * delta0 < r0:
        raise ValueError("need p * delta0 < r0")
    nodes = np.exp(1j * np.array([xi1, xi1 + delta0]))
    delta, delta_p = separation(nodes, p)
    a = alpha(r0)
    rho = (delta_p / delta) ** R * float(p) ** ell_j
    lemma = delta_p > a * p * delta0
    corollary = rho > a**R * float(p) ** (R + ell_j)
    return {
        "delta0": delta0,
        "p": p,
        "r0": r0,
        "delta_p": delta_p,
        "lemma_rhs": a * p * delta0,
        "rho": rho,
        "corollary_rhs": a**R * float(p) ** (R + ell_j),
        "lemma": bool(lemma),
        "corollary": bool(corollary),
    }


def corollary_witness(xi: float, n: int, R: int, ell_j: int = 1) -> dict:
    """Find ``p0`` in ``(n, n + ceil(2 pi / xi)]`` with ``|sin(p0 xi / 2)| > 1/2``
    and check ``rho(p0) >= p0^(l_j) / (2 sin(xi/2))^R`` there."""
    for p0 in range(n + 1, n + math.ceil(2 * math.pi / xi) + 1):
        if abs(math.sin(p0 * xi / 2)) > 0.5:
            rho = improvement_rho_two_nodes(xi, p0, R, ell_j)
            rhs = float(p0) ** ell_j / (2 * math.sin(xi / 2)) ** R
            return {"found": True, "p0": p0, "rho": rho, "rhs": rhs, "holds": rho >= rhs * (1 - 1e-12)}
    return {"found": False, "p0": None, "rho": math.nan, "rhs": math.nan, "holds": False}


@dataclass
class ComparatorReport:
    values: dict
    inputs: dict

    def to_dict(self) -> dict:
        return {"values": self.values, "inputs": self.inputs}


def crb_node_small(sigma: float, lead: float) -> float:
    return sigma**2 / abs(lead) ** 2


def crb_node_asymptotic(sigma: float, lead: float, N: float, ell_j: int) -> float:
    return sigma**2 / (abs(lead) ** 2 * float(N) ** (2 * ell_j + 1))


def crb_coeff_asymptotic(sigma: float, N: float, ell: int) -> float:
    return sigma**2 / float(N) ** (2 * ell + 1)


def crb_comparators(signal: PronySignal, sigma: float, N: int, c1: float = 1.0, c2: float = 1.0) -> ComparatorReport:
    """Small-sample and asymptotic Cramer-Rao estimates for every parameter.

    ``c1`` and ``c2`` are the unspecified model constants of the small-sample
    coefficient estimate.
    """
    if sigma <= 0 or N < 1:
        raise ValueError("need sigma > 0 and N >= 1")
    small, asym = {}, {}
    for j, (coeffs, ell_j) in enumerate(zip(signal.coeffs, signal.mults)):
        lead = coeffs[-1]
        small[f"z[{j}]"] = crb_node_small(sigma, lead)
        asym[f"z[{j}]"] = crb_node_asymptotic(sigma, lead, N, ell_j)
        for ell in range(1, ell_j):
            ratio = coeffs[ell - 1] / lead
            small[f"a[{ell},{j}]"] = sigma**2 * (c1 * abs(ratio) ** 2 + c2 * ratio.real + 1)
            asym[f"a[{ell},{j}]"] = crb_coeff_asymptotic(sigma, N, ell)
    return ComparatorReport({"small_sample": small, "asymptotic": asym}, {"sigma": sigma, "N": N, "c1": c1, "c2": c2})


def decimation_step(R: int, Omega: float) -> int:
    return int(math.floor(Omega / (2 * R - 1)))


def donoho_comparators(R: int, Omega: float, Delta: float, eps: float, C1: float | None = None) -> ComparatorReport:
    """Prony-side estimates for ``R`` spikes with separation ``Delta`` and cutoff ``Omega``.

    The undecimated estimate uses the samples ``0..2R-1``; the decimated one uses
    step ``p = floor(Omega / (2R - 1))`` with ``r0 = 1/2``. ``C1`` defaults to the
    basic-system constant ``C1(0, 1) = 2``.
    """
    if not Omega > 2 * math.pi:
        raise ValueError("need Omega > 2 pi")
    C1 = constant_C1(0, 1) if C1 is None else C1
    p = decimation_step(R, Omega)
    if not p * Delta < 0.5:
        raise ValueError(f"precondition p * Delta < 1/2 fails (p={p}, Delta={Delta})")
    C2 = alpha(0.5)
    plain_exact = C1 * (2 / Delta) ** (2 * R) * (0.5 + 2 * R / Delta) * eps
    plain = C1 * R * 4 ** (R + 1) * (1 / Delta) ** (2 * R + 1) * eps
    eff = C2 * Delta * Omega / (2 * R - 1)
    dec_exact = C1 * (2 / eff) ** (2 * R) * (0.5 + 2 * R / eff) * eps
    dec = C1 * R * (4 / C2) ** (R + 1) * (2 * R - 1) ** (2 * R + 1) * (1 / (Delta * Omega)) ** (2 * R + 1) * eps
    return ComparatorReport(
        {
            "undecimated": plain,
            "undecimated_unsimplified": plain_exact,
            "decimated": dec,
            "decimated_unsimplified": dec_exact,
            "p": p,
            "C2": C2,
        },
        {"R": R, "Omega": Omega, "Delta": Delta, "eps": eps, "C1": C1},
    )


@dataclass
class SweepConfig:
    points: int = 1000
    seed: int = 0
    max_nodes: int = 3
    max_mult: int = 3
    min_delta: float = 0.1
    min_lead: float = 0.1
    max_t: int = 10
    max_p: int = 20
    eps: float = 1.0
    kind: str = POLYNOMIAL
    min_modulus: float = 0.5


@dataclass
class SweepReport:
    config: SweepConfig
    evaluated: int
    excluded: int
    violations: list
    rows: list

    @property
    def passed(self) -> bool:
        return self.evaluated > 0 and not self.violations


def random_signal(rng: np.random.Generator, kind: str, max_nodes=3, max_mult=3, min_delta=0.1,
                  min_lead=0.1, min_modulus=0.5) -> PronySignal:
    """Random signal with separated nodes and leading coefficients bounded away from zero.

    Basic and polynomial signals get unit-modulus nodes; confluent ones get
    moduli in ``[min_modulus, 1]``.
    """
    K = int(rng.integers(1, max_nodes + 1))
    mults = [1] * K if kind == BASIC else [int(m) for m in rng.integers(1, max_mult + 1, K)]
    while True:
        angles = rng.uniform(0, 2 * np.pi, K)
        radii = np.ones(K) if kind in (BASIC, POLYNOMIAL) else rng.uniform(min_modulus, 1, K)
        nodes = radii * np.exp(1j * angles)
        if separation(nodes)[0] >= min_delta:
            break
    coeffs = []
    for m in mults:
        c = rng.normal(size=m) + 1j * rng.normal(size=m)
        while abs(c[-1]) < min_lead:
            c[-1] = rng.normal() + 1j * rng.normal()
        coeffs.append(c)
    if kind == POLYNOMIAL and all(m == 1 for m in mults):
        kind = BASIC
    return PronySignal(nodes, mults, coeffs, kind)


def dominance_sweep(config: SweepConfig | None = None) -> SweepReport:
    """Compare the closed-form bounds with the exact accuracies at ``config.points`` random regular points.

    Draws whose p-separation is below ``1e-6`` or whose Jacobian is numerically
    singular are skipped, counted in ``excluded`` and replaced by fresh draws.
    """
    config = config or SweepConfig()
    rng = np.random.default_rng(config.seed)
    confluent = config.kind == CONFLUENT
    evaluated = excluded = 0
    violations, rows = [], []
    i = -1
    while evaluated < config.points:
        i += 1
        signal = random_signal(rng, config.kind, config.max_nodes, config.max_mult, config.min_delta,
                               config.min_lead, config.min_modulus)
        t = int(rng.integers(0, config.max_t + 1))
        p = int(rng.integers(1, config.max_p + 1))
        if separation(signal.nodes, p)[1] <= SEPARATION_FLOOR:
            excluded += 1
            continue
        report = bound_confluent(signal, t, p, config.eps) if confluent else bound_polynomial(signal, t, p, config.eps)
        if not report.regular:
            excluded += 1
            continue
        evaluated += 1
        point_rows = report.rows(seed=config.seed)
        for r in point_rows:
            r["point"] = i
        rows.extend(point_rows)
        if not report.dominance.all():
            violations.append({"point": i, "signal": signal.to_dict(), "t": t, "p": p, "report": report.to_dict()})
    return SweepReport(config, evaluated, excluded, violations, rows)
