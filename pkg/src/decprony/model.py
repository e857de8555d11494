"""Signals, sampling grids and the forward measurement maps.

Parameters of a signal are laid out node by node as
``(a_{0,j}, ..., a_{l_j-1,j}, z_j)``, which is also the column order of
every Jacobian built in :mod:`decprony.jacobian`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

BASIC = "basic"
POLYNOMIAL = "polynomial"
CONFLUENT = "confluent"
KINDS = (BASIC, POLYNOMIAL, CONFLUENT)

UNIT_CIRCLE_TOL = 1e-12
REGULARITY_TOL = 1e-12


def falling_factorial(k, ell):
    """(k)_ell = k (k-1) ... (k-ell+1), with (k)_0 = 1.

    Works elementwise on integer arrays and returns floats.
    """
    k = np.asarray(k, dtype=float)
    out = np.ones(k.shape)
    for i in range(int(ell)):
        out = out * (k - i)
    return out if out.ndim else float(out)


def _frozen(a, dtype=complex):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PronySignal:
    nodes: np.ndarray
    mults: tuple
    coeffs: tuple
    kind: str = BASIC

    def __post_init__(self):
        nodes = _frozen(np.atleast_1d(self.nodes))
        mults = tuple(int(m) for m in self.mults)
        coeffs = tuple(_frozen(np.atleast_1d(c)) for c in self.coeffs)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "mults", mults)
        object.__setattr__(self, "coeffs", coeffs)

        if self.kind not in KINDS:
            raise ValueError(f"unknown signal kind {self.kind!r}")
        if nodes.ndim != 1 or len(nodes) < 1:
            raise ValueError("a signal needs at least one node")
        if len(mults) != len(nodes) or len(coeffs) != len(nodes):
            raise ValueError("nodes, mults and coeffs must have one entry per node")
        if any(m < 1 for m in mults):
            raise ValueError("multiplicities must be positive")
        for m, c in zip(mults, coeffs):
            if c.shape != (m,):
                raise ValueError(f"expected {m} coefficients for a node, got {c.shape}")
        if np.any(nodes == 0):
            raise ValueError("nodes must be nonzero")
        if self.kind == BASIC and any(m != 1 for m in mults):
            raise ValueError("basic signals have all multiplicities equal to 1")
        if self.kind == POLYNOMIAL and np.any(np.abs(np.abs(nodes) - 1) > UNIT_CIRCLE_TOL):
            raise ValueError("polynomial signals need nodes on the unit circle")

    @property
    def K(self) -> int:
        return len(self.nodes)

    @property
    def C(self) -> int:
        return sum(self.mults)

    @property
    def R(self) -> int:
        return self.C + self.K

    def leading(self, j: int) -> complex:
        return complex(self.coeffs[j][-1])

    def params(self) -> np.ndarray:
        """Flat parameter vector, blockwise ``(a_0, ..., a_{l-1}, z)`` per node."""
        parts = []
        for z, c in zip(self.nodes, self.coeffs):
            parts.extend(c)
            parts.append(z)
        return np.array(parts, dtype=complex)

    def param_labels(self) -> list[str]:
        labels = []
        for j, m in enumerate(self.mults):
            labels.extend(f"a[{ell},{j}]" for ell in range(m))
            labels.append(f"z[{j}]")
        return labels

    def with_params(self, x, kind: str | None = None) -> "PronySignal":
        """Rebuild a signal of the same structure from a flat parameter vector."""
        x = np.asarray(x, dtype=complex)
        if x.shape != (self.R,):
            raise ValueError(f"expected {self.R} parameters, got {x.shape}")
        nodes, coeffs = split_params(x, self.mults)
        return PronySignal(nodes, self.mults, coeffs, kind or self.kind)

    def scaled(self, c: complex) -> "PronySignal":
        return PronySignal(self.nodes, self.mults, [c * a for a in self.coeffs], self.kind)

    def to_dict(self) -> dict:
        return {
            "nodes": [[float(z.real), float(z.imag)] for z in self.nodes],
            "mults": list(self.mults),
            "coeffs": [[[float(a.real), float(a.imag)] for a in c] for c in self.coeffs],
            "kind": self.kind,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PronySignal":
        nodes = [complex(re, im) for re, im in d["nodes"]]
        coeffs = [[complex(re, im) for re, im in c] for c in d["coeffs"]]
        return cls(nodes, d["mults"], coeffs, d.get("kind", BASIC))

    def __eq__(self, other):
        if not isinstance(other, PronySignal):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.mults == other.mults
            and np.array_equal(self.nodes, other.nodes)
            and all(np.array_equal(a, b) for a, b in zip(self.coeffs, other.coeffs))
        )

    __hash__ = None


@dataclass(frozen=True)
class SamplingGrid:
    """The index set ``{t, t+p, ..., t+(n-1)p}``."""

    t: int = 0
    p: int = 1
    n: int = 1

    def __post_init__(self):
        for name in ("t", "p", "n"):
            v = getattr(self, name)
            if int(v) != v:
                raise ValueError(f"grid field {name} must be an integer")
            object.__setattr__(self, name, int(v))
        if self.t < 0:
            raise ValueError("grid start t must be non-negative")
        if self.p < 1 or self.n < 1:
            raise ValueError("grid step p and count n must be positive")

    @classmethod
    def square(cls, signal: PronySignal, t: int = 0, p: int = 1) -> "SamplingGrid":
        return cls(t, p, signal.R)

    @property
    def indices(self) -> np.ndarray:
        return self.t + self.p * np.arange(self.n)

    def to_dict(self) -> dict:
        return {"t": self.t, "p": self.p, "n": self.n}

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingGrid":
        return cls(d.get("t", 0), d.get("p", 1), d["n"])


@dataclass(frozen=True)
class MeasurementVector:
    values: np.ndarray
    grid: SamplingGrid
    noise_bound: float | None = 0.0

    def __post_init__(self):
        values = _frozen(np.atleast_1d(self.values))
        object.__setattr__(self, "values", values)
        if len(values) != self.grid.n:
            raise ValueError(f"{len(values)} values for a grid of {self.grid.n} samples")

    def decimate(self, p: int) -> "MeasurementVector":
        """Keep every ``p``-th sample, starting from the first."""
        g = self.grid
        n = (g.n - 1) // p + 1
        return MeasurementVector(self.values[::p][:n], SamplingGrid(g.t, g.p * p, n), self.noise_bound)


@dataclass(frozen=True)
class NoiseSpec:
    """``law`` is ``"uniform"`` (real and imaginary parts uniform on
    ``[-level, level]``) or ``"gaussian"`` (each part ``N(0, level**2 / 2)``)."""

    law: str = "uniform"
    level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.law not in ("uniform", "gaussian"):
            raise ValueError(f"unknown noise law {self.law!r}")
        if self.level < 0:
            raise ValueError("noise level must be non-negative")

    def sample(self, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
        rng = rng if rng is not None else np.random.default_rng(self.seed)
        if self.law == "uniform":
            return rng.uniform(-self.level, self.level, n) + 1j * rng.uniform(-self.level, self.level, n)
        s = self.level / np.sqrt(2)
        return rng.normal(0, s, n) + 1j * rng.normal(0, s, n)


def add_noise(meas: MeasurementVector, noise: NoiseSpec, rng=None) -> MeasurementVector:
    delta = noise.sample(meas.grid.n, rng)
    bound = noise.level if noise.law == "uniform" else None
    return MeasurementVector(meas.values + delta, meas.grid, bound)


def evaluate(nodes, coeffs, indices, confluent: bool = False) -> np.ndarray:
    """Samples of the exponential sum at integer ``indices`` without any
    validation of the parameters (used for perturbation studies)."""
    k = np.asarray(indices)
    kf = k.astype(float)
    m = np.zeros(len(k), dtype=complex)
    for z, a in zip(nodes, coeffs):
        z = complex(z)
        if confluent:
            for ell, c in enumerate(a):
                ff = falling_factorial(k, ell)
                live = ff != 0
                term = np.zeros(len(k), dtype=complex)
                term[live] = ff[live] * np.power(z, kf[live] - ell)
                m += c * term
        else:
            amp = np.zeros(len(k), dtype=complex)
            for ell, c in enumerate(a):
                amp += c * kf**ell
            m += amp * np.power(z, kf)
    return m


def split_params(x, mults) -> tuple[list, list]:
    """Inverse of :meth:`PronySignal.params`: ``(nodes, coeffs)``."""
    nodes, coeffs, pos = [], [], 0
    for m in mults:
        coeffs.append(np.asarray(x[pos:pos + m]))
        nodes.append(x[pos + m])
        pos += m + 1
    return nodes, coeffs


def forward_polynomial(signal: PronySignal, grid: SamplingGrid) -> MeasurementVector:
    """m_k = sum_j z_j^k sum_l a_{l,j} k^l on the grid indices (0^0 = 1)."""
    if signal.kind == CONFLUENT:
        raise ValueError("forward_polynomial does not accept confluent signals")
    return MeasurementVector(evaluate(signal.nodes, signal.coeffs, grid.indices), grid, 0.0)


def forward_confluent(signal: PronySignal, grid: SamplingGrid) -> MeasurementVector:
    """m_k = sum_j sum_l a_{l,j} (k)_l z_j^{k-l} on the grid indices."""
    if signal.kind == POLYNOMIAL and any(m > 1 for m in signal.mults):
        raise ValueError("forward_confluent does not accept polynomial signals")
    return MeasurementVector(evaluate(signal.nodes, signal.coeffs, grid.indices, True), grid, 0.0)


def forward(signal: PronySignal, grid: SamplingGrid) -> MeasurementVector:
    if signal.kind == CONFLUENT:
        return forward_confluent(signal, grid)
    return forward_polynomial(signal, grid)


def regularity_failures(signal: PronySignal, p: int, tol: float = REGULARITY_TOL) -> list[str]:
    """Names of the violated regularity conditions (empty when regular)."""
    failures = []
    w = signal.nodes**p
    K = signal.K
    if any(abs(w[i] - w[j]) <= tol for i in range(K) for j in range(i + 1, K)):
        failures.append("condition 1: z_i^p == z_j^p for some i != j")
    if any(abs(c[-1]) <= tol for c in signal.coeffs):
        failures.append("condition 2: a leading coefficient a_{l_j-1,j} vanishes")
    return failures


def is_regular_point(signal: PronySignal, p: int, tol: float = REGULARITY_TOL) -> bool:
    return not regularity_failures(signal, p, tol)


def change_of_variables_nonshifted(signal: PronySignal, p: int) -> PronySignal:
    """Map a non-shifted decimated system to a non-decimated one:
    ``b_{i,j} = a_{i,j} p^i`` and ``w_j = z_j^p``."""
    if signal.kind == CONFLUENT:
        raise ValueError("the change of variables applies to polynomial systems")
    coeffs = [c * float(p) ** np.arange(len(c)) for c in signal.coeffs]
    return PronySignal(signal.nodes**p, signal.mults, coeffs, signal.kind)


def load_signal(path) -> PronySignal:
    with open(path) as fh:
        return PronySignal.from_dict(json.load(fh))


def save_signal(signal: PronySignal, path) -> None:
    with open(path, "w") as fh:
        json.dump(signal.to_dict(), fh, indent=2)
        fh.write("\n")


def signal_from_arrays(nodes: Sequence[complex], coeffs: Sequence[Sequence[complex]], kind=None) -> PronySignal:
    """Convenience constructor that infers multiplicities from the coefficient lists."""
    mults = [len(c) for c in coeffs]
    if kind is None:
        kind = BASIC if all(m == 1 for m in mults) else POLYNOMIAL
    return PronySignal(nodes, mults, coeffs, kind)
