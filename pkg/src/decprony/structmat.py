"""Structured matrices behind the Prony Jacobians and their factorizations.

Naming follows the usual conventions: ``U`` is the (shifted, decimated)
Pascal-Vandermonde matrix, ``V`` the confluent Vandermonde matrix, ``Q`` the
unipotent shift matrix, ``T`` a diagonal of powers and ``S`` the Stirling
matrix of the second kind.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb, factorial
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .model import CONFLUENT, PronySignal, SamplingGrid, falling_factorial, forward

COND_LIMIT = 1e12


class SingularBlockError(ValueError):
    pass


@dataclass(frozen=True)
class StructuredMatrix:
    """A dense complex matrix together with the recipe that built it."""

    data: np.ndarray
    recipe: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.array(self.data, dtype=complex)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __matmul__(self, other):
        return self.data @ np.asarray(other)

    def __rmatmul__(self, other):
        return np.asarray(other) @ self.data

    def to_csv(self, path) -> None:
        write_matrix_csv(self.data, path)


def _fmt(x: complex) -> str:
    return f"{x.real!r}{'+' if x.imag >= 0 or np.isnan(x.imag) else '-'}{abs(x.imag)!r}i"


def write_matrix_csv(a, path) -> None:
    """One complex entry per cell, written as ``re+imi``."""
    a = np.asarray(a, dtype=complex)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in a:
            w.writerow(_fmt(complex(x)) for x in row)


def read_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[complex(cell.replace("i", "j")) for cell in row] for row in csv.reader(fh)]
    return np.array(rows, dtype=complex)


# --- combinatorial tables -------------------------------------------------

@lru_cache(maxsize=None)
def stirling2(n: int, k: int) -> int:
    """Stirling number of the second kind {n, k}."""
    if n == k:
        return 1
    if k == 0 or k > n:
        return 0
    return k * stirling2(n - 1, k) + stirling2(n - 1, k - 1)


@lru_cache(maxsize=None)
def stirling1(n: int, k: int) -> int:
    """Signed Stirling number of the first kind s(n, k)."""
    if n == k:
        return 1
    if k == 0 or k > n:
        return 0
    return stirling1(n - 1, k - 1) - (n - 1) * stirling1(n - 1, k)


def stirling1_unsigned(n: int, k: int) -> int:
    return abs(stirling1(n, k))


def stirling_matrix(m: int) -> StructuredMatrix:
    """Upper triangular ``S_m`` with ``S[i, j] = {j, i}``."""
    if m < 1:
        raise ValueError("m must be positive")
    data = np.array([[stirling2(j, i) for j in range(m)] for i in range(m)], dtype=float)
    return StructuredMatrix(data, {"name": "S", "m": m})


def stirling_matrix_inverse(m: int) -> StructuredMatrix:
    """Inverse of ``S_m``: signed first-kind numbers ``s(j, i)``."""
    if m < 1:
        raise ValueError("m must be positive")
    data = np.array([[stirling1(j, i) for j in range(m)] for i in range(m)], dtype=float)
    return StructuredMatrix(data, {"name": "S_inv", "m": m})


def shift_matrix_Q(t, r: int) -> StructuredMatrix:
    """``Q_{t,r}[m, n] = (-t)^(n-m) binom(n-1, n-m)`` (1-based), zero below the diagonal.

    ``Q_{t,r}`` is inverted by ``Q_{-t,r}``.
    """
    if r < 1:
        raise ValueError("r must be positive")
    data = np.zeros((r, r), dtype=complex)
    for m in range(r):
        for n in range(m, r):
            data[m, n] = (-t) ** (n - m) * comb(n, n - m)
    return StructuredMatrix(data, {"name": "Q", "t": t, "r": r})


def power_diag_T(x, c: int) -> StructuredMatrix:
    """``diag(1, x, ..., x^(c-1))``."""
    if x == 0:
        raise ValueError("T_{x,c} needs x != 0")
    data = np.diag(complex(x) ** np.arange(c))
    return StructuredMatrix(data, {"name": "T", "x": complex(x), "c": c})


class CoeffBlocks(NamedTuple):
    D: np.ndarray
    E: np.ndarray
    D_inv: np.ndarray
    E_inv: np.ndarray


def coeff_blocks(z: complex, coeffs) -> CoeffBlocks:
    """The ``(l+1) x (l+1)`` blocks ``D_j``, ``E_j`` and their closed-form inverses.

    Both are the identity except in the last column, which holds
    ``(0, a_0, ..., a_{l-1})`` for ``D`` and the same divided by ``z`` for ``E``.
    """
    a = np.asarray(coeffs, dtype=complex)
    ell = len(a)
    lead = a[-1]
    if lead == 0:
        raise SingularBlockError("leading coefficient is zero; D_j and E_j are singular")
    if z == 0:
        raise SingularBlockError("E_j needs a nonzero node")

    D = np.eye(ell + 1, dtype=complex)
    D[1:, -1] = a
    E = np.eye(ell + 1, dtype=complex)
    E[1:, -1] = a / z

    D_inv = np.eye(ell + 1, dtype=complex)
    D_inv[1:ell, -1] = -a[:-1] / lead
    D_inv[-1, -1] = 1 / lead
    E_inv = D_inv.copy()
    E_inv[-1, -1] = z / lead
    return CoeffBlocks(D, E, D_inv, E_inv)


def hankel_block_A(coeffs) -> StructuredMatrix:
    """``A[i, k] = binom(i+k, i) a_{i+k}`` for ``i+k < l`` and zero below the anti-diagonal."""
    a = np.asarray(coeffs, dtype=complex)
    ell = len(a)
    data = np.zeros((ell, ell), dtype=complex)
    for i in range(ell):
        for k in range(ell - i):
            data[i, k] = comb(i + k, i) * a[i + k]
    return StructuredMatrix(data, {"name": "A", "l": ell})


# --- generalized Vandermonde matrices ------------------------------------

def _row_indices(t, p, nrows):
    return t + p * np.arange(nrows)


def pascal_vandermonde(nodes, mults, t: int = 0, p: int = 1, nrows: int | None = None) -> StructuredMatrix:
    """``U_{t,p}``: column block j has entries ``z_j^n n^i`` with ``n = t + kp``."""
    nodes = np.atleast_1d(np.asarray(nodes, dtype=complex))
    mults = [int(m) for m in mults]
    nrows = sum(mults) if nrows is None else nrows
    n = _row_indices(t, p, nrows)
    nf = n.astype(float)
    cols = []
    for z, m in zip(nodes, mults):
        zn = np.power(z, nf)
        for i in range(m):
            cols.append(zn * nf**i)
    data = np.column_stack(cols)
    return StructuredMatrix(data, {"name": "U", "t": t, "p": p, "mults": tuple(mults)})


def confluent_vandermonde(nodes, mults, t: int = 0, p: int = 1, nrows: int | None = None) -> StructuredMatrix:
    """``V_{t,p}``: column block j has entries ``(n)_i z_j^(n-i)`` with ``n = t + kp``."""
    nodes = np.atleast_1d(np.asarray(nodes, dtype=complex))
    mults = [int(m) for m in mults]
    nrows = sum(mults) if nrows is None else nrows
    n = _row_indices(t, p, nrows)
    cols = []
    for z, m in zip(nodes, mults):
        for i in range(m):
            ff = falling_factorial(n, i)
            col = np.zeros(nrows, dtype=complex)
            live = ff != 0
            col[live] = ff[live] * np.power(z, (n[live] - i).astype(float))
            cols.append(col)
    data = np.column_stack(cols)
    return StructuredMatrix(data, {"name": "V", "t": t, "p": p, "mults": tuple(mults)})


def pascal_vandermonde_sharp(nodes, mults, p: int, nrows: int | None = None) -> StructuredMatrix:
    """``U_p^#``: the non-shifted Pascal-Vandermonde matrix on the nodes ``z_j^p``."""
    return pascal_vandermonde(np.asarray(nodes, dtype=complex) ** p, mults, 0, 1, nrows)


def confluent_vandermonde_sharp(nodes, mults, p: int, nrows: int | None = None) -> StructuredMatrix:
    """``V_p^#``: the non-shifted confluent Vandermonde matrix on the nodes ``z_j^p``."""
    return confluent_vandermonde(np.asarray(nodes, dtype=complex) ** p, mults, 0, 1, nrows)


def block_diag(blocks) -> np.ndarray:
    return scipy.linalg.block_diag(*[np.asarray(b, dtype=complex) for b in blocks])


def relative_residual(a, b) -> float:
    """Largest row-scaled discrepancy ``max_r |a_r - b_r|_inf / |a_r|_inf``.

    Rows of these matrices carry a common factor ``z^n`` spanning many orders
    of magnitude, so each row is compared against its own scale.
    """
    a = np.atleast_2d(np.asarray(a, dtype=complex))
    b = np.atleast_2d(np.asarray(b, dtype=complex))
    scale = np.maximum(np.abs(a).max(axis=1), np.abs(b).max(axis=1))
    scale = np.where(scale > 0, scale, np.finfo(float).tiny)
    return float((np.abs(a - b).max(axis=1) / scale).max())


def vandermonde_factorizations_check(nodes, mults, t: int = 0, p: int = 1) -> dict:
    """Residuals of the shift, decimation and Pascal/confluent identities."""
    nodes = np.atleast_1d(np.asarray(nodes, dtype=complex))
    mults = [int(m) for m in mults]

    U_tp = np.asarray(pascal_vandermonde(nodes, mults, t, p))
    U_0p = np.asarray(pascal_vandermonde(nodes, mults, 0, p))
    U_sharp = np.asarray(pascal_vandermonde_sharp(nodes, mults, p))
    V_tp = np.asarray(confluent_vandermonde(nodes, mults, t, p))
    V_sharp = np.asarray(confluent_vandermonde_sharp(nodes, mults, p))

    shift = block_diag([z**t * np.asarray(shift_matrix_Q(-t, m)) for z, m in zip(nodes, mults)])
    dec = block_diag([power_diag_T(p, m) for m in mults])
    to_pascal = block_diag(
        [np.asarray(power_diag_T(z, m)) @ np.asarray(stirling_matrix(m)) for z, m in zip(nodes, mults)]
    )
    to_pascal_sharp = block_diag(
        [np.asarray(power_diag_T(z**p, m)) @ np.asarray(stirling_matrix(m)) for z, m in zip(nodes, mults)]
    )

    out = {
        "shift": relative_residual(U_tp, U_0p @ shift),
        "decimation": relative_residual(U_0p, U_sharp @ dec),
        "pascal_confluent": relative_residual(U_tp, V_tp @ to_pascal),
        "pascal_confluent_sharp": relative_residual(U_sharp, V_sharp @ to_pascal_sharp),
    }
    if len(nodes) == 1:
        z, m = nodes[0], mults[0]
        rhs = np.asarray(power_diag_T(z ** (p - 1), m)) @ np.asarray(pascal_vandermonde([z], [m]))
        out["single_node"] = relative_residual(U_sharp, rhs)
    return out


# --- inverse confluent Vandermonde row norms ------------------------------

def min_separation(nodes) -> float:
    nodes = np.atleast_1d(np.asarray(nodes, dtype=complex))
    if len(nodes) < 2:
        return np.inf
    d = np.abs(nodes[:, None] - nodes[None, :])
    return float(d[np.triu_indices(len(nodes), 1)].min())


def row_norm_bound(delta: float, N: int, ell_j: int, k: int) -> float:
    """``(2/delta)^N (2/k!) (1/2 + N/delta)^(l_j - 1 - k)``."""
    return (2 / delta) ** N * 2 / factorial(k) * (0.5 + N / delta) ** (ell_j - 1 - k)


@dataclass(frozen=True)
class RowNormCheck:
    exact: float
    bound: float
    condition: float

    @property
    def reliable(self) -> bool:
        return self.condition <= COND_LIMIT

    @property
    def holds(self) -> bool:
        return self.reliable and self.exact <= self.bound


def inverse_row_norms(nodes, mults) -> tuple[np.ndarray, float]:
    """l1 norms of all rows of ``V_{0,1}^{-1}`` (LU with partial pivoting) and cond(V)."""
    V = np.asarray(confluent_vandermonde(nodes, mults))
    cond = float(np.linalg.cond(V))
    lu = scipy.linalg.lu_factor(V)
    inv = scipy.linalg.lu_solve(lu, np.eye(V.shape[0], dtype=complex))
    return np.abs(inv).sum(axis=1), cond


def inverse_row_norm(nodes, mults, j: int, k: int) -> RowNormCheck:
    """Exact l1 norm of row ``u_{j,k}`` of ``V_{0,1}^{-1}`` and its theoretical bound.

    When ``V`` is too ill-conditioned to trust, ``exact`` is NaN and
    ``reliable`` is False; the bound is returned regardless.
    """
    mults = [int(m) for m in mults]
    if not 0 <= k < mults[j]:
        raise ValueError(f"k must lie in [0, {mults[j]})")
    N = sum(mults)
    bound = row_norm_bound(min_separation(nodes), N, mults[j], k) if len(mults) > 1 else np.nan
    norms, cond = inverse_row_norms(nodes, mults)
    exact = float(norms[sum(mults[:j]) + k]) if cond <= COND_LIMIT else np.nan
    return RowNormCheck(exact, bound, cond)


def h_derivatives(nodes, mults, j: int, kmax: int) -> np.ndarray:
    """``h_j^(k)(x_j)`` for k = 0..kmax, where ``h_j(x) = prod_{i != j} (x - x_i)^(-l_i)``.

    Uses the logarithmic derivative ``h' = h g`` with ``g = sum -l_i / (x - x_i)``
    expanded by the Leibniz rule.
    """
    nodes = np.atleast_1d(np.asarray(nodes, dtype=complex))
    xj = nodes[j]
    others = [(nodes[i], mults[i]) for i in range(len(nodes)) if i != j]

    def g_deriv(m):
        # d^m/dx^m of -l/(x - xi) is (-1)^(m+1) m! l / (x - xi)^(m+1)
        return sum((-1) ** (m + 1) * factorial(m) * li / (xj - xi) ** (m + 1) for xi, li in others)

    h = np.zeros(kmax + 1, dtype=complex)
    h[0] = np.prod([(xj - xi) ** (-li) for xi, li in others]) if others else 1.0
    for k in range(1, kmax + 1):
        h[k] = sum(comb(k - 1, r) * h[r] * g_deriv(k - 1 - r) for r in range(k))
    return h


def h_derivative_bound(delta: float, N: int, k: int) -> float:
    """``N (N+1) ... (N+k-1) delta^(-N-k)``."""
    rising = 1.0
    for i in range(k):
        rising *= N + i
    return rising * delta ** (-N - k)


def h_derivative_bound_check(nodes, mults, j: int, kmax: int) -> list[dict]:
    """Compare ``|h_j^(k)(x_j)|`` with its bound for k = 0..kmax."""
    N = sum(int(m) for m in mults)
    delta = min_separation(nodes)
    h = h_derivatives(nodes, mults, j, kmax)
    rows = []
    for k in range(kmax + 1):
        value = float(abs(h[k]))
        bound = h_derivative_bound(delta, N, k)
        rows.append({"k": k, "value": value, "bound": bound, "holds": value <= bound * (1 + 1e-12)})
    return rows


# --- data matrices ---------------------------------------------------------

def data_matrix(signal: PronySignal, t: int = 0, p: int = 1) -> StructuredMatrix:
    """The ``C x C`` Hankel matrix ``[m_{t + (i+k) p}]``."""
    C = signal.C
    m = forward(signal, SamplingGrid(t, p, 2 * C - 1)).values
    data = scipy.linalg.hankel(m[:C], m[C - 1:])
    return StructuredMatrix(data, {"name": "M", "kind": signal.kind, "t": t, "p": p})


def data_matrix_factorization_check(signal: PronySignal, t: int = 0, p: int = 1) -> float:
    """Residual of ``M = V_{t,p} diag(A_j) V_{0,p}^T`` (``U`` in place of ``V`` for polynomial systems)."""
    M = np.asarray(data_matrix(signal, t, p))
    build = confluent_vandermonde if signal.kind == CONFLUENT else pascal_vandermonde
    left = np.asarray(build(signal.nodes, signal.mults, t, p))
    right = np.asarray(build(signal.nodes, signal.mults, 0, p))
    A = block_diag([hankel_block_A(c) for c in signal.coeffs])
    return relative_residual(M, left @ A @ right.T)


def upper_triangular_chain_bound(B, As, c, j: int) -> tuple[float, float]:
    """``|d_j|`` for ``d = B A_k ... A_1 c`` and the product bound on it.

    ``As`` is ordered ``[A_1, ..., A_k]`` and ``j`` is zero-based, so ``n - j``
    counts the indices ``>= j``. Diagonal factors contribute no count factor.
    """
    B = np.asarray(B, dtype=complex)
    c = np.asarray(c, dtype=complex)
    n = B.shape[0]
    d = c
    for A in As:
        d = np.asarray(A, dtype=complex) @ d
    d = B @ d
    diagonal = sum(1 for A in As if np.count_nonzero(np.triu(np.asarray(A), 1)) == 0)
    alphas = [np.abs(np.asarray(A)[j:, j:]).max() for A in As]
    bound = (
        (n - j) ** (len(As) - diagonal)
        * np.abs(c[j:]).max()
        * np.abs(B[j, j:]).sum()
        * float(np.prod(alphas))
    )
    return float(abs(d[j])), float(bound)
