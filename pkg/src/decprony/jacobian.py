"""Jacobians of the polynomial and confluent measurement maps.

Each Jacobian is assembled three ways: analytic partial derivatives, the
structured factorizations through ``U``/``V`` matrices, and central finite
differences. Parameters are complex and both maps are holomorphic in them,
so the Jacobian is the complex one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    CONFLUENT,
    PronySignal,
    SamplingGrid,
    evaluate,
    falling_factorial,
    regularity_failures,
    split_params,
)
from .structmat import (
    COND_LIMIT,
    SingularBlockError,
    block_diag,
    coeff_blocks,
    confluent_vandermonde,
    confluent_vandermonde_sharp,
    pascal_vandermonde,
    pascal_vandermonde_sharp,
    power_diag_T,
    relative_residual,
    shift_matrix_Q,
    stirling_matrix,
    stirling_matrix_inverse,
)

FD_STEP = 1e-6


class SingularJacobianError(ValueError):
    def __init__(self, message, condition=np.inf, failures=()):
        super().__init__(message)
        self.condition = condition
        self.failures = list(failures)


@dataclass(frozen=True)
class JacobianBundle:
    direct: np.ndarray
    factorizations: tuple
    fd: np.ndarray
    labels: tuple
    regular: bool

    @property
    def factorized(self) -> np.ndarray:
        return self.factorizations[0]

    def factorized_discrepancy(self) -> float:
        if not self.factorizations:
            return float("nan")
        return max(relative_residual(self.direct, F) for F in self.factorizations)

    def fd_discrepancy(self) -> float:
        return relative_residual(self.direct, self.fd)


def jacobian_direct(signal: PronySignal, grid: SamplingGrid) -> np.ndarray:
    n = grid.indices
    nf = n.astype(float)
    cols = []
    for z, coeffs in zip(signal.nodes, signal.coeffs):
        if signal.kind == CONFLUENT:
            for ell in range(len(coeffs)):
                cols.append(_ff_power(n, ell, z))
            dz = sum(a * _ff_power(n, ell + 1, z) for ell, a in enumerate(coeffs))
        else:
            zn = np.power(z, nf)
            for ell in range(len(coeffs)):
                cols.append(zn * nf**ell)
            # d/dz z^n = n z^(n-1); the n = 0 row vanishes
            zn1 = np.zeros(len(n), dtype=complex)
            zn1[n > 0] = np.power(z, nf[n > 0] - 1)
            dz = sum(a * nf ** (ell + 1) for ell, a in enumerate(coeffs)) * zn1
        cols.append(dz)
    return np.column_stack(cols)


def _ff_power(n, ell, z):
    """``(n)_ell z^(n - ell)``, zero where the falling factorial vanishes."""
    ff = falling_factorial(n, ell)
    out = np.zeros(len(n), dtype=complex)
    live = ff != 0
    out[live] = ff[live] * np.power(z, (n[live] - ell).astype(float))
    return out


def _blocks(signal: PronySignal, t: int, p: int):
    """Per-node block factors of the three factorizations."""
    first, second, third = [], [], []
    for z, coeffs in zip(signal.nodes, signal.coeffs):
        r = len(coeffs) + 1
        cb = coeff_blocks(z, coeffs)
        Tp = np.asarray(power_diag_T(p, r))
        Qinv = np.asarray(shift_matrix_Q(-t, r))
        S = np.asarray(stirling_matrix(r))
        Tzp = np.asarray(power_diag_T(z**p, r))
        shift = z**t * Tp @ Qinv
        if signal.kind == CONFLUENT:
            to_conf = np.asarray(stirling_matrix_inverse(r)) @ np.asarray(power_diag_T(1 / z, r)) @ cb.D
            first.append(cb.D)
            second.append(to_conf)
            third.append(Tzp @ S @ shift @ to_conf)
        else:
            first.append(cb.E)
            second.append(shift @ cb.E)
            third.append(Tzp @ S @ shift @ cb.E)
    return first, second, third


def jacobian_factorized(signal: PronySignal, grid: SamplingGrid) -> tuple:
    """The three structured factorizations of the Jacobian, in order.

    Polynomial map: ``U_{t,p} diag(E)``, ``U_p^# diag(z^t T_p Q^-1 E)`` and
    ``V_p^# diag(z^t T_{z^p} S T_p Q^-1 E)``. Confluent map: ``V_{t,p} diag(D)``,
    ``U_{t,p} diag(S^-1 T_{1/z} D)`` and the ``V_p^#`` form with the same tail.
    """
    t, p, n = grid.t, grid.p, grid.n
    nodes = signal.nodes
    mults = [m + 1 for m in signal.mults]
    first, second, third = (block_diag(b) for b in _blocks(signal, t, p))
    V_sharp = np.asarray(confluent_vandermonde_sharp(nodes, mults, p, n))
    if signal.kind == CONFLUENT:
        return (
            np.asarray(confluent_vandermonde(nodes, mults, t, p, n)) @ first,
            np.asarray(pascal_vandermonde(nodes, mults, t, p, n)) @ second,
            V_sharp @ third,
        )
    return (
        np.asarray(pascal_vandermonde(nodes, mults, t, p, n)) @ first,
        np.asarray(pascal_vandermonde_sharp(nodes, mults, p, n)) @ second,
        V_sharp @ third,
    )


def jacobian_fd(signal: PronySignal, grid: SamplingGrid, step: float = FD_STEP) -> np.ndarray:
    """Central differences along the real and imaginary axis of each parameter,
    combined as ``(d/dre - i d/dim) / 2``."""
    x = signal.params()
    J = np.zeros((grid.n, len(x)), dtype=complex)
    confluent = signal.kind == CONFLUENT

    def f(y):
        nodes, coeffs = split_params(y, signal.mults)
        return evaluate(nodes, coeffs, grid.indices, confluent)

    for r in range(len(x)):
        h = step * max(1.0, abs(x[r]))
        e = np.zeros(len(x), dtype=complex)
        e[r] = h
        d_re = (f(x + e) - f(x - e)) / (2 * h)
        d_im = (f(x + 1j * e) - f(x - 1j * e)) / (2 * h)
        J[:, r] = 0.5 * (d_re - 1j * d_im)
    return J


def _bundle(signal, grid, fd_step):
    try:
        factorizations = jacobian_factorized(signal, grid)
    except SingularBlockError:
        # a vanishing leading coefficient makes the coefficient blocks singular
        factorizations = ()
    return JacobianBundle(
        direct=jacobian_direct(signal, grid),
        factorizations=factorizations,
        fd=jacobian_fd(signal, grid, fd_step),
        labels=tuple(signal.param_labels()),
        regular=not regularity_failures(signal, grid.p),
    )


def jacobian_polynomial(signal: PronySignal, grid: SamplingGrid, fd_step: float = FD_STEP) -> JacobianBundle:
    if signal.kind == CONFLUENT:
        raise ValueError("jacobian_polynomial needs a basic or polynomial signal")
    return _bundle(signal, grid, fd_step)


def jacobian_confluent(signal: PronySignal, grid: SamplingGrid, fd_step: float = FD_STEP) -> JacobianBundle:
    if signal.kind == CONFLUENT:
        return _bundle(signal, grid, fd_step)
    if any(m > 1 for m in signal.mults):
        raise ValueError("jacobian_confluent needs a basic or confluent signal")
    conf = PronySignal(signal.nodes, signal.mults, signal.coeffs, CONFLUENT)
    return _bundle(conf, grid, fd_step)


@dataclass(frozen=True)
class InverseRows:
    labels: tuple
    row_norms: np.ndarray
    condition: float

    def acc_loc(self, eps: float) -> np.ndarray:
        """Worst first-order error per parameter over ``|delta_k| <= eps``."""
        return eps * self.row_norms


def inverse_jacobian_rows(signal: PronySignal, grid: SamplingGrid) -> InverseRows:
    """l1 norms of the rows of the inverse Jacobian of a square system."""
    if grid.n != signal.R:
        raise ValueError(f"inverse Jacobian needs a square grid with n = R = {signal.R}")
    failures = regularity_failures(signal, grid.p)
    J = jacobian_direct(signal, grid)
    cond = float(np.linalg.cond(J))
    if failures or not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularJacobianError(
            f"Jacobian is numerically singular (cond={cond:.3g}); " + "; ".join(failures or ["ill-conditioned"]),
            cond,
            failures,
        )
    Jinv = np.linalg.solve(J, np.eye(signal.R, dtype=complex))
    return InverseRows(tuple(signal.param_labels()), np.abs(Jinv).sum(axis=1), cond)
