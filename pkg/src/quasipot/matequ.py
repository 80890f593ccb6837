"""Matrix equations at an equilibrium point.

- ``A M^T + M A = D M^T - M D``: linear equation for the antisymmetric ``A``
  (n(n-1)/2 unknowns), solved by expanding ``A`` in the ``e_ik`` basis.
- ``M X + X M^T = Q``: Lyapunov form, with ``Q = -2D`` it yields ``S^-1``;
  solved the same way over the n(n+1)/2 symmetric basis.
- ``S M + M^T S + 2 S D S``: Riccati residual, a diagnostic only.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from quasipot import numkit
from quasipot.errors import NonUniqueSolution, ResonantSpectrum, SingularMatrix, TraceZero

logger = logging.getLogger(__name__)

RESONANCE_TOL = 1e-9
TRACE_TOL = 1e-12

ROTATION = np.array([[0.0, 1.0], [-1.0, 0.0]])


@dataclass(frozen=True)
class AntisymBasis:
    """Basis ``e_ik`` (i < k, lexicographic) of antisymmetric n x n matrices."""

    n: int

    @cached_property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return tuple((i, k) for i in range(self.n) for k in range(i + 1, self.n))

    def __len__(self) -> int:
        return len(self.pairs)

    def matrix(self, idx: int) -> np.ndarray:
        i, k = self.pairs[idx]
        e = np.zeros((self.n, self.n))
        e[i, k] = 1.0
        e[k, i] = -1.0
        return e

    def coeffs(self, x: np.ndarray) -> np.ndarray:
        return np.array([x[i, k] for i, k in self.pairs])

    def from_coeffs(self, alpha) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for (i, k), c in zip(self.pairs, alpha):
            a[i, k] = c
            a[k, i] = -c
        return a


@dataclass(frozen=True)
class SymBasis:
    """Basis of symmetric n x n matrices: ``e_i e_i^T`` and ``e_i e_k^T + e_k e_i^T``."""

    n: int

    @cached_property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return tuple((i, k) for i in range(self.n) for k in range(i, self.n))

    def __len__(self) -> int:
        return len(self.pairs)

    def matrix(self, idx: int) -> np.ndarray:
        i, k = self.pairs[idx]
        e = np.zeros((self.n, self.n))
        e[i, k] = 1.0
        e[k, i] = 1.0
        return e

    def coeffs(self, x: np.ndarray) -> np.ndarray:
        return np.array([x[i, k] for i, k in self.pairs])

    def from_coeffs(self, alpha) -> np.ndarray:
        x = np.zeros((self.n, self.n))
        for (i, k), c in zip(self.pairs, alpha):
            x[i, k] = c
            x[k, i] = c
        return x


def _operator_matrix(op: Callable[[np.ndarray], np.ndarray], basis) -> np.ndarray:
    return np.column_stack([basis.coeffs(op(basis.matrix(j))) for j in range(len(basis))])


def _min_pair_sum(m: np.ndarray, *, include_diagonal: bool) -> float:
    lam = numkit.eig(m).eigenvalues
    n = len(lam)
    sums = [
        abs(lam[i] + lam[j])
        for i in range(n)
        for j in range(i if include_diagonal else i + 1, n)
    ]
    return min(sums) if sums else np.inf


def _null_dim(op: np.ndarray) -> int:
    s = scipy.linalg.svdvals(op)
    if s.size == 0 or s[0] == 0.0:
        return int(op.shape[1])
    return max(1, int(np.sum(s <= 1e-9 * s[0])))


def _check_pair(m, d) -> tuple[np.ndarray, np.ndarray]:
    m = numkit.as_mat(m, square=True)
    d = numkit.as_mat(d, square=True)
    if m.shape != d.shape:
        raise ValueError(f"shape mismatch: M {m.shape}, D {d.shape}")
    if numkit.norm(d - d.T) > 1e-12 * max(1.0, numkit.norm(d)):
        raise ValueError("D must be symmetric")
    return m, d


def a_equation_lhs(a: np.ndarray, m: np.ndarray) -> np.ndarray:
    return a @ m.T + m @ a


def a_equation_rhs(m: np.ndarray, d: np.ndarray) -> np.ndarray:
    return d @ m.T - m @ d


def solve_A(
    m,
    d,
    *,
    resonance_tol: float = RESONANCE_TOL,
    cond_cap: float = numkit.COND_CAP,
) -> np.ndarray:
    """Antisymmetric ``A`` with ``A M^T + M A = D M^T - M D``.

    The operator ``A -> A M^T + M A`` on antisymmetric matrices has the
    eigenvalues ``lambda_i + lambda_j`` (i < j) of ``M``; a vanishing pair sum
    makes the solution non-unique.
    """
    m, d = _check_pair(m, d)
    basis = AntisymBasis(m.shape[0])
    if len(basis) == 0:
        return np.zeros_like(m)
    op = _operator_matrix(lambda e: a_equation_lhs(e, m), basis)
    scale = max(numkit.norm(m), np.finfo(float).tiny)
    if _min_pair_sum(m, include_diagonal=False) <= resonance_tol * scale:
        raise NonUniqueSolution(_null_dim(op))
    try:
        alpha = numkit.solve_linear(op, basis.coeffs(a_equation_rhs(m, d)), cond_cap=cond_cap)
    except SingularMatrix as e:
        raise NonUniqueSolution(_null_dim(op)) from e
    a = basis.from_coeffs(alpha)
    residual = numkit.norm(a_equation_lhs(a, m) - a_equation_rhs(m, d))
    bound = 1e-10 * (numkit.norm(m) * numkit.norm(d) + numkit.norm(m) * numkit.norm(a))
    if residual > bound:
        logger.warning("A-equation residual %.3e exceeds %.3e", residual, bound)
    return a


def chi_2d(m, d, *, trace_tol: float = TRACE_TOL) -> float:
    """The scalar ``chi`` of ``A = chi [[0, 1], [-1, 0]]`` for n = 2.

    The left side of the A-equation collapses to ``trace(M) * A``, so ``chi``
    is the (1,2) entry of ``D M^T - M D`` over ``trace(M)``.
    """
    m, d = _check_pair(m, d)
    if m.shape != (2, 2):
        raise ValueError("chi_2d needs 2x2 matrices")
    tr = float(np.trace(m))
    if abs(tr) <= trace_tol * numkit.norm(m) or numkit.norm(m) == 0.0:
        raise TraceZero(f"trace(M) = {tr:.3e}: chi is not determined")
    return float(a_equation_rhs(m, d)[0, 1] / tr)


def solve_lyapunov(
    m,
    q,
    *,
    resonance_tol: float = RESONANCE_TOL,
    cond_cap: float = numkit.COND_CAP,
) -> np.ndarray:
    """Symmetric ``X`` with ``M X + X M^T = Q``."""
    m, q = _check_pair(m, q)
    basis = SymBasis(m.shape[0])
    scale = max(numkit.norm(m), np.finfo(float).tiny)
    if _min_pair_sum(m, include_diagonal=True) <= resonance_tol * scale:
        raise ResonantSpectrum("eigenvalue pair of M sums to zero: Lyapunov solution not unique")
    op = _operator_matrix(lambda e: m @ e + e @ m.T, basis)
    try:
        coeffs = numkit.solve_linear(op, basis.coeffs(q), cond_cap=cond_cap)
    except SingularMatrix as e:
        raise ResonantSpectrum(f"Lyapunov operator is singular: {e.message}") from e
    return basis.from_coeffs(coeffs)


def riccati_residual(s, m, d) -> float:
    """Frobenius norm of ``S M + M^T S + 2 S D S``."""
    s = np.asarray(s, dtype=float)
    m = np.asarray(m, dtype=float)
    d = np.asarray(d, dtype=float)
    return numkit.norm(s @ m + m.T @ s + 2.0 * s @ d @ s)
