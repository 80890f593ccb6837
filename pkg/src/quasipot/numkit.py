"""Dense real-matrix primitives shared by every other module.

Thin, checked wrappers over numpy/scipy: matrices here are small (n <= ~10)
and every solve is guarded by a condition estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from quasipot.errors import ConvergenceFailure, SingularMatrix

COND_CAP = 1e12


def as_mat(x, *, square: bool = False) -> np.ndarray:
    """Return ``x`` as a finite float64 2-D array."""
    a = np.asarray(x, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    if square and a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def norm(x) -> float:
    """Frobenius norm (2-norm for vectors)."""
    return float(np.linalg.norm(x))


def cond(x) -> float:
    a = as_mat(x, square=True)
    if a.size == 0:
        return 1.0
    with np.errstate(divide="ignore"):
        return float(np.linalg.cond(a))


def sym(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    return 0.5 * (a + a.T)


def asymmetry(x) -> float:
    """Relative size of the antisymmetric part of ``x``."""
    a = np.asarray(x, dtype=float)
    scale = norm(a)
    if scale == 0.0:
        return 0.0
    return norm(a - a.T) / scale


def _check_cond(a: np.ndarray, cap: float) -> None:
    c = cond(a)
    if not np.isfinite(c) or c > cap:
        raise SingularMatrix(f"condition estimate {c:.3e} exceeds {cap:.1e}", cond=c)


def solve_linear(a, b, *, cond_cap: float = COND_CAP) -> np.ndarray:
    """Solve ``a x = b`` for square ``a``; raise SingularMatrix when ill-conditioned."""
    a = as_mat(a, square=True)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != a.shape[0]:
        raise ValueError(f"right-hand side has {b.shape[0]} rows, matrix has {a.shape[0]}")
    if a.size == 0:
        return np.zeros_like(b)
    _check_cond(a, cond_cap)
    return scipy.linalg.solve(a, b)


def inverse(x, *, cond_cap: float = COND_CAP) -> np.ndarray:
    a = as_mat(x, square=True)
    _check_cond(a, cond_cap)
    return scipy.linalg.inv(a)


def det(x) -> float:
    return float(scipy.linalg.det(as_mat(x, square=True)))


def rank(x, tol: float | None = None) -> int:
    """Number of singular values above ``tol`` (default ``1e-10 * ||x||_2``)."""
    a = np.asarray(x, dtype=float)
    if a.size == 0:
        return 0
    s = scipy.linalg.svdvals(a)
    if tol is None:
        tol = 1e-10 * float(s[0])
    return int(np.sum(s > tol))


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigenvalues sorted by descending real part (ties: descending imaginary
    part) with unit-norm right eigenvectors stored as columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __len__(self) -> int:
        return len(self.eigenvalues)

    @property
    def real_parts(self) -> np.ndarray:
        return self.eigenvalues.real

    def vector(self, k: int) -> np.ndarray:
        return self.eigenvectors[:, k]


def _sort_order(values: np.ndarray, scale: float) -> np.ndarray:
    # conjugate pairs can differ in the last bit of the real part
    quantum = max(scale, 1.0) * 1e-12
    re = np.round(values.real / quantum) * quantum
    return np.lexsort((-values.imag, -re))


def eig(x) -> Spectrum:
    """Eigen-decomposition with the ordering and normalisation of :class:`Spectrum`."""
    a = as_mat(x, square=True)
    try:
        if np.array_equal(a, a.T):
            w, v = scipy.linalg.eigh(a)
            w = w.astype(complex)
            v = v.astype(complex)
        else:
            w, v = scipy.linalg.eig(a)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise ConvergenceFailure(f"eigen-decomposition failed: {e}") from e
    order = _sort_order(w, norm(a))
    w = w[order]
    v = v[:, order]
    v = v / np.linalg.norm(v, axis=0, keepdims=True)
    return Spectrum(eigenvalues=w, eigenvectors=v)


def real_eigenvector(v: np.ndarray) -> np.ndarray:
    """Rotate a complex eigenvector of a real eigenvalue onto the real axis."""
    k = int(np.argmax(np.abs(v)))
    w = v * (abs(v[k]) / v[k])
    out = w.real
    return out / np.linalg.norm(out)


def psd_factor(d) -> np.ndarray:
    """Return ``L`` with ``L @ L.T == d`` for symmetric positive semidefinite ``d``.

    Cholesky first; semidefinite input (e.g. a rank-1 diffusion) falls back to
    the eigen square root with negative round-off clipped.
    """
    a = np.asarray(d, dtype=float)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(a)
        return v * np.sqrt(np.clip(w, 0.0, None))[..., None, :]


def min_sym_eigenvalue(x) -> float:
    a = sym(x)
    if a.size == 0:
        return 0.0
    return float(scipy.linalg.eigvalsh(a)[0])
