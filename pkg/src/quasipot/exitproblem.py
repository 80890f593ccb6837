"""Starting data for the exit problem at a separatrix saddle."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from quasipot import numkit
from quasipot.errors import ComplexUnstableEigenvalue, NotExitSaddle, SingularMatrix
from quasipot.localqp import EquilibriumAnalysis

logger = logging.getLogger(__name__)

MATCH_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class ExitData:
    Mtilde: np.ndarray
    spectrum_match: bool
    lambda_plus: float
    f: np.ndarray
    start_dir: np.ndarray
    eigen_residual: float
    similarity_residual: float | None = None


def associated_jacobian(ea: EquilibriumAnalysis) -> np.ndarray:
    """``M~ = M - 2 A S``, the Jacobian of the associated drift at the EP."""
    return ea.ep.M - 2.0 * ea.A @ ea.S


def similarity_residual(ea: EquilibriumAnalysis, mtilde: np.ndarray) -> float | None:
    """Relative distance between ``M~`` and ``S^-1 M^T S``; None for singular S."""
    if ea.rank_S < ea.n:
        return None
    try:
        other = numkit.solve_linear(ea.S, ea.ep.M.T @ ea.S)
    except SingularMatrix:
        return None
    return numkit.norm(mtilde - other) / max(1.0, numkit.norm(mtilde))


def spectra_match(a: np.ndarray, b: np.ndarray, tol: float = MATCH_TOL) -> bool:
    """Whether two eigenvalue lists agree as multisets (optimal pairing)."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        return False
    if a.size == 0:
        return True
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = scipy.optimize.linear_sum_assignment(cost)
    scale = max(1.0, float(np.max(np.abs(a))))
    return bool(np.max(cost[rows, cols]) <= tol * scale)


def _orient(d: np.ndarray, away_from) -> np.ndarray:
    if away_from is not None:
        if float(d @ np.asarray(away_from, dtype=float)) < 0.0:
            return -d
        return d
    nonzero = np.flatnonzero(np.abs(d) > 1e-12)
    if nonzero.size and d[nonzero[0]] < 0.0:
        return -d
    return d


def exit_direction(ea: EquilibriumAnalysis, away_from=None) -> ExitData:
    """Unstable direction of ``M~`` at a saddle, computed as ``-(D + A) f``.

    ``f`` is the eigenvector of ``M^T`` for the single positive eigenvalue.
    ``away_from`` (e.g. saddle minus attractor) fixes the orientation;
    without it the first nonzero component is made positive.
    """
    M = ea.ep.M
    spectrum = ea.ep.spectrum
    scale = max(1.0, numkit.norm(M))
    tol = 1e-9 * scale
    unstable = [lam for lam in spectrum.eigenvalues if lam.real > tol]
    if any(abs(lam.imag) > tol for lam in unstable):
        raise ComplexUnstableEigenvalue(
            "unstable eigenvalue is complex: no single exit direction",
            {"eigenvalues": [[lam.real, lam.imag] for lam in unstable]},
        )
    if len(unstable) != 1 or np.any(np.abs(spectrum.real_parts) <= tol):
        raise NotExitSaddle(
            f"need exactly one positive eigenvalue and no marginal ones, EP is {ea.ep.kind.value}"
        )
    lambda_plus = float(unstable[0].real)

    left = numkit.eig(M.T)
    k = int(np.argmin(np.abs(left.eigenvalues - lambda_plus)))
    f = numkit.real_eigenvector(left.vector(k))

    d = -(ea.D + ea.A) @ f
    if numkit.norm(d) <= 1e-14 * scale:
        raise NotExitSaddle("-(D + A) f vanishes: the exit direction is undetermined")
    d = _orient(d / numkit.norm(d), away_from)

    mtilde = associated_jacobian(ea)
    eigen_residual = numkit.norm(mtilde @ d - lambda_plus * d)
    if eigen_residual > MATCH_TOL * max(1.0, numkit.norm(mtilde)):
        logger.warning("start direction is not an eigenvector of M~ (residual %.3e)", eigen_residual)
    match = spectra_match(numkit.eig(mtilde).eigenvalues, spectrum.eigenvalues)
    if not match:
        logger.warning("spectrum of M~ differs from that of M")
    return ExitData(
        Mtilde=mtilde,
        spectrum_match=match,
        lambda_plus=lambda_plus,
        f=f,
        start_dir=d,
        eigen_residual=eigen_residual,
        similarity_residual=similarity_residual(ea, mtilde),
    )
