"""Local quasipotential at an equilibrium point.

With ``A`` from the linear A-equation the Hessian of the quasipotential is
``S = (-D + A)^-1 M`` and, near the EP, ``grad phi = (-D + A)^-1 a(x)`` with
``A`` frozen at its EP value. This module assembles that data, checks the
regularity source ``r = rho - div(D grad phi)`` and builds the Gaussian
stationary density. The Kramers helpers cover the degenerate rank-1
solutions of the Riccati equation and the minimum-principle comparison.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.stats

from quasipot import matequ, numkit
from quasipot.errors import (
    ComplexBeta,
    HessianAsymmetry,
    MarginalEquilibrium,
    NotAttractor,
    NotInvertible,
    NotPositiveDefinite,
    ResonantSpectrum,
    SingularMatrix,
    TraceZero,
)
from quasipot.model import EPKind, EquilibriumPoint, SystemModel

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-9


@dataclass(frozen=True)
class Diagnostics:
    symmetry: float
    riccati: float
    lyapunov: float | None = None
    freidlin: float | None = None
    r_at_ep: float | None = None


@dataclass(frozen=True, eq=False)
class EquilibriumAnalysis:
    ep: EquilibriumPoint
    D: np.ndarray
    A: np.ndarray
    S: np.ndarray
    chi: float | None
    Sinv: np.ndarray | None
    rank_S: int
    rank_M: int
    diagnostics: Diagnostics

    @property
    def K(self) -> np.ndarray:
        """``-D + A``."""
        return -self.D + self.A

    @property
    def n(self) -> int:
        return self.ep.n


def analyze_linearization(
    ep: EquilibriumPoint,
    D,
    *,
    allow_marginal: bool = False,
    cond_cap: float = numkit.COND_CAP,
    symmetry_tol: float = SYMMETRY_TOL,
) -> EquilibriumAnalysis:
    """``A``, ``S`` and the matrix diagnostics from ``M`` and ``D`` alone."""
    if ep.kind is EPKind.MARGINAL and not allow_marginal:
        raise MarginalEquilibrium(
            "EP has an eigenvalue with vanishing real part; the local analysis assumes linear decay"
        )
    M = ep.M
    D = numkit.as_mat(D, square=True)
    scale = numkit.norm(M)
    if scale == 0.0 or abs(np.trace(M)) <= matequ.TRACE_TOL * scale:
        raise TraceZero("rho = -trace(M) vanishes at the EP")

    A = matequ.solve_A(M, D, cond_cap=cond_cap)
    chi = None
    if ep.n == 2:
        chi = matequ.chi_2d(M, D)
        if abs(chi - A[0, 1]) > 1e-12 * max(1.0, abs(chi)):
            logger.warning("closed-form chi %.17g differs from solve_A %.17g", chi, A[0, 1])

    try:
        S_raw = numkit.solve_linear(-D + A, M, cond_cap=cond_cap)
    except SingularMatrix as e:
        raise NotInvertible(
            f"-D + A is not invertible ({e.message}); a singular D can cause this"
        ) from e
    symmetry = numkit.asymmetry(S_raw)
    if symmetry > symmetry_tol:
        raise HessianAsymmetry(f"S = (-D + A)^-1 M is not symmetric (relative skew {symmetry:.3e})")
    S = numkit.sym(S_raw)

    rank_S = numkit.rank(S)
    Sinv = None
    lyapunov = None
    if rank_S == ep.n:
        try:
            Sinv = matequ.solve_lyapunov(M, -2.0 * D, cond_cap=cond_cap)
            lyapunov = numkit.norm(numkit.inverse(S, cond_cap=cond_cap) - Sinv) / max(
                numkit.norm(Sinv), np.finfo(float).tiny
            )
        except (ResonantSpectrum, SingularMatrix) as e:
            logger.info("no Lyapunov cross-check: %s", e.message)
            Sinv = None

    return EquilibriumAnalysis(
        ep=ep,
        D=D,
        A=A,
        S=S,
        chi=chi,
        Sinv=Sinv,
        rank_S=rank_S,
        rank_M=numkit.rank(M),
        diagnostics=Diagnostics(
            symmetry=symmetry,
            riccati=matequ.riccati_residual(S, M, D),
            lyapunov=lyapunov,
        ),
    )


def analyze_ep(
    m: SystemModel,
    ep: EquilibriumPoint,
    *,
    allow_marginal: bool = False,
    cond_cap: float = numkit.COND_CAP,
    symmetry_tol: float = SYMMETRY_TOL,
) -> EquilibriumAnalysis:
    """Full local analysis at ``ep``, including the model-based residuals."""
    ea = analyze_linearization(
        ep,
        m.diffusion_at(ep.x),
        allow_marginal=allow_marginal,
        cond_cap=cond_cap,
        symmetry_tol=symmetry_tol,
    )
    h = 1e-4 * (1.0 + numkit.norm(ep.x))
    probes = [ep.x + s * h * e for e in np.eye(ep.n) for s in (1.0, -1.0)]
    freidlin = max(
        abs(freidlin_residual(m, qp_gradient_field(ea, m, x), x)) for x in probes
    )
    diagnostics = replace(ea.diagnostics, freidlin=freidlin, r_at_ep=compute_r(m, ea.S, ep.x))
    return replace(ea, diagnostics=diagnostics)


def qp_gradient_field(ea: EquilibriumAnalysis, m: SystemModel, x) -> np.ndarray:
    """``grad phi = (-D + A)^-1 a(x)`` with ``A`` and ``D`` frozen at the EP."""
    try:
        return numkit.solve_linear(ea.K, m.drift_at(np.asarray(x, dtype=float)))
    except SingularMatrix as e:
        raise NotInvertible(f"-D + A is not invertible: {e.message}") from e


def associated_drift(ea: EquilibriumAnalysis, m: SystemModel, x) -> np.ndarray:
    """``a~ = -(a + 2 D grad phi)``; characteristics move along ``-a~``."""
    x = np.asarray(x, dtype=float)
    g = qp_gradient_field(ea, m, x)
    return -(m.drift_at(x) + 2.0 * m.diffusion_at(x) @ g)


def conservative_drift(ea: EquilibriumAnalysis, m: SystemModel, x) -> np.ndarray:
    """``a_c = a + D grad phi``, orthogonal to ``grad phi``."""
    x = np.asarray(x, dtype=float)
    return m.drift_at(x) + m.diffusion_at(x) @ qp_gradient_field(ea, m, x)


def freidlin_residual(m: SystemModel, grad_phi, x) -> float:
    """``(a + D g) . g`` for a candidate gradient ``g``."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(grad_phi, dtype=float)
    return float((m.drift_at(x) + m.diffusion_at(x) @ g) @ g)


def compute_r(m: SystemModel, hess_phi, x, grad_phi=None) -> float:
    """``r = rho - div(D grad phi)`` from the Hessian (and gradient) of ``phi``."""
    loc = m.local(np.asarray(x, dtype=float))
    g = np.zeros(m.n) if grad_phi is None else np.asarray(grad_phi, dtype=float)
    rho = -float(np.trace(loc.J))
    # dD[l, j, k] = dD^{jk}/dx^l, contracted over l = j
    div_terms = float(np.einsum("iij,j->", loc.dD, g))
    return rho - div_terms - float(np.einsum("ij,ij->", loc.D, np.asarray(hess_phi, dtype=float)))


# ---------------------------------------------------------------------------
# Gaussian stationary density
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussianApprox:
    """``w(x) = N exp(-(x-c)^T S (x-c) / (2 eps))``."""

    center: np.ndarray
    S: np.ndarray
    epsilon: float
    normalizer: float
    covariance: np.ndarray

    def pdf(self, x) -> np.ndarray:
        return scipy.stats.multivariate_normal(self.center, self.covariance).pdf(x)

    def log_pdf(self, x) -> np.ndarray:
        return scipy.stats.multivariate_normal(self.center, self.covariance).logpdf(x)


def gaussian_density(ea: EquilibriumAnalysis, epsilon: float) -> GaussianApprox:
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if ea.ep.kind is not EPKind.ATTRACTOR:
        raise NotAttractor(f"Gaussian density needs an attractor, EP is {ea.ep.kind.value}")
    if numkit.min_sym_eigenvalue(ea.S) <= 0.0:
        raise NotPositiveDefinite("S is not positive definite at the attractor")
    n = ea.n
    sinv = ea.Sinv if ea.Sinv is not None else numkit.inverse(ea.S)
    normalizer = (2.0 * np.pi * epsilon) ** (-0.5 * n) * np.sqrt(numkit.det(ea.S))
    return GaussianApprox(
        center=ea.ep.x.copy(),
        S=ea.S,
        epsilon=float(epsilon),
        normalizer=float(normalizer),
        covariance=epsilon * numkit.sym(sinv),
    )


def fpe_residual(m: SystemModel, gauss: GaussianApprox, x) -> float:
    """Stationary FPE residual divided by ``w(x)`` for the Gaussian ansatz.

    Substituting the ansatz gives ``freidlin(g) / eps + r(S, g)`` with
    ``g = S (x - c)``; both terms vanish for linear drift and constant D.
    """
    x = np.asarray(x, dtype=float)
    g = gauss.S @ (x - gauss.center)
    return freidlin_residual(m, g, x) / gauss.epsilon + compute_r(m, gauss.S, x, g)


# ---------------------------------------------------------------------------
# Kramers degenerate solutions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KramersDegenerate:
    """``phi = [U''(1-beta) x^2 + 2 U'' x v / gamma + beta v^2] / 2``."""

    u2: float
    gamma: float
    sign: int
    beta: float
    S_pm: np.ndarray
    r_value: float

    def phi(self, x: float, v: float) -> float:
        z = np.array([x, v], dtype=float)
        return 0.5 * float(z @ self.S_pm @ z)

    def null_line_slope(self) -> float | None:
        """Slope of the line where phi vanishes, ``v = -U'' x / (beta gamma)``."""
        if self.beta == 0.0:
            return None
        return -self.u2 / (self.beta * self.gamma)


def kramers_phi_pm(u2: float, gamma: float, sign: int) -> KramersDegenerate:
    """Degenerate solution with ``2 beta = 1 +/- sqrt(1 - 4 U'' / gamma^2)``."""
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign}")
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    disc = 1.0 - 4.0 * u2 / gamma**2
    if disc < 0.0:
        raise ComplexBeta(f"1 - 4 U''/gamma^2 = {disc:.6g} < 0: underdamped bottom")
    beta = 0.5 * (1.0 + sign * np.sqrt(disc))
    c = u2 / gamma
    return KramersDegenerate(
        u2=float(u2),
        gamma=float(gamma),
        sign=sign,
        beta=float(beta),
        S_pm=np.array([[u2 * (1.0 - beta), c], [c, beta]]),
        r_value=float(gamma * (1.0 - beta)),
    )


@dataclass(frozen=True)
class ProbeRow:
    x: float
    v: float
    phi_eq: float
    phi_plus: float
    phi_minus: float
    phi_zero: float
    minimum: str
    minimum_nontrivial: str
    side_plus: int
    side_minus: int


_LABELS = ("eq", "plus", "minus", "zero")


def _argmin_label(values: dict[str, float]) -> str:
    low = min(values.values())
    tol = 1e-12 * (1.0 + max(abs(v) for v in values.values()))
    return next(k for k in _LABELS if k in values and values[k] <= low + tol)


def minimum_principle_probe(u2: float, gamma: float, points) -> list[ProbeRow]:
    """Compare ``phi_eq``, ``phi_+``, ``phi_-`` and ``phi_0 = 0`` pointwise.

    Ties go to the solution listed first (eq, plus, minus, zero), i.e. to the
    one with the larger rank. ``side_*`` is the sign of ``v - beta gamma x``.
    """
    plus = kramers_phi_pm(u2, gamma, 1)
    minus = kramers_phi_pm(u2, gamma, -1)
    rows = []
    for x, v in points:
        x, v = float(x), float(v)
        values = {
            "eq": 0.5 * u2 * x * x + 0.5 * v * v,
            "plus": plus.phi(x, v),
            "minus": minus.phi(x, v),
            "zero": 0.0,
        }
        nontrivial = {k: values[k] for k in ("eq", "plus", "minus")}
        rows.append(
            ProbeRow(
                x=x,
                v=v,
                phi_eq=values["eq"],
                phi_plus=values["plus"],
                phi_minus=values["minus"],
                phi_zero=0.0,
                minimum=_argmin_label(values),
                minimum_nontrivial=_argmin_label(nontrivial),
                side_plus=int(np.sign(v - plus.beta * gamma * x)),
                side_minus=int(np.sign(v - minus.beta * gamma * x)),
            )
        )
    return rows


def probe_grid(half_width: float = 1.0, k: int = 5) -> list[tuple[float, float]]:
    """``k x k`` grid of (x, v) points centred on the EP."""
    ticks = np.linspace(-half_width, half_width, k)
    return [(float(x), float(v)) for x in ticks for v in ticks]
