"""Exception hierarchy for quasipot.

Every error carries a short machine code, a message and optional details,
so the CLI can render it as a single-line JSON envelope.
"""

from __future__ import annotations

from typing import Any


class QuasipotError(Exception):
    """Base class for all quasipot failures."""

    code = "error"
    exit_code = 1

    def __init__(self, message: str, details: Any = None):
        self.message = message
        self.details = details
        super().__init__(message)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"error": True, "code": self.code, "message": self.message}
        if self.details is not None:
            out["details"] = self.details
        return out


# --- linear algebra ---------------------------------------------------------


class SingularMatrix(QuasipotError):
    code = "singular_matrix"

    def __init__(self, message: str = "matrix is singular", cond: float | None = None):
        self.cond = cond
        super().__init__(message, {"cond": cond} if cond is not None else None)


class ConvergenceFailure(QuasipotError):
    code = "convergence_failure"


# --- expressions ------------------------------------------------------------


class ParseError(QuasipotError):
    code = "parse_error"
    exit_code = 2

    def __init__(self, offset: int, message: str):
        self.offset = offset
        super().__init__(f"{message} at offset {offset}", {"offset": offset})


class UnknownIdentifier(QuasipotError):
    code = "unknown_identifier"
    exit_code = 2

    def __init__(self, name: str, offset: int):
        self.name = name
        self.offset = offset
        super().__init__(
            f"unknown identifier '{name}' at offset {offset}",
            {"name": name, "offset": offset},
        )


class DomainError(QuasipotError):
    code = "domain_error"


# --- models and equilibria --------------------------------------------------


class ModelInvalid(QuasipotError):
    code = "model_invalid"
    exit_code = 3


class NoConvergence(QuasipotError):
    code = "no_convergence"

    def __init__(self, seed: Any, message: str = "Newton iteration did not converge"):
        self.seed = seed
        super().__init__(message, {"seed": seed})


class MarginalEquilibrium(QuasipotError):
    code = "marginal_equilibrium"


# --- matrix equations -------------------------------------------------------


class NonUniqueSolution(QuasipotError):
    code = "non_unique_solution"

    def __init__(self, null_dim: int, message: str | None = None):
        self.null_dim = null_dim
        super().__init__(
            message or f"equation for A is singular (null-space dimension {null_dim})",
            {"null_dim": null_dim},
        )


class TraceZero(QuasipotError):
    code = "trace_zero"


class ResonantSpectrum(QuasipotError):
    code = "resonant_spectrum"


# --- local analysis ---------------------------------------------------------


class NotInvertible(QuasipotError):
    code = "not_invertible"


class HessianAsymmetry(QuasipotError):
    code = "hessian_asymmetry"


class NotAttractor(QuasipotError):
    code = "not_attractor"


class NotPositiveDefinite(QuasipotError):
    code = "not_positive_definite"


class ComplexBeta(QuasipotError):
    code = "complex_beta"


# --- exit problem -----------------------------------------------------------


class NotExitSaddle(QuasipotError):
    code = "not_exit_saddle"
    exit_code = 4


class ComplexUnstableEigenvalue(QuasipotError):
    code = "complex_unstable_eigenvalue"
    exit_code = 4


# --- integration and simulation ---------------------------------------------


class StepRejected(QuasipotError):
    code = "step_rejected"

    def __init__(self, t: float, energy: float, message: str | None = None):
        self.t = t
        self.energy = energy
        super().__init__(
            message or f"Hamiltonian drifted to {energy:.3e} at t={t:.6g}; reduce dt",
            {"t": t, "H": energy},
        )


class Diverged(QuasipotError):
    code = "diverged"
    exit_code = 5


# --- command line -----------------------------------------------------------


class UsageError(QuasipotError):
    code = "usage_error"
    exit_code = 2


class InvalidSettings(QuasipotError):
    """A ``QUASIPOT_*`` variable or ``.env`` entry failed validation."""

    code = "invalid_settings"
    exit_code = 2


class InvalidSelection(QuasipotError):
    """Requested EP index or launch mode does not exist for this model."""

    code = "invalid_selection"
    exit_code = 4
