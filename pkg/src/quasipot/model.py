"""Stochastic system models and their equilibrium points.

A :class:`SystemModel` holds the drift ``a(x)`` and the diffusion ``D(x)`` as
sympy expressions (usually lowered from :mod:`quasipot.exprdsl`) and compiles
them once into numpy callables returning values and exact derivatives.

Built-in models:
- ``kramers``: underdamped particle, a1 = v, a2 = -gamma v - U'(x), D22 = gamma
- ``gradient``: a = -grad U with constant diffusion (identity by default)
- ``linear``: a = M x with constant diffusion
- ``custom``: drift and diffusion given as expressions
"""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
import scipy.linalg
import sympy

from quasipot import numkit
from quasipot.errors import DomainError, ModelInvalid, NoConvergence, SingularMatrix
from quasipot.exprdsl import Expr, Guard, GuardSet, compile_fn, guarded_call, parse, symbols_for

logger = logging.getLogger(__name__)

CLASSIFY_TOL = 1e-9


class EPKind(str, Enum):
    ATTRACTOR = "Attractor"
    SADDLE = "Saddle"
    REPELLER = "Repeller"
    MARGINAL = "Marginal"


@dataclass(frozen=True, eq=False)
class LocalData:
    """Drift and diffusion with their derivatives at one point.

    ``T[k, i, j] = d2 a^k / dx^i dx^j``, ``dD[l, j, k] = d D^{jk} / dx^l`` and
    ``d2D[i, l, j, k] = d2 D^{jk} / dx^i dx^l``.
    """

    a: np.ndarray
    J: np.ndarray
    T: np.ndarray
    D: np.ndarray
    dD: np.ndarray
    d2D: np.ndarray


def _stack(values, like: np.ndarray) -> np.ndarray:
    arrays = np.broadcast_arrays(like, *(np.asarray(v, dtype=float) for v in values))[1:]
    return np.stack(arrays, axis=-1)


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Drift + diffusion in ``n`` variables ``x1 .. xn``."""

    n: int
    drift: tuple[sympy.Expr, ...]
    diffusion: tuple[tuple[sympy.Expr, ...], ...]
    name: str = "custom"
    description: str = ""
    guards: tuple[Guard, ...] = ()
    echo: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if len(self.drift) != self.n:
            raise ModelInvalid(f"drift has {len(self.drift)} components, expected {self.n}")
        if len(self.diffusion) != self.n or any(len(row) != self.n for row in self.diffusion):
            raise ModelInvalid(f"diffusion must be {self.n}x{self.n}")
        for i in range(self.n):
            for j in range(i):
                if sympy.simplify(self.diffusion[i][j] - self.diffusion[j][i]) != 0:
                    raise ModelInvalid(f"diffusion is not symmetric at ({i + 1},{j + 1})")

    @cached_property
    def symbols(self) -> tuple[sympy.Symbol, ...]:
        return symbols_for(self.n)

    @cached_property
    def diffusion_is_constant(self) -> bool:
        return all(not e.free_symbols for row in self.diffusion for e in row)

    @cached_property
    def _guard_set(self) -> GuardSet:
        return GuardSet(self.symbols, self.guards)

    @cached_property
    def _local_fn(self):
        xs, n = self.symbols, self.n
        a = list(self.drift)
        J = [[sympy.diff(a[k], xs[i]) for i in range(n)] for k in range(n)]
        T = [[[sympy.diff(J[k][i], xs[j]) for j in range(n)] for i in range(n)] for k in range(n)]
        D = [list(row) for row in self.diffusion]
        dD = [[[sympy.diff(D[j][k], xs[l]) for k in range(n)] for j in range(n)] for l in range(n)]
        d2D = [
            [[[sympy.diff(dD[l][j][k], xs[i]) for k in range(n)] for j in range(n)] for l in range(n)]
            for i in range(n)
        ]
        return compile_fn(xs, [a, J, T, D, dD, d2D])

    @cached_property
    def _drift_fn(self):
        return compile_fn(self.symbols, list(self.drift))

    @cached_property
    def _diffusion_fn(self):
        return compile_fn(self.symbols, [list(row) for row in self.diffusion])

    @cached_property
    def _noise_drift_fn(self):
        xs = self.symbols
        return compile_fn(
            xs,
            [
                sum((sympy.diff(self.diffusion[i][j], xs[j]) for j in range(self.n)), sympy.S.Zero)
                for i in range(self.n)
            ],
        )

    def _cols(self, x) -> tuple[np.ndarray, list]:
        arr = np.asarray(x, dtype=float)
        if arr.shape[-1] != self.n:
            raise ValueError(f"expected points of dimension {self.n}, got shape {arr.shape}")
        return arr, [arr[..., i] for i in range(self.n)]

    def local(self, x) -> LocalData:
        """Values and exact first/second derivatives of ``a`` and ``D`` at ``x``."""
        arr, cols = self._cols(x)
        if arr.ndim != 1:
            raise ValueError("local() takes a single point")
        self._guard_set.check(cols, derivatives=True)
        a, J, T, D, dD, d2D = guarded_call(self._local_fn, cols)
        n = self.n
        out = LocalData(
            a=np.array(a, dtype=float).reshape(n),
            J=np.array(J, dtype=float).reshape(n, n),
            T=np.array(T, dtype=float).reshape(n, n, n),
            D=np.array(D, dtype=float).reshape(n, n),
            dD=np.array(dD, dtype=float).reshape(n, n, n),
            d2D=np.array(d2D, dtype=float).reshape(n, n, n, n),
        )
        for name in ("a", "J", "T", "D", "dD", "d2D"):
            if not np.all(np.isfinite(getattr(out, name))):
                raise DomainError(f"non-finite {name} at {arr.tolist()}")
        return out

    def drift_at(self, x) -> np.ndarray:
        """Drift at one point or a batch of points (shape ``(..., n)``)."""
        arr, cols = self._cols(x)
        self._guard_set.check(cols, derivatives=False)
        out = _stack(guarded_call(self._drift_fn, cols), cols[0])
        if not np.all(np.isfinite(out)):
            raise DomainError("non-finite drift")
        return out

    def diffusion_at(self, x) -> np.ndarray:
        """Diffusion matrix at one point or a batch (shape ``(..., n, n)``)."""
        arr, cols = self._cols(x)
        rows = guarded_call(self._diffusion_fn, cols)
        return np.stack([_stack(row, cols[0]) for row in rows], axis=-2)

    def noise_drift_at(self, x) -> np.ndarray:
        """``sum_j dD^{ij}/dx^j`` at one point or a batch."""
        arr, cols = self._cols(x)
        return _stack(guarded_call(self._noise_drift_fn, cols), cols[0])

    def check_diffusion(self, x) -> None:
        """Raise ModelInvalid unless ``D(x)`` is symmetric positive semidefinite."""
        d = self.diffusion_at(np.asarray(x, dtype=float))
        scale = numkit.norm(d)
        if numkit.min_sym_eigenvalue(d) < -1e-10 * scale:
            raise ModelInvalid(
                f"diffusion is not positive semidefinite at {np.asarray(x).tolist()}"
            )


# ---------------------------------------------------------------------------
# Model builders
# ---------------------------------------------------------------------------


def _parse_all(sources: Sequence[str], n: int, params: Mapping[str, float]) -> list[Expr]:
    return [parse(s, n, params) for s in sources]


def _guards_of(exprs: Sequence[Expr]) -> tuple[Guard, ...]:
    return tuple(g for e in exprs for g in e.guards)


def custom_model(
    n: int,
    drift: Sequence[str],
    diffusion: Sequence[Sequence[str]],
    params: Mapping[str, float] | None = None,
    name: str = "custom",
) -> SystemModel:
    """Model from expression strings (the JSON model-file form)."""
    params = dict(params or {})
    if len(drift) != n:
        raise ModelInvalid(f"drift has {len(drift)} components, expected {n}")
    if len(diffusion) != n or any(len(row) != n for row in diffusion):
        raise ModelInvalid(f"diffusion must be {n}x{n}")
    a = _parse_all(drift, n, params)
    d = [_parse_all(row, n, params) for row in diffusion]
    return SystemModel(
        n=n,
        drift=tuple(e.to_sympy() for e in a),
        diffusion=tuple(tuple(e.to_sympy() for e in row) for row in d),
        name=name,
        guards=_guards_of(a) + _guards_of([e for row in d for e in row]),
        echo={"n": n, "params": params, "drift": list(drift), "diffusion": [list(r) for r in diffusion]},
    )


def _constant_matrix(values, n: int, default_identity: bool = True) -> tuple:
    if values is None:
        m = np.eye(n) if default_identity else np.zeros((n, n))
    else:
        m = numkit.as_mat(values, square=True)
        if m.shape != (n, n):
            raise ModelInvalid(f"expected a {n}x{n} matrix, got {m.shape}")
    return tuple(tuple(_literal_of(v) for v in row) for row in m)


def gradient_model(
    potential: str,
    n: int,
    params: Mapping[str, float] | None = None,
    diffusion=None,
) -> SystemModel:
    """``a = -grad U`` with constant diffusion (identity unless given)."""
    u = parse(potential, n, params)
    xs = symbols_for(n)
    U = u.to_sympy()
    return SystemModel(
        n=n,
        drift=tuple(-sympy.diff(U, x) for x in xs),
        diffusion=_constant_matrix(diffusion, n),
        name="gradient",
        description=f"gradient system, U = {potential}",
        guards=u.guards,
        echo={"builtin": "gradient", "n": n, "potential": potential, "params": dict(params or {})},
    )


def linear_model(matrix, diffusion=None) -> SystemModel:
    """``a = M x`` with constant diffusion (identity unless given)."""
    m = numkit.as_mat(matrix, square=True)
    n = m.shape[0]
    xs = symbols_for(n)
    M = sympy.Matrix(_constant_matrix(m, n))
    a = M * sympy.Matrix(xs)
    return SystemModel(
        n=n,
        drift=tuple(a),
        diffusion=_constant_matrix(diffusion, n),
        name="linear",
        description="linear drift a = M x",
        echo={
            "builtin": "linear",
            "matrix": m.tolist(),
            "diffusion": np.eye(n).tolist() if diffusion is None else np.asarray(diffusion).tolist(),
        },
    )


@dataclass(frozen=True, eq=False)
class KramersModel:
    """Particle of unit mass in the potential ``U(x1)`` with friction ``gamma``.

    The state is ``(x, v) = (x1, x2)``; ``phi_eq = U(x) + v^2/2`` solves the
    Freidlin equation globally.
    """

    gamma: float
    potential: Expr
    source: str = ""

    def __post_init__(self):
        if not self.gamma > 0:
            raise ModelInvalid(f"friction gamma must be positive, got {self.gamma}")
        if self.potential.n != 1:
            raise ModelInvalid("the Kramers potential must be an expression in x1 only")

    @classmethod
    def from_source(
        cls, gamma: float, potential: str, params: Mapping[str, float] | None = None
    ) -> KramersModel:
        return cls(gamma=float(gamma), potential=parse(potential, 1, params), source=potential)

    @classmethod
    def quadratic(cls, gamma: float, u2: float) -> KramersModel:
        """Quadratic well (u2 > 0), flat (u2 = 0) or barrier (u2 < 0) at the origin."""
        return cls.from_source(gamma, "u2*x1^2/2", {"u2": u2})

    @cached_property
    def system(self) -> SystemModel:
        x, v = symbols_for(2)
        U = self.potential.to_sympy()
        g = _literal_of(self.gamma)
        return SystemModel(
            n=2,
            drift=(v, -g * v - sympy.diff(U, x)),
            diffusion=((sympy.S.Zero, sympy.S.Zero), (sympy.S.Zero, g)),
            name="kramers",
            description=f"Kramers model, gamma = {self.gamma}, U = {self.source}",
            guards=self.potential.guards,
            echo={"builtin": "kramers", "gamma": self.gamma, "potential": self.source},
        )

    def U(self, x: float) -> float:
        return self.potential.evaluate([x]).value

    def dU(self, x: float) -> float:
        return float(self.potential.evaluate([x]).gradient[0])

    def d2U(self, x: float) -> float:
        return float(self.potential.evaluate([x]).hessian[0, 0])

    def phi_eq(self, state) -> float:
        x, v = np.asarray(state, dtype=float)
        return self.U(x) + 0.5 * v * v


def _literal_of(value: float) -> sympy.Expr:
    return sympy.Integer(int(value)) if float(value).is_integer() else sympy.Float(value)


# ---------------------------------------------------------------------------
# Equilibria
# ---------------------------------------------------------------------------


def classify(spectrum: numkit.Spectrum, tol: float = CLASSIFY_TOL) -> EPKind:
    re = spectrum.real_parts
    if np.any(np.abs(re) <= tol):
        return EPKind.MARGINAL
    if np.all(re < -tol):
        return EPKind.ATTRACTOR
    if np.all(re > tol):
        return EPKind.REPELLER
    return EPKind.SADDLE


@dataclass(frozen=True, eq=False)
class EquilibriumPoint:
    x: np.ndarray
    M: np.ndarray
    spectrum: numkit.Spectrum
    kind: EPKind

    @classmethod
    def from_jacobian(cls, x, M, tol: float = CLASSIFY_TOL) -> EquilibriumPoint:
        M = numkit.as_mat(M, square=True)
        spectrum = numkit.eig(M)
        return cls(x=np.asarray(x, dtype=float), M=M, spectrum=spectrum, kind=classify(spectrum, tol))

    @property
    def n(self) -> int:
        return len(self.x)


def jacobian_at(m: SystemModel, x) -> np.ndarray:
    """``M[i, j] = d a^i / d x^j`` at ``x``."""
    return m.local(np.asarray(x, dtype=float)).J


def drift_contraction(m: SystemModel, x) -> float:
    """``rho(x) = -div a``."""
    return -float(np.trace(jacobian_at(m, x)))


def refine_equilibrium(
    m: SystemModel,
    seed,
    tol: float = 1e-12,
    *,
    max_iter: int = 100,
    classify_tol: float = CLASSIFY_TOL,
) -> EquilibriumPoint:
    """Damped Newton iteration on ``a(x) = 0`` from one seed."""
    x = np.array(seed, dtype=float).reshape(m.n)
    seed_list = x.tolist()
    for _ in range(max_iter):
        try:
            loc = m.local(x)
        except DomainError as e:
            raise NoConvergence(seed_list, f"left the domain during Newton: {e.message}") from e
        res = numkit.norm(loc.a)
        if res <= tol * (1.0 + numkit.norm(loc.J) * numkit.norm(x)):
            m.check_diffusion(x)
            return EquilibriumPoint.from_jacobian(x, loc.J, classify_tol)
        try:
            dx = numkit.solve_linear(loc.J, -loc.a)
        except SingularMatrix:
            dx = -scipy.linalg.pinv(loc.J) @ loc.a
        t = 1.0
        x_new = x + dx
        while t > 2.0**-10:
            x_new = x + t * dx
            try:
                if numkit.norm(m.drift_at(x_new)) < res:
                    break
            except DomainError:
                pass
            t *= 0.5
        if numkit.norm(x_new - x) <= 1e-16 * (1.0 + numkit.norm(x)):
            break
        x = x_new
    raise NoConvergence(seed_list)


def find_equilibria(
    m: SystemModel,
    seeds: Sequence,
    tol: float = 1e-12,
    *,
    dedup_tol: float = 1e-8,
    max_iter: int = 100,
    classify_tol: float = CLASSIFY_TOL,
    threads: int = 1,
) -> list[EquilibriumPoint]:
    """Refine every seed, drop failures (logged) and duplicates, keep seed order."""
    if len(seeds) == 0:
        raise ValueError("at least one seed is required")

    def attempt(seed):
        try:
            return refine_equilibrium(
                m, seed, tol, max_iter=max_iter, classify_tol=classify_tol
            )
        except NoConvergence as e:
            logger.warning("no equilibrium from seed %s: %s", e.seed, e.message)
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(attempt, seeds))
    else:
        results = [attempt(s) for s in seeds]

    found: list[EquilibriumPoint] = []
    for ep in results:
        if ep is None:
            continue
        if any(
            numkit.norm(ep.x - other.x) <= dedup_tol * max(1.0, numkit.norm(other.x))
            for other in found
        ):
            continue
        found.append(ep)
    return found
