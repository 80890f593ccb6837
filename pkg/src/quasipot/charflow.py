"""Hamiltonian characteristics of the quasipotential.

Along ``x' = a + 2 D p``, ``p' = -dH/dx`` with ``H = p . (a + D p)`` the
quasipotential accumulates as ``Phi' = p . x'``. Second derivatives are
carried by the variational pair ``(Q, P)`` with ``S = P Q^-1``, and the
prefactor correction by ``phi1' = -r``. Integration is fixed-step RK4 on the
flattened state ``(x, p, Phi, Q, P, phi1)``.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.stats

from quasipot import numkit
from quasipot.errors import DomainError, NotPositiveDefinite, StepRejected
from quasipot.exitproblem import ExitData
from quasipot.localqp import EquilibriumAnalysis
from quasipot.model import EquilibriumPoint, LocalData, SystemModel

logger = logging.getLogger(__name__)

STALL_SPEED = 1e-12
ENERGY_REJECT = 1e-5


class Termination(str, Enum):
    TIME_LIMIT = "TimeLimit"
    LEFT_DOMAIN = "LeftDomain"
    Q_SINGULAR = "QSingular"
    STALLED = "Stalled"


@dataclass(frozen=True, eq=False)
class CharState:
    t: float
    x: np.ndarray
    p: np.ndarray
    Phi: float
    Q: np.ndarray
    P: np.ndarray
    phi1: float = 0.0

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def cond_Q(self) -> float:
        return numkit.cond(self.Q)

    @property
    def S(self) -> np.ndarray:
        """``P Q^-1``; NaN when Q is singular."""
        try:
            return np.linalg.solve(self.Q.T, self.P.T).T
        except np.linalg.LinAlgError:
            return np.full((self.n, self.n), np.nan)

    def csv_row(self) -> list[float]:
        return [
            self.t,
            *self.x.tolist(),
            *self.p.tolist(),
            self.Phi,
            self.phi1,
            *self.S.ravel().tolist(),
            self.cond_Q,
        ]


def csv_header(n: int) -> list[str]:
    idx = range(1, n + 1)
    return [
        "t",
        *(f"x_{i}" for i in idx),
        *(f"p_{i}" for i in idx),
        "Phi",
        "phi1",
        *(f"S_{i}{j}" for i in idx for j in idx),
        "cond_Q",
    ]


@dataclass(frozen=True, eq=False)
class Characteristic:
    samples: list[CharState]
    termination: Termination
    max_energy: float = 0.0

    @property
    def final(self) -> CharState:
        return self.samples[-1]

    def rows(self) -> list[list[float]]:
        return [s.csv_row() for s in self.samples]


@dataclass(frozen=True)
class FlowOptions:
    dt: float
    t_max: float
    box: tuple[np.ndarray, np.ndarray] | None = None
    q_cond_cap: float = 1e8
    reverse: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_max < 0:
            raise ValueError(f"t_max must be nonnegative, got {self.t_max}")


def default_dt(ep: EquilibriumPoint, factor: float = 1e-3) -> float:
    """``factor`` times the slowest-decay time scale ``1 / max |Re lambda|``."""
    rate = float(np.max(np.abs(ep.spectrum.real_parts), initial=0.0))
    return factor / rate if rate > 0 else factor


def box_around(center, half_width: float) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(center, dtype=float)
    return c - half_width, c + half_width


# ---------------------------------------------------------------------------
# Hamiltonian and its derivatives
# ---------------------------------------------------------------------------


def hamiltonian(m: SystemModel, x, p) -> float:
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    return float(p @ (m.drift_at(x) + m.diffusion_at(x) @ p))


def _flow(loc: LocalData, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dx = loc.a + 2.0 * loc.D @ p
    dp = -(loc.J.T @ p + np.einsum("ijk,j,k->i", loc.dD, p, p))
    return dx, dp


def ham_rhs(m: SystemModel, x, p) -> tuple[np.ndarray, np.ndarray]:
    """``(dH/dp, -dH/dx)`` including the state dependence of D."""
    return _flow(m.local(np.asarray(x, dtype=float)), np.asarray(p, dtype=float))


def _second_derivatives(loc: LocalData, p: np.ndarray):
    h_px = loc.J + 2.0 * np.einsum("lij,j->il", loc.dD, p)
    h_pp = 2.0 * loc.D
    h_xx = np.einsum("k,kil->il", p, loc.T) + np.einsum("j,k,iljk->il", p, p, loc.d2D)
    return h_px, h_pp, h_xx


def _r_at(loc: LocalData, p: np.ndarray, S: np.ndarray) -> float:
    rho = -float(np.trace(loc.J))
    return rho - float(np.einsum("iij,j->", loc.dD, p)) - float(np.einsum("ij,ij->", loc.D, S))


# ---------------------------------------------------------------------------
# Augmented state
# ---------------------------------------------------------------------------


class _Layout:
    def __init__(self, n: int):
        self.n = n
        nn = n * n
        self.x = slice(0, n)
        self.p = slice(n, 2 * n)
        self.phi = 2 * n
        self.q = slice(2 * n + 1, 2 * n + 1 + nn)
        self.pm = slice(2 * n + 1 + nn, 2 * n + 1 + 2 * nn)
        self.phi1 = 2 * n + 1 + 2 * nn
        self.size = self.phi1 + 1

    def pack(self, s: CharState) -> np.ndarray:
        y = np.empty(self.size)
        y[self.x] = s.x
        y[self.p] = s.p
        y[self.phi] = s.Phi
        y[self.q] = s.Q.ravel()
        y[self.pm] = s.P.ravel()
        y[self.phi1] = s.phi1
        return y

    def unpack(self, t: float, y: np.ndarray) -> CharState:
        n = self.n
        return CharState(
            t=t,
            x=y[self.x].copy(),
            p=y[self.p].copy(),
            Phi=float(y[self.phi]),
            Q=y[self.q].reshape(n, n).copy(),
            P=y[self.pm].reshape(n, n).copy(),
            phi1=float(y[self.phi1]),
        )


def _rhs(m: SystemModel, lay: _Layout, y: np.ndarray, sign: float) -> np.ndarray:
    n = lay.n
    x, p = y[lay.x], y[lay.p]
    Q = y[lay.q].reshape(n, n)
    P = y[lay.pm].reshape(n, n)
    loc = m.local(x)
    dx, dp = _flow(loc, p)
    h_px, h_pp, h_xx = _second_derivatives(loc, p)
    S = numkit.sym(np.linalg.solve(Q.T, P.T).T)

    out = np.empty_like(y)
    out[lay.x] = dx
    out[lay.p] = dp
    out[lay.phi] = p @ dx
    out[lay.q] = (h_px @ Q + h_pp @ P).ravel()
    out[lay.pm] = (-h_xx @ Q - h_px.T @ P).ravel()
    out[lay.phi1] = -_r_at(loc, p, S)
    return sign * out


def _rk4(m: SystemModel, lay: _Layout, y: np.ndarray, h: float, sign: float) -> np.ndarray:
    k1 = _rhs(m, lay, y, sign)
    k2 = _rhs(m, lay, y + 0.5 * h * k1, sign)
    k3 = _rhs(m, lay, y + 0.5 * h * k2, sign)
    k4 = _rhs(m, lay, y + h * k3, sign)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _energy_scale(m: SystemModel, s: CharState) -> float:
    d = m.diffusion_at(s.x)
    return max(1.0, float(s.p @ s.p) * numkit.norm(d))


def integrate(m: SystemModel, start: CharState, opts: FlowOptions) -> Characteristic:
    """Fixed-step RK4 along one characteristic until a stop condition.

    Stops on ``t_max``, on leaving ``opts.box``, when ``cond(Q)`` exceeds
    ``opts.q_cond_cap`` or when ``|x'|`` falls below 1e-12. With
    ``opts.reverse`` the flow runs backwards; ``t`` is always the elapsed time.
    """
    lay = _Layout(start.n)
    sign = -1.0 if opts.reverse else 1.0
    h0 = hamiltonian(m, start.x, start.p)
    samples = [start]
    state = start
    y = lay.pack(start)
    max_energy = abs(h0)
    termination = Termination.TIME_LIMIT
    n_steps = math.ceil(opts.t_max / opts.dt - 1e-9) if opts.t_max > 0 else 0

    for k in range(n_steps):
        dx, _ = ham_rhs(m, state.x, state.p)
        if numkit.norm(dx) < STALL_SPEED:
            termination = Termination.STALLED
            break
        h = min(opts.dt, opts.t_max - k * opts.dt)
        try:
            y_new = _rk4(m, lay, y, h, sign)
        except np.linalg.LinAlgError:
            termination = Termination.Q_SINGULAR
            break
        except DomainError as e:
            logger.info("characteristic left the model domain at t=%.6g: %s", state.t, e.message)
            termination = Termination.LEFT_DOMAIN
            break
        if not np.all(np.isfinite(y_new)):
            termination = Termination.Q_SINGULAR
            break
        y = y_new
        state = lay.unpack(min(opts.t_max, (k + 1) * opts.dt), y)
        samples.append(state)

        energy = hamiltonian(m, state.x, state.p)
        max_energy = max(max_energy, abs(energy))
        if abs(energy - h0) > ENERGY_REJECT * _energy_scale(m, state):
            raise StepRejected(state.t, energy)

        if opts.box is not None:
            lo, hi = opts.box
            if np.any(state.x < lo) or np.any(state.x > hi):
                termination = Termination.LEFT_DOMAIN
                break
        if not state.cond_Q < opts.q_cond_cap:
            termination = Termination.Q_SINGULAR
            break

    return Characteristic(samples=samples, termination=termination, max_energy=max_energy)


def integrate_all(
    m: SystemModel,
    starts: Sequence[CharState],
    opts: FlowOptions,
    *,
    threads: int = 1,
) -> list[Characteristic]:
    """Integrate independent characteristics, results in input order."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda s: integrate(m, s, opts), starts))
    return [integrate(m, s, opts) for s in starts]


# ---------------------------------------------------------------------------
# Starting data
# ---------------------------------------------------------------------------


def _fibonacci_sphere(count: int) -> np.ndarray:
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    theta = np.pi * (1.0 + 5.0**0.5) * i
    rho = np.sqrt(1.0 - z * z)
    return np.column_stack([rho * np.cos(theta), rho * np.sin(theta), z])


def ring_directions(n: int, k: int) -> np.ndarray:
    """Unit vectors for a ring of starting points, one per row.

    n = 1: the two signs; n = 2: ``k`` equally spaced angles; n = 3: ``2k``
    Fibonacci-sphere points; n > 3: ``2k`` scrambled Sobol points pushed
    through the normal quantile and normalized.
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        theta = 2.0 * np.pi * np.arange(k) / k
        return np.column_stack([np.cos(theta), np.sin(theta)])
    if n == 3:
        return _fibonacci_sphere(2 * k)
    count = 2 * k
    sobol = scipy.stats.qmc.Sobol(d=n, scramble=True, seed=0)
    u = sobol.random_base2(m=max(1, math.ceil(math.log2(count))))[:count]
    z = scipy.stats.norm.ppf(np.clip(u, 1e-12, 1.0 - 1e-12))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _state_at(ea: EquilibriumAnalysis, delta: np.ndarray) -> CharState:
    S = ea.S
    return CharState(
        t=0.0,
        x=ea.ep.x + delta,
        p=S @ delta,
        Phi=0.5 * float(delta @ S @ delta),
        Q=np.eye(ea.n),
        P=S.copy(),
        phi1=0.0,
    )


def init_ring(ea: EquilibriumAnalysis, radius: float, k: int) -> list[CharState]:
    """Starting states on the ellipse ``delta^T S delta = radius^2``."""
    w, v = np.linalg.eigh(ea.S)
    if w[0] <= 0.0:
        raise NotPositiveDefinite("ring launch needs a positive definite S")
    inv_sqrt = (v / np.sqrt(w)) @ v.T
    return [_state_at(ea, radius * inv_sqrt @ u) for u in ring_directions(ea.n, k)]


def launch_exit(ea: EquilibriumAnalysis, exit_data: ExitData, delta: float) -> tuple[CharState, CharState]:
    """States at ``saddle +/- delta * start_dir``."""
    offset = delta * exit_data.start_dir
    return _state_at(ea, offset), _state_at(ea, -offset)


@dataclass
class FanSummary:
    """Per-characteristic outcome of a fan, as listed in the flow manifest."""

    index: int
    termination: Termination
    n_samples: int
    t_end: float
    Phi_end: float
    max_energy: float


def summarize(chars: Sequence[Characteristic]) -> list[FanSummary]:
    return [
        FanSummary(
            index=i,
            termination=c.termination,
            n_samples=len(c.samples),
            t_end=c.final.t,
            Phi_end=c.final.Phi,
            max_energy=c.max_energy,
        )
        for i, c in enumerate(chars)
    ]
