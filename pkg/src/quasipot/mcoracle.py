"""Euler-Maruyama oracle for the stationary covariance and the mean exit time.

Paths are advanced together as one ``(paths, n)`` array. The normal draws of
path ``j`` for the steps of chunk ``c`` come from a Philox generator keyed by
``(seed, j)`` with its counter set to ``c``, so a draw depends only on
``(seed, path, step)`` and not on how paths are grouped.
"""

from __future__ import annotations

import logging
import math
import re
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, Field, model_validator

from quasipot import numkit
from quasipot.errors import Diverged, DomainError, NotAttractor, ParseError
from quasipot.exprdsl import compile_fn, guarded_call, parse, symbols_for
from quasipot.model import EPKind, EquilibriumPoint, SystemModel, jacobian_at

logger = logging.getLogger(__name__)

STABILITY_LIMIT = 0.1


class SimConfig(BaseModel):
    epsilon: float = Field(ge=0.0, description="noise strength")
    dt: float = Field(gt=0.0)
    n_steps: int = Field(ge=1)
    n_paths: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    burn_in: int = Field(default=0, ge=0)
    guard_radius: float = Field(default=1e6, gt=0.0)
    chunk: int = Field(default=1024, ge=1)
    min_batches: int = Field(default=10, ge=2)

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def _burn_in_before_end(self) -> SimConfig:
        if self.burn_in >= self.n_steps:
            raise ValueError(f"burn_in ({self.burn_in}) must be below n_steps ({self.n_steps})")
        return self

    def check_stable(self, ep: EquilibriumPoint) -> None:
        """Raise ValueError when ``dt * max |Re lambda(M)|`` exceeds 0.1."""
        self._check_rate(ep.spectrum.real_parts, "EP")

    def check_stable_at(self, m: SystemModel, x) -> None:
        """The same bound on the drift Jacobian at a start point.

        Away from an EP this only measures the local time scale at ``x``.
        """
        try:
            J = jacobian_at(m, x)
        except DomainError as e:
            logger.warning("step-size check skipped at %s: %s", np.asarray(x).tolist(), e.message)
            return
        self._check_rate(numkit.eig(J).eigenvalues.real, "start point")

    def _check_rate(self, real_parts, where: str) -> None:
        rate = float(np.max(np.abs(real_parts), initial=0.0))
        if self.dt * rate > STABILITY_LIMIT:
            raise ValueError(
                f"dt={self.dt} too large for the {where} time scale: "
                f"dt*|Re lambda|={self.dt * rate:.3g}"
            )


@dataclass(frozen=True, eq=False)
class McEstimate:
    mean: np.ndarray
    covariance: np.ndarray
    stderr: np.ndarray
    n_effective: int
    n_samples: int
    n_diverged: int = 0

    def z_scores(self, predicted) -> np.ndarray:
        return (self.covariance - np.asarray(predicted, dtype=float)) / self.stderr


@dataclass(frozen=True, eq=False)
class ExitTimeEstimate:
    """``met`` is NaN when no path exits within the step budget."""

    met: float
    stderr: float
    n_exited: int
    n_censored: int
    times: np.ndarray


@dataclass(frozen=True, eq=False)
class SimRun:
    final: np.ndarray
    diverged: np.ndarray
    trajectory: np.ndarray | None = None


# ---------------------------------------------------------------------------
# Ensemble stepper
# ---------------------------------------------------------------------------


class _Ensemble:
    """Euler-Maruyama state of a group of paths."""

    def __init__(self, m: SystemModel, x0, path_ids: np.ndarray, cfg: SimConfig):
        self.m = m
        self.cfg = cfg
        self.path_ids = np.asarray(path_ids, dtype=np.uint64)
        count = len(self.path_ids)
        self.x = np.array(np.broadcast_to(np.asarray(x0, dtype=float), (count, m.n)))
        self.active = np.ones(count, dtype=bool)
        self.diverged = np.zeros(count, dtype=bool)
        self.step = 0
        self._factor = None
        if m.diffusion_is_constant:
            self._factor = numkit.psd_factor(m.diffusion_at(np.zeros(m.n)))

    def _normals(self, chunk_index: int) -> np.ndarray:
        z = np.zeros((len(self.x), self.cfg.chunk, self.m.n))
        for j in np.flatnonzero(self.active):
            bitgen = np.random.Philox(
                key=np.array([self.cfg.seed, self.path_ids[j]], dtype=np.uint64),
                counter=np.array([0, chunk_index, 0, 0], dtype=np.uint64),
            )
            z[j] = np.random.Generator(bitgen).standard_normal((self.cfg.chunk, self.m.n))
        return z

    def _noise(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        if self._factor is not None:
            return z @ self._factor.T
        return np.einsum("pij,pj->pi", numkit.psd_factor(self.m.diffusion_at(x)), z)

    def retire(self, mask: np.ndarray) -> None:
        self.active &= ~mask

    def fail(self, mask: np.ndarray) -> None:
        self.diverged |= mask
        self.active &= ~mask

    def _propose(self, x: np.ndarray, z: np.ndarray | None) -> np.ndarray:
        cfg = self.cfg
        drift = self.m.drift_at(x)
        if z is None:
            return x + drift * cfg.dt
        if not self.m.diffusion_is_constant:
            drift = drift + cfg.epsilon * self.m.noise_drift_at(x)
        return x + drift * cfg.dt + math.sqrt(2.0 * cfg.epsilon * cfg.dt) * self._noise(x, z)

    def _propose_rows(self, x: np.ndarray, z: np.ndarray | None) -> np.ndarray:
        """Batch step; a path whose coefficients leave their domain gets NaN."""
        try:
            return self._propose(x, z)
        except DomainError:
            out = np.full_like(x, np.nan)
            for i in range(len(x)):
                try:
                    out[i] = self._propose(x[i : i + 1], None if z is None else z[i : i + 1])[0]
                except DomainError:
                    pass
            return out

    @property
    def done(self) -> bool:
        return self.step >= self.cfg.n_steps or not np.any(self.active)

    def advance(self) -> np.ndarray:
        """Step to the next chunk boundary (or ``n_steps``).

        Returns the states after each step, shape ``(steps, paths, n)``;
        inactive paths repeat their last value.
        """
        cfg = self.cfg
        chunk_index, offset = divmod(self.step, cfg.chunk)
        length = min(cfg.chunk - offset, cfg.n_steps - self.step)
        z = self._normals(chunk_index) if cfg.epsilon > 0 else None
        out = np.empty((length, len(self.x), self.m.n))
        for s in range(length):
            rows = np.flatnonzero(self.active)
            if rows.size:
                x_new = self._propose_rows(self.x[rows], None if z is None else z[rows, offset + s])
                with np.errstate(invalid="ignore"):
                    blown = ~np.all(np.isfinite(x_new), axis=1) | (
                        np.linalg.norm(x_new, axis=1) > cfg.guard_radius
                    )
                self.x[rows[~blown]] = x_new[~blown]
                if np.any(blown):
                    lost = rows[blown]
                    self.diverged[lost] = True
                    self.active[lost] = False
                    logger.warning("%d path(s) diverged at step %d", lost.size, self.step + s + 1)
            out[s] = self.x
        self.step += length
        return out


def _path_blocks(n_paths: int, threads: int) -> list[np.ndarray]:
    return np.array_split(np.arange(n_paths), max(1, min(threads, n_paths)))


def _map_blocks(fn: Callable, n_paths: int, threads: int) -> list:
    blocks = _path_blocks(n_paths, threads)
    if len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            return list(pool.map(fn, blocks))
    return [fn(b) for b in blocks]


# ---------------------------------------------------------------------------
# Plain simulation
# ---------------------------------------------------------------------------


def _simulate_block(m: SystemModel, x0, ids, cfg: SimConfig, record: bool) -> SimRun:
    ens = _Ensemble(m, x0, ids, cfg)
    chunks = [ens.x[None].copy()] if record else []
    while not ens.done:
        states = ens.advance()
        if record:
            chunks.append(states)
    trajectory = None
    if record:
        trajectory = np.concatenate(chunks)
        missing = cfg.n_steps + 1 - len(trajectory)
        if missing > 0:
            trajectory = np.concatenate([trajectory, np.repeat(trajectory[-1:], missing, axis=0)])
    return SimRun(final=ens.x.copy(), diverged=ens.diverged.copy(), trajectory=trajectory)


def simulate(
    m: SystemModel,
    x0,
    cfg: SimConfig,
    *,
    record: bool = False,
    threads: int = 1,
) -> SimRun:
    """Run ``cfg.n_paths`` paths from ``x0``.

    ``x_{k+1} = x_k + (a + eps div D) dt + sqrt(2 eps dt) L z_k`` with
    ``L L^T = D(x_k)``. With ``record`` the full ``(steps + 1, paths, n)``
    trajectory is kept.
    """
    x0 = np.asarray(x0, dtype=float).reshape(m.n)
    cfg.check_stable_at(m, x0)
    runs = _map_blocks(lambda ids: _simulate_block(m, x0, ids, cfg, record), cfg.n_paths, threads)
    diverged = np.concatenate([r.diverged for r in runs])
    if diverged.all():
        raise Diverged(f"all {cfg.n_paths} paths left the guard radius {cfg.guard_radius:g}")
    return SimRun(
        final=np.concatenate([r.final for r in runs]),
        diverged=diverged,
        trajectory=np.concatenate([r.trajectory for r in runs], axis=1) if record else None,
    )


# ---------------------------------------------------------------------------
# Stationary covariance
# ---------------------------------------------------------------------------


@dataclass
class _Moments:
    count: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    diverged: np.ndarray


def _moments_block(m: SystemModel, x0, ids, cfg: SimConfig, per_path: int) -> _Moments:
    n = m.n
    n_post = cfg.n_steps - cfg.burn_in
    count = np.zeros(per_path, dtype=np.int64)
    s1 = np.zeros((len(ids), per_path, n))
    s2 = np.zeros((len(ids), per_path, n, n))
    ens = _Ensemble(m, x0, ids, cfg)
    while not ens.done:
        first = ens.step + 1
        states = ens.advance()
        post = np.arange(first, first + len(states)) - cfg.burn_in - 1
        keep = post >= 0
        if not np.any(keep):
            continue
        states, post = states[keep], post[keep]
        segment = post * per_path // n_post
        for b in np.unique(segment):
            block = states[segment == b]
            count[b] += len(block)
            s1[:, b] += np.sum(block, axis=0)
            s2[:, b] += np.einsum("cpi,cpj->pij", block, block)
    return _Moments(count=count, s1=s1, s2=s2, diverged=ens.diverged.copy())


def stationary_covariance(
    m: SystemModel,
    ep: EquilibriumPoint,
    cfg: SimConfig,
    *,
    threads: int = 1,
) -> McEstimate:
    """Time- and ensemble-averaged covariance after burn-in, started at ``ep``.

    Batch means give the standard error: one batch per path, or each path
    split into equal segments when there are fewer than ``cfg.min_batches``
    paths. Diverged paths are dropped.
    """
    if ep.kind is not EPKind.ATTRACTOR:
        raise NotAttractor(f"stationary statistics need an attractor, EP is {ep.kind.value}")
    cfg.check_stable(ep)
    n_post = cfg.n_steps - cfg.burn_in
    per_path = min(n_post, max(1, math.ceil(cfg.min_batches / cfg.n_paths)))
    parts = _map_blocks(
        lambda ids: _moments_block(m, ep.x, ids, cfg, per_path), cfg.n_paths, threads
    )
    diverged = np.concatenate([p.diverged for p in parts])
    if diverged.all():
        raise Diverged(f"all {cfg.n_paths} paths left the guard radius {cfg.guard_radius:g}")
    if diverged.any():
        logger.warning("%d of %d paths diverged and were dropped", diverged.sum(), cfg.n_paths)
    count = parts[0].count
    s1 = np.concatenate([p.s1 for p in parts])[~diverged].reshape(-1, m.n)
    s2 = np.concatenate([p.s2 for p in parts])[~diverged].reshape(-1, m.n, m.n)
    counts = np.tile(count, int((~diverged).sum())).astype(float)

    total = float(np.sum(counts))
    mean = np.sum(s1, axis=0) / total
    covariance = numkit.sym(np.sum(s2, axis=0) / total - np.outer(mean, mean))
    batch_cov = s2 / counts[:, None, None] - np.outer(mean, mean)
    n_batches = len(counts)
    if n_batches > 1:
        stderr = np.std(batch_cov, axis=0, ddof=1) / math.sqrt(n_batches)
    else:
        stderr = np.full_like(covariance, np.inf)
    return McEstimate(
        mean=mean,
        covariance=covariance,
        stderr=np.maximum(stderr, np.finfo(float).tiny),
        n_effective=n_batches,
        n_samples=int(total),
        n_diverged=int(diverged.sum()),
    )


# ---------------------------------------------------------------------------
# Mean exit time
# ---------------------------------------------------------------------------


_COMPARISON = re.compile(r"<=|>=|<|>")
_OPS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "<": lambda v: v < 0.0,
    "<=": lambda v: v <= 0.0,
    ">": lambda v: v > 0.0,
    ">=": lambda v: v >= 0.0,
}


@dataclass(frozen=True, eq=False)
class Region:
    """Predicate ``lhs OP rhs`` evaluated on batches of points."""

    source: str
    n: int
    op: str
    fn: Callable

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        cols = [x[..., i] for i in range(self.n)]
        value = np.broadcast_to(np.asarray(guarded_call(self.fn, cols), dtype=float), x.shape[:-1])
        return _OPS[self.op](value)


def parse_region(text: str, n: int) -> Region:
    """Parse ``"expr OP expr"`` with OP one of ``< <= > >=``."""
    found = list(_COMPARISON.finditer(text))
    if not found:
        raise ParseError(len(text.encode("utf-8")), "expected a comparison operator")
    if len(found) > 1:
        raise ParseError(len(text[: found[1].start()].encode("utf-8")), "more than one comparison")
    op = found[0]
    shift = len(text[: op.end()].encode("utf-8"))
    lhs = parse(text[: op.start()], n)
    try:
        rhs = parse(text[op.end():], n)
    except ParseError as e:
        raise ParseError(e.offset + shift, e.message.rsplit(" at offset", 1)[0]) from e
    expr = lhs.to_sympy() - rhs.to_sympy()
    return Region(source=text, n=n, op=op.group(), fn=compile_fn(symbols_for(n), expr))


def _region_hits(region: Callable, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Region membership of ``(steps, paths, n)`` states.

    Also returns the paths that left the region's domain before their first hit.
    """
    try:
        return np.asarray(region(states), dtype=bool), np.zeros(states.shape[1], dtype=bool)
    except DomainError:
        pass
    hits = np.zeros(states.shape[:2], dtype=bool)
    bad = np.zeros(states.shape[1], dtype=bool)
    for j in range(states.shape[1]):
        try:
            hits[:, j] = np.asarray(region(states[:, j]), dtype=bool)
            continue
        except DomainError:
            pass
        for s in range(states.shape[0]):
            try:
                hits[s, j] = bool(np.asarray(region(states[s, j][None]))[0])
            except DomainError:
                bad[j] = True
                break
            if hits[s, j]:
                break
    return hits, bad


def _exit_block(m: SystemModel, x0, ids, cfg: SimConfig, region: Callable) -> tuple:
    times = np.full(len(ids), np.nan)
    if bool(np.asarray(region(x0[None]))[0]):
        times[:] = 0.0
        return times, np.zeros(len(ids), dtype=bool)
    ens = _Ensemble(m, x0, ids, cfg)
    while not ens.done:
        first = ens.step + 1
        pending = np.isnan(times) & ~ens.diverged
        states = ens.advance()
        hits, bad = _region_hits(region, states)
        hits &= pending[None, :]
        ens.fail(bad & pending & ~hits.any(axis=0))
        hit_any = hits.any(axis=0)
        first_hit = np.argmax(hits, axis=0)
        times[hit_any] = (first + first_hit[hit_any]) * cfg.dt
        ens.retire(hit_any)
    diverged = ens.diverged & np.isnan(times)
    return times, diverged


def mean_exit_time(
    m: SystemModel,
    x0,
    region: Callable,
    cfg: SimConfig,
    *,
    threads: int = 1,
) -> ExitTimeEstimate:
    """Mean first time the paths from ``x0`` satisfy ``region``.

    Paths still outside after ``n_steps`` are censored and reported, not
    counted; ``met`` is NaN if every path is censored.
    """
    x0 = np.asarray(x0, dtype=float).reshape(m.n)
    cfg.check_stable_at(m, x0)
    parts = _map_blocks(lambda ids: _exit_block(m, x0, ids, cfg, region), cfg.n_paths, threads)
    times = np.concatenate([t for t, _ in parts])
    diverged = np.concatenate([d for _, d in parts])
    if diverged.all():
        raise Diverged(f"all {cfg.n_paths} paths left the guard radius {cfg.guard_radius:g}")
    exited = ~np.isnan(times)
    n_exited = int(exited.sum())
    n_censored = int((~exited & ~diverged).sum())
    if n_censored:
        logger.warning("%d of %d paths did not exit within %d steps", n_censored, cfg.n_paths, cfg.n_steps)
    met = float(np.mean(times[exited])) if n_exited else math.nan
    stderr = float(np.std(times[exited], ddof=1) / math.sqrt(n_exited)) if n_exited > 1 else math.nan
    return ExitTimeEstimate(
        met=met,
        stderr=stderr,
        n_exited=n_exited,
        n_censored=n_censored,
        times=times,
    )
