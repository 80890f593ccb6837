"""Simulation command for quasipot: covariance and exit-time modes."""

from __future__ import annotations

import logging
import math

import numpy as np

from quasipot import mcoracle
from quasipot.commands.analyze import AnalyzeCommand
from quasipot.config import OutputStore, Settings
from quasipot.errors import InvalidSelection, QuasipotError
from quasipot.model import EPKind, EquilibriumPoint, SystemModel
from quasipot.schema import CovarianceReport, ExitTimeReport, matrix

logger = logging.getLogger(__name__)


class SimulateCommand:
    """Command running the Euler-Maruyama oracle."""

    def __init__(self, settings: Settings, store: OutputStore):
        self.settings = settings
        self.store = store
        self.analyzer = AnalyzeCommand(settings)

    def config(self, **kwargs) -> mcoracle.SimConfig:
        s = self.settings
        kwargs.setdefault("guard_radius", s.sim_guard_radius)
        kwargs.setdefault("chunk", s.sim_chunk)
        kwargs.setdefault("min_batches", s.sim_min_batches)
        return mcoracle.SimConfig(**kwargs)

    def attractor(self, m: SystemModel, seeds, ep_index: int | None, tol=None) -> EquilibriumPoint:
        eps = self.analyzer.equilibria(m, seeds, tol)
        if ep_index is not None:
            if not 0 <= ep_index < len(eps):
                raise InvalidSelection(f"EP index {ep_index} out of range: {len(eps)} found")
            return eps[ep_index]
        for ep in eps:
            if ep.kind is EPKind.ATTRACTOR:
                return ep
        raise InvalidSelection("no attractor found from the seed grid")

    def covariance(
        self, m: SystemModel, cfg: mcoracle.SimConfig, seeds, ep_index: int | None = None
    ) -> CovarianceReport:
        """Stationary covariance next to the prediction ``eps * S^-1`` and z-scores."""
        ep = self.attractor(m, seeds, ep_index)
        est = mcoracle.stationary_covariance(m, ep, cfg, threads=self.settings.threads)
        predicted = z = None
        try:
            ea = self.analyzer.analyze(m, ep)
            if ea.Sinv is not None:
                predicted = cfg.epsilon * ea.Sinv
                z = est.z_scores(predicted)
        except QuasipotError as e:
            logger.warning("no covariance prediction: %s", e.message)
        report = CovarianceReport(
            model=dict(m.echo),
            ep=ep.x.tolist(),
            epsilon=cfg.epsilon,
            dt=cfg.dt,
            n_steps=cfg.n_steps,
            n_paths=cfg.n_paths,
            seed=cfg.seed,
            burn_in=cfg.burn_in,
            mean=est.mean.tolist(),
            covariance=matrix(est.covariance),
            stderr=matrix(est.stderr),
            predicted=None if predicted is None else matrix(predicted),
            z_scores=None if z is None else matrix(z),
            n_effective=est.n_effective,
            n_samples=est.n_samples,
            n_diverged=est.n_diverged,
        )
        self.store.write_json("covariance.json", report.model_dump(mode="python"))
        return report

    def exit_time(
        self,
        m: SystemModel,
        cfg: mcoracle.SimConfig,
        region_text: str,
        seeds,
        x0=None,
        ep_index: int | None = None,
    ) -> ExitTimeReport:
        """Mean exit time into ``region_text``; per-path times go to ``exit_times.csv``."""
        region = mcoracle.parse_region(region_text, m.n)
        if x0 is None:
            x0 = self.attractor(m, seeds, ep_index).x
        x0 = np.asarray(x0, dtype=float)
        est = mcoracle.mean_exit_time(m, x0, region, cfg, threads=self.settings.threads)
        self.store.write_csv(
            "exit_times.csv",
            ["path", "time"],
            ([i, t] for i, t in enumerate(est.times)),
        )
        report = ExitTimeReport(
            model=dict(m.echo),
            x0=x0.tolist(),
            region=region_text,
            epsilon=cfg.epsilon,
            dt=cfg.dt,
            n_steps=cfg.n_steps,
            n_paths=cfg.n_paths,
            seed=cfg.seed,
            met=None if math.isnan(est.met) else est.met,
            stderr=None if math.isnan(est.stderr) else est.stderr,
            n_exited=est.n_exited,
            n_censored=est.n_censored,
        )
        self.store.write_json("exit_time.json", report.model_dump(mode="python"))
        return report
