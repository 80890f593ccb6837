"""Analysis command for quasipot.

Finds the equilibrium points of a model from a seed grid, runs the local
quasipotential analysis on every non-marginal EP and the exit analysis on
saddles. Per-EP failures are reported in the document, not raised.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence

import numpy as np

from quasipot.config import Settings
from quasipot.errors import QuasipotError
from quasipot.exitproblem import ExitData, exit_direction
from quasipot.localqp import EquilibriumAnalysis, analyze_ep
from quasipot.model import EPKind, EquilibriumPoint, SystemModel, find_equilibria
from quasipot.schema import AnalysisReport, EquilibriumReport, ExitReport, complex_pairs, matrix

logger = logging.getLogger(__name__)


def exit_report(ex: ExitData) -> ExitReport:
    return ExitReport(
        lambda_plus=ex.lambda_plus,
        start_dir=ex.start_dir.tolist(),
        f=ex.f.tolist(),
        Mtilde=matrix(ex.Mtilde),
        spectrum_match=ex.spectrum_match,
        eigen_residual=ex.eigen_residual,
        similarity_residual=ex.similarity_residual,
    )


def nearest_attractor(ep: EquilibriumPoint, eps: Sequence[EquilibriumPoint]):
    attractors = [e for e in eps if e.kind is EPKind.ATTRACTOR]
    if not attractors:
        return None
    return min(attractors, key=lambda a: float(np.linalg.norm(a.x - ep.x)))


def away_direction(ep: EquilibriumPoint, eps: Sequence[EquilibriumPoint]):
    """Saddle minus the closest attractor, used to orient the exit direction."""
    att = nearest_attractor(ep, eps)
    return None if att is None else ep.x - att.x


class AnalyzeCommand:
    """Command building the analysis report of a model."""

    def __init__(self, settings: Settings):
        self.settings = settings

    def equilibria(self, m: SystemModel, seeds, tol: float | None = None) -> list[EquilibriumPoint]:
        s = self.settings
        return find_equilibria(
            m,
            seeds,
            s.newton_tol if tol is None else tol,
            dedup_tol=s.dedup_tol,
            max_iter=s.newton_max_iter,
            classify_tol=s.classify_tol,
            threads=s.threads,
        )

    def analyze(self, m: SystemModel, ep: EquilibriumPoint, *, allow_marginal: bool = False) -> EquilibriumAnalysis:
        return analyze_ep(
            m,
            ep,
            allow_marginal=allow_marginal,
            cond_cap=self.settings.cond_cap,
            symmetry_tol=self.settings.symmetry_tol,
        )

    def entry(
        self,
        m: SystemModel,
        index: int,
        ep: EquilibriumPoint,
        eps: Sequence[EquilibriumPoint],
    ) -> EquilibriumReport:
        """Analysis of one EP as a report entry.

        Args:
            m: The model.
            index: Position of the EP in the deduplicated list.
            ep: The equilibrium point.
            eps: All EPs, used to orient exit directions away from an attractor.

        Returns:
            The report entry; status is "skipped" for marginal EPs and
            "failed" when the analysis raised.
        """
        report = EquilibriumReport(
            index=index,
            x=ep.x.tolist(),
            kind=ep.kind.value,
            eigenvalues=complex_pairs(ep.spectrum.eigenvalues),
            M=matrix(ep.M),
        )
        if ep.kind is EPKind.MARGINAL:
            logger.warning("skipping marginal EP %d at %s", index, ep.x.tolist())
            report.status = "skipped"
            report.error = {"code": "marginal_equilibrium", "message": "marginal EP not analyzed"}
            return report
        try:
            ea = self.analyze(m, ep)
            d = ea.diagnostics
            report.chi = ea.chi
            report.A = matrix(ea.A)
            report.S = matrix(ea.S)
            report.Sinv = None if ea.Sinv is None else matrix(ea.Sinv)
            report.rank_S = ea.rank_S
            report.rank_M = ea.rank_M
            report.residual_freidlin = d.freidlin
            report.residual_riccati = d.riccati
            report.residual_symmetry = d.symmetry
            report.residual_lyapunov = d.lyapunov
            report.r_at_ep = d.r_at_ep
            if ep.kind is EPKind.SADDLE:
                report.exit = exit_report(exit_direction(ea, away_direction(ep, eps)))
        except QuasipotError as e:
            logger.warning("analysis of EP %d failed: %s", index, e.message)
            report.status = "failed"
            report.error = e.to_dict()
        return report

    def run(self, m: SystemModel, seeds, tol: float | None = None) -> AnalysisReport:
        eps = self.equilibria(m, seeds, tol)
        logger.info("%d equilibrium point(s) from %d seeds", len(eps), len(seeds))
        return AnalysisReport(
            model=dict(m.echo),
            n_seeds=len(seeds),
            equilibria=[self.entry(m, i, ep, eps) for i, ep in enumerate(eps)],
        )
