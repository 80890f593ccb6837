"""Kramers demonstration: the local analysis of a quadratic well or barrier at the origin."""

from __future__ import annotations

from dataclasses import asdict

import numpy as np

from quasipot import localqp, matequ, numkit
from quasipot.commands.analyze import AnalyzeCommand, exit_report
from quasipot.config import Settings
from quasipot.errors import ComplexBeta
from quasipot.exitproblem import exit_direction
from quasipot.model import KramersModel, refine_equilibrium
from quasipot.schema import DegenerateEntry, KramersDemoReport, ProbeEntry, matrix


class KramersDemoCommand:
    """Command tabulating the Kramers identities for given ``gamma`` and ``U''``."""

    def __init__(self, settings: Settings):
        self.settings = settings
        self.analyzer = AnalyzeCommand(settings)

    def run(self, gamma: float, u2: float, probe_half_width: float = 1.0) -> KramersDemoReport:
        km = KramersModel.quadratic(gamma, u2)
        m = km.system
        ep = refine_equilibrium(m, np.zeros(2), classify_tol=self.settings.classify_tol)
        ea = self.analyzer.analyze(m, ep, allow_marginal=True)
        zero = np.zeros((2, 2))

        report = KramersDemoReport(
            gamma=gamma,
            u2=u2,
            M=matrix(ep.M),
            rank_M=ea.rank_M,
            A=matrix(ea.A),
            chi=ea.chi,
            K_inverse=matrix(numkit.inverse(ea.K)),
            S_eq=matrix(ea.S),
            rank_S=ea.rank_S,
            r_eq=localqp.compute_r(m, ea.S, ep.x),
            r_zero=localqp.compute_r(m, zero, ep.x),
            residual_riccati_eq=ea.diagnostics.riccati,
            residual_riccati_zero=matequ.riccati_residual(zero, ep.M, ea.D),
        )
        try:
            for sign, label in ((1, "+"), (-1, "-")):
                deg = localqp.kramers_phi_pm(u2, gamma, sign)
                report.degenerate.append(
                    DegenerateEntry(
                        sign=label,
                        beta=deg.beta,
                        S=matrix(deg.S_pm),
                        rank=numkit.rank(deg.S_pm),
                        r=localqp.compute_r(m, deg.S_pm, ep.x),
                        residual_riccati=matequ.riccati_residual(deg.S_pm, ep.M, ea.D),
                    )
                )
            rows = localqp.minimum_principle_probe(
                u2, gamma, localqp.probe_grid(probe_half_width, 5)
            )
            report.probe = [ProbeEntry(**asdict(row)) for row in rows]
        except ComplexBeta:
            report.beta = "complex"
            report.degenerate = []
        if u2 < 0:
            report.exit = exit_report(exit_direction(ea))
        return report


def _fmt(v: float) -> str:
    return f"{v: .6g}"


def _mat(rows) -> str:
    return "; ".join(" ".join(_fmt(v) for v in row) for row in rows)


def render_text(report: KramersDemoReport) -> str:
    """Plain-text table of a demo report."""
    lines = [
        f"Kramers model  gamma = {report.gamma:g}  U'' = {report.u2:g}",
        f"  M          [{_mat(report.M)}]  rank {report.rank_M}",
        f"  A          [{_mat(report.A)}]  chi = {report.chi:.12g}",
        f"  (-D+A)^-1  [{_mat(report.K_inverse)}]",
        f"  S_eq       [{_mat(report.S_eq)}]  rank {report.rank_S}",
        f"  r(S_eq) = {report.r_eq:.6g}   r(0) = {report.r_zero:.6g}",
        f"  Riccati residual  S_eq {report.residual_riccati_eq:.3e}  "
        f"0 {report.residual_riccati_zero:.3e}",
    ]
    if report.beta == "complex":
        lines.append("  beta+-: complex (underdamped bottom)")
    for d in report.degenerate:
        lines.append(
            f"  beta{d.sign} = {d.beta:.12g}  S = [{_mat(d.S)}]  rank {d.rank}  "
            f"r = {d.r:.6g}  Riccati {d.residual_riccati:.3e}"
        )
    if report.probe:
        lines.append("")
        lines.append(
            f"  {'x':>8} {'v':>8} {'phi_eq':>10} {'phi_+':>10} {'phi_-':>10} {'min':>6} {'min*':>6}"
        )
        for p in report.probe:
            lines.append(
                f"  {p.x:8.3f} {p.v:8.3f} {p.phi_eq:10.4f} {p.phi_plus:10.4f} "
                f"{p.phi_minus:10.4f} {p.minimum:>6} {p.minimum_nontrivial:>6}"
            )
    if report.exit is not None:
        e = report.exit
        lines.append("")
        lines.append(
            f"  exit: lambda+ = {e.lambda_plus:.12g}  start_dir = "
            f"({', '.join(f'{v:.12g}' for v in e.start_dir)})  M~ = [{_mat(e.Mtilde)}]"
        )
    return "\n".join(lines) + "\n"
