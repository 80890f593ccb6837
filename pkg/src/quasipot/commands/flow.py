"""Characteristic fan command for quasipot."""

from __future__ import annotations

import logging

from quasipot import charflow
from quasipot.commands.analyze import AnalyzeCommand, away_direction
from quasipot.config import OutputStore, Settings
from quasipot.errors import InvalidSelection
from quasipot.exitproblem import exit_direction
from quasipot.model import SystemModel
from quasipot.schema import CharacteristicEntry, FlowManifest

logger = logging.getLogger(__name__)


class FlowCommand:
    """Command integrating characteristics from a ring or a saddle and writing CSV files."""

    def __init__(self, settings: Settings, store: OutputStore):
        self.settings = settings
        self.store = store
        self.analyzer = AnalyzeCommand(settings)

    def run(
        self,
        m: SystemModel,
        seeds,
        *,
        ep_index: int = 0,
        mode: str = "ring",
        k: int | None = None,
        radius: float | None = None,
        dt: float | None = None,
        t_max: float = 10.0,
        reverse: bool | None = None,
        box_half_width: float | None = None,
        tol: float | None = None,
    ) -> FlowManifest:
        """Integrate a fan of characteristics and write one CSV per characteristic.

        Args:
            m: The model.
            seeds: Newton seeds for locating EPs.
            ep_index: Which EP (in deduplicated order) to launch from.
            mode: "ring" around an attractor or "exit" from a saddle.
            k: Ring size; defaults to the configured ``flow_k``.
            radius: Ring radius in the S metric, or the offset along the
                exit direction; defaults to ``flow_radius``.
            dt: RK4 step; defaults to ``flow_dt_factor / max|Re lambda|``.
            t_max: Integration time.
            reverse: Run the flow backwards; defaults to True for exit launches.
            box_half_width: Domain box around the EP.
            tol: Newton tolerance.

        Returns:
            The manifest, also written as ``manifest.json``.
        """
        s = self.settings
        if mode not in ("ring", "exit"):
            raise InvalidSelection(f"unknown launch mode {mode!r}")
        eps = self.analyzer.equilibria(m, seeds, tol)
        if not 0 <= ep_index < len(eps):
            raise InvalidSelection(
                f"EP index {ep_index} out of range: {len(eps)} equilibrium point(s) found",
                {"found": len(eps)},
            )
        ep = eps[ep_index]
        ea = self.analyzer.analyze(m, ep)
        k = s.flow_k if k is None else k
        radius = s.flow_radius if radius is None else radius
        if mode == "ring":
            starts = charflow.init_ring(ea, radius, k)
        else:
            starts = list(charflow.launch_exit(ea, exit_direction(ea, away_direction(ep, eps)), radius))
        if reverse is None:
            reverse = mode == "exit"
        opts = charflow.FlowOptions(
            dt=charflow.default_dt(ep, s.flow_dt_factor) if dt is None else dt,
            t_max=t_max,
            box=charflow.box_around(
                ep.x, s.flow_box_half_width if box_half_width is None else box_half_width
            ),
            q_cond_cap=s.flow_q_cond_cap,
            reverse=reverse,
        )
        chars = charflow.integrate_all(m, starts, opts, threads=s.threads)

        header = charflow.csv_header(m.n)
        entries = []
        for summary, char in zip(charflow.summarize(chars), chars):
            name = f"char_{summary.index:03d}.csv"
            self.store.write_csv(name, header, char.rows())
            entries.append(
                CharacteristicEntry(
                    file=name,
                    termination=summary.termination.value,
                    n_samples=summary.n_samples,
                    t_end=summary.t_end,
                    Phi_end=summary.Phi_end,
                    max_energy=summary.max_energy,
                )
            )
        manifest = FlowManifest(
            model=dict(m.echo),
            ep_index=ep_index,
            ep=ep.x.tolist(),
            mode=mode,
            dt=opts.dt,
            t_max=t_max,
            reverse=reverse,
            characteristics=entries,
        )
        self.store.write_json("manifest.json", manifest.model_dump(mode="python"))
        return manifest
