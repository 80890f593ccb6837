"""quasipot commands: analysis reports, characteristic fans, simulations and the Kramers demo."""

from quasipot.commands.analyze import AnalyzeCommand
from quasipot.commands.flow import FlowCommand
from quasipot.commands.kramers_demo import KramersDemoCommand
from quasipot.commands.simulate import SimulateCommand

__all__ = ["AnalyzeCommand", "FlowCommand", "SimulateCommand", "KramersDemoCommand"]
