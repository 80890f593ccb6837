"""Pydantic documents: model files in, reports and manifests out."""

from __future__ import annotations

import json
from datetime import datetime, timezone
from typing import Annotated, Any, Literal, Union

import numpy as np
from pydantic import BaseModel, Discriminator, Field, Tag, TypeAdapter, ValidationError, model_validator

from quasipot import __version__
from quasipot.errors import ModelInvalid, ParseError
from quasipot.model import (
    KramersModel,
    SystemModel,
    custom_model,
    gradient_model,
    linear_model,
)

REPORT_VERSION = 1

Matrix = list[list[float]]


# ===========================================================================
#  MODEL FILES
# ===========================================================================


class CustomModelFile(BaseModel):
    """Drift and diffusion as expression strings over x1..xn."""

    n: int = Field(ge=1)
    params: dict[str, float] = Field(default_factory=dict)
    drift: list[str]
    diffusion: list[list[str]]
    name: str = "custom"

    @model_validator(mode="after")
    def _shapes(self) -> CustomModelFile:
        if len(self.drift) != self.n:
            raise ValueError(f"drift has {len(self.drift)} entries, expected n={self.n}")
        if len(self.diffusion) != self.n or any(len(r) != self.n for r in self.diffusion):
            raise ValueError(f"diffusion must be {self.n}x{self.n}")
        return self

    def build(self) -> SystemModel:
        return custom_model(self.n, self.drift, self.diffusion, self.params, self.name)


class KramersModelFile(BaseModel):
    builtin: Literal["kramers"]
    gamma: float = Field(gt=0)
    potential: str
    params: dict[str, float] = Field(default_factory=dict)

    def kramers(self) -> KramersModel:
        return KramersModel.from_source(self.gamma, self.potential, self.params)

    def build(self) -> SystemModel:
        return self.kramers().system


class GradientModelFile(BaseModel):
    builtin: Literal["gradient"]
    n: int = Field(ge=1)
    potential: str
    params: dict[str, float] = Field(default_factory=dict)
    diffusion: Matrix | None = None

    def build(self) -> SystemModel:
        return gradient_model(self.potential, self.n, self.params, self.diffusion)


class LinearModelFile(BaseModel):
    builtin: Literal["linear"]
    matrix: Matrix
    diffusion: Matrix | None = None

    def build(self) -> SystemModel:
        return linear_model(self.matrix, self.diffusion)


def _model_kind(value: Any) -> str:
    if isinstance(value, dict):
        return value.get("builtin", "custom")
    return getattr(value, "builtin", "custom")


ModelFile = Annotated[
    Union[
        Annotated[CustomModelFile, Tag("custom")],
        Annotated[KramersModelFile, Tag("kramers")],
        Annotated[GradientModelFile, Tag("gradient")],
        Annotated[LinearModelFile, Tag("linear")],
    ],
    Discriminator(_model_kind),
]

_model_file_adapter: TypeAdapter = TypeAdapter(ModelFile)


def load_model_file(text: str):
    """Validate a model document; malformed JSON is a ParseError, bad content ModelInvalid."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(len(text[: e.pos].encode("utf-8")), f"malformed JSON: {e.msg}") from e
    try:
        return _model_file_adapter.validate_python(data)
    except ValidationError as e:
        raise ModelInvalid(
            f"model file rejected: {e.error_count()} problem(s)",
            json.loads(e.json(include_url=False)),
        ) from e


# ===========================================================================
#  REPORTS
# ===========================================================================


def matrix(a) -> Matrix:
    return np.asarray(a, dtype=float).tolist()


def complex_pairs(values) -> list[list[float]]:
    return [[float(v.real), float(v.imag)] for v in np.asarray(values, dtype=complex)]


class ExitReport(BaseModel):
    lambda_plus: float
    start_dir: list[float]
    f: list[float]
    Mtilde: Matrix
    spectrum_match: bool
    eigen_residual: float
    similarity_residual: float | None = None


class EquilibriumReport(BaseModel):
    index: int
    x: list[float]
    kind: str
    eigenvalues: list[list[float]]
    M: Matrix
    status: Literal["ok", "skipped", "failed"] = "ok"
    error: dict[str, Any] | None = None
    chi: float | None = None
    A: Matrix | None = None
    S: Matrix | None = None
    Sinv: Matrix | None = None
    rank_S: int | None = None
    rank_M: int | None = None
    residual_freidlin: float | None = None
    residual_riccati: float | None = None
    residual_symmetry: float | None = None
    residual_lyapunov: float | None = None
    r_at_ep: float | None = None
    exit: ExitReport | None = None


class AnalysisReport(BaseModel):
    report_version: Literal[1] = REPORT_VERSION
    model: dict[str, Any]
    n_seeds: int
    equilibria: list[EquilibriumReport]


class CharacteristicEntry(BaseModel):
    file: str
    termination: str
    n_samples: int
    t_end: float
    Phi_end: float
    max_energy: float


class FlowManifest(BaseModel):
    report_version: Literal[1] = REPORT_VERSION
    model: dict[str, Any]
    ep_index: int
    ep: list[float]
    mode: Literal["ring", "exit"]
    dt: float
    t_max: float
    reverse: bool
    characteristics: list[CharacteristicEntry]


class CovarianceReport(BaseModel):
    report_version: Literal[1] = REPORT_VERSION
    model: dict[str, Any]
    ep: list[float]
    epsilon: float
    dt: float
    n_steps: int
    n_paths: int
    seed: int
    burn_in: int
    mean: list[float]
    covariance: Matrix
    stderr: Matrix
    predicted: Matrix | None = None
    z_scores: Matrix | None = None
    n_effective: int
    n_samples: int
    n_diverged: int


class ExitTimeReport(BaseModel):
    report_version: Literal[1] = REPORT_VERSION
    model: dict[str, Any]
    x0: list[float]
    region: str
    epsilon: float
    dt: float
    n_steps: int
    n_paths: int
    seed: int
    met: float | None
    stderr: float | None
    n_exited: int
    n_censored: int


class ProbeEntry(BaseModel):
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


class DegenerateEntry(BaseModel):
    sign: Literal["+", "-"]
    beta: float
    S: Matrix
    rank: int
    r: float
    residual_riccati: float


class KramersDemoReport(BaseModel):
    report_version: Literal[1] = REPORT_VERSION
    gamma: float
    u2: float
    M: Matrix
    rank_M: int
    A: Matrix
    chi: float
    K_inverse: Matrix
    S_eq: Matrix
    rank_S: int
    r_eq: float
    r_zero: float
    residual_riccati_eq: float
    residual_riccati_zero: float
    beta: str | None = None
    degenerate: list[DegenerateEntry] = Field(default_factory=list)
    probe: list[ProbeEntry] = Field(default_factory=list)
    exit: ExitReport | None = None


class Envelope(BaseModel):
    """Tool metadata kept outside the comparable payload."""

    tool: str = "quasipot"
    version: str = __version__
    generated_at: str = Field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds")
    )
    report: dict[str, Any]


def envelope(report: BaseModel) -> dict[str, Any]:
    return Envelope(report=report.model_dump(mode="python")).model_dump(mode="python")
