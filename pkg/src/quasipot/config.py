"""Configuration module for quasipot."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

from pydantic import Field
from pydantic_settings import BaseSettings

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Numerical defaults and output location, from environment variables or .env file."""

    newton_tol: float = Field(default=1e-12, description="Newton residual tolerance")
    newton_max_iter: int = Field(default=100, description="Newton iteration cap per seed")
    dedup_tol: float = Field(default=1e-8, description="Relative distance merging EPs")
    classify_tol: float = Field(default=1e-9, description="|Re lambda| below this is marginal")
    cond_cap: float = Field(default=1e12, description="Condition estimate treated as singular")
    symmetry_tol: float = Field(default=1e-9, description="Allowed relative skew of S")
    flow_dt_factor: float = Field(
        default=1e-3,
        description="Default step as a fraction of 1/max|Re lambda|",
    )
    flow_q_cond_cap: float = Field(default=1e8, description="Stop when cond(Q) exceeds this")
    flow_box_half_width: float = Field(default=10.0, description="Integration box around the EP")
    flow_radius: float = Field(default=1e-3, description="Ring radius in the S metric")
    flow_k: int = Field(default=8, description="Ring size")
    sim_guard_radius: float = Field(default=1e6, description="Divergence guard for paths")
    sim_chunk: int = Field(default=1024, description="Steps per random-number chunk")
    sim_min_batches: int = Field(default=10, description="Minimum batches for stderr")
    threads: int = Field(default=1, description="Worker threads")
    output_dir: str = Field(default=".", description="Directory for reports and CSV files")
    log_level: str = Field(default="WARNING", description="Root log level")
    seeds: str = Field(default="-2:2:5", description="Default Newton seed grid per axis")

    model_config = {"env_file": ".env", "env_file_encoding": "utf-8", "env_prefix": "QUASIPOT_"}


def format_float(value: float) -> str:
    """Shortest decimal that reads back to the same double."""
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(float(value))


def json_ready(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_ready(v) for v in value]
    return value


def dumps(data: Any) -> str:
    """JSON text with non-finite floats as null."""
    return json.dumps(json_ready(data), indent=2, ensure_ascii=False, allow_nan=False)


class OutputStore:
    """Single writer for everything a command produces under one directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.written: list[Path] = []

    def _target(self, name: str) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / name
        self.written.append(path)
        return path

    def write_json(self, name: str, data: Any) -> Path:
        path = self._target(name)
        path.write_text(dumps(data) + "\n", encoding="utf-8")
        logger.info("wrote %s", path)
        return path

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[float]]) -> Path:
        path = self._target(name)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_float(v) for v in row])
        logger.info("wrote %s", path)
        return path


def get_settings() -> Settings:
    """Get application settings."""
    return Settings()


def get_output_store(settings: Settings | None = None, out: str | None = None) -> OutputStore:
    """Get output store instance, ``out`` overriding the configured directory."""
    if settings is None:
        settings = get_settings()
    return OutputStore(out or settings.output_dir)
