"""Shared fixtures for the quasipot test suite."""

from __future__ import annotations

import numpy as np
import pytest

from quasipot.config import OutputStore, Settings
from quasipot.model import KramersModel, linear_model

OU_MATRIX = [[-1.0, 2.0], [0.0, -1.0]]
DOUBLE_WELL = "x1^4/4 - x1^2/2"


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def settings() -> Settings:
    return Settings(_env_file=None)


@pytest.fixture
def store(tmp_path) -> OutputStore:
    return OutputStore(tmp_path / "out")


@pytest.fixture
def ou_model():
    """Linear drift ``a = M x`` with ``M = [[-1, 2], [0, -1]]`` and ``D = I``."""
    return linear_model(OU_MATRIX)


@pytest.fixture
def kramers():
    """Factory for the quadratic Kramers model at the origin."""

    def make(gamma: float, u2: float) -> KramersModel:
        return KramersModel.quadratic(gamma, u2)

    return make


@pytest.fixture
def double_well():
    def make(gamma: float = 1.0) -> KramersModel:
        return KramersModel.from_source(gamma, DOUBLE_WELL)

    return make


def random_stable(rng: np.random.Generator, n: int) -> np.ndarray:
    """Random matrix shifted so every eigenvalue has real part <= -0.5."""
    m = rng.normal(size=(n, n))
    shift = float(np.max(np.linalg.eigvals(m).real)) + 0.5 + rng.uniform(0.0, 1.0)
    return m - shift * np.eye(n)


def random_psd(rng: np.random.Generator, n: int) -> np.ndarray:
    b = rng.normal(size=(n, n))
    return b @ b.T / n + 0.1 * np.eye(n)


def random_saddle(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``M = (-D + A) S`` with ``S`` of index one, so ``M`` has one unstable direction."""
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    w = rng.uniform(0.5, 2.0, size=n)
    w[0] = -w[0]
    S = q @ np.diag(w) @ q.T
    b = rng.normal(size=(n, n))
    D = random_psd(rng, n)
    return (-D + b - b.T) @ S, D
