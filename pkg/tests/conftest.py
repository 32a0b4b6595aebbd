"""Test configuration and fixtures."""
import json
from pathlib import Path
from typing import Any, Callable, Dict

import numpy as np
import pytest

from smms_lab.config import Settings, settings
from smms_lab.services import domain_grid, smms_core
from smms_lab.services.domain_grid import DiscreteDomain
from smms_lab.services.smms_core import SmmsBackground


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for randomized fields."""
    return np.random.default_rng(20240917)


@pytest.fixture
def interval_domain() -> DiscreteDomain:
    """Unit interval with 41 nodes, n = 3, m = 1."""
    return domain_grid.build_interval_domain(41, 1.0, dim_n=3, dim_m=1.0)


@pytest.fixture
def ball_domain() -> DiscreteDomain:
    """Radial unit 3-ball with 41 nodes and m = 0."""
    return domain_grid.build_radial_ball_domain(41, dim_n=3)


@pytest.fixture
def cylinder_domain() -> DiscreteDomain:
    """Small truncated half-space cylinder, n = 3, m = 1."""
    return domain_grid.build_halfspace_cylinder_domain(21, 21, 5.0, 5.0, dim_n=3, dim_m=1.0)


@pytest.fixture
def flat_ball(ball_domain: DiscreteDomain) -> SmmsBackground:
    """Flat unit 3-ball: R = 0, H = 2, phi0 = 0."""
    return smms_core.make_background(ball_domain)


@pytest.fixture
def solvable_background() -> SmmsBackground:
    """Interval [0, 4] with R = 3 cos(pi x / 4), H = 0, m = 1.

    Both first eigenvalues are negative and H <= 0, so a smaller metric exists.
    """
    domain = domain_grid.build_interval_domain(41, 4.0, dim_n=3, dim_m=1.0)
    x = domain.coordinate("x")
    return smms_core.make_background(domain, R_g0=3.0 * np.cos(np.pi * x / 4.0))


@pytest.fixture
def negative_background() -> SmmsBackground:
    """Interval with R = -1, H = 0, m = 0; the unit factor is the only solution."""
    domain = domain_grid.build_interval_domain(21, 1.0, dim_n=3)
    return smms_core.make_background(domain, R_g0=np.full(domain.node_count, -1.0))


@pytest.fixture
def positive_background() -> SmmsBackground:
    """Interval with R = 1, H = 0, m = 0; lambda1(L, B) is positive."""
    domain = domain_grid.build_interval_domain(21, 1.0, dim_n=3)
    return smms_core.make_background(domain, R_g0=np.ones(domain.node_count))


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[[Dict[str, Any]], Path]:
    """Write an experiment config into the test directory and return its path."""

    def write(payload: Dict[str, Any], name: str = "config.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path

    return write


@pytest.fixture(autouse=True)
def setup_test_env(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    """Set up test environment variables and pin the live settings to them."""
    monkeypatch.setenv("SMMS_LAB_THREADS", "2")
    monkeypatch.setenv("SMMS_LAB_LOG_LEVEL", "WARNING")
    monkeypatch.setenv("SMMS_LAB_LOG_JSON", "false")
    monkeypatch.setenv("SMMS_LAB_OUTPUT_DIR", str(tmp_path / "results"))
    monkeypatch.setenv("SMMS_LAB_SEED", "7")
    fresh = Settings(_env_file=None)
    for name in Settings.model_fields:
        monkeypatch.setattr(settings, name, getattr(fresh, name))


# Custom test markers
def pytest_configure(config: pytest.Config) -> None:
    """Configure custom pytest markers."""
    config.addinivalue_line("markers", "slow: mark test as slow running")
    config.addinivalue_line("markers", "integration: mark test as integration test")
    config.addinivalue_line("markers", "unit: mark test as unit test")
    config.addinivalue_line("markers", "grid: mark test as domain and quadrature related")
    config.addinivalue_line("markers", "core: mark test as SMMS operator related")
    config.addinivalue_line("markers", "spectral: mark test as eigenproblem related")
    config.addinivalue_line("markers", "flow: mark test as Yamabe flow related")
    config.addinivalue_line("markers", "solver: mark test as monotone or Newton solver related")
    config.addinivalue_line("markers", "variational: mark test as quotient or GNS related")
    config.addinivalue_line("markers", "cli: mark test as command-line related")
