import numpy as np
import pytest

from interfet.config import DeviceConfig
from interfet.studies import COMPARE_GRID, ReferenceCache, compare_models
from interfet.transmission import TransmissionDevice


@pytest.fixture(scope="session")
def cfg():
    return DeviceConfig()


@pytest.fixture(scope="session")
def refs(cfg):
    """Shared 960x64 reference runs, computed lazily per bias."""
    return ReferenceCache(cfg)


@pytest.fixture(scope="session")
def transmission_device(cfg):
    return TransmissionDevice(cfg)


@pytest.fixture(scope="session")
def comparison(cfg, transmission_device):
    """Dirichlet, Robin and transmission models at the standard anisotropy, with I-V curves."""
    return compare_models(cfg.replace(**COMPARE_GRID), iv=True, transmission=transmission_device)


@pytest.fixture(scope="session")
def comparison_strong_anisotropy(cfg):
    c = cfg.replace(eps_perp=0.1, **COMPARE_GRID)
    return compare_models(c)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str):
        ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
