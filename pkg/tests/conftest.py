from __future__ import annotations

import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from tsallis_pricing.market import MarketModel  # noqa: E402
from tsallis_pricing.pricing import PricingContext  # noqa: E402
from tsallis_pricing.qcalc import QGammaParams  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

LAM = 0.6
SEED = 7


@pytest.fixture(scope="session")
def model():
    return MarketModel(lam=LAM)


@pytest.fixture(scope="session")
def q2():
    return QGammaParams(2.0, 1.0)


@pytest.fixture(scope="session")
def small_ctx(model):
    """Cheap shared context for unit-level checks."""
    return PricingContext.build(model, 20000, 50, SEED, graded=True)


@pytest.fixture(scope="session")
def ctx(model):
    """Medium context: enough paths for 3-sigma statements on O(1) payoffs."""
    return PricingContext.build(model, 100000, 100, SEED, graded=True)


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def acceptance():
    """Records one pass/fail line per acceptance criterion."""
    def record(n: int, ok: bool, detail: str) -> None:
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
