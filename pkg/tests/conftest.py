import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from structhough.voting import HypothesisGrid

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def grid():
    return HypothesisGrid.for_image(120)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def voters_on_row(y, xs, w=1.0):
    """Voters on the horizontal road-frame line y = const."""
    return np.array([[x, y, w] for x in xs], dtype=float)


ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    """Context manager recording one acceptance criterion's outcome."""
    import contextlib

    @contextlib.contextmanager
    def record(number, title):
        detail = {}
        try:
            yield detail
        except BaseException:
            ACCEPTANCE[number] = (title, False, detail.get("info", ""))
            raise
        ACCEPTANCE[number] = (title, True, detail.get("info", ""))

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, info = ACCEPTANCE[n]
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{info}]" if info else ""))
