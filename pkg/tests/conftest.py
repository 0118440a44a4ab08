import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from loopgauge import loops as lp

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

finite = st.floats(-3.0, 3.0, allow_nan=False, allow_infinity=False)


def vectors(n):
    return arrays(np.float64, (n,), elements=finite)


def nonzero_vectors(n, min_norm=0.2):
    return vectors(n).filter(lambda v: np.linalg.norm(v) > min_norm)


def unit_points(n):
    return nonzero_vectors(n).map(lambda v: v / np.linalg.norm(v))


@pytest.fixture(scope="session")
def O():
    return lp.get_instance("octonion")


@pytest.fixture(scope="session")
def Q():
    return lp.get_instance("quaternion")


@pytest.fixture
def rng():
    return np.random.default_rng(20261014)


# ---------------------------------------------------------------------------
# acceptance lines, echoed in the terminal summary so they survive capture

_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


@pytest.fixture
def criterion(request):
    lines = request.config.stash[_CRITERIA]

    def emit(number, checks):
        """checks: list of (label, value, threshold, passed). Returns overall pass."""
        ok = all(c[3] for c in checks)
        detail = "; ".join(f"{label}={value:.3g} (limit {thr:.3g}){'' if p else ' FAILED'}"
                           for label, value, thr, p in checks)
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        lines.append((number, line))
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
