import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion, from ``record_property("criterion", ...)``."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            for key, value in rep.user_properties:
                if key == "criterion":
                    lines.append((value, outcome.upper()[:4]))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for (number, detail), verdict in sorted(lines):
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {detail}")
