import pytest

from ergowave.integrator import StepperConfig
from ergowave.lyapunov import stationary_pool
from ergowave.model import default_model_spec


@pytest.fixture(scope="session")
def spec():
    return default_model_spec(64)


@pytest.fixture(scope="session")
def spec8():
    return default_model_spec(8)


@pytest.fixture(scope="session")
def pool_a(spec):
    """Thinned stationary pool, seed branch A (shared across test modules)."""
    cfg = StepperConfig(dt=5e-3, seed=5500)
    return stationary_pool(spec, cfg, chains=8, horizon=500.0, thin=5.0,
                           discard=100.0)


@pytest.fixture(scope="session")
def pool_b(spec):
    cfg = StepperConfig(dt=5e-3, seed=5501)
    return stationary_pool(spec, cfg, chains=8, horizon=500.0, thin=5.0,
                           discard=100.0)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            if rep.when != "call" or "test_acceptance" not in rep.nodeid:
                continue
            name = rep.nodeid.split("::")[-1]
            lines.append((name, "PASS" if status == "passed" else "FAIL"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, verdict in sorted(lines):
            terminalreporter.write_line(f"{verdict}  {name}")
