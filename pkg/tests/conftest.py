import pytest

from ncots.env import EnvSpec
from ncots.experiments import train_heads


@pytest.fixture(scope="session")
def spec():
    return EnvSpec()


@pytest.fixture(scope="session")
def heads(spec):
    """Heads trained on the default synthetic environment (a few seconds)."""
    return train_heads(spec)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_RESULTS

    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
