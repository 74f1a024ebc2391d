import pytest


@pytest.fixture
def acceptance_report(capfd):
    """Print a pass/fail line that bypasses output capture, so acceptance
    results stay visible in the terminal log."""

    def _report(line):
        with capfd.disabled():
            print(line, flush=True)

    return _report
