import os

import pytest

from caml import io

DATA = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture(scope="session")
def smoke_data():
    """The fixed 64-episode, 8x8, two-agent dataset shipped under tests/data/smoke."""
    ds, cfg, seed = io.load_dataset(os.path.join(DATA, "smoke"))
    return ds


ACCEPTANCE = []


def record(number, title, ok, detail):
    """Remember one acceptance line; the session summary prints them in order."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2} ({title}): {detail}"
    ACCEPTANCE.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE):
        terminalreporter.write_line(line)
