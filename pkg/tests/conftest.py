from __future__ import annotations

import pytest

from s3m.clock import ManualClock
from s3m.server import S3MServer

from harness import ACCEPTANCE_LINES, TEST_POLICY


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def clock() -> ManualClock:
    return ManualClock()


@pytest.fixture
def server(clock: ManualClock) -> S3MServer:
    srv = S3MServer(clock=clock, policy_document=TEST_POLICY)
    yield srv
    srv.close()
