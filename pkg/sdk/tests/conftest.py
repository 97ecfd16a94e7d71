from __future__ import annotations

import threading
from contextlib import contextmanager

import pytest

from s3m.clock import ManualClock
from s3m.server import S3MServer

# One funded project is enough; SDK tests exercise the client, not policy.
SDK_POLICY = {
    "projects": [
        {
            "project_id": "proj-sdk",
            "members": ["alice"],
            "resource_acl": ["hpc-a", "streaming"],
            "allocations": [
                {"resource_id": "hpc-a", "total_units": 1000},
                {"resource_id": "streaming", "total_units": 1000},
            ],
        },
    ]
}

SDK_FACILITY = {
    "resources": [{
        "resource_id": "hpc-a", "state": "UP", "total_nodes": 8,
        "environment": {"runtimes": [{"name": "python", "versions": ["3.11"]}],
                        "default_modules": []},
    }],
    "streaming_pool_nodes": 8,
}

SDK_ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if SDK_ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria (secondary)")
        for line in SDK_ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_lines() -> list[str]:
    return SDK_ACCEPTANCE_LINES


@pytest.fixture
def live():
    """Live gateway on a manual clock: (server, base_url, clock)."""
    clock = ManualClock()
    server = S3MServer(clock=clock, policy_document=SDK_POLICY,
                       facility_config=SDK_FACILITY)
    base = server.start_http("127.0.0.1:0")
    yield server, base, clock
    server.close()


@pytest.fixture
def mint():
    """Token factory: mint(server, scopes, user="alice", project="proj-sdk")."""
    def _mint(server: S3MServer, scopes, user: str = "alice",
              project: str = "proj-sdk") -> str:
        return server.tokens.issue_token(user, project, scopes).serialized
    return _mint


@pytest.fixture
def tick_pump():
    """Background thread advancing simulated time while a workflow runs."""
    @contextmanager
    def _pump(server: S3MServer, advance: float = 5.0, interval: float = 0.002):
        stop = threading.Event()

        def loop() -> None:
            while not stop.wait(interval):
                server.tick(advance_seconds=advance)

        thread = threading.Thread(target=loop, daemon=True)
        thread.start()
        try:
            yield
        finally:
            stop.set()
            thread.join(timeout=5.0)
    return _pump
