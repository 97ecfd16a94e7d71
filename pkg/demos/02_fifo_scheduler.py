"""Watch the strict FIFO scheduler place jobs on a simulated machine.

The machine has 4 nodes and no backfill: when the queue head does not
fit, everything behind it waits, even jobs that would fit. Time only
moves when we advance the manual clock, so the run is deterministic.
"""

from __future__ import annotations

from s3m.clock import ManualClock
from s3m.server import S3MServer

POLICY = {
    "projects": [{
        "project_id": "fusion",
        "members": ["ada"],
        "resource_acl": ["hpc-a", "streaming"],
        "allocations": [
            {"resource_id": "hpc-a", "total_units": 50},
            {"resource_id": "streaming", "total_units": 50},
        ],
    }]
}

FACILITY = {
    "resources": [{
        "resource_id": "hpc-a", "state": "UP", "total_nodes": 4,
        "environment": {"runtimes": [{"name": "python", "versions": ["3.11"]}],
                        "default_modules": []},
    }],
    "streaming_pool_nodes": 4,
}


def show(server: S3MServer, moment: str) -> None:
    jobs = server.compute.list_jobs("fusion")
    states = "  ".join(f"{j.job_id}:{j.state.value}" for j in jobs)
    snapshot = server.policy.allocation_snapshot("fusion", "hpc-a")
    print(f"{moment:<26} {states}")
    print(f"{'':<26} consumed {snapshot.consumed_units:.3f} / "
          f"{snapshot.total_units:.0f} node-hours")


def main() -> None:
    clock = ManualClock()
    server = S3MServer(clock=clock, policy_document=POLICY,
                       facility_config=FACILITY)
    from s3m.compute import JobSpec

    def submit(nodes: int, wall: int, sim: int = 0) -> str:
        record = server.compute.submit_job(JobSpec(
            project_id="fusion", resource_id="hpc-a", nodes=nodes,
            wall_limit_seconds=wall, sim_seconds=sim))
        return record.job_id

    # Three jobs: 3 + 2 + 1 nodes on a 4-node machine. While the 3-node
    # head runs, the 2-node job cannot start, and the 1-node job behind
    # it waits too even though one node is free. No backfill.
    for nodes, sim in ((3, 60), (2, 120), (1, 30)):
        submit(nodes, 600, sim)
    show(server, "after submit")

    server.tick(advance_seconds=1)
    show(server, "t+1s (head starts)")

    server.tick(advance_seconds=60)
    show(server, "t+61s (head finishes)")

    server.tick(advance_seconds=120)
    show(server, "t+181s (rest drain)")

    # Cancelling a pending job refunds its full charge; cancelling a
    # running one refunds only the unused wall time.
    late = submit(4, 3600)
    show(server, "big job queued")
    server.compute.cancel_job("fusion", late)
    show(server, "big job cancelled")

    server.close()


if __name__ == "__main__":
    main()
