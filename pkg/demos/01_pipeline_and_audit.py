"""Walk one request through the gateway's four-stage pipeline.

Every request is audited exactly once with one of five decisions. This
demo sends the same job submission with progressively better credentials
and prints the decision trail the gateway records along the way.
"""

from __future__ import annotations

from s3m.clock import ManualClock
from s3m.gateway import ApiRequest
from s3m.server import S3MServer

POLICY = {
    "projects": [
        {
            "project_id": "fusion",
            "members": ["ada"],
            "resource_acl": ["hpc-a", "streaming"],
            "allocations": [
                {"resource_id": "hpc-a", "total_units": 100},
                {"resource_id": "streaming", "total_units": 100},
            ],
        },
        {
            "project_id": "archive",
            "members": ["grace"],
            "resource_acl": ["hpc-a"],
            "allocations": [{"resource_id": "hpc-a", "total_units": 0}],
        },
    ]
}

JOB = {"resource_id": "hpc-a", "nodes": 1, "wall_limit_seconds": 600}


def submit(server: S3MServer, token: str | None, label: str) -> None:
    response = server.gateway.handle_request(
        ApiRequest("POST", "/compute/jobs", bearer_token=token, body=JOB)
    )
    record = server.gateway.audit_log()[-1]
    print(f"{label:<34} HTTP {response.status}  decision={record.decision.value}"
          f"  rule={record.detail or '-'}")


def main() -> None:
    server = S3MServer(clock=ManualClock(), policy_document=POLICY)

    print("== four credentials, four different pipeline outcomes ==")
    submit(server, None, "no token")
    submit(server, "not.even.close", "garbage token")

    wrong_scope = server.tokens.issue_token("ada", "fusion", ["status.read"])
    submit(server, wrong_scope.serialized, "valid token, wrong scope")

    broke = server.tokens.issue_token("grace", "archive", ["compute.submit"])
    submit(server, broke.serialized, "right scope, exhausted allocation")

    funded = server.tokens.issue_token("ada", "fusion", ["compute.submit"])
    submit(server, funded.serialized, "right scope, funded project")

    print("\n== stage counters ==")
    for stage, count in server.gateway.stage_counts().items():
        print(f"  {stage:<10} {count}")

    print("\n== audit trail (one record per request) ==")
    for record in server.gateway.audit_log():
        print(f"  {record.trace_id}  {record.decision.value:<16} "
              f"{record.method} {record.path}")

    server.close()


if __name__ == "__main__":
    main()
