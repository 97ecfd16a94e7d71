"""Service wrappers exercised against a live gateway.

These are integration tests: every call travels over real HTTP and the
assertions check the documented response documents come back untouched.
"""

from __future__ import annotations

import time

import pytest

from olcf_s3m_api import (
    ComputeService,
    OLCFAPIClient,
    S3MAuthenticationError,
    S3MConflictError,
    S3MNotFoundError,
    S3MPermissionError,
    StreamingService,
    WorkflowService,
)

ALL_USER_SCOPES = [
    "status.read", "environment.read",
    "compute.submit", "compute.read", "compute.cancel",
    "streaming.manage", "streaming.read",
    "workflows.manage", "workflows.read",
]


@pytest.fixture
def client(live, mint):
    server, base, _ = live
    c = OLCFAPIClient(token=mint(server, ALL_USER_SCOPES), base_url=base)
    yield c
    c.close()


# -- streaming ---------------------------------------------------------------

def test_streaming_cluster_lifecycle(client):
    svc = StreamingService(service_name="rabbitmq", api_client=client)

    record = svc.start_cluster("pipe", node_count=1, cpu_count=4, ram_gib=4)
    assert record["state"] == "RUNNING"
    assert record["cluster_name"] == "pipe"
    assert record["endpoint"]

    names = [c["cluster_name"] for c in svc.list_clusters()]
    assert "pipe" in names
    assert svc.get_cluster("pipe")["state"] == "RUNNING"

    stopped = svc.stop_cluster("pipe")
    assert stopped["state"] == "STOPPED"


def test_streaming_publish_receive_round_trip(client):
    svc = StreamingService(service_name="redis", api_client=client)
    svc.start_cluster("wire", node_count=1, cpu_count=2, ram_gib=2)

    assert svc.publish("wire", "telemetry", "first") == 1
    assert svc.publish("wire", "telemetry", b"\x00\x01binary") == 2

    got = svc.receive("wire", "telemetry", group="readers")
    assert got["payload"] == b"first"
    got = svc.receive("wire", "telemetry", group="readers")
    assert got["payload"] == b"\x00\x01binary"
    assert svc.receive("wire", "telemetry", group="readers") is None


def test_streaming_errors_carry_trace_ids(client):
    svc = StreamingService(service_name="rabbitmq", api_client=client)

    with pytest.raises(S3MNotFoundError) as excinfo:
        svc.stop_cluster("never-started")
    assert excinfo.value.status == 404
    assert excinfo.value.trace_id

    svc.start_cluster("once", node_count=1, cpu_count=1, ram_gib=1)
    svc.stop_cluster("once")
    with pytest.raises(S3MConflictError) as excinfo:
        svc.publish("once", "ch", "too late")
    assert excinfo.value.status == 409
    assert excinfo.value.trace_id


def test_missing_scope_surfaces_permission_error(live, mint):
    server, base, _ = live
    with OLCFAPIClient(token=mint(server, ["streaming.read"]), base_url=base) as reader:
        svc = StreamingService(service_name="rabbitmq", api_client=reader)
        assert svc.list_clusters() == []
        with pytest.raises(S3MPermissionError) as excinfo:
            svc.start_cluster("nope", node_count=1, cpu_count=1, ram_gib=1)
        assert excinfo.value.status == 403


def test_garbage_token_surfaces_authentication_error(live):
    _, base, _ = live
    with OLCFAPIClient(token="utterly.bogus.token", base_url=base) as impostor:
        svc = StreamingService(service_name="rabbitmq", api_client=impostor)
        with pytest.raises(S3MAuthenticationError) as excinfo:
            svc.list_clusters()
    assert excinfo.value.status == 401
    assert "utterly.bogus.token" not in str(excinfo.value)


# -- compute -----------------------------------------------------------------

def test_job_submit_poll_complete(live, client):
    server, _, _ = live
    svc = ComputeService(client)

    job = svc.submit_job("hpc-a", nodes=2, wall_limit_seconds=600,
                         sim_seconds=10)
    assert job["state"] == "PENDING"
    job_id = job["job_id"]

    server.tick(advance_seconds=5)   # start
    assert svc.get_job(job_id)["state"] == "RUNNING"
    server.tick(advance_seconds=10)  # finish
    assert svc.get_job(job_id)["state"] == "COMPLETED"

    assert job_id in [j["job_id"] for j in svc.list_jobs()]


def test_job_cancel(live, client):
    svc = ComputeService(client)
    job = svc.submit_job("hpc-a", nodes=1, wall_limit_seconds=600)
    cancelled = svc.cancel_job(job["job_id"])
    assert cancelled["state"] == "CANCELLED"


# -- workflows ---------------------------------------------------------------

def _workflow_doc(*tasks: dict) -> dict:
    return {"kind": "Workflow",
            "spec": {"templates": {"dag": {"tasks": list(tasks)}}}}


def _task(name: str, template: str, deps: list[str] | None = None,
          args: dict[str, str] | None = None) -> dict:
    doc: dict = {"name": name, "templateRef": {"template": template}}
    if deps:
        doc["dependencies"] = deps
    if args:
        doc["arguments"] = {"parameters": [
            {"name": k, "value": v} for k, v in args.items()]}
    return doc


def test_workflow_round_trip(live, client, tick_pump):
    server, _, _ = live
    svc = WorkflowService(client)

    svc.register_template({"template_name": "emit", "kind": "shell-step"})
    svc.register_template({"template_name": "consume", "kind": "shell-step"})
    names = {t["template_name"] for t in svc.list_templates()}
    assert names >= {"emit", "consume"}

    run = svc.submit_workflow(_workflow_doc(
        _task("a", "emit", args={"OUT": "42"}),
        _task("b", "consume", deps=["a"],
              args={"IN": "{{tasks.a.outputs.params.OUT}}"}),
    ))
    workflow_id = run["workflow_id"]

    with tick_pump(server):
        deadline = time.monotonic() + 10.0
        while time.monotonic() < deadline:
            run = svc.get_workflow(workflow_id)
            if run["state"] in ("SUCCEEDED", "FAILED", "CANCELLED"):
                break
            time.sleep(0.005)
    assert run["state"] == "SUCCEEDED"
    assert run["task_outputs"]["b"]["IN"] == "42"


def test_workflow_cancel(live, client):
    svc = WorkflowService(client)
    compute = ComputeService(client)

    # A watcher on a job that never advances keeps the run alive until
    # the cancel lands.
    svc.register_template({"template_name": "watch", "kind": "check-job-status"})
    job = compute.submit_job("hpc-a", nodes=1, wall_limit_seconds=3600)
    run = svc.submit_workflow(_workflow_doc(
        _task("only", "watch", args={"JOB_ID": job["job_id"]}),
    ))

    final = svc.cancel_workflow(run["workflow_id"])
    assert final["state"] == "CANCELLED"
    # The sweep owns only resources the run created; this job predates it.
    assert compute.get_job(job["job_id"])["state"] == "PENDING"
