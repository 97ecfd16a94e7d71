"""Run the three-step workflow: deploy a broker, submit a job, watch it.

The interesting part is the plumbing between steps. The submit step
publishes its JOB_ID as an output parameter, and the check step receives
it through an interpolation expression, so the watcher always tracks
exactly the job its own run created.
"""

from __future__ import annotations

import threading
import time

from s3m.clock import ManualClock
from s3m.server import S3MServer
from s3m.workflows import WorkflowTemplate

POLICY = {
    "projects": [{
        "project_id": "fusion",
        "members": ["ada"],
        "resource_acl": ["hpc-a", "streaming"],
        "allocations": [
            {"resource_id": "hpc-a", "total_units": 100},
            {"resource_id": "streaming", "total_units": 100},
        ],
    }]
}

WORKFLOW = {
    "kind": "Workflow",
    "spec": {"templates": {"dag": {"tasks": [
        {
            "name": "deploy-streaming-service",
            "templateRef": {"template": "deploy-streaming"},
            "arguments": {"parameters": [
                {"name": "service_name", "value": "rabbitmq"},
                {"name": "node_count", "value": "1"},
            ]},
        },
        {
            "name": "submit-job",
            "templateRef": {"template": "submit-job"},
            "dependencies": ["deploy-streaming-service"],
            "arguments": {"parameters": [
                {"name": "resource_id", "value": "hpc-a"},
                {"name": "nodes", "value": "2"},
                {"name": "wall_limit_seconds", "value": "600"},
                {"name": "sim_seconds", "value": "30"},
                {"name": "BROKER",
                 "value": "{{tasks.deploy-streaming-service.outputs.params.ENDPOINT}}"},
            ]},
        },
        {
            "name": "check-job-status",
            "templateRef": {"template": "check-job-status"},
            "dependencies": ["submit-job"],
            "arguments": {"parameters": [
                {"name": "JOB_ID",
                 "value": "{{tasks.submit-job.outputs.params.JOB_ID}}"},
            ]},
        },
    ]}}},
}


def main() -> None:
    clock = ManualClock()
    server = S3MServer(clock=clock, policy_document=POLICY)

    for name, kind in (("deploy-streaming", "deploy-streaming"),
                       ("submit-job", "submit-job"),
                       ("check-job-status", "check-job-status")):
        server.workflows.register_template(
            WorkflowTemplate(template_name=name, kind=kind))

    run = server.workflows.submit_workflow("fusion", "ada", WORKFLOW)
    print(f"submitted {run.workflow_id}\n")

    # Simulated time only moves when ticked; pump it while the run works.
    stop = threading.Event()

    def pump() -> None:
        while not stop.wait(0.002):
            server.tick(advance_seconds=5)

    ticker = threading.Thread(target=pump, daemon=True)
    ticker.start()
    try:
        run = server.workflows.wait_for_run(run.workflow_id, timeout=30)
    finally:
        stop.set()
        ticker.join()

    print(f"run state: {run.state.value}")
    for task in ("deploy-streaming-service", "submit-job", "check-job-status"):
        outs = run.task_outputs.get(task, {})
        shown = {k: outs[k] for k in sorted(outs) if k in
                 ("ENDPOINT", "JOB_ID", "STATE", "BROKER")}
        print(f"  {task:<26} {run.task_states[task].value:<10} {shown}")

    job_id = run.task_outputs["submit-job"]["JOB_ID"]
    print(f"\njob the run created: "
          f"{server.compute.get_job('fusion', job_id).state.value}")
    clusters = server.streaming.list_clusters("fusion")
    print(f"cluster the run created: "
          f"{clusters[0].cluster_name} ({clusters[0].state.value})")

    server.close()


if __name__ == "__main__":
    main()
