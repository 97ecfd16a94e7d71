"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line (echoed again in the terminal
summary). Limits are pinned here: wall-clock budgets, exact record counts,
and exact ledger equality are part of the contract, not tuning knobs.
"""

from __future__ import annotations

import base64
import random
import threading
import time
from contextlib import contextmanager

import pytest
import requests

from s3m.clock import ManualClock
from s3m.compute import ComputeService, JobSpec, JobState
from s3m.errors import ConflictError, PolicyDeniedError
from s3m.facility import FacilityService
from s3m.gateway import ApiRequest, Decision
from s3m.policy import PolicyEngine
from s3m.server import S3MServer
from s3m.streaming import ClusterRequest, ClusterState, StreamManager
from s3m.workflows import RunState, TaskState, WorkflowTemplate

from harness import ACCEPTANCE_LINES, TEST_POLICY, call, issue
from fifo_reference import make_job, make_world, ref_step, ref_submit


@contextmanager
def criterion(number: int, label: str):
    try:
        yield
    except BaseException:
        line = f"ACCEPTANCE {number}: FAIL - {label}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        raise
    line = f"ACCEPTANCE {number}: PASS - {label}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def _facility_config(total_nodes: int = 8) -> dict:
    return {
        "resources": [{
            "resource_id": "hpc-a", "state": "UP", "total_nodes": total_nodes,
            "environment": {"runtimes": [{"name": "python", "versions": ["3.11"]}],
                            "default_modules": []},
        }],
        "streaming_pool_nodes": 8,
    }


def test_acceptance_1_streaming_lifecycle_over_raw_http():
    with criterion(1, "streaming cluster lifecycle and 1,000 ordered messages "
                      "over raw HTTP in under 5 s"):
        clock = ManualClock()
        server = S3MServer(clock=clock, policy_document=TEST_POLICY)
        base = server.start_http("127.0.0.1:0")
        try:
            started = time.monotonic()
            with requests.Session() as http:
                minted = http.post(
                    base + "/tokens",
                    headers={"Authorization": f"Bearer {server.admin_token}"},
                    json={"user_id": "alice", "project_id": "proj-a",
                          "scopes": ["streaming.manage", "streaming.read"]},
                ).json()["token"]
                auth = {"Authorization": f"Bearer {minted}"}

                t0 = clock.now()
                created = http.post(base + "/streaming/clusters", headers=auth,
                                    json={"service_name": "rabbitmq",
                                          "cluster_name": "my-rmq-cluster",
                                          "node_count": 1, "cpu_count": 4,
                                          "ram_gib": 4})
                assert created.status_code == 201
                assert created.json()["state"] == "RUNNING"
                assert clock.now() - t0 <= 2.0  # RUNNING within 2 simulated seconds

                url = (base + "/streaming/clusters/my-rmq-cluster"
                              "/channels/results/messages")
                sent = [f"msg-{i:04d}" for i in range(1000)]
                for i, text in enumerate(sent):
                    resp = http.post(url, headers=auth, json={"payload": text})
                    assert resp.status_code == 202
                    assert resp.json()["seq"] == i + 1

                received = []
                for _ in sent:
                    got = http.get(url, headers=auth,
                                   params={"group": "g", "wait": "5"})
                    assert got.status_code == 200
                    received.append(base64.b64decode(
                        got.json()["message"]["payload_b64"]).decode())
                assert received == sent  # exact FIFO order

                stopped = http.delete(base + "/streaming/clusters/my-rmq-cluster",
                                      headers=auth)
                assert stopped.status_code == 200
                assert stopped.json()["state"] == "STOPPED"

                late = http.post(url, headers=auth, json={"payload": "too late"})
                assert late.status_code == 409

            elapsed = time.monotonic() - started
            assert elapsed < 5.0, f"lifecycle took {elapsed:.2f}s"
        finally:
            server.close()


def test_acceptance_2_three_step_workflow_threads_job_id():
    with criterion(2, "deploy / submit / check workflow chain hands the exact "
                      "JOB_ID downstream and succeeds in under 5 s"):
        started = time.monotonic()
        clock = ManualClock()
        server = S3MServer(clock=clock, policy_document=TEST_POLICY,
                           facility_config=_facility_config())
        try:
            for name, kind in (("deploy-streaming", "deploy-streaming"),
                               ("submit-job", "submit-job"),
                               ("check-job-status", "check-job-status")):
                server.workflows.register_template(
                    WorkflowTemplate(template_name=name, kind=kind))

            doc = {"kind": "Workflow", "spec": {"templates": {"dag": {"tasks": [
                {"name": "deploy-streaming-service",
                 "templateRef": {"template": "deploy-streaming"}},
                {"name": "submit-job",
                 "templateRef": {"template": "submit-job"},
                 "dependencies": ["deploy-streaming-service"],
                 "arguments": {"parameters": [
                     {"name": "sim_seconds", "value": "30"},
                     {"name": "wall_limit_seconds", "value": "600"}]}},
                {"name": "check-job-status",
                 "templateRef": {"template": "check-job-status"},
                 "dependencies": ["submit-job"],
                 "arguments": {"parameters": [
                     {"name": "JOB_ID",
                      "value": "{{tasks.submit-job.outputs.params.JOB_ID}}"}]}},
            ]}}}}

            run = server.workflows.submit_workflow("proj-a", "alice", doc)
            stop = threading.Event()

            def pump() -> None:
                while not stop.wait(0.002):
                    server.tick(advance_seconds=5)

            ticker = threading.Thread(target=pump, daemon=True)
            ticker.start()
            try:
                final = server.workflows.wait_for_run(run.workflow_id, timeout=5.0)
            finally:
                stop.set()
                ticker.join(timeout=2)

            assert final.state is RunState.SUCCEEDED, final.task_details
            submitted = final.task_outputs["submit-job"]["JOB_ID"]
            checked = final.task_outputs["check-job-status"]["JOB_ID"]
            assert submitted == checked
            assert final.task_outputs["check-job-status"]["STATE"] == "COMPLETED"
            elapsed = time.monotonic() - started
            assert elapsed < 5.0, f"workflow took {elapsed:.2f}s"
        finally:
            server.close()


def test_acceptance_3_layered_rejection_matrix():
    with criterion(3, "3x3 token/scope matrix produces the pipeline-ordered "
                      "decisions and exactly 9 audit records"):
        server = S3MServer(clock=ManualClock(), policy_document=TEST_POLICY)
        foreign = S3MServer(clock=ManualClock(), policy_document=TEST_POLICY,
                            secret=b"unrelated-signing-secret")
        try:
            body = {"resource_id": "hpc-a", "nodes": 1, "wall_limit_seconds": 3600}
            # Scope columns: sufficient scope, insufficient scope, and a
            # sufficient scope whose project has no allocation left.
            columns = [
                ("alice", "proj-a", ["compute.submit"]),
                ("alice", "proj-a", ["status.read"]),
                ("dana", "proj-broke", ["compute.submit"]),
            ]

            def minted(issuer, user, project, scopes):
                return issuer.tokens.issue_token(user, project, scopes).serialized

            cells = []
            for user, project, scopes in columns:
                cells.append((None, Decision.REJECTED_AUTHN))
            for user, project, scopes in columns:
                cells.append((minted(foreign, user, project, scopes),
                              Decision.REJECTED_AUTHN))
            expectations = [Decision.ALLOWED, Decision.REJECTED_AUTHZ,
                            Decision.REJECTED_POLICY]
            for (user, project, scopes), expected in zip(columns, expectations):
                cells.append((minted(server, user, project, scopes), expected))

            observed = []
            for token, expected in cells:
                resp = call(server, "POST", "/compute/jobs", token=token, body=body)
                records = server.gateway.audit_log()
                assert records[-1].trace_id == resp.trace_id
                observed.append((records[-1].decision, expected))

            for got, expected in observed:
                assert got is expected, observed
            records = server.gateway.audit_log()
            assert len(records) == 9
            tally = {d: 0 for d in Decision}
            for r in records:
                tally[r.decision] += 1
            assert tally[Decision.REJECTED_AUTHN] == 6
            assert tally[Decision.ALLOWED] == 1
            assert tally[Decision.REJECTED_AUTHZ] == 1
            assert tally[Decision.REJECTED_POLICY] == 1
            assert tally[Decision.ERROR] == 0
        finally:
            foreign.close()
            server.close()


def test_acceptance_4_scheduler_matches_reference_on_1000_mixes():
    with criterion(4, "1,000 random job mixes match the independent FIFO "
                      "reference state-for-state in under 30 s"):
        started = time.monotonic()
        rng = random.Random(20250814)
        for _ in range(1000):
            clock = ManualClock()
            facility = FacilityService(clock, _facility_config(total_nodes=8))
            policy = PolicyEngine(clock)
            policy.register_document({"projects": [{
                "project_id": "proj-a", "members": ["alice"],
                "resource_acl": ["hpc-a"],
                "allocations": [{"resource_id": "hpc-a", "total_units": 1e9}],
            }]})
            compute = ComputeService(clock, policy, facility)
            world = make_world(8)

            count = rng.randint(1, 6)
            records = []
            for _ in range(count):
                nodes = rng.randint(1, 8)
                wall = rng.randint(60, 7200)
                sim = rng.choice([0, 0, rng.randint(1, 1800)])
                command = rng.choice(["run", "run", "run", "fail"])
                records.append(compute.submit_job(JobSpec(
                    project_id="proj-a", resource_id="hpc-a", nodes=nodes,
                    wall_limit_seconds=wall, command=command,
                    sim_seconds=min(sim, wall))))
                ref_submit(world, make_job(nodes, wall, min(sim, wall), command))

            for _ in range(200):
                clock.advance(rng.randint(1, 3600))
                now = clock.now()
                compute.scheduler_step("hpc-a", now)
                ref_step(world, now)
                impl = [r.state.value for r in records]
                ref = [j["state"] for j in world["jobs"]]
                assert impl == ref
                assert compute.running_node_total("hpc-a") <= 8
                if all(s in ("COMPLETED", "FAILED") for s in impl):
                    break
            else:
                raise AssertionError("job mix did not quiesce")
        elapsed = time.monotonic() - started
        assert elapsed < 30.0, f"equivalence run took {elapsed:.2f}s"


def _random_dag_doc(rng: random.Random, size: int) -> list[dict]:
    tasks = []
    for i in range(size):
        deps = sorted(rng.sample(range(i), rng.randint(0, min(i, 3)))) if i else []
        task: dict = {"name": f"t{i}",
                      "templateRef": {"template": "shell-step"},
                      "arguments": {"parameters": [{"name": "SELF", "value": f"t{i}"}]}}
        if deps:
            task["dependencies"] = [f"t{d}" for d in deps]
            for d in deps:
                if rng.random() < 0.6:
                    task["arguments"]["parameters"].append(
                        {"name": f"FROM_T{d}",
                         "value": f"{{{{tasks.t{d}.outputs.params.SELF}}}}"})
        tasks.append(task)
    return tasks


def test_acceptance_5_dag_properties_over_500_random_graphs():
    with criterion(5, "500 random DAGs: completions are dependency-ordered, "
                      "planted cycles and dangling references rejected, "
                      "under 60 s"):
        started = time.monotonic()
        rng = random.Random(20250815)
        clock = ManualClock()
        server = S3MServer(clock=clock, policy_document=TEST_POLICY,
                           facility_config=_facility_config())
        try:
            server.workflows.register_template(
                WorkflowTemplate(template_name="shell-step", kind="shell-step"))

            def doc_of(tasks: list[dict]) -> dict:
                return {"kind": "Workflow",
                        "spec": {"templates": {"dag": {"tasks": tasks}}}}

            executed = rejected_cycles = rejected_dangling = 0
            for index in range(500):
                size = rng.randint(1, 12)
                tasks = _random_dag_doc(rng, size)
                variant = index % 5

                if variant == 3 and size >= 2:
                    # Plant a cycle between two tasks.
                    hi = rng.randrange(1, size)
                    lo = rng.randrange(0, hi)
                    for task, extra in ((tasks[hi], f"t{lo}"), (tasks[lo], f"t{hi}")):
                        deps = set(task.get("dependencies", []))
                        deps.add(extra)
                        task["dependencies"] = sorted(deps)
                    try:
                        server.workflows.submit_workflow("proj-a", "alice",
                                                         doc_of(tasks))
                        raise AssertionError("planted cycle accepted")
                    except Exception as exc:
                        errors = getattr(exc, "errors", [])
                        assert any("dependency cycle" in e for e in errors), errors
                    rejected_cycles += 1
                    continue

                if variant == 4 and size >= 2:
                    # Plant a reference outside the victim's dependency closure.
                    deps_by = {t["name"]: set(t.get("dependencies", []))
                               for t in tasks}

                    def closure(name: str) -> set[str]:
                        out: set[str] = set()
                        frontier = list(deps_by[name])
                        while frontier:
                            d = frontier.pop()
                            if d not in out:
                                out.add(d)
                                frontier.extend(deps_by[d])
                        return out

                    victim = tasks[rng.randrange(size)]
                    outsiders = [t["name"] for t in tasks
                                 if t["name"] != victim["name"]
                                 and t["name"] not in closure(victim["name"])]
                    if outsiders:
                        target = rng.choice(outsiders)
                        victim["arguments"]["parameters"].append(
                            {"name": "PLANTED",
                             "value": f"{{{{tasks.{target}.outputs.params.SELF}}}}"})
                        try:
                            server.workflows.submit_workflow("proj-a", "alice",
                                                             doc_of(tasks))
                            raise AssertionError("planted dangling reference accepted")
                        except Exception as exc:
                            errors = getattr(exc, "errors", [])
                            assert any("dangling interpolation" in e
                                       for e in errors), errors
                        rejected_dangling += 1
                        continue

                run = server.workflows.submit_workflow("proj-a", "alice",
                                                       doc_of(tasks))
                dep_map = {t["name"]: set(t.get("dependencies", []))
                           for t in tasks}
                deadline = time.monotonic() + 10.0
                while time.monotonic() < deadline:
                    states = dict(run.task_states)
                    done = {n for n, s in states.items()
                            if s is TaskState.SUCCEEDED}
                    for name in done:
                        # A task may only complete after all its dependencies.
                        assert dep_map[name] <= done, (name, states)
                    if len(done) == size:
                        break
                else:
                    raise AssertionError("run did not finish in time")
                final = server.workflows.wait_for_run(run.workflow_id, timeout=10.0)
                assert final.state is RunState.SUCCEEDED
                executed += 1

            assert executed >= 250
            assert rejected_cycles >= 75
            assert rejected_dangling >= 50
            elapsed = time.monotonic() - started
            assert elapsed < 60.0, f"DAG suite took {elapsed:.2f}s"
        finally:
            server.close()


def test_acceptance_6_allocation_ledger_replays_exactly():
    with criterion(6, "200 random submit/cancel/start/stop operations keep the "
                      "ledger bounded and replayable to the exact consumed sum"):
        rng = random.Random(20250816)
        clock = ManualClock()
        facility = FacilityService(clock, _facility_config(total_nodes=8))
        policy = PolicyEngine(clock)
        policy.register_document({"projects": [{
            "project_id": "proj-a", "members": ["alice"],
            "resource_acl": ["hpc-a", "streaming"],
            "allocations": [{"resource_id": "hpc-a", "total_units": 60.0},
                            {"resource_id": "streaming", "total_units": 60.0}],
        }]})
        compute = ComputeService(clock, policy, facility)
        streaming = StreamManager(clock, policy, pool_nodes=8, max_lease_hours=4.0)

        job_ids: list[str] = []
        cluster_names: list[str] = []
        ops = denials = 0
        seq = 0
        while ops < 200:
            ops += 1
            roll = rng.random()
            try:
                if roll < 0.35:
                    compute_nodes = rng.randint(1, 4)
                    record = compute.submit_job(JobSpec(
                        project_id="proj-a", resource_id="hpc-a",
                        nodes=compute_nodes,
                        wall_limit_seconds=rng.randint(600, 7200),
                        sim_seconds=rng.randint(0, 3600)))
                    job_ids.append(record.job_id)
                elif roll < 0.5 and job_ids:
                    compute.cancel_job("proj-a", rng.choice(job_ids))
                elif roll < 0.75:
                    seq += 1
                    name = f"c-{seq}"
                    cluster = streaming.start_cluster("proj-a", ClusterRequest(
                        service_name="redis", cluster_name=name,
                        node_count=rng.randint(1, 3), cpu_count=2, ram_gib=4.0))
                    if cluster.state is ClusterState.RUNNING:
                        cluster_names.append(name)
                elif cluster_names:
                    name = rng.choice(cluster_names)
                    streaming.stop_cluster("proj-a", name)
                    cluster_names.remove(name)
                else:
                    clock.advance(rng.randint(60, 3600))
                    compute.step_all(clock.now())
                    streaming.tick()
            except (PolicyDeniedError, ConflictError):
                denials += 1
            if rng.random() < 0.3:
                clock.advance(rng.randint(60, 3600))
                compute.step_all(clock.now())
                streaming.tick()
                cluster_names = [
                    n for n in cluster_names
                    if streaming.get_cluster("proj-a", n).state
                    is ClusterState.RUNNING
                ]

            for resource in ("hpc-a", "streaming"):
                snap = policy.allocation_snapshot("proj-a", resource)
                assert 0.0 <= snap.consumed_units <= snap.total_units, (
                    resource, snap.consumed_units)

        assert denials > 0  # the budget is tight enough to exercise denials
        for resource in ("hpc-a", "streaming"):
            replayed = sum(e.delta_units for e in policy.ledger_events()
                           if e.resource_id == resource
                           and e.project_id == "proj-a")
            snap = policy.allocation_snapshot("proj-a", resource)
            assert replayed == snap.consumed_units  # exact, not approximate


def test_acceptance_7_concurrent_requests_audited_one_to_one():
    with criterion(7, "100 concurrent mixed requests produce exactly 100 audit "
                      "records with distinct trace ids"):
        server = S3MServer(clock=ManualClock(), policy_document=TEST_POLICY)
        try:
            reader = issue(server, "alice", "proj-a",
                           ["status.read", "compute.read", "compute.submit"])
            narrow = issue(server, "bob", "proj-a", ["status.read"])
            total = 100
            barrier = threading.Barrier(total)
            responses: list = [None] * total

            def hit(i: int) -> None:
                barrier.wait()
                kind = i % 5
                if kind == 0:
                    responses[i] = call(server, "GET", "/status", token=reader)
                elif kind == 1:
                    responses[i] = call(server, "GET", "/status")
                elif kind == 2:
                    responses[i] = call(server, "GET", "/unknown/route",
                                        token=reader)
                elif kind == 3:
                    responses[i] = call(server, "POST", "/compute/jobs",
                                        token=narrow,
                                        body={"resource_id": "hpc-a", "nodes": 1,
                                              "wall_limit_seconds": 60})
                else:
                    responses[i] = call(server, "POST", "/compute/jobs",
                                        token=reader,
                                        body={"resource_id": "hpc-a", "nodes": 1,
                                              "wall_limit_seconds": 60})

            threads = [threading.Thread(target=hit, args=(i,))
                       for i in range(total)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()

            records = server.gateway.audit_log()
            assert len(records) == total
            assert len({r.trace_id for r in records}) == total
            assert {r.trace_id for r in records} == \
                {r.trace_id for r in responses}
        finally:
            server.close()
