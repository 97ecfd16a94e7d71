"""DAG workflow orchestration: templates, validation, and execution.

A workflow document is JSON shaped like::

    {"kind": "Workflow",
     "spec": {"templates": {"dag": {"tasks": [
         {"name": "a", "templateRef": {"template": "some-template"},
          "dependencies": ["b"],
          "arguments": {"parameters": [{"name": "P", "value": "..."}]},
          "retryLimit": 1}]}}}}

Templates are a closed set of four built-in kinds (the dispatch table in
``_TaskWorker.execute`` is the extension seam):

* ``deploy-streaming``: starts a broker cluster, outputs CLUSTER_NAME,
  ENDPOINT, and STATE;
* ``submit-job``: fire-and-forget job submission, outputs JOB_ID plus any
  output parameters declared in the job spec;
* ``check-job-status``: blocks until the referenced job is terminal and
  succeeds only when it COMPLETED;
* ``shell-step``: records its (interpolated) arguments as outputs.

Argument values may embed ``{{tasks.<task>.outputs.params.<param>}}``
expressions; substitution happens once at dispatch, with no re-interpolation
of substituted text, and the validator requires every reference to target a
transitive dependency and an output that dependency declares.

Execution: one coordinator thread per run owns all run-state mutations.
Worker threads execute READY tasks concurrently and report completions over
a queue; cancellation is signalled through an event and applied by the
coordinator, so there are no torn reads of run state. A failed task (after
its retry budget, default one retry) stops new starts, lets already-running
siblings finish, and marks everything not yet started SKIPPED.
"""

from __future__ import annotations

import queue
import re
import threading
from dataclasses import dataclass, field
from enum import Enum

from .clock import Clock
from .compute import ComputeService, JobSpec, JobState, WaitAborted, WaitTimeout
from .errors import (
    ApiError,
    ConflictError,
    NotFoundError,
    PolicyDeniedError,
    ValidationError,
)
from .facility import FacilityService
from .policy import PolicyEngine
from .streaming import ClusterRequest, ClusterState, StreamManager

TEMPLATE_KINDS = ("deploy-streaming", "submit-job", "check-job-status", "shell-step")

# Outputs every task of a given kind produces regardless of declaration.
KIND_IMPLICIT_OUTPUTS = {
    "deploy-streaming": ("CLUSTER_NAME", "ENDPOINT", "STATE"),
    "submit-job": ("JOB_ID",),
    "check-job-status": ("JOB_ID", "STATE"),
    "shell-step": (),
}

NAME_RE = re.compile(r"^[A-Za-z0-9_-]+$")
INTERP_RE = re.compile(r"\{\{tasks\.([A-Za-z0-9_-]+)\.outputs\.params\.([A-Za-z0-9_-]+)\}\}")

DEFAULT_RETRY_LIMIT = 1  # retries after the first attempt, so 2 attempts total
DEFAULT_CHECK_TIMEOUT_SECONDS = 600.0  # simulated time

# submit-job arguments that configure the job itself; anything else a task
# passes becomes one of the job's declared outputs.
JOB_FIELD_ARGS = ("resource_id", "nodes", "wall_limit_seconds", "command", "sim_seconds")


class TaskState(str, Enum):
    WAITING = "WAITING"
    READY = "READY"
    RUNNING = "RUNNING"
    SUCCEEDED = "SUCCEEDED"
    FAILED = "FAILED"
    SKIPPED = "SKIPPED"


class RunState(str, Enum):
    PENDING = "PENDING"
    RUNNING = "RUNNING"
    SUCCEEDED = "SUCCEEDED"
    FAILED = "FAILED"
    CANCELLED = "CANCELLED"


TERMINAL_RUN_STATES = {RunState.SUCCEEDED, RunState.FAILED, RunState.CANCELLED}
TERMINAL_TASK_STATES = {TaskState.SUCCEEDED, TaskState.FAILED, TaskState.SKIPPED}


@dataclass(frozen=True)
class WorkflowTemplate:
    template_name: str
    kind: str
    parameters: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()

    def validate(self) -> None:
        if not self.template_name or not NAME_RE.match(self.template_name):
            raise ValidationError(f"invalid template name: {self.template_name!r}")
        if self.kind not in TEMPLATE_KINDS:
            raise ValidationError(
                f"unknown template kind {self.kind!r}; expected one of {TEMPLATE_KINDS}"
            )
        for name in (*self.parameters, *self.outputs):
            if not NAME_RE.match(name):
                raise ValidationError(f"invalid parameter name: {name!r}")

    def declared_outputs(self) -> frozenset[str]:
        return frozenset(self.outputs) | frozenset(KIND_IMPLICIT_OUTPUTS[self.kind])

    def to_doc(self) -> dict:
        return {
            "template_name": self.template_name,
            "kind": self.kind,
            "parameters": list(self.parameters),
            "outputs": list(self.outputs),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "WorkflowTemplate":
        if not isinstance(doc, dict):
            raise ValidationError("template must be an object")
        tpl = cls(
            template_name=str(doc.get("template_name", "")),
            kind=str(doc.get("kind", "")),
            parameters=tuple(str(p) for p in doc.get("parameters", []) or []),
            outputs=tuple(str(p) for p in doc.get("outputs", []) or []),
        )
        tpl.validate()
        return tpl


@dataclass
class TaskNode:
    name: str
    template_ref: str
    dependencies: tuple[str, ...] = ()
    arguments: dict[str, str] = field(default_factory=dict)
    retry_limit: int | None = None  # None means the engine default

    def to_doc(self) -> dict:
        doc: dict = {
            "name": self.name,
            "templateRef": {"template": self.template_ref},
        }
        if self.dependencies:
            doc["dependencies"] = list(self.dependencies)
        if self.arguments:
            doc["arguments"] = {
                "parameters": [
                    {"name": k, "value": v} for k, v in self.arguments.items()
                ]
            }
        if self.retry_limit is not None:
            doc["retryLimit"] = self.retry_limit
        return doc


class UnresolvedReference(Exception):
    """An interpolation expression names an output that is not present."""


def find_references(text: str) -> list[tuple[str, str]]:
    """All (task, param) pairs referenced by interpolation expressions."""
    return [(m.group(1), m.group(2)) for m in INTERP_RE.finditer(text)]


def interpolate(text: str, task_outputs: dict[str, dict[str, str]]) -> str:
    """Substitute every interpolation expression with its stored output.

    Pure: literal text is preserved byte-for-byte and substituted values are
    never re-scanned, so outputs containing ``{{`` cannot trigger a second
    expansion.
    """

    def _lookup(match: re.Match) -> str:
        task, param = match.group(1), match.group(2)
        try:
            return task_outputs[task][param]
        except KeyError:
            raise UnresolvedReference(f"tasks.{task}.outputs.params.{param}") from None

    return INTERP_RE.sub(_lookup, text)


def parse_workflow_doc(doc: dict) -> list[TaskNode]:
    """Decode the wire document into task nodes; shape errors raise."""
    if not isinstance(doc, dict):
        raise ValidationError("workflow must be an object")
    if doc.get("kind") != "Workflow":
        raise ValidationError('workflow document must have kind "Workflow"')
    try:
        raw_tasks = doc["spec"]["templates"]["dag"]["tasks"]
    except (KeyError, TypeError):
        raise ValidationError(
            "workflow document must define spec.templates.dag.tasks"
        ) from None
    if not isinstance(raw_tasks, list) or not raw_tasks:
        raise ValidationError("spec.templates.dag.tasks must be a nonempty list")

    tasks = []
    for raw in raw_tasks:
        if not isinstance(raw, dict):
            raise ValidationError("each task must be an object")
        ref = raw.get("templateRef")
        if not isinstance(ref, dict) or not ref.get("template"):
            raise ValidationError(
                f"task {raw.get('name')!r} must carry templateRef.template"
            )
        arguments: dict[str, str] = {}
        args_doc = raw.get("arguments") or {}
        for param in args_doc.get("parameters", []) or []:
            if not isinstance(param, dict) or "name" not in param:
                raise ValidationError(
                    f"task {raw.get('name')!r} has a malformed argument parameter"
                )
            arguments[str(param["name"])] = str(param.get("value", ""))
        retry = raw.get("retryLimit")
        if retry is not None:
            try:
                retry = int(retry)
            except (TypeError, ValueError):
                raise ValidationError(
                    f"task {raw.get('name')!r} retryLimit must be an integer"
                ) from None
            if retry < 0:
                raise ValidationError(
                    f"task {raw.get('name')!r} retryLimit must be nonnegative"
                )
        tasks.append(
            TaskNode(
                name=str(raw.get("name", "")),
                template_ref=str(ref["template"]),
                dependencies=tuple(str(d) for d in raw.get("dependencies", []) or []),
                arguments=arguments,
                retry_limit=retry,
            )
        )
    return tasks


def validate_dag(
    tasks: list[TaskNode], templates: dict[str, WorkflowTemplate]
) -> list[str]:
    """Structural validation; the returned list is empty iff the DAG is runnable.

    Checks, in order: unique well-formed names, resolvable dependencies, no
    self-dependency, acyclicity, registered templates, and interpolation
    references confined to transitive dependencies and their declared
    outputs. Interpolation checks only run once the graph itself is sound,
    since transitive closures are meaningless over a broken graph.
    """
    errors: list[str] = []
    names = [t.name for t in tasks]
    name_set = set(names)

    for t in tasks:
        if not NAME_RE.match(t.name or ""):
            errors.append(f"invalid task name: {t.name!r}")
    seen: set[str] = set()
    for name in names:
        if name in seen:
            errors.append(f"duplicate task name: {name}")
        seen.add(name)

    graph_ok = not errors
    for t in tasks:
        for dep in t.dependencies:
            if dep == t.name:
                errors.append(f"task {t.name} depends on itself")
                graph_ok = False
            elif dep not in name_set:
                errors.append(f"task {t.name} depends on unknown task {dep}")
                graph_ok = False

    for t in tasks:
        if t.template_ref not in templates:
            errors.append(
                f"task {t.name} references unregistered template {t.template_ref}"
            )

    if graph_ok:
        cycle = _find_cycle_members(tasks)
        if cycle:
            errors.append("dependency cycle: " + ", ".join(sorted(cycle)))
            graph_ok = False

    if graph_ok and not errors:
        closure = _transitive_dependencies(tasks)
        by_name = {t.name: t for t in tasks}
        for t in tasks:
            for value in t.arguments.values():
                for ref_task, ref_param in find_references(value):
                    if ref_task not in closure[t.name]:
                        errors.append(
                            f"dangling interpolation in task {t.name}: "
                            f"{ref_task} is not among its dependencies"
                        )
                        continue
                    producer = by_name[ref_task]
                    tpl = templates.get(producer.template_ref)
                    if tpl is None:
                        continue  # already reported above
                    available = set(tpl.declared_outputs())
                    if tpl.kind == "shell-step":
                        available.update(producer.arguments)
                    elif tpl.kind == "submit-job":
                        # Non-job-field arguments ride along as job outputs.
                        available.update(k for k in producer.arguments
                                         if k not in JOB_FIELD_ARGS)
                    if ref_param not in available:
                        errors.append(
                            f"dangling interpolation in task {t.name}: "
                            f"{ref_task} declares no output {ref_param}"
                        )
    return errors


def _find_cycle_members(tasks: list[TaskNode]) -> set[str]:
    """Kahn's algorithm; whatever cannot be peeled off belongs to a cycle."""
    indegree = {t.name: 0 for t in tasks}
    dependents: dict[str, list[str]] = {t.name: [] for t in tasks}
    for t in tasks:
        indegree[t.name] = len(set(t.dependencies))
        for dep in set(t.dependencies):
            dependents[dep].append(t.name)
    frontier = [name for name, deg in indegree.items() if deg == 0]
    removed = 0
    while frontier:
        name = frontier.pop()
        removed += 1
        for successor in dependents[name]:
            indegree[successor] -= 1
            if indegree[successor] == 0:
                frontier.append(successor)
    if removed == len(tasks):
        return set()
    return {name for name, deg in indegree.items() if deg > 0}


def _transitive_dependencies(tasks: list[TaskNode]) -> dict[str, set[str]]:
    # Assumes the graph is acyclic and every dependency resolves.
    by_name = {t.name: t for t in tasks}
    closure: dict[str, set[str]] = {}

    def visit(name: str) -> set[str]:
        if name in closure:
            return closure[name]
        deps: set[str] = set()
        for dep in by_name[name].dependencies:
            deps.add(dep)
            deps.update(visit(dep))
        closure[name] = deps
        return deps

    for t in tasks:
        visit(t.name)
    return closure


@dataclass
class WorkflowRun:
    workflow_id: str
    project_id: str
    user_id: str
    tasks: list[TaskNode]
    state: RunState = RunState.PENDING
    task_states: dict[str, TaskState] = field(default_factory=dict)
    task_outputs: dict[str, dict[str, str]] = field(default_factory=dict)
    task_details: dict[str, str] = field(default_factory=dict)
    task_attempts: dict[str, int] = field(default_factory=dict)
    task_started_at: dict[str, float] = field(default_factory=dict)
    task_finished_at: dict[str, float] = field(default_factory=dict)
    created_at: float = 0.0
    finished_at: float | None = None
    # Resources this run created, for cancellation cleanup.
    started_job_ids: list[str] = field(default_factory=list)
    started_clusters: list[str] = field(default_factory=list)

    def to_doc(self) -> dict:
        return {
            "workflow_id": self.workflow_id,
            "project_id": self.project_id,
            "state": self.state.value,
            "task_states": {k: v.value for k, v in self.task_states.items()},
            "task_outputs": {k: dict(v) for k, v in self.task_outputs.items()},
            "task_details": dict(self.task_details),
            "task_attempts": dict(self.task_attempts),
            "created_at": self.created_at,
            "finished_at": self.finished_at,
            "tasks": [t.to_doc() for t in self.tasks],
        }


class _RunContext:
    """Execution machinery for one run, owned by its coordinator thread."""

    def __init__(self, run: WorkflowRun):
        self.run = run
        self.completions: "queue.Queue[tuple]" = queue.Queue()
        self.cancel_event = threading.Event()
        self.terminal_event = threading.Event()
        self.workers: list[threading.Thread] = []


class WorkflowEngine:
    """Template registry plus per-run coordinators over the other services."""

    def __init__(
        self,
        clock: Clock,
        policy: PolicyEngine,
        compute: ComputeService,
        streaming: StreamManager,
        facility: FacilityService,
        *,
        default_retry_limit: int = DEFAULT_RETRY_LIMIT,
        check_timeout_seconds: float = DEFAULT_CHECK_TIMEOUT_SECONDS,
    ):
        self._clock = clock
        self._policy = policy
        self._compute = compute
        self._streaming = streaming
        self._facility = facility
        self._default_retry_limit = default_retry_limit
        self._check_timeout_seconds = check_timeout_seconds
        self._lock = threading.RLock()
        self._templates: dict[str, WorkflowTemplate] = {}
        self._runs: dict[str, WorkflowRun] = {}
        self._contexts: dict[str, _RunContext] = {}
        self._seq = 0

    # -- templates -------------------------------------------------------------

    def register_template(self, template: WorkflowTemplate) -> WorkflowTemplate:
        template.validate()
        with self._lock:
            if template.template_name in self._templates:
                raise ConflictError(
                    f"template {template.template_name!r} already registered"
                )
            self._templates[template.template_name] = template
            return template

    def list_templates(self) -> list[WorkflowTemplate]:
        with self._lock:
            return list(self._templates.values())

    # -- submission --------------------------------------------------------------

    def submit_workflow(self, project_id: str, user_id: str, doc: dict) -> WorkflowRun:
        tasks = parse_workflow_doc(doc)
        with self._lock:
            errors = validate_dag(tasks, self._templates)
        if errors:
            exc = ValidationError("workflow rejected: " + "; ".join(errors))
            exc.errors = errors  # full list for programmatic callers
            raise exc
        membership = self._policy.evaluate_membership_ids(project_id, user_id)
        if not membership.allowed:
            raise PolicyDeniedError(membership.reason, rule_id=membership.rule_id)
        with self._lock:
            self._seq += 1
            run = WorkflowRun(
                workflow_id=f"wf-{self._seq:06d}",
                project_id=project_id,
                user_id=user_id,
                tasks=tasks,
                created_at=self._clock.now(),
                task_states={t.name: TaskState.WAITING for t in tasks},
            )
            ctx = _RunContext(run)
            self._runs[run.workflow_id] = run
            self._contexts[run.workflow_id] = ctx
        coordinator = threading.Thread(
            target=self._coordinate, args=(ctx,), daemon=True,
            name=f"wf-coordinator-{run.workflow_id}",
        )
        coordinator.start()
        return run

    # -- reads and cancellation ---------------------------------------------------

    def get_workflow(self, project_id: str, workflow_id: str) -> WorkflowRun:
        with self._lock:
            run = self._runs.get(workflow_id)
            if run is None or run.project_id != project_id:
                raise NotFoundError(f"unknown workflow: {workflow_id!r}")
            return run

    def cancel_workflow(self, project_id: str, workflow_id: str) -> WorkflowRun:
        with self._lock:
            run = self.get_workflow(project_id, workflow_id)
            if run.state in TERMINAL_RUN_STATES:
                raise ConflictError(f"workflow {workflow_id} already {run.state.value}")
            ctx = self._contexts[workflow_id]
        ctx.cancel_event.set()
        ctx.completions.put(("cancel",))
        # The coordinator owns every run mutation; wait for it to finish the
        # abort so the returned record is terminal. In-flight waits poll the
        # cancel event, so this settles in tens of milliseconds.
        ctx.terminal_event.wait(timeout=30.0)
        return run

    def wait_for_run(self, workflow_id: str, timeout: float | None = None) -> WorkflowRun:
        """Test helper: block (real time) until the run is terminal."""
        with self._lock:
            ctx = self._contexts.get(workflow_id)
            run = self._runs.get(workflow_id)
        if run is None or ctx is None:
            raise NotFoundError(f"unknown workflow: {workflow_id!r}")
        ctx.terminal_event.wait(timeout)
        return run

    # -- coordinator --------------------------------------------------------------

    def _coordinate(self, ctx: _RunContext) -> None:
        run = ctx.run
        run.state = RunState.RUNNING
        failed = False
        in_flight = 0
        try:
            while True:
                if ctx.cancel_event.is_set():
                    self._abort(ctx, in_flight)
                    return
                if not failed:
                    in_flight += self._start_ready_tasks(ctx)
                if in_flight == 0:
                    break
                item = ctx.completions.get()
                if item[0] == "cancel":
                    self._abort(ctx, in_flight)
                    return
                _, task_name, outcome, outputs, detail = item
                in_flight -= 1
                run.task_states[task_name] = outcome
                run.task_finished_at[task_name] = self._clock.now()
                if detail:
                    run.task_details[task_name] = detail
                if outcome is TaskState.SUCCEEDED:
                    run.task_outputs[task_name] = outputs
                elif outcome is TaskState.FAILED:
                    failed = True

            if failed:
                for name, state in run.task_states.items():
                    if state is TaskState.WAITING:
                        run.task_states[name] = TaskState.SKIPPED
                run.state = RunState.FAILED
            else:
                run.state = RunState.SUCCEEDED
        except Exception as exc:  # engine bug; fail the run, never crash the host
            run.state = RunState.FAILED
            run.task_details["__engine__"] = f"coordinator error: {exc}"
        finally:
            run.finished_at = self._clock.now()
            ctx.terminal_event.set()

    def _start_ready_tasks(self, ctx: _RunContext) -> int:
        """Move dependency-satisfied WAITING tasks through READY into workers."""
        run = ctx.run
        started = 0
        for task in run.tasks:
            if run.task_states[task.name] is not TaskState.WAITING:
                continue
            if all(
                run.task_states.get(dep) is TaskState.SUCCEEDED
                for dep in task.dependencies
            ):
                run.task_states[task.name] = TaskState.READY
                worker = threading.Thread(
                    target=self._run_task, args=(ctx, task), daemon=True,
                    name=f"wf-task-{run.workflow_id}-{task.name}",
                )
                run.task_states[task.name] = TaskState.RUNNING
                run.task_started_at[task.name] = self._clock.now()
                ctx.workers.append(worker)
                worker.start()
                started += 1
        return started

    def _abort(self, ctx: _RunContext, in_flight: int) -> None:
        """Cancel path: drain workers, release resources, settle task states."""
        run = ctx.run
        while in_flight > 0:
            item = ctx.completions.get()
            if item[0] == "cancel":
                continue
            _, task_name, outcome, outputs, detail = item
            in_flight -= 1
            # Work finished after the cancel decision is discarded as SKIPPED;
            # the resources it touched are swept below.
            run.task_states[task_name] = TaskState.SKIPPED
            run.task_finished_at[task_name] = self._clock.now()
            run.task_details[task_name] = detail or "aborted by cancellation"
        for name, state in run.task_states.items():
            if state in (TaskState.WAITING, TaskState.READY):
                run.task_states[name] = TaskState.SKIPPED
        self._release_resources(run)
        run.state = RunState.CANCELLED

    def _release_resources(self, run: WorkflowRun) -> None:
        for job_id in run.started_job_ids:
            try:
                self._compute.cancel_job(run.project_id, job_id)
            except ApiError:
                pass  # already terminal
        for cluster_name in run.started_clusters:
            try:
                self._streaming.stop_cluster(
                    run.project_id, cluster_name, detail="workflow cancelled"
                )
            except ApiError:
                pass  # already stopped or failed

    # -- task execution -------------------------------------------------------------

    def _run_task(self, ctx: _RunContext, task: TaskNode) -> None:
        run = ctx.run
        retry_limit = (
            task.retry_limit if task.retry_limit is not None else self._default_retry_limit
        )
        attempts_allowed = retry_limit + 1
        attempt = 0
        detail = ""
        while attempt < attempts_allowed:
            attempt += 1
            run.task_attempts[task.name] = attempt
            if ctx.cancel_event.is_set():
                ctx.completions.put(
                    ("done", task.name, TaskState.SKIPPED, {}, "aborted by cancellation")
                )
                return
            try:
                outputs = self._execute(ctx, task)
                ctx.completions.put(("done", task.name, TaskState.SUCCEEDED, outputs, ""))
                return
            except WaitAborted:
                ctx.completions.put(
                    ("done", task.name, TaskState.SKIPPED, {}, "aborted by cancellation")
                )
                return
            except UnresolvedReference as exc:
                # A structural fault; retrying cannot resolve it.
                detail = f"unresolved parameter: {exc}"
                break
            except Exception as exc:
                detail = str(exc) or type(exc).__name__
        ctx.completions.put(("done", task.name, TaskState.FAILED, {}, detail))

    def _execute(self, ctx: _RunContext, task: TaskNode) -> dict[str, str]:
        run = ctx.run
        template = self._templates[task.template_ref]
        args = {
            name: interpolate(value, run.task_outputs)
            for name, value in task.arguments.items()
        }
        if template.kind == "deploy-streaming":
            return self._execute_deploy(run, task, args)
        if template.kind == "submit-job":
            return self._execute_submit(run, task, args)
        if template.kind == "check-job-status":
            return self._execute_check(ctx, task, args)
        return dict(args)  # shell-step: arguments become outputs

    def _execute_deploy(self, run: WorkflowRun, task: TaskNode,
                        args: dict[str, str]) -> dict[str, str]:
        name = args.get("cluster_name") or _derive_cluster_name(run.workflow_id, task.name)
        request = ClusterRequest(
            service_name=args.get("service_name", "rabbitmq"),
            cluster_name=name,
            node_count=int(args.get("node_count", 1)),
            cpu_count=int(args.get("cpu_count", 1)),
            ram_gib=float(args.get("ram_gib", 1)),
        )
        decision = self._policy.evaluate_resource(
            run.project_id, run.user_id, "streaming",
            self._streaming.lease_cost(request.node_count),
        )
        if not decision.allowed:
            raise ValidationError(f"policy denied cluster start: {decision.reason}")
        cluster = self._streaming.start_cluster(run.project_id, request)
        if cluster.state is not ClusterState.RUNNING:
            raise ValidationError(f"cluster did not start: {cluster.detail}")
        run.started_clusters.append(cluster.cluster_name)
        return {
            "CLUSTER_NAME": cluster.cluster_name,
            "ENDPOINT": cluster.endpoint,
            "STATE": cluster.state.value,
        }

    def _execute_submit(self, run: WorkflowRun, task: TaskNode,
                        args: dict[str, str]) -> dict[str, str]:
        resource_id = args.get("resource_id") or self._facility.resource_ids()[0]
        # Arguments beyond the job fields ride along as declared job outputs.
        extra = {k: v for k, v in args.items() if k not in JOB_FIELD_ARGS}
        spec = JobSpec(
            project_id=run.project_id,
            resource_id=resource_id,
            nodes=int(args.get("nodes", 1)),
            wall_limit_seconds=int(args.get("wall_limit_seconds", 3600)),
            command=args.get("command", "run"),
            sim_seconds=int(args.get("sim_seconds", 0)),
            output_params=extra,
        )
        from .compute import job_cost_node_hours

        decision = self._policy.evaluate_resource(
            run.project_id, run.user_id, resource_id,
            job_cost_node_hours(spec.nodes, spec.wall_limit_seconds),
        )
        if not decision.allowed:
            raise ValidationError(f"policy denied job submission: {decision.reason}")
        record = self._compute.submit_job(spec)
        run.started_job_ids.append(record.job_id)
        outputs = {"JOB_ID": record.job_id}
        outputs.update(spec.output_params)
        return outputs

    def _execute_check(self, ctx: _RunContext, task: TaskNode,
                       args: dict[str, str]) -> dict[str, str]:
        job_id = args.get("JOB_ID", "")
        if not job_id:
            raise ValidationError(f"task {task.name} requires a JOB_ID argument")
        timeout = float(args.get("TIMEOUT_SECONDS", self._check_timeout_seconds))
        deadline = self._clock.now() + timeout
        try:
            record = self._compute.wait_until_terminal(
                ctx.run.project_id, job_id,
                sim_deadline=deadline, abort=ctx.cancel_event,
            )
        except WaitTimeout:
            raise ValidationError(
                f"job {job_id} not terminal within {timeout:.0f} simulated seconds"
            ) from None
        if record.state is not JobState.COMPLETED:
            raise ValidationError(f"job {job_id} ended {record.state.value}")
        return {"JOB_ID": job_id, "STATE": record.state.value}


def _derive_cluster_name(workflow_id: str, task_name: str) -> str:
    # Cluster names are stricter than task names: lowercase, hyphens only.
    raw = f"{workflow_id}-{task_name}".lower()
    cleaned = re.sub(r"[^a-z0-9-]", "-", raw).strip("-")
    return cleaned[:63].rstrip("-") or "wf-cluster"
