"""Job submission, tracking, and cancellation on a simulated cluster.

The scheduler is deliberately the simplest deterministic policy: strict FIFO
with no backfill. A step does two phases, in order:

1. finish: RUNNING jobs whose simulated duration has elapsed become
   COMPLETED (or FAILED when the command is the sentinel ``fail``); jobs
   cancelled while running give their nodes back here;
2. start: PENDING jobs start strictly in submission order while capacity
   remains; when the queue head does not fit, everything behind it waits.

Simulated duration is ``min(wall_limit, sim_seconds)`` of injected clock
time (``sim_seconds`` defaults to 0, so by default a job completes on the
step after it starts). Steps are driven by the server's background ticker
or synchronously through the admin tick endpoint.

Scheduling policy is a documented swap-point; everything else in this module
is plain bookkeeping around the job state machine.

Allocation charging: a job costs ``nodes x wall_limit`` node-hours, debited
at submission. Cancellation refunds the unused share pro-rata on wall_limit;
normal completion keeps the full charge.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .clock import Clock
from .errors import ConflictError, NotFoundError, ValidationError
from .facility import FacilityService, ResourceState
from .policy import PolicyEngine


class JobState(str, Enum):
    PENDING = "PENDING"
    RUNNING = "RUNNING"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"
    CANCELLED = "CANCELLED"


TERMINAL_STATES = {JobState.COMPLETED, JobState.FAILED, JobState.CANCELLED}

# The one command the simulator interprets: it forces the job to FAIL.
FAIL_COMMAND = "fail"


def job_cost_node_hours(nodes: int, wall_limit_seconds: float) -> float:
    return nodes * wall_limit_seconds / 3600.0


@dataclass
class JobSpec:
    project_id: str
    resource_id: str
    nodes: int
    wall_limit_seconds: int
    command: str = ""
    sim_seconds: int = 0
    output_params: dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        if not self.project_id:
            raise ValidationError("project_id must be nonempty")
        if not self.resource_id:
            raise ValidationError("resource_id must be nonempty")
        if self.nodes < 1:
            raise ValidationError("nodes must be >= 1")
        if self.wall_limit_seconds <= 0:
            raise ValidationError("wall_limit_seconds must be positive")
        if self.sim_seconds < 0:
            raise ValidationError("sim_seconds must be nonnegative")

    @property
    def sim_duration(self) -> float:
        return min(self.wall_limit_seconds, self.sim_seconds)

    def to_doc(self) -> dict:
        return {
            "project_id": self.project_id,
            "resource_id": self.resource_id,
            "nodes": self.nodes,
            "wall_limit_seconds": self.wall_limit_seconds,
            "command": self.command,
            "sim_seconds": self.sim_seconds,
            "output_params": dict(self.output_params),
        }

    @classmethod
    def from_doc(cls, doc: dict, default_project: str | None = None) -> "JobSpec":
        if not isinstance(doc, dict):
            raise ValidationError("job spec must be an object")
        project = doc.get("project_id", default_project)
        try:
            spec = cls(
                project_id=str(project) if project else "",
                resource_id=str(doc.get("resource_id", "")),
                nodes=int(doc.get("nodes", 0)),
                wall_limit_seconds=int(doc.get("wall_limit_seconds", 0)),
                command=str(doc.get("command", "")),
                sim_seconds=int(doc.get("sim_seconds", 0)),
                output_params={
                    str(k): str(v) for k, v in (doc.get("output_params") or {}).items()
                },
            )
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"malformed job spec: {exc}") from exc
        spec.validate()
        return spec


@dataclass
class JobRecord:
    job_id: str
    spec: JobSpec
    state: JobState = JobState.PENDING
    submitted_at: float = 0.0
    started_at: float | None = None
    finished_at: float | None = None
    exit_detail: str = ""
    charged_units: float = 0.0
    refunded_units: float = 0.0

    def to_doc(self) -> dict:
        return {
            "job_id": self.job_id,
            "spec": self.spec.to_doc(),
            "state": self.state.value,
            "submitted_at": self.submitted_at,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "exit_detail": self.exit_detail,
            "charged_units": self.charged_units,
            "refunded_units": self.refunded_units,
        }


@dataclass(frozen=True)
class Transition:
    job_id: str
    from_state: JobState
    to_state: JobState
    at: float

    def to_doc(self) -> dict:
        return {
            "job_id": self.job_id,
            "from": self.from_state.value,
            "to": self.to_state.value,
            "at": self.at,
        }


class WaitTimeout(Exception):
    """A wait_until_terminal deadline (simulated time) passed."""


class WaitAborted(Exception):
    """The abort event fired while waiting on a job."""


class _ClusterModel:
    """Capacity bookkeeping for one resource: FIFO queue + running set."""

    def __init__(self, resource_id: str, total_nodes: int):
        self.resource_id = resource_id
        self.total_nodes = total_nodes
        self.queue: deque[str] = deque()
        self.running: list[str] = []  # in start order

    def free_nodes(self, jobs: dict[str, JobRecord]) -> int:
        used = sum(jobs[jid].spec.nodes for jid in self.running)
        return self.total_nodes - used


class ComputeService:
    """Simulated scheduler behind the job endpoints.

    All mutations share one lock (a coarser serialization than the per-resource
    minimum, which keeps the capacity invariant trivially safe); a condition on
    that lock wakes ``wait_until_terminal`` callers after every transition.
    """

    def __init__(self, clock: Clock, policy: PolicyEngine, facility: FacilityService):
        self._clock = clock
        self._policy = policy
        self._facility = facility
        self._lock = threading.RLock()
        self._transitioned = threading.Condition(self._lock)
        self._jobs: dict[str, JobRecord] = {}
        self._clusters: dict[str, _ClusterModel] = {}
        self._seq = 0

    def _cluster(self, resource_id: str) -> _ClusterModel:
        model = self._clusters.get(resource_id)
        if model is None:
            model = _ClusterModel(resource_id, self._facility.total_nodes(resource_id))
            self._clusters[resource_id] = model
        return model

    # -- submission ----------------------------------------------------------

    def submit_job(self, spec: JobSpec) -> JobRecord:
        """Charge the allocation and enqueue the job in PENDING.

        The gateway has already authenticated, scope-checked, and policy
        evaluated; the consume here is the atomic commit of the allocation
        cost, so concurrent submissions cannot overdraw.
        """
        spec.validate()
        if spec.resource_id not in self._facility.resource_ids():
            raise NotFoundError(f"unknown resource: {spec.resource_id!r}")
        now = self._clock.now()
        if self._facility.effective_state(spec.resource_id, now) is ResourceState.MAINTENANCE:
            raise ConflictError(f"resource {spec.resource_id!r} is in maintenance")
        total = self._facility.total_nodes(spec.resource_id)
        if spec.nodes > total:
            raise ValidationError(
                f"job exceeds cluster size: {spec.nodes} nodes requested, "
                f"{total} available on {spec.resource_id!r}"
            )
        cost = job_cost_node_hours(spec.nodes, spec.wall_limit_seconds)
        # Raises PolicyDeniedError on overdraft; nothing is enqueued then.
        self._policy.consume(spec.project_id, spec.resource_id, cost)
        with self._lock:
            self._seq += 1
            record = JobRecord(
                job_id=f"{self._seq:07d}",
                spec=spec,
                submitted_at=now,
                charged_units=cost,
            )
            self._jobs[record.job_id] = record
            self._cluster(spec.resource_id).queue.append(record.job_id)
            return record

    # -- scheduling ----------------------------------------------------------

    def scheduler_step(self, resource_id: str, now: float | None = None) -> list[Transition]:
        if now is None:
            now = self._clock.now()
        transitions: list[Transition] = []
        with self._lock:
            model = self._clusters.get(resource_id)
            if model is None:
                return transitions

            # Phase 1: finish elapsed jobs and reap cancelled ones.
            for jid in list(model.running):
                job = self._jobs[jid]
                if job.state is JobState.CANCELLED:
                    model.running.remove(jid)  # nodes freed one step after cancel
                    continue
                assert job.started_at is not None
                if job.started_at + job.spec.sim_duration <= now:
                    target = (
                        JobState.FAILED
                        if job.spec.command == FAIL_COMMAND
                        else JobState.COMPLETED
                    )
                    transitions.append(self._transition(job, target, now))
                    job.finished_at = now
                    job.exit_detail = (
                        "simulated failure" if target is JobState.FAILED else "completed"
                    )
                    model.running.remove(jid)

            # Phase 2: strict FIFO starts; a blocked head blocks everyone.
            while model.queue:
                head = self._jobs[model.queue[0]]
                if head.state is JobState.CANCELLED:
                    model.queue.popleft()
                    continue
                if head.spec.nodes <= model.free_nodes(self._jobs):
                    model.queue.popleft()
                    transitions.append(self._transition(head, JobState.RUNNING, now))
                    head.started_at = now
                    model.running.append(head.job_id)
                else:
                    break

            if transitions:
                self._transitioned.notify_all()
        return transitions

    def step_all(self, now: float | None = None) -> list[Transition]:
        if now is None:
            now = self._clock.now()
        transitions: list[Transition] = []
        with self._lock:
            resource_ids = list(self._clusters)
        for rid in resource_ids:
            transitions.extend(self.scheduler_step(rid, now))
        return transitions

    def _transition(self, job: JobRecord, to_state: JobState, at: float) -> Transition:
        # Caller holds the lock. The transition graph is enforced here and
        # nowhere else: PENDING->RUNNING|CANCELLED, RUNNING->terminal.
        legal = {
            JobState.PENDING: {JobState.RUNNING, JobState.CANCELLED},
            JobState.RUNNING: {JobState.COMPLETED, JobState.FAILED, JobState.CANCELLED},
        }
        if to_state not in legal.get(job.state, set()):
            raise ConflictError(f"illegal transition {job.state.value} -> {to_state.value}")
        prior = job.state
        job.state = to_state
        return Transition(job.job_id, prior, to_state, at)

    # -- reads ---------------------------------------------------------------

    def get_job(self, project_id: str, job_id: str) -> JobRecord:
        """Cross-project lookups report not-found: existence must not leak."""
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None or job.spec.project_id != project_id:
                raise NotFoundError(f"unknown job: {job_id!r}")
            return job

    def list_jobs(self, project_id: str) -> list[JobRecord]:
        with self._lock:
            return [j for j in self._jobs.values() if j.spec.project_id == project_id]

    # -- cancellation --------------------------------------------------------

    def cancel_job(self, project_id: str, job_id: str) -> JobRecord:
        with self._lock:
            job = self.get_job(project_id, job_id)
            if job.state in TERMINAL_STATES:
                raise ConflictError(f"job {job_id} already {job.state.value}")
            now = self._clock.now()
            if job.state is JobState.PENDING:
                unused_seconds = job.spec.wall_limit_seconds
            else:
                started = job.started_at if job.started_at is not None else now
                elapsed = now - started
                unused_seconds = max(0.0, job.spec.wall_limit_seconds - elapsed)
            self._transition(job, JobState.CANCELLED, now)
            job.finished_at = now
            job.exit_detail = "cancelled"
            refund = job_cost_node_hours(job.spec.nodes, unused_seconds)
            if refund > 0:
                self._policy.release(job.spec.project_id, job.spec.resource_id, refund)
                job.refunded_units = refund
            self._transitioned.notify_all()
            return job

    # -- waiting -------------------------------------------------------------

    def wait_until_terminal(
        self,
        project_id: str,
        job_id: str,
        sim_deadline: float | None = None,
        abort: threading.Event | None = None,
    ) -> JobRecord:
        """Block until the job reaches a terminal state.

        The deadline is in simulated time; the wait polls the condition in
        short real-time slices so a manual clock advanced by another thread
        is noticed promptly. Raises WaitTimeout / WaitAborted.
        """
        with self._lock:
            while True:
                job = self.get_job(project_id, job_id)
                if job.state in TERMINAL_STATES:
                    return job
                if abort is not None and abort.is_set():
                    raise WaitAborted(job_id)
                if sim_deadline is not None and self._clock.now() >= sim_deadline:
                    raise WaitTimeout(job_id)
                self._transitioned.wait(timeout=0.05)

    # -- introspection for tests ----------------------------------------------

    def running_node_total(self, resource_id: str) -> int:
        with self._lock:
            model = self._clusters.get(resource_id)
            if model is None:
                return 0
            return sum(
                self._jobs[jid].spec.nodes
                for jid in model.running
                if self._jobs[jid].state is JobState.RUNNING
            )

    def snapshot_states(self) -> dict[str, str]:
        with self._lock:
            return {jid: job.state.value for jid, job in self._jobs.items()}
