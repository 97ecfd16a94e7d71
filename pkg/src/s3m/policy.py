"""Policy-as-code: projects, allocations, and the evaluation the gateway runs
before any service executes a request.

Rules are data, not a DSL. A policy document is JSON:

    {"projects": [{"project_id": ..., "members": [...], "resource_acl": [...],
                   "allocations": [{"resource_id": ..., "total_units": ...}]}]}

Allocations are budgets in node-hours. ``evaluate`` is a pure read (it never
consumes); ``consume``/``release`` move the ledger and are atomic, so a
concurrent flood of consumes can never overdraw a budget. Every successful
consume/release is appended to an event ledger that tests replay.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field

from .clock import Clock
from .errors import ConflictError, PolicyDeniedError, ValidationError
from .tokens import Claims


@dataclass
class Allocation:
    resource_id: str
    total_units: float
    consumed_units: float = 0.0

    @property
    def remaining_units(self) -> float:
        return self.total_units - self.consumed_units


@dataclass
class Project:
    project_id: str
    members: set[str]
    resource_acl: set[str]
    allocations: dict[str, Allocation] = field(default_factory=dict)


@dataclass(frozen=True)
class PolicyDecision:
    allowed: bool
    rule_id: str
    reason: str


@dataclass(frozen=True)
class LedgerEvent:
    """One successful consume (+units) or release (-units)."""

    project_id: str
    resource_id: str
    delta_units: float
    timestamp: float


def _allow(rule_id: str = "all_checks_passed") -> PolicyDecision:
    return PolicyDecision(True, rule_id, "all checks passed")


def _deny(rule_id: str, reason: str) -> PolicyDecision:
    return PolicyDecision(False, rule_id, reason)


class PolicyEngine:
    """Project registry plus allocation ledger.

    ``evaluate`` applies five conjuncts in a fixed order and reports the first
    failure: project registered, user is a member, resource in the project
    ACL, action in the token scopes, allocation can absorb the cost. Unknown
    anything denies; denial is a value, never an exception.
    """

    def __init__(self, clock: Clock):
        self._clock = clock
        self._lock = threading.Lock()
        self._projects: dict[str, Project] = {}
        self._events: list[LedgerEvent] = []

    # -- registry -----------------------------------------------------------

    def register_project(self, project: Project) -> dict:
        if not project.project_id:
            raise ValidationError("project_id must be nonempty")
        if not project.members:
            raise ValidationError("project members must be nonempty")
        for alloc in project.allocations.values():
            if alloc.total_units < 0 or alloc.consumed_units < 0:
                raise ValidationError("allocation units must be nonnegative")
            if alloc.consumed_units > alloc.total_units:
                raise ValidationError("consumed_units exceeds total_units")
        with self._lock:
            if project.project_id in self._projects:
                raise ConflictError(f"project already registered: {project.project_id!r}")
            self._projects[project.project_id] = project
        return {"project_id": project.project_id, "registered": True}

    def register_document(self, doc: dict) -> list[str]:
        """Load a policy document (see module docstring). Returns registered ids."""
        if not isinstance(doc, dict) or not isinstance(doc.get("projects"), list):
            raise ValidationError("policy document must contain a 'projects' list")
        registered = []
        for entry in doc["projects"]:
            project = Project(
                project_id=str(entry.get("project_id", "")),
                members=set(entry.get("members", [])),
                resource_acl=set(entry.get("resource_acl", [])),
                allocations={
                    a["resource_id"]: Allocation(
                        resource_id=a["resource_id"],
                        total_units=float(a["total_units"]),
                    )
                    for a in entry.get("allocations", [])
                },
            )
            self.register_project(project)
            registered.append(project.project_id)
        return registered

    def register_file(self, path: str) -> list[str]:
        with open(path, "r", encoding="utf-8") as fh:
            return self.register_document(json.load(fh))

    def project_exists(self, project_id: str) -> bool:
        with self._lock:
            return project_id in self._projects

    def get_project(self, project_id: str) -> Project | None:
        with self._lock:
            return self._projects.get(project_id)

    # -- evaluation ---------------------------------------------------------

    def evaluate(
        self, claims: Claims, resource_id: str, action: str, cost_units: float
    ) -> PolicyDecision:
        """Full five-conjunct check. Read-only and deterministic."""
        with self._lock:
            project = self._projects.get(claims.project_id)
            if project is None:
                return _deny("unknown_project", f"project {claims.project_id!r} is not registered")
            if claims.user_id not in project.members:
                return _deny(
                    "not_a_member",
                    f"user {claims.user_id!r} is not a member of {claims.project_id!r}",
                )
            if resource_id not in project.resource_acl:
                return _deny(
                    "resource_not_permitted",
                    f"resource {resource_id!r} is not in the project ACL",
                )
            if action not in claims.scopes:
                return _deny("scope_missing", f"token does not hold scope {action!r}")
            alloc = project.allocations.get(resource_id)
            remaining = alloc.remaining_units if alloc is not None else 0.0
            if cost_units > remaining:
                return _deny(
                    "allocation_exhausted",
                    f"cost {cost_units} exceeds remaining allocation {remaining} "
                    f"on {resource_id!r}",
                )
            return _allow()

    def evaluate_membership(self, claims: Claims) -> PolicyDecision:
        """Registered-project + membership subset, for endpoints that target
        no specific resource."""
        return self.evaluate_membership_ids(claims.project_id, claims.user_id)

    def evaluate_membership_ids(self, project_id: str, user_id: str) -> PolicyDecision:
        with self._lock:
            project = self._projects.get(project_id)
            if project is None:
                return _deny("unknown_project", f"project {project_id!r} is not registered")
            if user_id not in project.members:
                return _deny(
                    "not_a_member",
                    f"user {user_id!r} is not a member of {project_id!r}",
                )
            return _allow("membership_ok")

    def evaluate_resource(
        self, project_id: str, user_id: str, resource_id: str, cost_units: float
    ) -> PolicyDecision:
        """Scope-free variant used by the workflow engine, whose authority was
        scope-checked when the workflow was submitted."""
        with self._lock:
            project = self._projects.get(project_id)
            if project is None:
                return _deny("unknown_project", f"project {project_id!r} is not registered")
            if user_id not in project.members:
                return _deny("not_a_member", f"user {user_id!r} is not a member of {project_id!r}")
            if resource_id not in project.resource_acl:
                return _deny(
                    "resource_not_permitted",
                    f"resource {resource_id!r} is not in the project ACL",
                )
            alloc = project.allocations.get(resource_id)
            remaining = alloc.remaining_units if alloc is not None else 0.0
            if cost_units > remaining:
                return _deny(
                    "allocation_exhausted",
                    f"cost {cost_units} exceeds remaining allocation {remaining} "
                    f"on {resource_id!r}",
                )
            return _allow()

    # -- ledger -------------------------------------------------------------

    def consume(self, project_id: str, resource_id: str, cost_units: float) -> Allocation:
        """Debit the allocation; atomic, overdraft leaves it unchanged."""
        if cost_units < 0:
            raise ValidationError("cost_units must be nonnegative")
        with self._lock:
            alloc = self._allocation(project_id, resource_id)
            if alloc.consumed_units + cost_units > alloc.total_units:
                raise PolicyDeniedError(
                    f"allocation overdraft: {cost_units} exceeds remaining "
                    f"{alloc.remaining_units} on {resource_id!r}",
                    rule_id="allocation_exhausted",
                )
            alloc.consumed_units += cost_units
            self._events.append(
                LedgerEvent(project_id, resource_id, cost_units, self._clock.now())
            )
            return Allocation(alloc.resource_id, alloc.total_units, alloc.consumed_units)

    def release(self, project_id: str, resource_id: str, cost_units: float) -> Allocation:
        """Refund; a release larger than what was consumed is rejected."""
        if cost_units < 0:
            raise ValidationError("cost_units must be nonnegative")
        with self._lock:
            alloc = self._allocation(project_id, resource_id)
            if cost_units > alloc.consumed_units:
                raise ValidationError(
                    f"release {cost_units} exceeds consumed {alloc.consumed_units}"
                )
            alloc.consumed_units -= cost_units
            self._events.append(
                LedgerEvent(project_id, resource_id, -cost_units, self._clock.now())
            )
            return Allocation(alloc.resource_id, alloc.total_units, alloc.consumed_units)

    def _allocation(self, project_id: str, resource_id: str) -> Allocation:
        # Caller holds the lock.
        project = self._projects.get(project_id)
        if project is None:
            raise ValidationError(f"unknown project: {project_id!r}")
        alloc = project.allocations.get(resource_id)
        if alloc is None:
            raise ValidationError(
                f"project {project_id!r} has no allocation on {resource_id!r}"
            )
        return alloc

    def allocation_snapshot(self, project_id: str, resource_id: str) -> Allocation:
        with self._lock:
            alloc = self._allocation(project_id, resource_id)
            return Allocation(alloc.resource_id, alloc.total_units, alloc.consumed_units)

    def ledger_events(self) -> list[LedgerEvent]:
        with self._lock:
            return list(self._events)
