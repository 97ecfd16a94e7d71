"""Resource availability, scheduled downtimes, and runtime environments.

The resource inventory is static configuration loaded at startup:

    {"resources": [{"resource_id": ..., "state": "UP", "total_nodes": 8,
                    "environment": {"runtimes": [{"name": ..., "versions": [...]}],
                                    "default_modules": [...]}}],
     "streaming_pool_nodes": 8}

``total_nodes`` feeds the compute scheduler's capacity model and
``streaming_pool_nodes`` the streaming-node pool; both live here because this
file is the single description of the simulated facility.
"""

from __future__ import annotations

import copy
import itertools
import json
import threading
from dataclasses import dataclass, field
from enum import Enum

from .clock import Clock
from .errors import NotFoundError, ValidationError


class ResourceState(str, Enum):
    UP = "UP"
    DEGRADED = "DEGRADED"
    DOWN = "DOWN"
    MAINTENANCE = "MAINTENANCE"


@dataclass
class Downtime:
    downtime_id: str
    resource_id: str
    start: float
    end: float  # window is half-open: [start, end)
    reason: str

    def covers(self, t: float) -> bool:
        return self.start <= t < self.end

    def to_doc(self) -> dict:
        return {
            "downtime_id": self.downtime_id,
            "resource_id": self.resource_id,
            "start": self.start,
            "end": self.end,
            "reason": self.reason,
        }


@dataclass
class Resource:
    resource_id: str
    stored_state: ResourceState
    total_nodes: int
    environment: dict
    downtimes: list[Downtime] = field(default_factory=list)


DEFAULT_FACILITY_CONFIG = {
    "resources": [
        {
            "resource_id": "hpc-a",
            "state": "UP",
            "total_nodes": 8,
            "environment": {
                "runtimes": [
                    {"name": "python", "versions": ["3.10", "3.11"]},
                    {"name": "mpi", "versions": ["4.1"]},
                ],
                "default_modules": ["gcc/12.2", "cmake/3.27"],
            },
        }
    ],
    "streaming_pool_nodes": 8,
}


class FacilityService:
    """Status and environment reads, plus admin-scheduled downtimes.

    Reads never mutate state. A resource inside any active downtime window
    reports MAINTENANCE regardless of its stored state.
    """

    def __init__(self, clock: Clock, config: dict | None = None):
        self._clock = clock
        self._lock = threading.Lock()
        self._resources: dict[str, Resource] = {}
        self._downtime_seq = itertools.count(1)
        self.streaming_pool_nodes = 8
        self.load_config(config if config is not None else DEFAULT_FACILITY_CONFIG)

    def load_config(self, config: dict) -> None:
        if not isinstance(config, dict) or not isinstance(config.get("resources"), list):
            raise ValidationError("facility config must contain a 'resources' list")
        if not config["resources"]:
            raise ValidationError("facility config must define at least one resource")
        resources: dict[str, Resource] = {}
        for entry in config["resources"]:
            rid = str(entry["resource_id"])
            if rid in resources:
                raise ValidationError(f"duplicate resource_id: {rid!r}")
            env = copy.deepcopy(entry.get("environment", {"runtimes": [], "default_modules": []}))
            for runtime in env.get("runtimes", []):
                if not runtime.get("versions"):
                    raise ValidationError(
                        f"runtime {runtime.get('name')!r} on {rid!r} has no versions"
                    )
            total_nodes = int(entry.get("total_nodes", 1))
            if total_nodes < 1:
                raise ValidationError(f"total_nodes must be >= 1 on {rid!r}")
            resources[rid] = Resource(
                resource_id=rid,
                stored_state=ResourceState(entry.get("state", "UP")),
                total_nodes=total_nodes,
                environment=env,
            )
        with self._lock:
            self._resources = resources
            self.streaming_pool_nodes = int(config.get("streaming_pool_nodes", 8))

    @classmethod
    def from_file(cls, clock: Clock, path: str) -> "FacilityService":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(clock, json.load(fh))

    # -- reads ---------------------------------------------------------------

    def resource_ids(self) -> list[str]:
        with self._lock:
            return list(self._resources)

    def total_nodes(self, resource_id: str) -> int:
        with self._lock:
            return self._require(resource_id).total_nodes

    def effective_state(self, resource_id: str, now: float | None = None) -> ResourceState:
        if now is None:
            now = self._clock.now()
        with self._lock:
            res = self._require(resource_id)
            return self._effective(res, now)

    @staticmethod
    def _effective(res: Resource, now: float) -> ResourceState:
        if any(d.covers(now) for d in res.downtimes):
            return ResourceState.MAINTENANCE
        return res.stored_state

    def get_resource_status(self, resource_id: str, now: float | None = None) -> dict:
        if now is None:
            now = self._clock.now()
        with self._lock:
            res = self._require(resource_id)
            return self._status_doc(res, now)

    def _status_doc(self, res: Resource, now: float) -> dict:
        state = self._effective(res, now)
        detail = ""
        if state is ResourceState.MAINTENANCE:
            active = [d for d in res.downtimes if d.covers(now)]
            detail = "; ".join(d.reason for d in active)
        return {
            "resource_id": res.resource_id,
            "state": state.value,
            "detail": detail,
            "total_nodes": res.total_nodes,
            "updated_at": now,
        }

    def get_system_status(self, now: float | None = None) -> dict:
        """Aggregate: UP if all up, DOWN if all down/maintenance, else DEGRADED."""
        if now is None:
            now = self._clock.now()
        with self._lock:
            docs = [self._status_doc(r, now) for r in self._resources.values()]
        states = {d["state"] for d in docs}
        if states <= {ResourceState.UP.value}:
            overall = ResourceState.UP.value
        elif states <= {ResourceState.DOWN.value, ResourceState.MAINTENANCE.value}:
            overall = ResourceState.DOWN.value
        else:
            overall = ResourceState.DEGRADED.value
        return {"overall": overall, "resources": docs, "updated_at": now}

    def get_environment(self, resource_id: str) -> dict:
        with self._lock:
            res = self._require(resource_id)
            return {
                "resource_id": res.resource_id,
                "runtimes": copy.deepcopy(res.environment.get("runtimes", [])),
                "default_modules": list(res.environment.get("default_modules", [])),
            }

    def list_downtimes(self, resource_id: str) -> list[dict]:
        with self._lock:
            res = self._require(resource_id)
            return [d.to_doc() for d in res.downtimes]

    # -- writes --------------------------------------------------------------

    def schedule_downtime(self, resource_id: str, start: float, end: float, reason: str) -> dict:
        if not start < end:
            raise ValidationError("downtime window must satisfy start < end")
        with self._lock:
            res = self._require(resource_id)
            downtime = Downtime(
                downtime_id=f"dt-{next(self._downtime_seq):04d}",
                resource_id=resource_id,
                start=float(start),
                end=float(end),
                reason=str(reason),
            )
            res.downtimes.append(downtime)
            return downtime.to_doc()

    def _require(self, resource_id: str) -> Resource:
        res = self._resources.get(resource_id)
        if res is None:
            raise NotFoundError(f"unknown resource: {resource_id!r}")
        return res
