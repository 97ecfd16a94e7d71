"""Broker cluster provisioning and the embedded publish/subscribe fabric.

Provisioning is split into two layers that are separately replaceable:

* ``StreamManager`` is the control plane. It owns the cluster records,
  validates requests, charges and refunds the allocation, and enforces the
  streaming-node pool budget.
* ``BrokerBackend`` is the data plane behind it. The bundled
  ``EmbeddedBrokerBackend`` keeps per-cluster channels as in-process queues
  resolved through ``s3m-stream://`` locators; a backend that drives real
  broker processes would implement the same five methods.

Delivery semantics, fixed by contract:

* A channel is created on first use. Messages published while the channel
  has no consumers accumulate in a bounded backlog that is handed to the
  first consumer attached afterwards.
* Ungrouped subscribers get fan-out: every subscriber receives every
  message published after it attached, in publish order.
* Named groups are work queues: each message goes to exactly one member.
* A publish either reaches every destination or none: if any destination
  buffer is full the publish fails with backpressure and nothing is
  enqueued. At-most-once, no silent drops.

Cost model: a cluster charges node_count x max-lease hours when provisioned
and refunds the unused lease pro-rata when stopped; expiry of the lease
auto-stops the cluster so allocations cannot leak.
"""

from __future__ import annotations

import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .clock import Clock
from .errors import (
    BackpressureError,
    ConflictError,
    NotFoundError,
    ValidationError,
)
from .policy import PolicyEngine

CLUSTER_NAME_RE = re.compile(r"^[a-z0-9]([a-z0-9-]{0,61}[a-z0-9])?$")
SERVICE_FLAVORS = ("rabbitmq", "redis")

# Resource id the policy engine uses for streaming allocations.
STREAMING_RESOURCE = "streaming"

DEFAULT_CHANNEL_CAPACITY = 10_000
DEFAULT_MAX_MESSAGE_BYTES = 1_048_576  # 1 MiB
DEFAULT_MAX_LEASE_HOURS = 24.0


class ClusterState(str, Enum):
    PROVISIONING = "PROVISIONING"
    RUNNING = "RUNNING"
    STOPPING = "STOPPING"
    STOPPED = "STOPPED"
    FAILED = "FAILED"


TERMINAL_CLUSTER_STATES = {ClusterState.STOPPED, ClusterState.FAILED}


@dataclass
class ClusterRequest:
    service_name: str
    cluster_name: str
    node_count: int
    cpu_count: int
    ram_gib: float

    def validate(self) -> None:
        if self.service_name not in SERVICE_FLAVORS:
            raise ValidationError(
                f"service_name must be one of {SERVICE_FLAVORS}, got {self.service_name!r}"
            )
        if not CLUSTER_NAME_RE.match(self.cluster_name or ""):
            raise ValidationError(
                "cluster_name must be 1-63 lowercase alphanumeric or hyphen "
                "characters and must not start or end with a hyphen"
            )
        if self.node_count < 1:
            raise ValidationError("node_count must be >= 1")
        if self.cpu_count < 1:
            raise ValidationError("cpu_count must be >= 1")
        if self.ram_gib <= 0:
            raise ValidationError("ram_gib must be positive")

    def to_doc(self) -> dict:
        return {
            "service_name": self.service_name,
            "cluster_name": self.cluster_name,
            "node_count": self.node_count,
            "cpu_count": self.cpu_count,
            "ram_gib": self.ram_gib,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ClusterRequest":
        if not isinstance(doc, dict):
            raise ValidationError("cluster request must be an object")
        try:
            req = cls(
                service_name=str(doc.get("service_name", "rabbitmq")),
                cluster_name=str(doc.get("cluster_name", "")),
                node_count=int(doc.get("node_count", 0)),
                cpu_count=int(doc.get("cpu_count", 1)),
                ram_gib=float(doc.get("ram_gib", 1)),
            )
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"malformed cluster request: {exc}") from exc
        req.validate()
        return req


@dataclass
class StreamingCluster:
    cluster_name: str
    project_id: str
    request: ClusterRequest
    state: ClusterState = ClusterState.PROVISIONING
    endpoint: str = ""  # nonempty exactly while RUNNING
    detail: str = ""
    created_at: float = 0.0
    stopped_at: float | None = None
    lease_expires_at: float | None = None
    charged_units: float = 0.0
    refunded_units: float = 0.0

    def to_doc(self) -> dict:
        return {
            "cluster_name": self.cluster_name,
            "project_id": self.project_id,
            "request": self.request.to_doc(),
            "state": self.state.value,
            "endpoint": self.endpoint,
            "detail": self.detail,
            "created_at": self.created_at,
            "stopped_at": self.stopped_at,
            "lease_expires_at": self.lease_expires_at,
            "charged_units": self.charged_units,
            "refunded_units": self.refunded_units,
        }


_CLUSTER_TRANSITIONS = {
    ClusterState.PROVISIONING: {ClusterState.RUNNING, ClusterState.FAILED},
    ClusterState.RUNNING: {ClusterState.STOPPING},
    ClusterState.STOPPING: {ClusterState.STOPPED},
}


class Subscription:
    """One consumer's handle: an inbox plus the broker's wakeup condition.

    Group members share one inbox (work queue); ungrouped subscribers each
    own theirs (fan-out).
    """

    def __init__(self, broker: "_ClusterBroker", channel: str, group: str | None,
                 inbox: deque):
        self._broker = broker
        self.channel = channel
        self.group = group
        self._inbox = inbox

    def receive(self, timeout: float | None = None) -> bytes | None:
        """Next message, FIFO. None on timeout; error once the cluster stops."""
        return self._broker.pop(self._inbox, timeout)


class _ChannelState:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self.backlog: deque[bytes] = deque()
        self.fanout: list[deque[bytes]] = []
        self.groups: dict[str, deque[bytes]] = {}
        self.backlog_claimed = False
        self.publish_count = 0

    def destinations(self) -> list[deque[bytes]]:
        dests = list(self.fanout) + list(self.groups.values())
        return dests if dests else [self.backlog]

    def attach(self, inbox: deque[bytes]) -> None:
        # The first consumer construct on a channel inherits everything
        # published before any consumer existed; later ones start empty.
        if not self.backlog_claimed:
            inbox.extend(self.backlog)
            self.backlog.clear()
            self.backlog_claimed = True


class _ClusterBroker:
    """In-process queues for one cluster. All state behind one condition."""

    def __init__(self, capacity: int, max_message_bytes: int):
        self._cond = threading.Condition()
        self._channels: dict[str, _ChannelState] = {}
        self._capacity = capacity
        self._max_message_bytes = max_message_bytes
        self._stopped = False

    def _channel(self, name: str) -> _ChannelState:
        if not name:
            raise ValidationError("channel name must be nonempty")
        ch = self._channels.get(name)
        if ch is None:
            ch = _ChannelState(self._capacity)
            self._channels[name] = ch
        return ch

    def publish(self, channel: str, payload: bytes) -> int:
        if len(payload) > self._max_message_bytes:
            raise ValidationError(
                f"message of {len(payload)} bytes exceeds the "
                f"{self._max_message_bytes}-byte limit"
            )
        with self._cond:
            if self._stopped:
                raise ConflictError("cluster stopped")
            ch = self._channel(channel)
            dests = ch.destinations()
            # All-or-nothing: check every destination before touching any.
            if any(len(d) >= ch.capacity for d in dests):
                raise BackpressureError(
                    f"channel {channel!r} buffer full ({ch.capacity} messages)"
                )
            for d in dests:
                d.append(payload)
            ch.publish_count += 1
            seq = ch.publish_count
            self._cond.notify_all()
            return seq

    def subscribe(self, channel: str, group: str | None = None) -> Subscription:
        with self._cond:
            if self._stopped:
                raise ConflictError("cluster stopped")
            ch = self._channel(channel)
            if group:
                inbox = ch.groups.get(group)
                if inbox is None:
                    inbox = deque()
                    ch.attach(inbox)
                    ch.groups[group] = inbox
            else:
                inbox = deque()
                ch.attach(inbox)
                ch.fanout.append(inbox)
            return Subscription(self, channel, group, inbox)

    def pop(self, inbox: deque, timeout: float | None) -> bytes | None:
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while True:
                if self._stopped:
                    raise ConflictError("cluster stopped")
                if inbox:
                    return inbox.popleft()
                if deadline is None:
                    self._cond.wait()
                else:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        return None
                    self._cond.wait(remaining)

    def stop(self) -> None:
        with self._cond:
            self._stopped = True
            self._cond.notify_all()


class BrokerBackend:
    """Data-plane interface the manager delegates to (swap point for a real broker)."""

    def allocate(self, project_id: str, request: ClusterRequest) -> str:
        raise NotImplementedError

    def deallocate(self, endpoint: str) -> None:
        raise NotImplementedError

    def publish(self, endpoint: str, channel: str, payload: bytes) -> int:
        raise NotImplementedError

    def subscribe(self, endpoint: str, channel: str, group: str | None = None) -> Subscription:
        raise NotImplementedError

    def poll_group(self, endpoint: str, channel: str, group: str,
                   timeout: float) -> bytes | None:
        raise NotImplementedError


class EmbeddedBrokerBackend(BrokerBackend):
    """Backend over in-process queues; both service flavors behave identically."""

    def __init__(self, *, channel_capacity: int = DEFAULT_CHANNEL_CAPACITY,
                 max_message_bytes: int = DEFAULT_MAX_MESSAGE_BYTES):
        self._lock = threading.Lock()
        self._brokers: dict[str, _ClusterBroker] = {}
        self._channel_capacity = channel_capacity
        self._max_message_bytes = max_message_bytes
        self._seq = 0

    def allocate(self, project_id: str, request: ClusterRequest) -> str:
        with self._lock:
            self._seq += 1
            # Locator embeds project and a sequence number so identically
            # named clusters (same name reused across projects) never collide.
            endpoint = f"s3m-stream://{project_id}/{request.cluster_name}/{self._seq}"
            self._brokers[endpoint] = _ClusterBroker(
                self._channel_capacity, self._max_message_bytes
            )
            return endpoint

    def _broker(self, endpoint: str) -> _ClusterBroker:
        with self._lock:
            broker = self._brokers.get(endpoint)
        if broker is None:
            raise NotFoundError(f"no broker at {endpoint!r}")
        return broker

    def deallocate(self, endpoint: str) -> None:
        self._broker(endpoint).stop()

    def publish(self, endpoint: str, channel: str, payload: bytes) -> int:
        return self._broker(endpoint).publish(channel, payload)

    def subscribe(self, endpoint: str, channel: str, group: str | None = None) -> Subscription:
        return self._broker(endpoint).subscribe(channel, group)

    def poll_group(self, endpoint: str, channel: str, group: str,
                   timeout: float) -> bytes | None:
        if not group:
            raise ValidationError("group must be nonempty for polling receive")
        sub = self._broker(endpoint).subscribe(channel, group)
        return sub.receive(timeout)


class StreamManager:
    """Control plane for streaming clusters.

    Owns records and the pool budget; every cluster consumes streaming-node
    pool capacity while non-terminal, so the sum over live clusters never
    exceeds the configured pool.
    """

    def __init__(
        self,
        clock: Clock,
        policy: PolicyEngine,
        *,
        pool_nodes: int,
        backend: BrokerBackend | None = None,
        max_lease_hours: float = DEFAULT_MAX_LEASE_HOURS,
    ):
        self._clock = clock
        self._policy = policy
        self._pool_nodes = pool_nodes
        self._backend = backend or EmbeddedBrokerBackend()
        self._max_lease_hours = max_lease_hours
        self._lock = threading.RLock()
        # key: (project_id, cluster_name); names are permanent per project.
        self._clusters: dict[tuple[str, str], StreamingCluster] = {}

    @property
    def max_lease_hours(self) -> float:
        return self._max_lease_hours

    def lease_cost(self, node_count: int) -> float:
        return node_count * self._max_lease_hours

    def _transition(self, cluster: StreamingCluster, to_state: ClusterState) -> None:
        allowed = _CLUSTER_TRANSITIONS.get(cluster.state, set())
        if to_state not in allowed:
            raise ConflictError(
                f"illegal cluster transition {cluster.state.value} -> {to_state.value}"
            )
        cluster.state = to_state

    # -- lifecycle -------------------------------------------------------------

    def start_cluster(self, project_id: str, request: ClusterRequest) -> StreamingCluster:
        request.validate()
        if not project_id:
            raise ValidationError("project_id must be nonempty")
        cost = self.lease_cost(request.node_count)
        with self._lock:
            key = (project_id, request.cluster_name)
            if key in self._clusters:
                raise ConflictError(
                    f"cluster name {request.cluster_name!r} already used in "
                    f"project {project_id!r}"
                )
            # Charge before creating the record; an overdraft aborts cleanly.
            self._policy.consume(project_id, STREAMING_RESOURCE, cost)
            now = self._clock.now()
            live_nodes = sum(
                c.request.node_count
                for c in self._clusters.values()
                if c.state not in TERMINAL_CLUSTER_STATES
            )
            cluster = StreamingCluster(
                cluster_name=request.cluster_name,
                project_id=project_id,
                request=request,
                created_at=now,
                charged_units=cost,
            )
            self._clusters[key] = cluster
            if live_nodes + request.node_count > self._pool_nodes:
                self._transition(cluster, ClusterState.FAILED)
                cluster.detail = "insufficient streaming nodes"
                cluster.stopped_at = now
                self._policy.release(project_id, STREAMING_RESOURCE, cost)
                cluster.refunded_units = cost
                return cluster
            try:
                endpoint = self._backend.allocate(project_id, request)
            except Exception as exc:  # backend is a swap point; contain it
                self._transition(cluster, ClusterState.FAILED)
                cluster.detail = f"broker allocation failed: {exc}"
                cluster.stopped_at = now
                self._policy.release(project_id, STREAMING_RESOURCE, cost)
                cluster.refunded_units = cost
                return cluster
            self._transition(cluster, ClusterState.RUNNING)
            cluster.endpoint = endpoint
            cluster.lease_expires_at = now + self._max_lease_hours * 3600.0
            return cluster

    def get_cluster(self, project_id: str, cluster_name: str) -> StreamingCluster:
        with self._lock:
            cluster = self._clusters.get((project_id, cluster_name))
            if cluster is None:
                raise NotFoundError(f"unknown cluster: {cluster_name!r}")
            return cluster

    def list_clusters(self, project_id: str) -> list[StreamingCluster]:
        with self._lock:
            return [c for c in self._clusters.values() if c.project_id == project_id]

    def stop_cluster(self, project_id: str, cluster_name: str,
                     detail: str = "stopped by request") -> StreamingCluster:
        with self._lock:
            cluster = self.get_cluster(project_id, cluster_name)
            if cluster.state is not ClusterState.RUNNING:
                raise ConflictError(
                    f"cluster {cluster_name!r} is {cluster.state.value}, not RUNNING"
                )
            return self._stop_running(cluster, detail)

    def _stop_running(self, cluster: StreamingCluster, detail: str) -> StreamingCluster:
        # Caller holds the lock and has verified state RUNNING.
        now = self._clock.now()
        self._transition(cluster, ClusterState.STOPPING)
        endpoint = cluster.endpoint
        cluster.endpoint = ""
        self._backend.deallocate(endpoint)
        self._transition(cluster, ClusterState.STOPPED)
        cluster.stopped_at = now
        cluster.detail = detail
        used_hours = max(0.0, (now - cluster.created_at) / 3600.0)
        unused_hours = max(0.0, self._max_lease_hours - used_hours)
        refund = cluster.request.node_count * unused_hours
        if refund > 0:
            self._policy.release(cluster.project_id, STREAMING_RESOURCE, refund)
            cluster.refunded_units = refund
        return cluster

    def tick(self, now: float | None = None) -> list[StreamingCluster]:
        """Auto-stop clusters whose lease has expired. Driven by the server ticker."""
        if now is None:
            now = self._clock.now()
        expired = []
        with self._lock:
            for cluster in self._clusters.values():
                if (
                    cluster.state is ClusterState.RUNNING
                    and cluster.lease_expires_at is not None
                    and cluster.lease_expires_at <= now
                ):
                    expired.append(self._stop_running(cluster, "lease expired"))
        return expired

    def live_pool_usage(self) -> int:
        with self._lock:
            return sum(
                c.request.node_count
                for c in self._clusters.values()
                if c.state not in TERMINAL_CLUSTER_STATES
            )

    # -- data plane ------------------------------------------------------------

    def _running_endpoint(self, project_id: str, cluster_name: str) -> str:
        with self._lock:
            cluster = self.get_cluster(project_id, cluster_name)
            if cluster.state is not ClusterState.RUNNING:
                raise ConflictError("cluster stopped")
            return cluster.endpoint

    def publish(self, project_id: str, cluster_name: str, channel: str,
                payload: bytes) -> int:
        endpoint = self._running_endpoint(project_id, cluster_name)
        return self._backend.publish(endpoint, channel, payload)

    def subscribe(self, project_id: str, cluster_name: str, channel: str,
                  group: str | None = None) -> Subscription:
        endpoint = self._running_endpoint(project_id, cluster_name)
        return self._backend.subscribe(endpoint, channel, group)

    def poll_group(self, project_id: str, cluster_name: str, channel: str,
                   group: str, timeout: float) -> bytes | None:
        endpoint = self._running_endpoint(project_id, cluster_name)
        return self._backend.poll_group(endpoint, channel, group, timeout)
