"""Streaming broker operations: cluster lifecycle plus channel I/O.

Real deployments would speak the broker's native protocol once the
cluster is up; here the gateway exposes channel publish and receive
over HTTP, so this module wraps those endpoints too.
"""

from __future__ import annotations

import base64
from typing import Any

from .client import OLCFAPIClient


class StreamingService:
    """Cluster and channel operations for one broker flavor.

    `service_name` picks the broker software (for example "rabbitmq")
    and is sent with every provisioning call so the server can route
    the request to the matching pool.
    """

    def __init__(self, service_name: str, api_client: OLCFAPIClient) -> None:
        self.service_name = service_name
        self.client = api_client

    def start_cluster(
        self,
        cluster_name: str,
        node_count: int,
        cpu_count: int,
        ram_gib: int,
    ) -> dict[str, Any]:
        """Provision a cluster and return its record (state, endpoint)."""
        return self.client.post(
            "/streaming/clusters",
            {
                "service_name": self.service_name,
                "cluster_name": cluster_name,
                "node_count": node_count,
                "cpu_count": cpu_count,
                "ram_gib": ram_gib,
            },
        )

    def list_clusters(self) -> list[dict[str, Any]]:
        return self.client.get("/streaming/clusters")["clusters"]

    def get_cluster(self, cluster_name: str) -> dict[str, Any]:
        return self.client.get(f"/streaming/clusters/{cluster_name}")

    def stop_cluster(self, cluster_name: str) -> dict[str, Any]:
        """Tear the cluster down and return its final record."""
        return self.client.delete(f"/streaming/clusters/{cluster_name}")

    def publish(self, cluster_name: str, channel: str, payload: str | bytes) -> int:
        """Append one message to a channel and return its sequence number."""
        if isinstance(payload, bytes):
            body = {"payload_b64": base64.b64encode(payload).decode("ascii")}
        else:
            body = {"payload": payload}
        doc = self.client.post(
            f"/streaming/clusters/{cluster_name}/channels/{channel}/messages",
            body,
        )
        return doc["seq"]

    def receive(
        self,
        cluster_name: str,
        channel: str,
        group: str,
        *,
        wait: float = 0.0,
    ) -> dict[str, Any] | None:
        """Take the next message for a consumer group, or None when empty.

        `wait` long-polls up to that many seconds before giving up.  The
        returned dict carries the decoded payload under "payload" along
        with the raw fields from the server.
        """
        doc = self.client.get(
            f"/streaming/clusters/{cluster_name}/channels/{channel}/messages",
            params={"group": group, "wait": wait},
        )
        message = doc.get("message")
        if message is None:
            return None
        message = dict(message)
        message["payload"] = base64.b64decode(message["payload_b64"])
        return message


__all__ = ["StreamingService"]
