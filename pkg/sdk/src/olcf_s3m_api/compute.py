"""Batch job operations against the gateway's compute endpoints."""

from __future__ import annotations

from typing import Any

from .client import OLCFAPIClient


class ComputeService:
    """Submit, inspect, and cancel batch jobs."""

    def __init__(self, api_client: OLCFAPIClient) -> None:
        self.client = api_client

    def submit_job(
        self,
        resource_id: str,
        nodes: int,
        wall_limit_seconds: float,
        **extra: Any,
    ) -> dict[str, Any]:
        """Queue a job and return its record (job_id, state).

        Extra keyword arguments (command, sim_seconds, ...) pass through
        to the server untouched.
        """
        body: dict[str, Any] = {
            "resource_id": resource_id,
            "nodes": nodes,
            "wall_limit_seconds": wall_limit_seconds,
        }
        body.update(extra)
        return self.client.post("/compute/jobs", body)

    def list_jobs(self) -> list[dict[str, Any]]:
        return self.client.get("/compute/jobs")["jobs"]

    def get_job(self, job_id: str) -> dict[str, Any]:
        return self.client.get(f"/compute/jobs/{job_id}")

    def cancel_job(self, job_id: str) -> dict[str, Any]:
        """Cancel a pending or running job and return its final record."""
        return self.client.delete(f"/compute/jobs/{job_id}")


__all__ = ["ComputeService"]
