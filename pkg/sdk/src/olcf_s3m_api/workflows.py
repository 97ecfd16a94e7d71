"""Workflow template and run operations."""

from __future__ import annotations

from typing import Any, Mapping

from .client import OLCFAPIClient


class WorkflowService:
    """Register step templates and drive DAG runs."""

    def __init__(self, api_client: OLCFAPIClient) -> None:
        self.client = api_client

    def register_template(self, document: Mapping[str, Any]) -> dict[str, Any]:
        return self.client.post("/workflows/templates", document)

    def list_templates(self) -> list[dict[str, Any]]:
        return self.client.get("/workflows/templates")["templates"]

    def submit_workflow(self, document: Mapping[str, Any]) -> dict[str, Any]:
        """Validate and launch a DAG, returning the run record."""
        return self.client.post("/workflows", document)

    def get_workflow(self, workflow_id: str) -> dict[str, Any]:
        return self.client.get(f"/workflows/{workflow_id}")

    def cancel_workflow(self, workflow_id: str) -> dict[str, Any]:
        """Stop a run, sweeping its live jobs and clusters."""
        return self.client.delete(f"/workflows/{workflow_id}")


__all__ = ["WorkflowService"]
