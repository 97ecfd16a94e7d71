"""Python SDK for the S3M gateway.

Typical use: build one OLCFAPIClient, then hand it to whichever service
wrappers a script needs.

    from olcf_s3m_api.client import OLCFAPIClient
    from olcf_s3m_api.streaming import StreamingService

    client = OLCFAPIClient()  # token from S3M_TOKEN
    service = StreamingService(service_name="rabbitmq", api_client=client)
    service.start_cluster("demo", node_count=1, cpu_count=4, ram_gib=4)
"""

from .client import DEFAULT_BASE_URL, ENV_BASE_URL, ENV_TOKEN, OLCFAPIClient
from .compute import ComputeService
from .errors import (
    S3MAuthenticationError,
    S3MBackpressureError,
    S3MClientError,
    S3MConfigurationError,
    S3MConflictError,
    S3MConnectionError,
    S3MNotFoundError,
    S3MPermissionError,
    S3MServerError,
    S3MValidationError,
)
from .streaming import StreamingService
from .workflows import WorkflowService

__version__ = "0.1.0"

__all__ = [
    "OLCFAPIClient",
    "StreamingService",
    "ComputeService",
    "WorkflowService",
    "S3MClientError",
    "S3MConfigurationError",
    "S3MConnectionError",
    "S3MAuthenticationError",
    "S3MPermissionError",
    "S3MNotFoundError",
    "S3MConflictError",
    "S3MValidationError",
    "S3MBackpressureError",
    "S3MServerError",
    "ENV_TOKEN",
    "ENV_BASE_URL",
    "DEFAULT_BASE_URL",
]
