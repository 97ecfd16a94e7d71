"""A desk-scale secure scientific service mesh.

One authenticated gateway fronts five services: facility status, signed
access tokens, a simulated FIFO compute scheduler, broker-cluster streaming
with an embedded publish/subscribe fabric, and DAG workflow orchestration.
Every request passes token authentication, scope authorization, and
project-policy evaluation before dispatch, and every request leaves exactly
one audit record.
"""

from .clock import Clock, ManualClock, SystemClock
from .compute import ComputeService, JobRecord, JobSpec, JobState
from .errors import (
    ApiError,
    AuthenticationError,
    AuthorizationError,
    BackpressureError,
    ConflictError,
    NotFoundError,
    PolicyDeniedError,
    UnknownEndpointError,
    ValidationError,
)
from .facility import FacilityService, ResourceState
from .gateway import ApiRequest, ApiResponse, AuditRecord, Decision, Gateway
from .policy import Allocation, PolicyDecision, PolicyEngine, Project
from .scopes import SCOPE_UNIVERSE
from .server import S3MServer
from .streaming import (
    BrokerBackend,
    ClusterRequest,
    ClusterState,
    EmbeddedBrokerBackend,
    StreamingCluster,
    StreamManager,
)
from .tokens import Claims, TokenService
from .workflows import (
    RunState,
    TaskState,
    WorkflowEngine,
    WorkflowRun,
    WorkflowTemplate,
    interpolate,
    validate_dag,
)

__version__ = "0.1.0"

__all__ = [
    "Allocation",
    "ApiError",
    "ApiRequest",
    "ApiResponse",
    "AuditRecord",
    "AuthenticationError",
    "AuthorizationError",
    "BackpressureError",
    "BrokerBackend",
    "Claims",
    "Clock",
    "ClusterRequest",
    "ClusterState",
    "ComputeService",
    "ConflictError",
    "Decision",
    "EmbeddedBrokerBackend",
    "FacilityService",
    "Gateway",
    "JobRecord",
    "JobSpec",
    "JobState",
    "ManualClock",
    "NotFoundError",
    "PolicyDecision",
    "PolicyDeniedError",
    "PolicyEngine",
    "Project",
    "ResourceState",
    "RunState",
    "S3MServer",
    "SCOPE_UNIVERSE",
    "StreamManager",
    "StreamingCluster",
    "SystemClock",
    "TaskState",
    "TokenService",
    "UnknownEndpointError",
    "ValidationError",
    "WorkflowEngine",
    "WorkflowRun",
    "WorkflowTemplate",
    "interpolate",
    "validate_dag",
]
