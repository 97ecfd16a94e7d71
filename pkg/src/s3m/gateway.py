"""The single entry point: every API request runs the same four-stage pipeline.

Stage order is fixed and fail-closed:

1. authenticate the bearer token;
2. authorize the token's scopes against the endpoint's required scope;
3. evaluate project policy (membership always; resource ACL and allocation
   when the endpoint targets a resource);
4. dispatch to the owning service.

A failure at stage k stops the pipeline before stage k+1, and every inbound
request, rejected or not, appends exactly one audit record. Services are
reachable only through this pipeline; nothing else holds references to them
across the trust boundary.

Decision vocabulary: ALLOWED means a downstream service handled the request,
even if it answered with its own error (a not-found job is a handled
request). REJECTED_* name the pipeline stage that refused. ERROR covers
requests that never reached the pipeline proper: unknown endpoints,
unparseable bodies, and internal faults.
"""

from __future__ import annotations

import base64
import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

from . import scopes as scope_names
from .clock import Clock
from .compute import ComputeService, JobSpec, job_cost_node_hours
from .errors import (
    ApiError,
    AuthenticationError,
    AuthorizationError,
    NotFoundError,
    PolicyDeniedError,
    UnknownEndpointError,
    ValidationError,
)
from .facility import FacilityService
from .policy import PolicyEngine
from .streaming import ClusterRequest, StreamManager
from .tokens import Claims, TokenService
from .workflows import WorkflowEngine, WorkflowTemplate


class Decision(str, Enum):
    ALLOWED = "ALLOWED"
    REJECTED_AUTHN = "REJECTED_AUTHN"
    REJECTED_AUTHZ = "REJECTED_AUTHZ"
    REJECTED_POLICY = "REJECTED_POLICY"
    ERROR = "ERROR"


@dataclass
class ApiRequest:
    method: str
    path: str
    bearer_token: str | None = None
    body: Any = None
    query: dict[str, str] = field(default_factory=dict)
    received_at: float = 0.0
    trace_id: str = ""


@dataclass
class ApiResponse:
    status: int
    body: Any
    trace_id: str
    content_type: str = "application/json"


@dataclass(frozen=True)
class AuditRecord:
    trace_id: str
    timestamp: float
    user_id: str
    project_id: str
    path: str
    method: str
    decision: Decision
    detail: str
    latency: float

    def to_doc(self) -> dict:
        return {
            "trace_id": self.trace_id,
            "timestamp": self.timestamp,
            "user_id": self.user_id,
            "project_id": self.project_id,
            "path": self.path,
            "method": self.method,
            "decision": self.decision.value,
            "detail": self.detail,
            "latency": self.latency,
        }


# A policy check is either membership-only or a full resource evaluation.
# Resolvers are lenient about malformed bodies on purpose: a body the
# resolver cannot read resolves to a membership check with zero cost, and
# the owning service rejects it properly at dispatch.
@dataclass(frozen=True)
class PolicyTarget:
    resource_id: str | None = None
    cost_units: float = 0.0


MEMBERSHIP = PolicyTarget()


@dataclass(frozen=True)
class Route:
    method: str
    segments: tuple[str, ...]
    scope: str
    handler: Callable[..., tuple[int, Any]]
    policy_resolver: Callable[[Claims, dict, Any, dict], PolicyTarget]

    @property
    def literal_count(self) -> int:
        return sum(1 for s in self.segments if not s.startswith("{"))

    def match(self, parts: tuple[str, ...]) -> dict[str, str] | None:
        if len(parts) != len(self.segments):
            return None
        params: dict[str, str] = {}
        for pattern, part in zip(self.segments, parts):
            if pattern.startswith("{") and pattern.endswith("}"):
                if not part:
                    return None
                params[pattern[1:-1]] = part
            elif pattern != part:
                return None
        return params


def _membership(_claims: Claims, _params: dict, _body: Any, _query: dict) -> PolicyTarget:
    return MEMBERSHIP


class Gateway:
    def __init__(
        self,
        clock: Clock,
        tokens: TokenService,
        policy: PolicyEngine,
        facility: FacilityService,
        compute: ComputeService,
        streaming: StreamManager,
        workflows: WorkflowEngine,
        *,
        tick_handler: Callable[[float], dict] | None = None,
        long_poll_cap_seconds: float = 30.0,
    ):
        self._clock = clock
        self._tokens = tokens
        self._policy = policy
        self._facility = facility
        self._compute = compute
        self._streaming = streaming
        self._workflows = workflows
        self._tick_handler = tick_handler
        self._long_poll_cap = long_poll_cap_seconds

        self._audit_lock = threading.Lock()
        self._audit: list[AuditRecord] = []
        self._counter_lock = threading.Lock()
        self.stage_counters = {"authn": 0, "authz": 0, "policy": 0, "dispatch": 0}

        self._routes: list[Route] = []
        self._register_routes()
        # More literal segments match first, so /workflows/templates beats
        # /workflows/{workflow_id}.
        self._routes.sort(key=lambda r: r.literal_count, reverse=True)

    # -- route table -----------------------------------------------------------

    def _add(self, method: str, pattern: str, scope: str, handler, resolver=_membership):
        segments = tuple(s for s in pattern.strip("/").split("/"))
        self._routes.append(Route(method, segments, scope, handler, resolver))

    def _register_routes(self) -> None:
        S = scope_names
        self._add("GET", "/status", S.STATUS_READ, self._h_system_status)
        self._add("GET", "/status/{resource_id}", S.STATUS_READ, self._h_resource_status)
        self._add("GET", "/status/{resource_id}/downtimes", S.STATUS_READ, self._h_list_downtimes)
        self._add("POST", "/status/{resource_id}/downtimes", S.TOKENS_MANAGE, self._h_schedule_downtime)
        self._add("GET", "/environment/{resource_id}", S.ENVIRONMENT_READ, self._h_environment)

        self._add("POST", "/compute/jobs", S.COMPUTE_SUBMIT, self._h_submit_job,
                  self._resolve_job_policy)
        self._add("GET", "/compute/jobs", S.COMPUTE_READ, self._h_list_jobs)
        self._add("GET", "/compute/jobs/{job_id}", S.COMPUTE_READ, self._h_get_job)
        self._add("DELETE", "/compute/jobs/{job_id}", S.COMPUTE_CANCEL, self._h_cancel_job)

        self._add("POST", "/streaming/clusters", S.STREAMING_MANAGE, self._h_start_cluster,
                  self._resolve_cluster_policy)
        self._add("GET", "/streaming/clusters", S.STREAMING_READ, self._h_list_clusters)
        self._add("GET", "/streaming/clusters/{name}", S.STREAMING_READ, self._h_get_cluster)
        self._add("DELETE", "/streaming/clusters/{name}", S.STREAMING_MANAGE, self._h_stop_cluster)
        self._add("POST", "/streaming/clusters/{name}/channels/{channel}/messages",
                  S.STREAMING_MANAGE, self._h_publish, self._resolve_streaming_touch)
        self._add("GET", "/streaming/clusters/{name}/channels/{channel}/messages",
                  S.STREAMING_READ, self._h_poll_messages, self._resolve_streaming_touch)

        self._add("POST", "/tokens", S.TOKENS_MANAGE, self._h_issue_token)
        self._add("GET", "/tokens", S.TOKENS_MANAGE, self._h_list_tokens)
        self._add("DELETE", "/tokens/{token_id}", S.TOKENS_MANAGE, self._h_revoke_token)

        self._add("POST", "/workflows", S.WORKFLOWS_MANAGE, self._h_submit_workflow)
        self._add("GET", "/workflows/{workflow_id}", S.WORKFLOWS_READ, self._h_get_workflow)
        self._add("DELETE", "/workflows/{workflow_id}", S.WORKFLOWS_MANAGE, self._h_cancel_workflow)
        self._add("POST", "/workflows/templates", S.WORKFLOWS_MANAGE, self._h_register_template)
        self._add("GET", "/workflows/templates", S.WORKFLOWS_READ, self._h_list_templates)

        self._add("GET", "/audit", S.TOKENS_MANAGE, self._h_audit)
        self._add("POST", "/admin/projects", S.TOKENS_MANAGE, self._h_register_projects)
        self._add("POST", "/admin/tick", S.TOKENS_MANAGE, self._h_tick)

    def _find_route(self, method: str, path: str) -> tuple[Route, dict[str, str]]:
        parts = tuple(path.strip("/").split("/"))
        for route in self._routes:
            if route.method != method:
                continue
            params = route.match(parts)
            if params is not None:
                return route, params
        raise UnknownEndpointError(f"unknown endpoint: {method} {path}")

    def required_scope(self, method: str, path: str) -> str:
        """The scope an endpoint demands; total over the registered table."""
        route, _ = self._find_route(method, path)
        return route.scope

    # -- pipeline ---------------------------------------------------------------

    def handle_request(self, request: ApiRequest) -> ApiResponse:
        start = time.monotonic()
        if not request.trace_id:
            request.trace_id = str(uuid.uuid4())
        if not request.received_at:
            request.received_at = self._clock.now()
        user_id = "anonymous"
        project_id = ""
        try:
            route, params = self._find_route(request.method, request.path)

            self._bump("authn")
            claims = self._authenticate(request)
            user_id, project_id = claims.user_id, claims.project_id

            self._bump("authz")
            if route.scope not in claims.scopes:
                raise AuthorizationError(
                    f"endpoint requires scope {route.scope!r}"
                )

            self._bump("policy")
            target = route.policy_resolver(claims, params, request.body, request.query)
            if target.resource_id is None:
                decision = self._policy.evaluate_membership(claims)
            else:
                decision = self._policy.evaluate(
                    claims, target.resource_id, route.scope, target.cost_units
                )
            if not decision.allowed:
                raise PolicyDeniedError(decision.reason, rule_id=decision.rule_id)

            self._bump("dispatch")
            try:
                status, body = route.handler(claims, params, request.body, request.query)
            except PolicyDeniedError:
                raise
            except ApiError as exc:
                # The owning service refused: the pipeline allowed the request.
                self._record(request, Decision.ALLOWED, user_id, project_id,
                             f"{exc.code}: {exc.detail}", start)
                return self._error_response(exc, request.trace_id)
            self._record(request, Decision.ALLOWED, user_id, project_id, "ok", start)
            if isinstance(body, ApiResponse):
                body.trace_id = request.trace_id
                return body
            return ApiResponse(status, body, request.trace_id)

        except UnknownEndpointError as exc:
            self._record(request, Decision.ERROR, user_id, project_id,
                         "unknown endpoint", start)
            return self._error_response(exc, request.trace_id)
        except AuthenticationError as exc:
            self._record(request, Decision.REJECTED_AUTHN, user_id, project_id,
                         f"{exc.code}: {exc.detail}", start)
            return self._error_response(exc, request.trace_id)
        except AuthorizationError as exc:
            self._record(request, Decision.REJECTED_AUTHZ, user_id, project_id,
                         exc.detail, start)
            return self._error_response(exc, request.trace_id)
        except PolicyDeniedError as exc:
            self._record(request, Decision.REJECTED_POLICY, user_id, project_id,
                         f"{exc.rule_id}: {exc.detail}", start)
            return self._error_response(exc, request.trace_id)
        except Exception as exc:  # fail closed, audit, never propagate
            self._record(request, Decision.ERROR, user_id, project_id,
                         f"internal: {exc}", start)
            return ApiResponse(
                500,
                {"error": "internal", "detail": "internal server error",
                 "trace_id": request.trace_id},
                request.trace_id,
            )

    def handle_malformed(self, method: str, path: str, detail: str) -> ApiResponse:
        """Transport-level body parse failures still get audited and traced."""
        trace_id = str(uuid.uuid4())
        record = AuditRecord(
            trace_id=trace_id,
            timestamp=self._clock.now(),
            user_id="anonymous",
            project_id="",
            path=path,
            method=method,
            decision=Decision.ERROR,
            detail=f"malformed body: {detail}",
            latency=0.0,
        )
        with self._audit_lock:
            self._audit.append(record)
        return ApiResponse(
            400,
            {"error": "invalid_request", "detail": f"malformed body: {detail}",
             "trace_id": trace_id},
            trace_id,
        )

    def _authenticate(self, request: ApiRequest) -> Claims:
        if not request.bearer_token:
            raise AuthenticationError("missing bearer token")
        return self._tokens.validate_token(request.bearer_token, now=request.received_at)

    def _bump(self, stage: str) -> None:
        with self._counter_lock:
            self.stage_counters[stage] += 1

    def stage_counts(self) -> dict[str, int]:
        with self._counter_lock:
            return dict(self.stage_counters)

    def _record(self, request: ApiRequest, decision: Decision, user_id: str,
                project_id: str, detail: str, start: float) -> None:
        record = AuditRecord(
            trace_id=request.trace_id,
            timestamp=request.received_at,
            user_id=user_id,
            project_id=project_id,
            path=request.path,
            method=request.method,
            decision=decision,
            detail=detail,
            latency=time.monotonic() - start,
        )
        with self._audit_lock:
            self._audit.append(record)

    @staticmethod
    def _error_response(exc: ApiError, trace_id: str) -> ApiResponse:
        return ApiResponse(
            exc.status,
            {"error": exc.code, "detail": exc.detail, "trace_id": trace_id},
            trace_id,
        )

    # -- audit access --------------------------------------------------------------

    def audit_log(
        self,
        decision: Decision | str | None = None,
        project_id: str | None = None,
        user_id: str | None = None,
    ) -> list[AuditRecord]:
        if isinstance(decision, str):
            decision = Decision(decision)
        with self._audit_lock:
            records = list(self._audit)
        if decision is not None:
            records = [r for r in records if r.decision is decision]
        if project_id is not None:
            records = [r for r in records if r.project_id == project_id]
        if user_id is not None:
            records = [r for r in records if r.user_id == user_id]
        return records

    def export_audit_jsonl(self, **filters) -> str:
        records = self.audit_log(**filters)
        return "\n".join(json.dumps(r.to_doc(), sort_keys=True) for r in records)

    # -- policy resolvers ------------------------------------------------------------

    @staticmethod
    def _resolve_job_policy(claims: Claims, _params: dict, body: Any,
                            _query: dict) -> PolicyTarget:
        if not isinstance(body, dict):
            return MEMBERSHIP
        resource = body.get("resource_id")
        if not isinstance(resource, str) or not resource:
            return MEMBERSHIP
        try:
            nodes = int(body.get("nodes", 0))
            wall = int(body.get("wall_limit_seconds", 0))
            cost = job_cost_node_hours(max(nodes, 0), max(wall, 0))
        except (TypeError, ValueError):
            cost = 0.0
        return PolicyTarget(resource, cost)

    def _resolve_cluster_policy(self, _claims: Claims, _params: dict, body: Any,
                                _query: dict) -> PolicyTarget:
        nodes = 0
        if isinstance(body, dict):
            try:
                nodes = max(int(body.get("node_count", 0)), 0)
            except (TypeError, ValueError):
                nodes = 0
        return PolicyTarget("streaming", self._streaming.lease_cost(nodes))

    @staticmethod
    def _resolve_streaming_touch(_claims: Claims, _params: dict, _body: Any,
                                 _query: dict) -> PolicyTarget:
        # Channel traffic must stay within the ACL but costs no allocation.
        return PolicyTarget("streaming", 0.0)

    # -- handlers ---------------------------------------------------------------------

    def _h_system_status(self, claims, params, body, query):
        return 200, self._facility.get_system_status(self._clock.now())

    def _h_resource_status(self, claims, params, body, query):
        return 200, self._facility.get_resource_status(
            params["resource_id"], self._clock.now()
        )

    def _h_list_downtimes(self, claims, params, body, query):
        return 200, {"downtimes": self._facility.list_downtimes(params["resource_id"])}

    def _h_schedule_downtime(self, claims, params, body, query):
        body = _require_object(body)
        downtime = self._facility.schedule_downtime(
            params["resource_id"],
            _require_number(body, "start"),
            _require_number(body, "end"),
            str(body.get("reason", "scheduled maintenance")),
        )
        return 201, downtime

    def _h_environment(self, claims, params, body, query):
        return 200, self._facility.get_environment(params["resource_id"])

    def _h_submit_job(self, claims, params, body, query):
        body = _require_object(body)
        if body.get("project_id") not in (None, claims.project_id):
            raise ValidationError("job project_id must match the token's project")
        spec = JobSpec.from_doc(body, default_project=claims.project_id)
        record = self._compute.submit_job(spec)
        return 201, record.to_doc()

    def _h_list_jobs(self, claims, params, body, query):
        requested = query.get("project")
        if requested and requested != claims.project_id:
            # Listing is always confined to the token's project.
            return 200, {"jobs": []}
        jobs = self._compute.list_jobs(claims.project_id)
        return 200, {"jobs": [j.to_doc() for j in jobs]}

    def _h_get_job(self, claims, params, body, query):
        return 200, self._compute.get_job(claims.project_id, params["job_id"]).to_doc()

    def _h_cancel_job(self, claims, params, body, query):
        return 200, self._compute.cancel_job(claims.project_id, params["job_id"]).to_doc()

    def _h_start_cluster(self, claims, params, body, query):
        request = ClusterRequest.from_doc(_require_object(body))
        cluster = self._streaming.start_cluster(claims.project_id, request)
        return 201, cluster.to_doc()

    def _h_list_clusters(self, claims, params, body, query):
        clusters = self._streaming.list_clusters(claims.project_id)
        return 200, {"clusters": [c.to_doc() for c in clusters]}

    def _h_get_cluster(self, claims, params, body, query):
        cluster = self._streaming.get_cluster(claims.project_id, params["name"])
        return 200, cluster.to_doc()

    def _h_stop_cluster(self, claims, params, body, query):
        cluster = self._streaming.stop_cluster(claims.project_id, params["name"])
        return 200, cluster.to_doc()

    def _h_publish(self, claims, params, body, query):
        body = _require_object(body)
        payload = _decode_payload(body)
        seq = self._streaming.publish(
            claims.project_id, params["name"], params["channel"], payload
        )
        return 202, {"channel": params["channel"], "seq": seq}

    def _h_poll_messages(self, claims, params, body, query):
        group = query.get("group", "")
        if not group:
            raise ValidationError("query parameter 'group' is required")
        try:
            wait = float(query.get("wait", "0"))
        except ValueError:
            raise ValidationError("query parameter 'wait' must be a number") from None
        wait = min(max(wait, 0.0), self._long_poll_cap)
        payload = self._streaming.poll_group(
            claims.project_id, params["name"], params["channel"], group, wait
        )
        if payload is None:
            return 200, {"message": None}
        return 200, {"message": {"payload_b64": base64.b64encode(payload).decode("ascii")}}

    def _h_issue_token(self, claims, params, body, query):
        body = _require_object(body)
        scopes = body.get("scopes")
        if not isinstance(scopes, list):
            raise ValidationError("scopes must be a list of scope names")
        ttl = body.get("ttl_seconds")
        issued = self._tokens.issue_token(
            str(body.get("user_id", "")),
            str(body.get("project_id", "")),
            scopes,
            ttl_seconds=None if ttl is None else float(ttl),
        )
        doc = {"token": issued.serialized, "token_id": issued.claims.token_id,
               "expires_at": issued.claims.expires_at}
        return 201, doc

    def _h_list_tokens(self, claims, params, body, query):
        return 200, {"tokens": self._tokens.list_tokens(query.get("user"))}

    def _h_revoke_token(self, claims, params, body, query):
        return 200, self._tokens.revoke_token(params["token_id"])

    def _h_submit_workflow(self, claims, params, body, query):
        run = self._workflows.submit_workflow(
            claims.project_id, claims.user_id, _require_object(body)
        )
        return 201, run.to_doc()

    def _h_get_workflow(self, claims, params, body, query):
        run = self._workflows.get_workflow(claims.project_id, params["workflow_id"])
        return 200, run.to_doc()

    def _h_cancel_workflow(self, claims, params, body, query):
        run = self._workflows.cancel_workflow(claims.project_id, params["workflow_id"])
        return 200, run.to_doc()

    def _h_register_template(self, claims, params, body, query):
        template = self._workflows.register_template(
            WorkflowTemplate.from_doc(_require_object(body))
        )
        return 201, template.to_doc()

    def _h_list_templates(self, claims, params, body, query):
        return 200, {"templates": [t.to_doc() for t in self._workflows.list_templates()]}

    def _h_audit(self, claims, params, body, query):
        filters = {}
        if "decision" in query:
            try:
                filters["decision"] = Decision(query["decision"])
            except ValueError:
                raise ValidationError(f"unknown decision {query['decision']!r}") from None
        if "project" in query:
            filters["project_id"] = query["project"]
        if "user" in query:
            filters["user_id"] = query["user"]
        text = self.export_audit_jsonl(**filters)
        response = ApiResponse(200, text, "", content_type="application/x-ndjson")
        return 200, response

    def _h_register_projects(self, claims, params, body, query):
        body = _require_object(body)
        if "projects" not in body:
            body = {"projects": [body]}  # single-project shorthand
        registered = self._policy.register_document(body)
        return 201, {"registered": registered}

    def _h_tick(self, claims, params, body, query):
        if self._tick_handler is None:
            raise NotFoundError("ticking is not enabled on this server")
        advance = 0.0
        if isinstance(body, dict) and "advance_seconds" in body:
            try:
                advance = float(body["advance_seconds"])
            except (TypeError, ValueError):
                raise ValidationError("advance_seconds must be a number") from None
            if advance < 0:
                raise ValidationError("advance_seconds must be nonnegative")
        return 200, self._tick_handler(advance)


def _require_object(body: Any) -> dict:
    if not isinstance(body, dict):
        raise ValidationError("request body must be a JSON object")
    return body


def _require_number(body: dict, key: str) -> float:
    try:
        return float(body[key])
    except KeyError:
        raise ValidationError(f"missing required field {key!r}") from None
    except (TypeError, ValueError):
        raise ValidationError(f"field {key!r} must be a number") from None


def _decode_payload(body: dict) -> bytes:
    if "payload_b64" in body:
        try:
            return base64.b64decode(str(body["payload_b64"]), validate=True)
        except Exception:
            raise ValidationError("payload_b64 is not valid base64") from None
    if "payload" in body:
        return str(body["payload"]).encode("utf-8")
    raise ValidationError("body must carry payload_b64 or payload")
