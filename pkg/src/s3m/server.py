"""Composition root: wires the services behind one gateway and serves HTTP.

``S3MServer`` can be used three ways:

* in-process, calling ``server.gateway.handle_request`` directly (most tests);
* over HTTP via ``start_http()`` on a configurable bind address, plain or
  TLS (pass cert/key paths);
* from the command line through ``python -m s3m``.

On construction the server registers a bootstrap admin identity (user
``admin`` in project ``s3m-admin``) holding the full scope universe and
issues it a token, available as ``server.admin_token``. That credential is
the root of trust from which all other projects and tokens are provisioned;
there is no other out-of-band issuance path.

A background ticker drives the simulated scheduler and lease expiry every
``tick_interval`` seconds of real time; ``POST /admin/tick`` does the same
synchronously and, on a manual clock, can advance simulated time first.
"""

from __future__ import annotations

import json
import logging
import ssl
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from .clock import Clock, ManualClock, SystemClock
from .compute import ComputeService
from .errors import ValidationError
from .facility import FacilityService
from .gateway import ApiRequest, Gateway
from .policy import PolicyEngine, Project
from .scopes import SCOPE_UNIVERSE
from .streaming import BrokerBackend, StreamManager
from .tokens import TokenService
from .workflows import WorkflowEngine

logger = logging.getLogger(__name__)

ADMIN_PROJECT = "s3m-admin"
ADMIN_USER = "admin"
DEFAULT_BIND = "127.0.0.1:8080"
DEFAULT_TICK_INTERVAL = 0.5


class S3MServer:
    def __init__(
        self,
        *,
        clock: Clock | None = None,
        policy_document: dict | None = None,
        facility_config: dict | None = None,
        secret: bytes | None = None,
        tick_interval: float = DEFAULT_TICK_INTERVAL,
        max_lease_hours: float = 24.0,
        broker_backend: BrokerBackend | None = None,
        admin_ttl_seconds: float = 7 * 24 * 3600.0,
    ):
        self.clock = clock or SystemClock()
        self.facility = FacilityService(self.clock, facility_config)
        self.policy = PolicyEngine(self.clock)
        self.tokens = TokenService(
            self.clock, secret=secret, project_registry=self.policy.project_exists
        )
        self.compute = ComputeService(self.clock, self.policy, self.facility)
        self.streaming = StreamManager(
            self.clock,
            self.policy,
            pool_nodes=self.facility.streaming_pool_nodes,
            backend=broker_backend,
            max_lease_hours=max_lease_hours,
        )
        self.workflows = WorkflowEngine(
            self.clock, self.policy, self.compute, self.streaming, self.facility
        )

        # The admin project exists before any user policy loads; its id is
        # reserved and it holds no allocations of its own.
        self.policy.register_project(
            Project(ADMIN_PROJECT, members={ADMIN_USER}, resource_acl=set())
        )
        if policy_document is not None:
            self.policy.register_document(policy_document)
        self._admin = self.tokens.issue_token(
            ADMIN_USER, ADMIN_PROJECT, SCOPE_UNIVERSE, ttl_seconds=admin_ttl_seconds
        )

        self.gateway = Gateway(
            self.clock,
            self.tokens,
            self.policy,
            self.facility,
            self.compute,
            self.streaming,
            self.workflows,
            tick_handler=self.tick,
        )

        self.tick_interval = tick_interval
        self._ticker: threading.Thread | None = None
        self._ticker_stop = threading.Event()
        self._httpd: ThreadingHTTPServer | None = None
        self._http_thread: threading.Thread | None = None

    @property
    def admin_token(self) -> str:
        return self._admin.serialized

    # -- time ---------------------------------------------------------------

    def tick(self, advance_seconds: float = 0.0) -> dict:
        """One synchronous pass of everything clock-driven."""
        if advance_seconds:
            if not isinstance(self.clock, ManualClock):
                raise ValidationError(
                    "advance_seconds requires a server running on a manual clock"
                )
            self.clock.advance(advance_seconds)
        now = self.clock.now()
        transitions = self.compute.step_all(now)
        expired = self.streaming.tick(now)
        purged = self.tokens.purge_expired()
        return {
            "now": now,
            "job_transitions": [t.to_doc() for t in transitions],
            "expired_clusters": [c.cluster_name for c in expired],
            "purged_tokens": purged,
        }

    def start_ticker(self) -> None:
        if self._ticker is not None:
            return
        self._ticker_stop.clear()

        def loop() -> None:
            while not self._ticker_stop.wait(self.tick_interval):
                try:
                    self.tick()
                except Exception:
                    logger.exception("ticker pass failed")

        self._ticker = threading.Thread(target=loop, daemon=True, name="s3m-ticker")
        self._ticker.start()

    def stop_ticker(self) -> None:
        if self._ticker is None:
            return
        self._ticker_stop.set()
        self._ticker.join(timeout=5.0)
        self._ticker = None

    # -- HTTP ------------------------------------------------------------------

    def start_http(
        self,
        bind: str = DEFAULT_BIND,
        *,
        tls_certfile: str | None = None,
        tls_keyfile: str | None = None,
    ) -> str:
        """Start serving in a background thread; returns the base URL.

        Bind port 0 to let the OS pick a free port (tests rely on this).
        """
        host, _, port_text = bind.partition(":")
        try:
            port = int(port_text or "8080")
        except ValueError:
            raise ValidationError(f"invalid bind address: {bind!r}") from None

        gateway = self.gateway

        class Handler(_RequestHandler):
            s3m_gateway = gateway

        self._httpd = _HttpServer((host or "127.0.0.1", port), Handler)
        scheme = "http"
        if tls_certfile:
            context = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
            context.load_cert_chain(tls_certfile, tls_keyfile)
            self._httpd.socket = context.wrap_socket(self._httpd.socket, server_side=True)
            scheme = "https"
        self._http_thread = threading.Thread(
            target=self._httpd.serve_forever, daemon=True, name="s3m-http"
        )
        self._http_thread.start()
        actual_host, actual_port = self._httpd.server_address[:2]
        return f"{scheme}://{actual_host}:{actual_port}"

    def stop_http(self) -> None:
        if self._httpd is None:
            return
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._http_thread is not None:
            self._http_thread.join(timeout=5.0)
        self._httpd = None
        self._http_thread = None

    def close(self) -> None:
        self.stop_ticker()
        self.stop_http()


class _HttpServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True


class _RequestHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "s3m"
    sys_version = ""
    disable_nagle_algorithm = True
    s3m_gateway: Gateway  # bound by the factory subclass in start_http

    def do_GET(self) -> None:
        self._dispatch("GET")

    def do_POST(self) -> None:
        self._dispatch("POST")

    def do_DELETE(self) -> None:
        self._dispatch("DELETE")

    def _dispatch(self, method: str) -> None:
        parsed = urlsplit(self.path)
        query = {key: values[-1] for key, values in parse_qs(parsed.query).items()}

        token = None
        authorization = self.headers.get("Authorization", "")
        if authorization.startswith("Bearer "):
            token = authorization[len("Bearer "):].strip() or None

        body = None
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        if raw:
            try:
                body = json.loads(raw)
            except ValueError as exc:
                self._send(self.s3m_gateway.handle_malformed(method, parsed.path, str(exc)))
                return

        response = self.s3m_gateway.handle_request(
            ApiRequest(
                method=method,
                path=parsed.path,
                bearer_token=token,
                body=body,
                query=query,
            )
        )
        self._send(response)

    def _send(self, response) -> None:
        if isinstance(response.body, str):
            data = response.body.encode("utf-8")
            content_type = response.content_type
        else:
            data = json.dumps(response.body).encode("utf-8")
            content_type = "application/json"
        self.send_response(response.status)
        self.send_header("X-Trace-Id", response.trace_id)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, format: str, *args) -> None:
        # Request lines carry no credentials (bearer rides in a header), but
        # route transport chatter through logging instead of stderr.
        logger.debug("%s %s", self.address_string(), format % args)
