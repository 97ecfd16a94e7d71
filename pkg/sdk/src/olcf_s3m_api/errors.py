"""Typed client-side exceptions.

Every server rejection maps onto one of these by HTTP status. Messages carry
the server's error code, detail, and trace id; they never contain the
bearer token.
"""

from __future__ import annotations


class S3MClientError(Exception):
    """Base class for everything this package raises."""

    def __init__(self, message: str, *, status: int | None = None,
                 code: str = "", trace_id: str = ""):
        super().__init__(message)
        self.status = status
        self.code = code
        self.trace_id = trace_id


class S3MConfigurationError(S3MClientError):
    """Client-side misconfiguration; no request was sent."""


class S3MConnectionError(S3MClientError):
    """The server could not be reached at all."""


class S3MAuthenticationError(S3MClientError):
    """401: the token was missing, malformed, expired, or revoked."""


class S3MPermissionError(S3MClientError):
    """403: the token lacks a scope or project policy denied the request."""


class S3MNotFoundError(S3MClientError):
    """404: no such endpoint or no such resource in the caller's project."""


class S3MConflictError(S3MClientError):
    """409: the operation clashes with current resource state."""


class S3MValidationError(S3MClientError):
    """400: the server rejected the request body or parameters."""


class S3MBackpressureError(S3MClientError):
    """429: a streaming channel refused a publish because a buffer is full."""


class S3MServerError(S3MClientError):
    """5xx: the server failed internally; the trace id locates the audit record."""


_STATUS_MAP = {
    400: S3MValidationError,
    401: S3MAuthenticationError,
    403: S3MPermissionError,
    404: S3MNotFoundError,
    409: S3MConflictError,
    429: S3MBackpressureError,
}


def error_for_response(status: int, body: object) -> S3MClientError:
    code = ""
    detail = f"HTTP {status}"
    trace_id = ""
    if isinstance(body, dict):
        code = str(body.get("error", ""))
        detail = str(body.get("detail", detail))
        trace_id = str(body.get("trace_id", ""))
    cls = _STATUS_MAP.get(status, S3MServerError)
    message = f"{detail} [status {status}"
    if code:
        message += f", {code}"
    if trace_id:
        message += f", trace {trace_id}"
    message += "]"
    return cls(message, status=status, code=code, trace_id=trace_id)
