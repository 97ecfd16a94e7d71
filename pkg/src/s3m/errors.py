"""Error types shared by the services and the gateway.

Every service failure that should surface to a client is an ``ApiError``
carrying an HTTP-equivalent status and a stable machine-readable code.
The gateway maps anything else to a 500.
"""

from __future__ import annotations


class ApiError(Exception):
    """Client-visible failure with an HTTP-equivalent status code."""

    status = 500
    code = "internal"

    def __init__(self, detail: str, *, code: str | None = None, status: int | None = None):
        super().__init__(detail)
        self.detail = detail
        if code is not None:
            self.code = code
        if status is not None:
            self.status = status


class ValidationError(ApiError):
    status = 400
    code = "invalid_request"


class AuthenticationError(ApiError):
    """Token missing or failed validation. ``code`` distinguishes the cause."""

    status = 401
    code = "unauthenticated"


class TokenMalformedError(AuthenticationError):
    code = "token_malformed"


class TokenBadSignatureError(AuthenticationError):
    code = "token_bad_signature"


class TokenExpiredError(AuthenticationError):
    code = "token_expired"


class TokenRevokedError(AuthenticationError):
    code = "token_revoked"


class AuthorizationError(ApiError):
    status = 403
    code = "insufficient_scope"


class PolicyDeniedError(ApiError):
    """Policy stage denial, or an allocation overdraft caught at commit time."""

    status = 403
    code = "policy_denied"

    def __init__(self, detail: str, *, rule_id: str = "policy"):
        super().__init__(detail)
        self.rule_id = rule_id


class NotFoundError(ApiError):
    status = 404
    code = "not_found"


class UnknownEndpointError(NotFoundError):
    code = "unknown_endpoint"

    def __init__(self, detail: str = "unknown endpoint"):
        super().__init__(detail)


class ConflictError(ApiError):
    status = 409
    code = "conflict"


class BackpressureError(ApiError):
    """Channel buffer full; the publish was rejected, nothing was dropped."""

    status = 429
    code = "backpressure"
