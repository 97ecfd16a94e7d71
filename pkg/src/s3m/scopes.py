"""The closed universe of permission scopes.

Tokens carry a subset of these; every endpoint requires exactly one of them.
``tokens.manage`` doubles as the administrative scope (token issuance and
revocation, project registration, downtimes, audit export, manual ticks).
"""

from __future__ import annotations

STATUS_READ = "status.read"
ENVIRONMENT_READ = "environment.read"
COMPUTE_SUBMIT = "compute.submit"
COMPUTE_READ = "compute.read"
COMPUTE_CANCEL = "compute.cancel"
STREAMING_MANAGE = "streaming.manage"
STREAMING_READ = "streaming.read"
WORKFLOWS_MANAGE = "workflows.manage"
WORKFLOWS_READ = "workflows.read"
TOKENS_MANAGE = "tokens.manage"

SCOPE_UNIVERSE: frozenset[str] = frozenset(
    {
        STATUS_READ,
        ENVIRONMENT_READ,
        COMPUTE_SUBMIT,
        COMPUTE_READ,
        COMPUTE_CANCEL,
        STREAMING_MANAGE,
        STREAMING_READ,
        WORKFLOWS_MANAGE,
        WORKFLOWS_READ,
        TOKENS_MANAGE,
    }
)


def validate_scopes(scopes) -> frozenset[str]:
    """Normalize an iterable of scope names, rejecting anything outside the universe."""
    out = frozenset(scopes)
    if not out:
        raise ValueError("scopes must be nonempty")
    unknown = out - SCOPE_UNIVERSE
    if unknown:
        raise ValueError(f"unknown scopes: {sorted(unknown)}")
    return out
