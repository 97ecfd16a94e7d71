"""Issue, validate, list, and revoke project-scoped access tokens.

Wire format (bit-exact, documented so clients can treat it as opaque):

    <header-b64> "." <claims-b64> "." <tag-b64>

* each segment is URL-safe base64 without padding;
* ``header`` is the canonical JSON ``{"alg":"HS256","typ":"S3M"}``;
* ``claims`` is canonical JSON (sorted keys, no whitespace) of
  ``{expires_at, issued_at, project_id, scopes, token_id, user_id}`` where
  ``scopes`` is a sorted list and timestamps are epoch seconds;
* ``tag`` is HMAC-SHA256 over the ASCII bytes ``<header-b64>.<claims-b64>``
  keyed with the server secret.

Validation is stateless apart from the revocation list: a token is good iff
the tag verifies, ``now < expires_at`` (exclusive boundary), and its id has
not been revoked. Revocation wins over success but not over expiry, so a
revoked id may be purged once the token has expired.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import secrets
import threading
from dataclasses import dataclass, field

from .clock import Clock
from .errors import (
    AuthorizationError,
    TokenBadSignatureError,
    TokenExpiredError,
    TokenMalformedError,
    TokenRevokedError,
    ValidationError,
)
from .scopes import TOKENS_MANAGE, validate_scopes

_HEADER = {"alg": "HS256", "typ": "S3M"}

DEFAULT_TTL_SECONDS = 8 * 3600


def _b64encode(raw: bytes) -> str:
    return base64.urlsafe_b64encode(raw).rstrip(b"=").decode("ascii")


def _b64decode(segment: str) -> bytes:
    pad = -len(segment) % 4
    return base64.urlsafe_b64decode(segment + "=" * pad)


def _canonical_json(doc) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


@dataclass(frozen=True)
class Claims:
    """The validated identity a token embeds."""

    token_id: str
    user_id: str
    project_id: str
    scopes: frozenset[str]
    issued_at: float
    expires_at: float

    def to_doc(self) -> dict:
        return {
            "token_id": self.token_id,
            "user_id": self.user_id,
            "project_id": self.project_id,
            "scopes": sorted(self.scopes),
            "issued_at": self.issued_at,
            "expires_at": self.expires_at,
        }


@dataclass
class IssuedToken:
    """Issue-time record: serialized credential plus its claims."""

    serialized: str
    claims: Claims


@dataclass
class RevocationList:
    """Monotone set of revoked token ids; ids leave only via expiry purge."""

    revoked_ids: set[str] = field(default_factory=set)
    updated_at: float = 0.0


class TokenService:
    """Token authority for one server instance.

    Holds the signing secret, the metadata of every issued token, and the
    revocation list. All public methods are safe to call concurrently; a
    validation observes the revocation list before or after a concurrent
    revoke, never in between.
    """

    def __init__(
        self,
        clock: Clock,
        *,
        secret: bytes | None = None,
        default_ttl_seconds: float = DEFAULT_TTL_SECONDS,
        project_registry=None,
    ):
        self._clock = clock
        self._secret = secret if secret is not None else secrets.token_bytes(32)
        self._default_ttl = float(default_ttl_seconds)
        # Callable project_id -> bool; wired to the policy engine by the server.
        self._project_exists = project_registry
        self._lock = threading.Lock()
        self._issued: dict[str, Claims] = {}
        self._revocations = RevocationList()

    # -- issuance -----------------------------------------------------------

    def issue_token(
        self,
        user_id: str,
        project_id: str,
        scopes,
        ttl_seconds: float | None = None,
    ) -> IssuedToken:
        """Mint a signed token. Admin-scope enforcement happens at the gateway."""
        if not user_id:
            raise ValidationError("user_id must be nonempty")
        if not project_id:
            raise ValidationError("project_id must be nonempty")
        try:
            scope_set = validate_scopes(scopes)
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
        ttl = self._default_ttl if ttl_seconds is None else float(ttl_seconds)
        if ttl <= 0:
            raise ValidationError("ttl must be positive")
        if self._project_exists is not None and not self._project_exists(project_id):
            raise ValidationError(f"unknown project: {project_id!r}")

        now = self._clock.now()
        claims = Claims(
            token_id="tok-" + secrets.token_hex(8),
            user_id=user_id,
            project_id=project_id,
            scopes=scope_set,
            issued_at=now,
            expires_at=now + ttl,
        )
        serialized = self._encode(claims)
        with self._lock:
            self._issued[claims.token_id] = claims
        return IssuedToken(serialized=serialized, claims=claims)

    def _encode(self, claims: Claims) -> str:
        header_b64 = _b64encode(_canonical_json(_HEADER))
        claims_b64 = _b64encode(_canonical_json(claims.to_doc()))
        signing_input = f"{header_b64}.{claims_b64}".encode("ascii")
        tag = hmac.new(self._secret, signing_input, hashlib.sha256).digest()
        return f"{header_b64}.{claims_b64}.{_b64encode(tag)}"

    # -- validation ---------------------------------------------------------

    def validate_token(self, serialized: str, now: float | None = None) -> Claims:
        """Check signature, expiry, then revocation; return the embedded claims.

        Raises TokenMalformedError / TokenBadSignatureError / TokenExpiredError
        / TokenRevokedError, each audit-distinguishable by its ``code``.
        """
        if now is None:
            now = self._clock.now()
        if not isinstance(serialized, str):
            raise TokenMalformedError("token is not a string")
        parts = serialized.split(".")
        if len(parts) != 3:
            raise TokenMalformedError("token must have three dot-separated segments")
        header_b64, claims_b64, tag_b64 = parts
        try:
            header = json.loads(_b64decode(header_b64))
            claims_doc = json.loads(_b64decode(claims_b64))
            _b64decode(tag_b64)
        except (ValueError, UnicodeDecodeError) as exc:
            raise TokenMalformedError(f"undecodable token segment: {exc}") from exc
        if header != _HEADER:
            raise TokenMalformedError("unrecognized token header")

        # Compare tags in encoded form. Unpadded base64 leaves unused bits in
        # the final symbol, so distinct tag strings can decode to identical
        # bytes; string comparison makes every single-character change fatal.
        signing_input = f"{header_b64}.{claims_b64}".encode("ascii")
        expected = hmac.new(self._secret, signing_input, hashlib.sha256).digest()
        if not hmac.compare_digest(tag_b64.encode("ascii"), _b64encode(expected).encode("ascii")):
            raise TokenBadSignatureError("signature verification failed")

        try:
            claims = Claims(
                token_id=str(claims_doc["token_id"]),
                user_id=str(claims_doc["user_id"]),
                project_id=str(claims_doc["project_id"]),
                scopes=frozenset(claims_doc["scopes"]),
                issued_at=float(claims_doc["issued_at"]),
                expires_at=float(claims_doc["expires_at"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TokenMalformedError(f"claims missing or mistyped: {exc}") from exc

        # Expiry boundary is exclusive: a token dies at exactly expires_at.
        if now >= claims.expires_at:
            raise TokenExpiredError("token expired")
        with self._lock:
            revoked = claims.token_id in self._revocations.revoked_ids
        if revoked:
            raise TokenRevokedError("token revoked")
        return claims

    # -- revocation ---------------------------------------------------------

    def revoke_token(self, token_id: str) -> dict:
        """Idempotent revoke; unknown ids acknowledge as already absent."""
        with self._lock:
            known = token_id in self._issued
            already = token_id in self._revocations.revoked_ids
            self._revocations.revoked_ids.add(token_id)
            self._revocations.updated_at = self._clock.now()
        if not known and not already:
            detail = "already absent"
        elif already:
            detail = "already revoked"
        else:
            detail = "revoked"
        return {"token_id": token_id, "revoked": True, "detail": detail}

    def purge_expired(self) -> int:
        """Drop expired tokens from the issued map and the revocation list."""
        now = self._clock.now()
        with self._lock:
            dead = [tid for tid, c in self._issued.items() if now >= c.expires_at]
            for tid in dead:
                del self._issued[tid]
                self._revocations.revoked_ids.discard(tid)
        return len(dead)

    # -- listing ------------------------------------------------------------

    def list_tokens(self, user_id: str | None = None) -> list[dict]:
        """Metadata of unexpired tokens; never includes a usable credential."""
        now = self._clock.now()
        with self._lock:
            claims = list(self._issued.values())
            revoked = set(self._revocations.revoked_ids)
        out = []
        for c in claims:
            if now >= c.expires_at:
                continue
            if user_id is not None and c.user_id != user_id:
                continue
            out.append(
                {
                    "token_id": c.token_id,
                    "user_id": c.user_id,
                    "project_id": c.project_id,
                    "scopes": sorted(c.scopes),
                    "issued_at": c.issued_at,
                    "expires_at": c.expires_at,
                    "revoked": c.token_id in revoked,
                }
            )
        return out


def require_scope(claims: Claims, scope: str) -> None:
    if scope not in claims.scopes:
        raise AuthorizationError(f"insufficient scope: requires {scope}")


def require_admin(claims: Claims) -> None:
    require_scope(claims, TOKENS_MANAGE)
