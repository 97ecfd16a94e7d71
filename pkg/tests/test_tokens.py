from __future__ import annotations

import json
import random
import string

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from s3m.clock import ManualClock
from s3m.errors import (
    TokenBadSignatureError,
    TokenExpiredError,
    TokenMalformedError,
    TokenRevokedError,
    ValidationError,
)
from s3m.scopes import SCOPE_UNIVERSE
from s3m.tokens import TokenService


def _service(now: float = 0.0) -> tuple[TokenService, ManualClock]:
    clock = ManualClock(now)
    return TokenService(clock, secret=b"unit-test-secret"), clock


def test_issue_then_validate_round_trips_claims():
    svc, _ = _service()
    issued = svc.issue_token("alice", "proj-a", {"status.read"}, ttl_seconds=3600)
    claims = svc.validate_token(issued.serialized)
    assert claims.user_id == "alice"
    assert claims.project_id == "proj-a"
    assert claims.scopes == frozenset({"status.read"})
    assert claims.expires_at == claims.issued_at + 3600


def test_serialized_form_is_three_urlsafe_segments():
    svc, _ = _service()
    issued = svc.issue_token("alice", "proj-a", {"status.read"})
    parts = issued.serialized.split(".")
    assert len(parts) == 3
    allowed = set(string.ascii_letters + string.digits + "-_")
    for part in parts:
        assert part
        assert set(part) <= allowed


def test_default_ttl_is_eight_hours():
    svc, _ = _service()
    issued = svc.issue_token("alice", "proj-a", {"status.read"})
    assert issued.claims.expires_at - issued.claims.issued_at == 8 * 3600


def test_hundred_issues_have_distinct_token_ids():
    svc, _ = _service()
    ids = {
        svc.issue_token("alice", "proj-a", {"status.read"}).claims.token_id
        for _ in range(100)
    }
    assert len(ids) == 100


def test_issue_rejects_bad_inputs():
    svc, _ = _service()
    with pytest.raises(ValidationError):
        svc.issue_token("", "proj-a", {"status.read"})
    with pytest.raises(ValidationError):
        svc.issue_token("alice", "", {"status.read"})
    with pytest.raises(ValidationError):
        svc.issue_token("alice", "proj-a", set())
    with pytest.raises(ValidationError):
        svc.issue_token("alice", "proj-a", {"not.a.scope"})
    with pytest.raises(ValidationError):
        svc.issue_token("alice", "proj-a", {"status.read"}, ttl_seconds=0)
    with pytest.raises(ValidationError):
        svc.issue_token("alice", "proj-a", {"status.read"}, ttl_seconds=-5)


def test_issue_consults_project_registry():
    clock = ManualClock()
    svc = TokenService(clock, secret=b"k", project_registry=lambda p: p == "known")
    svc.issue_token("alice", "known", {"status.read"})
    with pytest.raises(ValidationError):
        svc.issue_token("alice", "unknown", {"status.read"})


def test_single_character_substitutions_never_validate():
    """Flipping any one character must break the credential."""
    svc, _ = _service()
    token = svc.issue_token("a", "p", {"status.read"}, ttl_seconds=60).serialized
    alphabet = string.ascii_letters + string.digits + "-_."
    for index in range(len(token)):
        original = token[index]
        for replacement in alphabet:
            if replacement == original:
                continue
            mutated = token[:index] + replacement + token[index + 1:]
            with pytest.raises((TokenBadSignatureError, TokenMalformedError)):
                svc.validate_token(mutated)


def test_expiry_boundary_is_exclusive():
    svc, clock = _service()
    token = svc.issue_token("alice", "proj-a", {"status.read"}, ttl_seconds=100).serialized
    clock.set(99.999)
    assert svc.validate_token(token).user_id == "alice"
    clock.set(100.0)  # now == expires_at is already invalid
    with pytest.raises(TokenExpiredError):
        svc.validate_token(token)
    clock.set(5000.0)  # and stays invalid forever after
    with pytest.raises(TokenExpiredError):
        svc.validate_token(token)


def test_revoked_token_reports_revoked_while_unexpired():
    svc, _ = _service()
    issued = svc.issue_token("alice", "proj-a", {"status.read"}, ttl_seconds=100)
    svc.revoke_token(issued.claims.token_id)
    with pytest.raises(TokenRevokedError):
        svc.validate_token(issued.serialized)


def test_expired_and_revoked_reports_expired():
    # Expiry owns the boundary: a dead-by-time token stays EXPIRED even
    # if it was also revoked.
    svc, clock = _service()
    issued = svc.issue_token("alice", "proj-a", {"status.read"}, ttl_seconds=10)
    svc.revoke_token(issued.claims.token_id)
    clock.set(11.0)
    with pytest.raises(TokenExpiredError):
        svc.validate_token(issued.serialized)


def test_revoke_is_idempotent_and_total():
    svc, _ = _service()
    issued = svc.issue_token("alice", "proj-a", {"status.read"})
    first = svc.revoke_token(issued.claims.token_id)
    second = svc.revoke_token(issued.claims.token_id)
    assert first["revoked"] and second["revoked"]
    unknown = svc.revoke_token("tok-never-issued")
    assert unknown["detail"] == "already absent"


def test_revocation_is_per_token_not_per_user():
    svc, _ = _service()
    a = svc.issue_token("alice", "proj-a", {"status.read"})
    b = svc.issue_token("alice", "proj-a", {"status.read"})
    svc.revoke_token(a.claims.token_id)
    with pytest.raises(TokenRevokedError):
        svc.validate_token(a.serialized)
    assert svc.validate_token(b.serialized).token_id == b.claims.token_id


def test_listing_excludes_expired_and_never_leaks_credentials():
    svc, clock = _service()
    for _ in range(3):
        svc.issue_token("alice", "proj-a", {"status.read"}, ttl_seconds=50)
    for _ in range(2):
        svc.issue_token("bob", "proj-a", {"status.read"}, ttl_seconds=5000)
    assert len(svc.list_tokens()) == 5
    assert len(svc.list_tokens("alice")) == 3

    for entry in svc.list_tokens():
        for value in entry.values():
            with pytest.raises((TokenMalformedError, TokenBadSignatureError)):
                svc.validate_token(str(value))

    clock.set(100.0)
    assert len(svc.list_tokens()) == 2  # alice's batch has expired


def test_malformed_inputs_are_distinguished_from_bad_signatures():
    svc, _ = _service()
    for junk in ("", "a", "a.b", "a.b.c.d", "!!!.===.###", "\x00\x01"):
        with pytest.raises(TokenMalformedError):
            svc.validate_token(junk)


def test_token_with_foreign_key_fails_signature():
    ours, _ = _service()
    theirs = TokenService(ManualClock(), secret=b"some-other-secret")
    foreign = theirs.issue_token("alice", "proj-a", {"status.read"}).serialized
    with pytest.raises(TokenBadSignatureError):
        ours.validate_token(foreign)


def test_tampered_claims_fail_signature():
    svc, _ = _service()
    token = svc.issue_token("alice", "proj-a", {"status.read"}).serialized
    header_b64, claims_b64, tag = token.split(".")
    import base64

    def b64(raw: bytes) -> str:
        return base64.urlsafe_b64encode(raw).decode("ascii").rstrip("=")

    padded = claims_b64 + "=" * (-len(claims_b64) % 4)
    claims = json.loads(base64.urlsafe_b64decode(padded))
    claims["scopes"] = sorted(SCOPE_UNIVERSE)  # privilege escalation attempt
    forged = ".".join([header_b64, b64(json.dumps(claims, sort_keys=True,
                                                  separators=(",", ":")).encode()), tag])
    with pytest.raises(TokenBadSignatureError):
        svc.validate_token(forged)


def test_random_strings_never_validate():
    svc, _ = _service()
    reference = svc.issue_token("alice", "proj-a", {"status.read"}).serialized
    rng = random.Random(20240817)
    alphabet = string.ascii_letters + string.digits + "-_."
    for _ in range(10_000):
        candidate = "".join(rng.choice(alphabet) for _ in range(len(reference)))
        try:
            svc.validate_token(candidate)
        except Exception:
            continue
        raise AssertionError(f"random string validated: {candidate!r}")


@settings(max_examples=200, deadline=None)
@given(
    user=st.text(min_size=1, max_size=30),
    project=st.text(min_size=1, max_size=30),
    scopes=st.sets(st.sampled_from(sorted(SCOPE_UNIVERSE)), min_size=1),
    ttl=st.floats(min_value=1, max_value=10_000_000),
)
def test_round_trip_identity_for_arbitrary_claims(user, project, scopes, ttl):
    svc, _ = _service()
    issued = svc.issue_token(user, project, scopes, ttl_seconds=ttl)
    claims = svc.validate_token(issued.serialized)
    assert claims.user_id == user
    assert claims.project_id == project
    assert claims.scopes == frozenset(scopes)


def test_purge_drops_expired_revocations_only():
    svc, clock = _service()
    short = svc.issue_token("alice", "proj-a", {"status.read"}, ttl_seconds=10)
    long = svc.issue_token("alice", "proj-a", {"status.read"}, ttl_seconds=1000)
    svc.revoke_token(short.claims.token_id)
    svc.revoke_token(long.claims.token_id)
    clock.set(20.0)
    svc.purge_expired()
    with pytest.raises(TokenExpiredError):
        svc.validate_token(short.serialized)
    with pytest.raises(TokenRevokedError):
        svc.validate_token(long.serialized)
