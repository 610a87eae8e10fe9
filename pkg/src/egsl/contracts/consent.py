"""Consent records: request -> approve | deny, approve -> revoke.

The head ``consent/<id>`` holds the current record; every transition is also
kept under ``consent/<id>/h/<n>`` so history is never overwritten.
"""

from __future__ import annotations

from ..engine import Contract
from ..errors import AccessDeniedError, DuplicateRequestError, NotFoundError, ValidationError
from ..state import (
    OPEN_STATUSES,
    READ,
    WRITE,
    ConsentRecord,
    consent_history_key,
    consent_key,
    grant_key,
    pair_key,
)
from ._args import arg

HISTORY_INDEX = {"requested": 0, "approved": 1, "denied": 1, "revoked": 2}
DECISIONS = {"approve": "approved", "deny": "denied"}


def _store(ctx, rec: ConsentRecord) -> None:
    acl = {rec.requester: [READ]}
    ctx.write(consent_key(rec.consent_id), rec.to_value(), owner=rec.subject, acl=acl)
    ctx.write(consent_history_key(rec.consent_id, HISTORY_INDEX[rec.status]), rec.to_value(), owner=rec.subject, acl=acl)


def open_request(ctx, requester: str, subject: str, resource: str, purpose: str) -> ConsentRecord:
    if ctx.identity(subject) is None:
        raise NotFoundError(f"subject {subject[:12]} not registered")
    if not resource or not resource.endswith("/"):
        raise ValidationError("resource must be a key prefix ending in '/'")
    pair = ctx.lookup(pair_key(requester, subject))
    if pair is not None and pair["consent"] is not None:
        current = ctx.lookup(consent_key(pair["consent"]))
        if current is not None and current["status"] in OPEN_STATUSES:
            raise DuplicateRequestError("an open request already exists for this pair")
    cid = ConsentRecord.make_id(requester, subject, resource, purpose, ctx.time)
    if ctx.lookup(consent_key(cid)) is not None:
        raise DuplicateRequestError("identical request already recorded")
    rec = ConsentRecord(cid, requester, subject, resource, purpose, "requested", ctx.time)
    _store(ctx, rec)
    ctx.write(pair_key(requester, subject), {"consent": cid}, owner=subject, acl={requester: [READ, WRITE]})
    ctx.emit("consent/request", {"to": subject, "from": requester, "consent": cid, "resource": resource, "purpose": purpose})
    return rec


def _load(ctx, cid: str) -> ConsentRecord:
    value = ctx.lookup(consent_key(cid))
    if value is None:
        raise NotFoundError(f"no consent record {cid[:12]}")
    return ConsentRecord.from_value(value)


def record_transition(ctx, cid: str, new_status: str) -> ConsentRecord:
    """Apply one status transition on behalf of the invoker, who must be the subject."""
    rec = _load(ctx, cid)
    if ctx.invoker != rec.subject:
        raise AccessDeniedError("only the data subject may decide or revoke consent")
    updated = rec.transition(new_status, ctx.time)
    _store(ctx, updated)
    gkey = grant_key(rec.requester, rec.subject)
    grants = list(ctx.lookup(gkey) or [])
    if new_status == "approved":
        grants.append({"prefix": rec.resource_key, "consent": cid})
        ctx.write(gkey, grants, owner=rec.subject, acl={rec.requester: [READ]})
    elif new_status == "revoked":
        ctx.write(gkey, [g for g in grants if g["consent"] != cid], owner=rec.subject, acl={rec.requester: [READ]})
    ctx.emit("consent/" + new_status, {"to": rec.requester, "from": rec.subject, "consent": cid})
    return updated


def request(ctx, args):
    rec = open_request(ctx, ctx.invoker, arg(args, "subject", str), arg(args, "resource", str), arg(args, "purpose", str))
    return rec.to_value()


def decide(ctx, args):
    decision = arg(args, "decision", str)
    if decision not in DECISIONS:
        raise ValidationError(f"decision must be approve or deny, got {decision!r}")
    return record_transition(ctx, arg(args, "consent", str), DECISIONS[decision]).to_value()


def revoke(ctx, args):
    return record_transition(ctx, arg(args, "consent", str), "revoked").to_value()


CONTRACT = Contract("consent", "dynamic", {"request": request, "decide": decide, "revoke": revoke})
