"""Oracle ingress and the law-change notification contract."""

from __future__ import annotations

from ..crypto import sha256
from ..engine import Contract
from ..errors import AccessDeniedError, ConfigError, FeedError, NotFoundError, ProtocolError, ValidationError
from ..state import EVERYONE, READ
from ._args import arg


def oracle_head_key(source: str) -> str:
    return f"oracle/{source}"


def oracle_key(source: str, n: int) -> str:
    return f"oracle/{source}/{n}"


def law_head_key(law_id: str) -> str:
    return f"law/{law_id}"


def law_key(law_id: str, n: int) -> str:
    return f"law/{law_id}/{n}"


def ack_key(law_id: str, n: int, recipient: str) -> str:
    return f"law/{law_id}/{n}/ack/{recipient}"


def record(ctx, args):
    ctx.require_role("oracle")
    source = arg(args, "source", str)
    observed_at = arg(args, "observedAt", int)
    payload = arg(args, "payload")
    if observed_at > ctx.time:
        raise ValidationError("an observation cannot postdate its ledger write")
    head = ctx.lookup(oracle_head_key(source)) or {"count": 0}
    n = head["count"]
    rec = {
        "source": source,
        "payload": payload,
        "observedAt": observed_at,
        "oracle": ctx.invoker,
        "writtenAt": ctx.time,
        "index": n,
    }
    ctx.write(oracle_key(source, n), rec, acl={EVERYONE: [READ]})
    ctx.write(oracle_head_key(source), {"count": n + 1}, acl={EVERYONE: [READ]})
    return dict(rec, stateKey=oracle_key(source, n))


def notify(ctx, args):
    ctx.require_role("oracle")
    source = arg(args, "source", str)
    index = arg(args, "index", int)
    recipients = arg(args, "recipients", list)
    rec = ctx.lookup(oracle_key(source, index))
    if rec is None:
        raise NotFoundError(f"no oracle record {source}/{index}")
    payload = rec["payload"]
    if not isinstance(payload, dict) or not isinstance(payload.get("lawId"), str):
        raise FeedError(f"feed {source!r} is not a law feed")
    if not recipients:
        raise ConfigError("a law notification needs at least one recipient")
    for r in recipients:
        if ctx.identity(r) is None:
            raise NotFoundError(f"recipient {r[:12]} not registered")
    law_id = payload["lawId"]
    version_hash = payload.get("versionHash")
    if version_hash is None:
        version_hash = sha256(str(payload.get("text", "")).encode("utf-8")).hex()
    head = ctx.lookup(law_head_key(law_id)) or {"count": 0}
    n = head["count"]
    note = {
        "lawId": law_id,
        "index": n,
        "versionHash": version_hash,
        "sentAt": rec["writtenAt"],
        "recipients": sorted(set(recipients)),
        "oracleKey": oracle_key(source, index),
    }
    ctx.write(law_key(law_id, n), note, acl={EVERYONE: [READ]})
    ctx.write(law_head_key(law_id), {"count": n + 1}, acl={EVERYONE: [READ]})
    for r in note["recipients"]:
        ctx.emit("law/notify", {"to": r, "lawId": law_id, "index": n, "versionHash": version_hash, "sentAt": note["sentAt"]})
    return note


def confirm(ctx, args):
    law_id = arg(args, "lawId", str)
    n = arg(args, "index", int)
    note = ctx.lookup(law_key(law_id, n))
    if note is None:
        raise NotFoundError(f"no notification {law_id}/{n}")
    if ctx.invoker not in note["recipients"]:
        raise AccessDeniedError("only listed recipients may confirm receipt")
    key = ack_key(law_id, n, ctx.invoker)
    if ctx.lookup(key) is not None:
        raise ProtocolError("receipt already confirmed")
    if ctx.time < note["sentAt"]:
        raise ValidationError("confirmation precedes notification")
    ctx.write(key, {"recipient": ctx.invoker, "confirmedAt": ctx.time}, acl={EVERYONE: [READ]})
    return {"lawId": law_id, "index": n, "confirmedAt": ctx.time}


ORACLE = Contract("oracle", "oracleDriven", {"record": record})
LAW = Contract("law", "oracleDriven", {"notify": notify, "confirm": confirm})
