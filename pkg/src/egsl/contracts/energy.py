"""Prosumer meter ingestion, surplus dispatch with payment, district aggregates."""

from __future__ import annotations

from ..crypto import verify_signature
from ..encoding import canonical_encode
from ..engine import Contract
from ..errors import OrderingError, SignatureError, ValidationError
from ..fixed import mul_fixed
from ..state import EVERYONE, READ, device_key, id_key
from ._args import arg
from .identity import registered_device

DAY_MS = 86_400_000
READING_FIELDS = ("device", "prosumer", "at", "consumed", "produced", "temp")


def reading_key(prosumer: str, at: int) -> str:
    return f"energy/{prosumer}/{at}"


def daily_key(prosumer: str, day: int) -> str:
    return f"energy/{prosumer}/daily/{day}"


def dispatch_key(prosumer: str, day: int) -> str:
    return f"energy/{prosumer}/dispatch/{day}"


def account_key(prosumer: str) -> str:
    return f"energy/{prosumer}/account"


def district_key(district: str, day: int) -> str:
    return f"energy/district/{district}/{day}"


def reading_message(reading: dict) -> bytes:
    return canonical_encode({k: reading[k] for k in READING_FIELDS})


def check_device_reading(ctx, reading: dict, owner_field: str, kind: str, message: bytes) -> dict:
    """Shared checks for signed device readings: registration, signature, strict time order."""
    owner = reading[owner_field]
    if owner != ctx.invoker:
        raise ValidationError("readings are submitted by the device owner")
    device = registered_device(ctx, reading["device"], owner, kind)
    if not verify_signature(device["pk"], arg(reading, "sig", bytes), message):
        raise SignatureError(f"reading not signed by device {reading['device']!r}")
    at = reading["at"]
    if device["lastAt"] is not None and at <= device["lastAt"]:
        raise OrderingError(f"device {reading['device']!r} timestamp {at} not after {device['lastAt']}")
    ctx.write(device_key(reading["device"]), dict(device, lastAt=at))
    return device


def ingest(ctx, args):
    ctx.require_role("prosumer")
    reading = arg(args, "reading", dict)
    for name, kind in (("device", str), ("prosumer", str), ("at", int), ("consumed", int), ("produced", int), ("temp", int)):
        arg(reading, name, kind)
    if reading["consumed"] < 0 or reading["produced"] < 0:
        raise ValidationError("energy quantities must be non-negative")
    check_device_reading(ctx, reading, "prosumer", "meter", reading_message(reading))
    prosumer, at = reading["prosumer"], reading["at"]
    key = reading_key(prosumer, at)
    if ctx.lookup(key) is not None:
        raise OrderingError(f"reading at {at} already recorded")
    ctx.write(key, {k: reading[k] for k in READING_FIELDS}, owner=prosumer)
    day = at // DAY_MS
    totals = ctx.lookup(daily_key(prosumer, day)) or {"consumed": 0, "produced": 0, "count": 0}
    totals = {
        "consumed": totals["consumed"] + reading["consumed"],
        "produced": totals["produced"] + reading["produced"],
        "count": totals["count"] + 1,
    }
    ctx.write(daily_key(prosumer, day), totals, owner=prosumer)
    return {"key": key, "day": day}


def dispatch(ctx, args):
    """Evaluate the day's production; dispatch and pay the surplus when over the trigger."""
    ctx.require_role("authority")
    prosumer = arg(args, "prosumer", str)
    need = arg(args, "needKWh", int)
    min_surplus = arg(args, "minSurplusKWh", int)
    tariff = arg(args, "tariff", int)
    destination = arg(args, "destination", str)
    if need < 0 or min_surplus < 0 or tariff < 0:
        raise ValidationError("dispatch parameters must be non-negative")
    ident = ctx.lookup(id_key(prosumer))
    if ident is None or ident["role"] != "prosumer":
        raise ValidationError("dispatch target is not a registered prosumer")
    day = ctx.time // DAY_MS
    if ctx.lookup(dispatch_key(prosumer, day)) is not None:
        return None
    totals = ctx.lookup(daily_key(prosumer, day))
    produced = totals["produced"] if totals else 0
    if not produced > need + min_surplus:
        return None
    surplus = produced - need
    payment = mul_fixed(surplus, tariff)
    order = {
        "prosumer": prosumer,
        "day": day,
        "producedKWh": produced,
        "surplusKWh": surplus,
        "destination": destination,
        "tariff": tariff,
        "payment": payment,
        "at": ctx.time,
    }
    ctx.write(dispatch_key(prosumer, day), order, owner=prosumer)
    account = ctx.lookup(account_key(prosumer)) or {"owner": prosumer, "balance": 0}
    ctx.write(account_key(prosumer), {"owner": prosumer, "balance": account["balance"] + payment}, owner=prosumer)
    ctx.emit("energy/dispatch", order)
    return order


def aggregate(ctx, args):
    """Record a swarm-computed district total after checking it against the dispatch records."""
    ctx.require_role("authority")
    district = arg(args, "district", str)
    members = arg(args, "members", list)
    estimate = arg(args, "estimateKWh", int)
    fraction = arg(args, "centralFraction", int)
    day = arg(args, "day", int)
    if not members:
        raise ValidationError("empty district")
    if not 0 <= fraction <= 10_000:
        raise ValidationError("centralFraction must lie in [0, 1]")
    exact = 0
    for m in members:
        ident = ctx.lookup(id_key(m))
        if ident is None or ident["role"] != "prosumer" or ident["district"] != district:
            raise ValidationError(f"{m[:12]} is not a prosumer of district {district}")
        order = ctx.lookup(dispatch_key(m, day))
        exact += order["surplusKWh"] if order else 0
    tolerance = max(1, -(-exact // 1_000_000))
    if abs(estimate - exact) > tolerance:
        raise ValidationError(f"swarm estimate {estimate} disagrees with ledger total {exact}")
    to_central = mul_fixed(estimate, fraction)
    record = {
        "district": district,
        "day": day,
        "members": len(members),
        "totalSurplusKWh": estimate,
        "toCentralKWh": to_central,
        "toTradeKWh": estimate - to_central,
        "computedAt": ctx.time,
    }
    ctx.write(district_key(district, day), record, owner=ctx.invoker, acl={EVERYONE: [READ]})
    ctx.emit("energy/district", record)
    return record


CONTRACT = Contract("energy", "dynamic", {"ingest": ingest, "dispatch": dispatch, "aggregate": aggregate})
