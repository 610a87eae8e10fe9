"""Wearable vitals ingestion and the doctor/patient access workflow."""

from __future__ import annotations

from ..encoding import canonical_encode
from ..engine import Contract
from ..errors import NotFoundError, OrderingError, ValidationError
from ._args import arg
from .consent import DECISIONS, open_request, record_transition
from .energy import check_device_reading

VITALS_FIELDS = ("device", "patient", "at", "heartRateBpm", "systolicMmHg", "diastolicMmHg")
VITALS = ("heartRateBpm", "systolicMmHg", "diastolicMmHg")


def vitals_key(patient: str, at: int) -> str:
    return f"health/{patient}/{at}"


def health_prefix(patient: str) -> str:
    return f"health/{patient}/"


def vitals_message(reading: dict) -> bytes:
    return canonical_encode({k: reading.get(k) for k in VITALS_FIELDS})


def ingest(ctx, args):
    ctx.require_role("patient")
    reading = arg(args, "reading", dict)
    arg(reading, "device", str)
    arg(reading, "patient", str)
    arg(reading, "at", int)
    present = [v for v in VITALS if arg(reading, v, int, optional=True) is not None]
    if not present:
        raise ValidationError("a vitals reading needs at least one vital sign")
    if any(reading[v] < 0 for v in present):
        raise ValidationError("vital signs must be non-negative")
    check_device_reading(ctx, reading, "patient", "wearable", vitals_message(reading))
    key = vitals_key(reading["patient"], reading["at"])
    if ctx.lookup(key) is not None:
        raise OrderingError(f"vitals at {reading['at']} already recorded")
    ctx.write(key, {k: reading.get(k) for k in VITALS_FIELDS}, owner=reading["patient"])
    return {"key": key}


def request_access(ctx, args):
    ctx.require_role("doctor")
    patient = arg(args, "patient", str)
    ident = ctx.identity(patient)
    if ident is None or ident["role"] != "patient":
        raise NotFoundError(f"patient {patient[:12]} not registered")
    return open_request(ctx, ctx.invoker, patient, health_prefix(patient), arg(args, "purpose", str)).to_value()


def decide_access(ctx, args):
    ctx.require_role("patient")
    decision = arg(args, "decision", str)
    if decision not in DECISIONS:
        raise ValidationError(f"decision must be approve or deny, got {decision!r}")
    return record_transition(ctx, arg(args, "consent", str), DECISIONS[decision]).to_value()


def revoke_access(ctx, args):
    ctx.require_role("patient")
    return record_transition(ctx, arg(args, "consent", str), "revoked").to_value()


CONTRACT = Contract(
    "health",
    "dynamic",
    {"ingest": ingest, "request": request_access, "decide": decide_access, "revoke": revoke_access},
)
