"""Diploma verification (static), thermostat control and land-title access (dynamic)."""

from __future__ import annotations

from ..engine import Contract
from ..errors import AccessDeniedError, NotFoundError, ProtocolError, ValidationError
from ..fixed import from_fixed
from ..gov import DO_NOTHING, SEND_PROMPT, ThermostatConfig, thermostat_step
from ..state import EVERYONE, READ, id_key
from ._args import arg


def diploma_key(holder: str, doc_hash: str) -> str:
    return f"diploma/{holder}/{doc_hash}"


def verify_diploma(ctx, args):
    # one lookup, no branching on content: keep this handler static
    record = ctx.lookup(diploma_key(arg(args, "holder", str), arg(args, "docHash", str)))
    return {
        "valid": record is not None,
        "institution": record["institution"] if record else None,
        "issuedAt": record["issuedAt"] if record else None,
    }


def issue_diploma(ctx, args):
    ctx.require_role("authority")
    holder = arg(args, "holder", str)
    doc_hash = arg(args, "docHash", str)
    if ctx.identity(holder) is None:
        raise NotFoundError(f"holder {holder[:12]} not registered")
    key = diploma_key(holder, doc_hash)
    if ctx.lookup(key) is not None:
        raise ValidationError("diploma records are immutable")
    record = {
        "holder": holder,
        "institution": arg(args, "institution", str),
        "issuedAt": arg(args, "issuedAt", str),
        "docHash": doc_hash,
    }
    ctx.write(key, record, owner=ctx.invoker, acl={EVERYONE: [READ]})
    return record


DIPLOMA = Contract("diploma", "static", {"verify": verify_diploma})
DIPLOMA_REGISTRY = Contract("diplomaRegistry", "dynamic", {"issue": issue_diploma})


def thermostat_key(owner: str) -> str:
    return f"energy/{owner}/thermostat"


def thermostat_config_key(owner: str) -> str:
    return f"energy/{owner}/thermostat/config"


def _config(ctx) -> ThermostatConfig:
    value = ctx.lookup(thermostat_config_key(ctx.invoker))
    return ThermostatConfig.from_value(value) if value else ThermostatConfig()


def _emit_action(ctx, action) -> None:
    if action.kind == SEND_PROMPT:
        ctx.emit("device/prompt", {"owner": ctx.invoker, "text": action.text})
    elif action.kind != DO_NOTHING:
        ctx.emit("device/command", {"owner": ctx.invoker, "device": action.device, "command": "turnOn", "action": action.kind})


def configure_thermostat(ctx, args):
    ctx.require_role("prosumer")
    cfg = ThermostatConfig.from_value(args)
    ctx.write(thermostat_config_key(ctx.invoker), cfg.to_value())
    return cfg.to_value()


def thermostat_reading(ctx, args):
    ctx.require_role("prosumer")
    temp = arg(args, "tempC", int)
    consumption = arg(args, "consumptionW", int)
    action = thermostat_step(from_fixed(temp), from_fixed(consumption), None, _config(ctx))
    pending = {"tempC": temp, "consumptionW": consumption} if action.kind == SEND_PROMPT else None
    ctx.write(thermostat_key(ctx.invoker), {"pending": pending, "lastAction": action.kind, "at": ctx.time})
    _emit_action(ctx, action)
    return action.to_value()


def thermostat_answer(ctx, args):
    ctx.require_role("prosumer")
    answer = arg(args, "answer", str)
    current = ctx.lookup(thermostat_key(ctx.invoker))
    if current is None or current["pending"] is None:
        raise ProtocolError("no prompt is pending")
    p = current["pending"]
    action = thermostat_step(from_fixed(p["tempC"]), from_fixed(p["consumptionW"]), answer, _config(ctx))
    ctx.write(thermostat_key(ctx.invoker), {"pending": None, "lastAction": action.kind, "at": ctx.time})
    _emit_action(ctx, action)
    return action.to_value()


THERMOSTAT = Contract(
    "thermostat",
    "dynamic",
    {"configure": configure_thermostat, "step": thermostat_reading, "answer": thermostat_answer},
)


def land_index_key(vat: str) -> str:
    return f"land/{vat}"


def land_key(vat: str, parcel: str) -> str:
    return f"land/{vat}/{parcel}"


def register_title(ctx, args):
    ctx.require_role("authority")
    vat = arg(args, "vat", str)
    parcel = arg(args, "parcel", str)
    owner = arg(args, "owner", str)
    if "/" in vat or "/" in parcel or not vat or not parcel:
        raise ValidationError("vat and parcel ids must be non-empty and contain no '/'")
    if ctx.lookup(id_key(owner)) is None:
        raise NotFoundError(f"owner {owner[:12]} not registered")
    key = land_key(vat, parcel)
    if ctx.lookup(key) is not None:
        raise ValidationError(f"title {vat}/{parcel} already registered")
    record = {"vat": vat, "parcel": parcel, "owner": owner}
    ctx.write(key, record, owner=owner)
    parcels = list(ctx.lookup(land_index_key(vat)) or [])
    ctx.write(land_index_key(vat), sorted(parcels + [parcel]), owner=ctx.invoker, acl={EVERYONE: [READ]})
    return record


def query_titles(ctx, args):
    ctx.require_role("taxService")
    vat = arg(args, "vat", str)
    parcels = ctx.lookup(land_index_key(vat))
    if not parcels:
        return []
    titles = [ctx.read(land_key(vat, p)) for p in parcels if ctx.can_read(land_key(vat, p))]
    if not titles:
        raise AccessDeniedError(f"no citizen consent covers titles under VAT {vat}")
    return titles


LAND = Contract("land", "dynamic", {"register": register_title, "query": query_titles})
