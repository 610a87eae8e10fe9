"""Scenario scripts: parsing, validation and the deterministic run loop.

A script is a JSON document (``.scn``). Its schema is documented in the
README; :data:`SCRIPT_SCHEMA` and :data:`EVENT_SCHEMAS` are the executable
form. Every key pair in a run derives from the seed and the names used in
the script, so the same script and seed always give the same ledger bytes.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from decimal import Decimal
from itertools import groupby
from pathlib import Path
from typing import Any, Callable

import jsonschema

from .contracts.energy import account_key, dispatch_key
from .contracts.health import health_prefix
from .contracts.identity import credential_message
from .crypto import KeyPair
from .energy import (
    DEFAULT_CENTRAL_FRACTION,
    DEFAULT_MIN_SURPLUS_KWH,
    DEFAULT_NEED_KWH,
    DEFAULT_TARIFF,
    DispatchOrder,
    MeterReading,
    day_of,
    swarm_aggregate,
)
from .errors import ConfigError, EgslError, ScriptError, ValidationError
from .fixed import from_fixed, to_decimal, to_fixed
from .health import VitalsReading, audit_trail
from .ledger import LedgerFile
from .network import Network, Receipt
from .oracles import FeedEvent, OracleGateway, OracleRecord, get_notification
from .state import ConsentRecord

log = logging.getLogger(__name__)

NUMBER = {"type": ["string", "number"]}
NAME = {"type": "string", "minLength": 1}

SCRIPT_SCHEMA = {
    "type": "object",
    "required": ["meta", "events"],
    "additionalProperties": False,
    "properties": {
        "meta": {
            "type": "object",
            "required": ["name"],
            "additionalProperties": False,
            "properties": {"name": NAME, "seed": {"type": "integer"}, "epoch": {"type": "string"}},
        },
        "network": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "peerCount": {"type": "integer", "minimum": 1},
                "quorumK": {"type": "integer", "minimum": 1},
                "batchSize": {"type": "integer", "minimum": 1},
                "ledgerMode": {"enum": ["chain", "dag"]},
            },
        },
        "identities": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "role"],
                "additionalProperties": False,
                "properties": {
                    "name": NAME,
                    "role": {"enum": ["prosumer", "patient", "doctor", "notary", "taxService", "oracle"]},
                    "district": {"type": "string"},
                },
            },
        },
        "devices": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "owner", "kind"],
                "additionalProperties": False,
                "properties": {"id": NAME, "owner": NAME, "kind": {"enum": ["meter", "wearable"]}},
            },
        },
        "energy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dailyNeedKWh": NUMBER,
                "minSurplusKWh": NUMBER,
                "tariff": NUMBER,
                "centralFraction": NUMBER,
                "swarmSeed": {"type": "integer"},
                "swarmRounds": {"type": "integer", "minimum": 0},
            },
        },
        "feeds": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "events"],
                "additionalProperties": False,
                "properties": {
                    "name": NAME,
                    "oracle": NAME,
                    "notify": {"type": "array", "items": NAME},
                    "events": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["at", "payload"],
                            "additionalProperties": False,
                            "properties": {"at": {"type": "integer", "minimum": 0}, "payload": {}},
                        },
                    },
                },
            },
        },
        "events": {"type": "array", "items": {"type": "object", "required": ["type", "at"]}},
        "expectations": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["check", "expected"],
                "additionalProperties": False,
                "properties": {"check": NAME, "expected": {}},
            },
        },
    },
}


def _event_schema(required: dict[str, Any], optional: dict[str, Any] | None = None) -> dict:
    props = {"type": {"type": "string"}, "at": {"type": "integer", "minimum": 0}, "label": NAME}
    props.update(required)
    props.update(optional or {})
    return {"type": "object", "required": ["type", "at", *required], "additionalProperties": False, "properties": props}


VITAL = {"type": ["integer", "null"], "minimum": 0}

EVENT_SCHEMAS: dict[str, dict] = {
    "meterReading": _event_schema({"device": NAME, "consumedKWh": NUMBER, "producedKWh": NUMBER}, {"tempC": NUMBER}),
    "dispatch": _event_schema({"prosumer": NAME}, {"destination": NAME}),
    "aggregate": _event_schema({"district": NAME}),
    "thermostat": _event_schema({"prosumer": NAME, "tempC": NUMBER, "consumptionW": NUMBER}),
    "thermostatAnswer": _event_schema({"prosumer": NAME, "answer": {"enum": ["YES", "NO"]}}),
    "vitals": _event_schema({"device": NAME}, {"heartRateBpm": VITAL, "systolicMmHg": VITAL, "diastolicMmHg": VITAL}),
    "requestAccess": _event_schema({"doctor": NAME, "patient": NAME}, {"purpose": {"type": "string"}}),
    "requestConsent": _event_schema(
        {"requester": NAME, "subject": NAME, "resource": NAME}, {"purpose": {"type": "string"}}
    ),
    "decideAccess": _event_schema({"request": NAME, "decision": {"enum": ["approve", "deny"]}}, {"actor": NAME}),
    "revokeAccess": _event_schema({"request": NAME}, {"actor": NAME}),
    "read": _event_schema({"reader": NAME, "key": NAME}),
    "issueDiploma": _event_schema(
        {"holder": NAME, "docHash": NAME, "institution": NAME, "issuedAt": NAME}
    ),
    "verifyDiploma": _event_schema({"verifier": NAME, "holder": NAME, "docHash": NAME}),
    "registerLand": _event_schema({"vat": NAME, "parcel": NAME, "owner": NAME}),
    "queryLand": _event_schema({"requester": NAME, "vat": NAME}),
    "confirmLaw": _event_schema({"recipient": NAME, "lawId": NAME}, {"index": {"type": "integer", "minimum": 0}}),
    "invoke": _event_schema({"as": NAME, "contract": NAME, "operation": NAME}, {"args": {}}),
}

AUTHORITY = "authority"


@dataclass
class Script:
    raw: dict
    path: str | None = None

    @property
    def name(self) -> str:
        return self.raw["meta"]["name"]

    @property
    def pinned_seed(self) -> int | None:
        return self.raw["meta"].get("seed")

    @property
    def network(self) -> dict:
        return self.raw.get("network", {})

    @property
    def identities(self) -> list[dict]:
        return self.raw.get("identities", [])

    @property
    def devices(self) -> list[dict]:
        return self.raw.get("devices", [])

    @property
    def energy(self) -> dict:
        return self.raw.get("energy", {})

    @property
    def feeds(self) -> list[dict]:
        return self.raw.get("feeds", [])

    @property
    def expectations(self) -> list[dict]:
        return self.raw.get("expectations", [])

    def events(self) -> list[dict]:
        """Events by logical time; ties keep file order (``sorted`` is stable)."""
        return sorted(self.raw["events"], key=lambda e: e["at"])


def _schema_errors(instance: Any, schema: dict, where: str) -> list[str]:
    validator = jsonschema.Draft202012Validator(schema)
    out = []
    for err in sorted(validator.iter_errors(instance), key=lambda e: list(e.absolute_path)):
        loc = "".join(f"[{p!r}]" if isinstance(p, str) else f"[{p}]" for p in err.absolute_path)
        out.append(f"{where}{loc}: {err.message}")
    return out


def validate_script(raw: Any) -> list[str]:
    """Every problem found in ``raw``; an empty list means the script is runnable."""
    problems = _schema_errors(raw, SCRIPT_SCHEMA, "script")
    if problems:
        return problems
    names = [i["name"] for i in raw.get("identities", [])]
    known = set(names) | {AUTHORITY}
    if len(set(names)) != len(names) or AUTHORITY in names:
        problems.append("identities: names must be unique and must not be 'authority'")
    roles = {i["name"]: i["role"] for i in raw.get("identities", [])}
    devices = {}
    for i, d in enumerate(raw.get("devices", [])):
        if d["owner"] not in known:
            problems.append(f"devices[{i}]: unknown owner {d['owner']!r}")
        if d["id"] in devices or "/" in d["id"]:
            problems.append(f"devices[{i}]: device id {d['id']!r} is duplicated or contains '/'")
        devices[d["id"]] = d
    feeds = {}
    for i, f in enumerate(raw.get("feeds", [])):
        if f["name"] in feeds:
            problems.append(f"feeds[{i}]: duplicate feed {f['name']!r}")
        feeds[f["name"]] = f
        oracle = f.get("oracle")
        if oracle is not None and roles.get(oracle) != "oracle":
            problems.append(f"feeds[{i}]: {oracle!r} is not an oracle identity")
        if oracle is None and "oracle" not in roles.values():
            problems.append(f"feeds[{i}]: no oracle identity declared")
        for r in f.get("notify", []):
            if r not in known:
                problems.append(f"feeds[{i}].notify: unknown identity {r!r}")
    for key in ("dailyNeedKWh", "minSurplusKWh", "tariff", "centralFraction"):
        if key in raw.get("energy", {}):
            try:
                to_fixed(raw["energy"][key])
            except EgslError:
                problems.append(f"energy.{key}: not a decimal quantity")
    net = raw.get("network", {})
    if "quorumK" in net and net["quorumK"] > net.get("peerCount", 4):
        problems.append("network.quorumK exceeds peerCount")
    labels = set()
    for i, ev in enumerate(raw["events"]):
        kind = ev.get("type")
        schema = EVENT_SCHEMAS.get(kind)
        if schema is None:
            problems.append(f"events[{i}]: unknown event type {kind!r}")
            continue
        errs = _schema_errors(ev, schema, f"events[{i}] ({kind})")
        if errs:
            problems.extend(errs)
            continue
        for fname in ("prosumer", "doctor", "patient", "requester", "subject", "reader", "holder", "verifier", "owner", "recipient", "as", "actor"):
            if fname in ev and ev[fname] not in known:
                problems.append(f"events[{i}] ({kind}): unknown identity {ev[fname]!r} in {fname!r}")
        if "device" in ev and ev["device"] not in devices:
            problems.append(f"events[{i}] ({kind}): unknown device {ev['device']!r}")
        if "request" in ev and ev["request"] not in labels:
            problems.append(f"events[{i}] ({kind}): no earlier request labelled {ev['request']!r}")
        if kind in ("requestAccess", "requestConsent"):
            if "label" not in ev:
                problems.append(f"events[{i}] ({kind}): requests need a label")
            elif ev["label"] in labels:
                problems.append(f"events[{i}] ({kind}): duplicate label {ev['label']!r}")
            else:
                labels.add(ev["label"])
        for fname in ("consumedKWh", "producedKWh", "tempC", "consumptionW"):
            if fname in ev:
                try:
                    to_fixed(ev[fname])
                except EgslError:
                    problems.append(f"events[{i}] ({kind}): {fname} is not a decimal quantity")
    return problems


def parse_script(text: str, path: str | None = None) -> Script:
    try:
        raw = json.loads(text, parse_float=Decimal)
    except json.JSONDecodeError as exc:
        raise ScriptError(f"{path or 'script'}: not valid JSON: {exc}") from None
    raw = _plain_numbers(raw)
    problems = validate_script(raw)
    if problems:
        raise ScriptError("\n".join(problems))
    return Script(raw, path)


def _plain_numbers(value: Any) -> Any:
    # JSON decimals stay exact: they become strings before validation
    if isinstance(value, Decimal):
        return str(value)
    if isinstance(value, list):
        return [_plain_numbers(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain_numbers(v) for k, v in value.items()}
    return value


def load_script(path: str | Path) -> Script:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScriptError(f"cannot read {path}: {exc}") from None
    return parse_script(text, str(path))


# -- run ----------------------------------------------------------------------


@dataclass
class EventOutcome:
    index: int
    at: int
    kind: str
    status: str
    value: Any = None

    def to_report(self) -> dict:
        out = {"index": self.index, "at": self.at, "type": self.kind, "status": self.status}
        if self.kind in REPORTED_RESULTS and self.status == "ok":
            out["result"] = _jsonable(self.value)
        return out


# event types whose return value is public enough to copy into the report
REPORTED_RESULTS = ("verifyDiploma", "queryLand", "thermostat", "thermostatAnswer")


@dataclass
class RunResult:
    script: Script
    network: Network
    report: dict
    names: dict[str, str] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.report["passed"]

    @property
    def ledger(self) -> LedgerFile:
        return self.network.ledger

    def report_json(self) -> str:
        return json.dumps(self.report, indent=2, sort_keys=True) + "\n"


def _jsonable(value: Any) -> Any:
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, Decimal):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return value


def lookup_path(report: Any, path: str) -> Any:
    """Dotted path into the report; ``len(a.b)`` gives a length."""
    want_len = path.startswith("len(") and path.endswith(")")
    if want_len:
        path = path[4:-1]
    cur = report
    for part in path.split("."):
        if isinstance(cur, list):
            try:
                cur = cur[int(part)]
            except (ValueError, IndexError):
                raise KeyError(path) from None
        elif isinstance(cur, dict) and part in cur:
            cur = cur[part]
        else:
            raise KeyError(path)
    return len(cur) if want_len else cur


class Runner:
    """Drives one script through a fresh network.

    Each distinct logical time is a tick: due oracle feed events are written
    first, then the tick's events are proposed in order and cut into blocks.
    Steps that need earlier results committed (aggregation, oracle writes)
    flush the queue before they run.
    """

    def __init__(self, script: Script, seed: int | None = None, ledger_mode: str | None = None, ledger_path=None, contracts=None):
        if seed is not None and script.pinned_seed is not None and seed != script.pinned_seed:
            raise ConfigError("the script pins its seed; --seed-override is refused")
        self.script = script
        self.seed = script.pinned_seed if script.pinned_seed is not None else (seed or 0)
        cfg = script.network
        self.ledger_mode = ledger_mode or cfg.get("ledgerMode", "chain")
        self.keys: dict[str, KeyPair] = {AUTHORITY: self._key("authority")}
        self.roles = {AUTHORITY: "authority"}
        for ident in script.identities:
            self.keys[ident["name"]] = self._key("identity", ident["name"])
            self.roles[ident["name"]] = ident["role"]
        self.device_keys = {d["id"]: self._key("device", d["id"]) for d in script.devices}
        self.device_owner = {d["id"]: d["owner"] for d in script.devices}
        self.districts: dict[str, list[str]] = {}
        for ident in script.identities:
            if ident["role"] == "prosumer" and ident.get("district"):
                self.districts.setdefault(ident["district"], []).append(ident["name"])
        e = script.energy
        self.need = to_decimal(e.get("dailyNeedKWh", DEFAULT_NEED_KWH))
        self.min_surplus = to_decimal(e.get("minSurplusKWh", DEFAULT_MIN_SURPLUS_KWH))
        self.tariff = to_decimal(e.get("tariff", DEFAULT_TARIFF))
        self.central_fraction = to_decimal(e.get("centralFraction", DEFAULT_CENTRAL_FRACTION))
        self.swarm_seed = e.get("swarmSeed", self.seed)
        self.swarm_rounds = e.get("swarmRounds")
        self.net = Network(
            self.keys[AUTHORITY],
            peer_count=cfg.get("peerCount", 4),
            quorum_k=cfg.get("quorumK"),
            batch_size=cfg.get("batchSize", 10),
            ledger_mode=self.ledger_mode,
            contracts=contracts,
            ledger_path=ledger_path,
        )
        self.names = {k.id: name for name, k in self.keys.items()}
        self.requests: dict[str, tuple[str, str, str]] = {}
        self.outcomes: list[EventOutcome] = []
        self.dispatch_orders: list[DispatchOrder] = []
        self.aggregates: list[dict] = []
        self.device_commands: list[dict] = []
        self.oracle_records: list[OracleRecord] = []
        self.notifications: list[tuple[str, int]] = []
        self.net.subscribe(self._on_event)
        self._feeds = self._gateways()

    def _key(self, *parts) -> KeyPair:
        return KeyPair.from_seed(self.seed, *parts)

    def _id(self, name: str) -> str:
        return self.keys[name].id

    def _expand(self, text: str) -> str:
        # ${name} in keys and resources stands for that identity's id
        for name, key in self.keys.items():
            text = text.replace("${" + name + "}", key.id)
        return text

    def _gateways(self) -> dict[str, tuple[OracleGateway, list[str]]]:
        oracles = [i["name"] for i in self.script.identities if i["role"] == "oracle"]
        out = {}
        for f in self.script.feeds:
            oracle = f.get("oracle", oracles[0] if oracles else None)
            events = [FeedEvent(e["at"], _plain_numbers(e["payload"])) for e in f["events"]]
            out[f["name"]] = (OracleGateway(self.net, self.keys[oracle], {f["name"]: events}), f.get("notify", []))
        return out

    def _on_event(self, ev) -> None:
        if ev.name in ("device/command", "device/prompt"):
            p = ev.payload
            entry = {"owner": self.names.get(p["owner"], p["owner"]), "event": ev.name}
            entry.update({k: v for k, v in p.items() if k != "owner"})
            self.device_commands.append(entry)

    # -- setup ----------------------------------------------------------------

    def setup(self) -> None:
        auth = self.keys[AUTHORITY]
        for ident in self.script.identities:
            kp = self.keys[ident["name"]]
            args = {"pk": kp.public_key, "role": ident["role"], "cred": auth.sign(credential_message(kp.id, ident["role"])).sig}
            if ident.get("district"):
                args["district"] = ident["district"]
            self._propose_required(auth, "identity", "register", args, 0)
        self.net.flush()
        for d in self.script.devices:
            args = {"device": d["id"], "owner": self._id(d["owner"]), "pk": self.device_keys[d["id"]].public_key, "kind": d["kind"]}
            self._propose_required(auth, "identity", "registerDevice", args, 0)
        self.net.flush()
        for rej in self.net.rejections:
            raise ConfigError(f"setup transaction rejected: {rej.reason}")

    def _propose_required(self, key, contract, op, args, at):
        sub = self.net.propose(key, contract, op, args, at)
        if not sub.accepted:
            raise ConfigError(f"setup {contract}.{op} rejected: {sub.reason}")

    # -- events ---------------------------------------------------------------

    def _poll_feeds(self, at: int) -> None:
        for name in sorted(self._feeds):
            gateway, notify = self._feeds[name]
            if self.net.pending:
                self.net.flush()
            for rec in gateway.poll_all(at):
                self.oracle_records.append(rec)
                payload = rec.payload
                if notify and isinstance(payload, dict) and "lawId" in payload:
                    note = gateway.notify_law_change(rec, [self._id(n) for n in notify])
                    self.notifications.append((note.law_id, note.index))

    def _tick_times(self, events: list[dict]) -> list[int]:
        times = {e["at"] for e in events}
        for f in self.script.feeds:
            times.update(e["at"] for e in f["events"])
        return sorted(times)

    def run(self) -> RunResult:
        self.setup()
        events = self.script.events()
        by_time = {at: list(group) for at, group in groupby(enumerate(events), key=lambda p: p[1]["at"])}
        for at in self._tick_times(events):
            self._poll_feeds(at)
            submitted: list[tuple[int, dict, Any]] = []
            for index, ev in by_time.get(at, []):
                submitted.append((index, ev, self._apply(ev)))
            self.net.flush()
            for index, ev, handle in submitted:
                self.outcomes.append(self._resolve(index, ev, handle))
        self.net.check_replication()
        return RunResult(self.script, self.net, self._report(), self.names)

    def _submit(self, key: KeyPair, contract: str, op: str, args: Any, at: int):
        sub = self.net.propose(key, contract, op, args, at)
        if not sub.accepted:
            return ("rejected", sub.reason.split(":")[0])
        return ("pending", sub.proposal_id)

    def _apply(self, ev: dict):
        """Propose the transaction for one event; returns a handle resolved after the flush."""
        handler: Callable[[dict], Any] = getattr(self, "_ev_" + ev["type"])
        return handler(ev)

    def _resolve(self, index: int, ev: dict, handle) -> EventOutcome:
        state, detail = handle
        if state == "rejected":
            return EventOutcome(index, ev["at"], ev["type"], f"rejected:{detail}")
        if state == "done":
            return EventOutcome(index, ev["at"], ev["type"], detail[0], detail[1])
        receipt: Receipt = self.net.receipts[detail]
        outcome = EventOutcome(index, ev["at"], ev["type"], receipt.tx.status, receipt.value if receipt.tx.ok else None)
        if ev["type"] == "dispatch" and receipt.tx.ok and receipt.value is not None:
            self.dispatch_orders.append(DispatchOrder.from_value(receipt.value))
        return outcome

    def _ev_meterReading(self, ev):
        owner = self.device_owner[ev["device"]]
        reading = MeterReading(
            ev["device"], self._id(owner), ev["at"], to_decimal(ev["consumedKWh"]), to_decimal(ev["producedKWh"]), to_decimal(ev.get("tempC", 0))
        )
        return self._submit(self.keys[owner], "energy", "ingest", {"reading": reading.signed(self.device_keys[ev["device"]])}, ev["at"])

    def _ev_dispatch(self, ev):
        dest = ev.get("destination", "centralGrid")
        if dest != "centralGrid":
            dest = self._id(dest) if dest in self.keys else dest
        args = {
            "prosumer": self._id(ev["prosumer"]),
            "needKWh": to_fixed(self.need),
            "minSurplusKWh": to_fixed(self.min_surplus),
            "tariff": to_fixed(self.tariff),
            "destination": dest,
        }
        return self._submit(self.keys[AUTHORITY], "energy", "dispatch", args, ev["at"])

    def _ev_aggregate(self, ev):
        if self.net.pending:
            self.net.flush()
        members = self.districts.get(ev["district"], [])
        day = day_of(ev["at"])
        surpluses = []
        for m in members:
            order = self.net.state.get(dispatch_key(self._id(m), day))
            surpluses.append(from_fixed(order.value["surplusKWh"]) if order else Decimal(0))
        agg = swarm_aggregate(ev["district"], surpluses, self.swarm_rounds, self.swarm_seed, self.central_fraction, ev["at"])
        if agg is None:
            return ("done", ("skipped:emptyDistrict", None))
        args = {
            "district": ev["district"],
            "members": [self._id(m) for m in members],
            "estimateKWh": to_fixed(agg.total_surplus_kwh),
            "centralFraction": to_fixed(self.central_fraction),
            "day": day,
        }
        receipt = self.net.invoke(self.keys[AUTHORITY], "energy", "aggregate", args, ev["at"], check=False)
        if receipt.tx.ok:
            entry = agg.to_report()
            entry["day"] = day
            entry["members"] = len(members)
            entry["relativeError"] = f"{agg.relative_error:.3e}"
            self.aggregates.append(entry)
        return ("done", (receipt.tx.status, receipt.value))

    def _ev_thermostat(self, ev):
        args = {"tempC": to_fixed(ev["tempC"]), "consumptionW": to_fixed(ev["consumptionW"])}
        return self._submit(self.keys[ev["prosumer"]], "thermostat", "step", args, ev["at"])

    def _ev_thermostatAnswer(self, ev):
        return self._submit(self.keys[ev["prosumer"]], "thermostat", "answer", {"answer": ev["answer"]}, ev["at"])

    def _ev_vitals(self, ev):
        owner = self.device_owner[ev["device"]]
        reading = VitalsReading(
            ev["device"], self._id(owner), ev["at"], ev.get("heartRateBpm"), ev.get("systolicMmHg"), ev.get("diastolicMmHg")
        )
        return self._submit(self.keys[owner], "health", "ingest", {"reading": reading.signed(self.device_keys[ev["device"]])}, ev["at"])

    def _ev_requestAccess(self, ev):
        doctor, patient = self._id(ev["doctor"]), self._id(ev["patient"])
        purpose = ev.get("purpose", "")
        cid = ConsentRecord.make_id(doctor, patient, health_prefix(patient), purpose, ev["at"])
        self.requests[ev["label"]] = (cid, ev["patient"], "health")
        return self._submit(self.keys[ev["doctor"]], "health", "request", {"patient": patient, "purpose": purpose}, ev["at"])

    def _ev_requestConsent(self, ev):
        requester, subject = self._id(ev["requester"]), self._id(ev["subject"])
        resource = self._expand(ev["resource"])
        purpose = ev.get("purpose", "")
        cid = ConsentRecord.make_id(requester, subject, resource, purpose, ev["at"])
        self.requests[ev["label"]] = (cid, ev["subject"], "consent")
        args = {"subject": subject, "resource": resource, "purpose": purpose}
        return self._submit(self.keys[ev["requester"]], "consent", "request", args, ev["at"])

    def _ev_decideAccess(self, ev):
        cid, subject, contract = self.requests[ev["request"]]
        actor = ev.get("actor", subject)
        args = {"consent": cid, "decision": ev["decision"]}
        return self._submit(self.keys[actor], contract, "decide", args, ev["at"])

    def _ev_revokeAccess(self, ev):
        cid, subject, contract = self.requests[ev["request"]]
        return self._submit(self.keys[ev.get("actor", subject)], contract, "revoke", {"consent": cid}, ev["at"])

    def _ev_read(self, ev):
        return self._submit(self.keys[ev["reader"]], "records", "read", {"key": self._expand(ev["key"])}, ev["at"])

    def _ev_issueDiploma(self, ev):
        args = {"holder": self._id(ev["holder"]), "docHash": ev["docHash"], "institution": ev["institution"], "issuedAt": ev["issuedAt"]}
        return self._submit(self.keys[AUTHORITY], "diplomaRegistry", "issue", args, ev["at"])

    def _ev_verifyDiploma(self, ev):
        args = {"holder": self._id(ev["holder"]), "docHash": ev["docHash"]}
        return self._submit(self.keys[ev["verifier"]], "diploma", "verify", args, ev["at"])

    def _ev_registerLand(self, ev):
        args = {"vat": ev["vat"], "parcel": ev["parcel"], "owner": self._id(ev["owner"])}
        return self._submit(self.keys[AUTHORITY], "land", "register", args, ev["at"])

    def _ev_queryLand(self, ev):
        return self._submit(self.keys[ev["requester"]], "land", "query", {"vat": ev["vat"]}, ev["at"])

    def _ev_confirmLaw(self, ev):
        args = {"lawId": ev["lawId"], "index": ev.get("index", 0)}
        return self._submit(self.keys[ev["recipient"]], "law", "confirm", args, ev["at"])

    def _ev_invoke(self, ev):
        args = _substitute(ev.get("args"), self._expand)
        return self._submit(self.keys[ev["as"]], ev["contract"], ev["operation"], args, ev["at"])

    # -- report ---------------------------------------------------------------

    def _name(self, ident: str) -> str:
        return self.names.get(ident, ident)

    def _report(self) -> dict:
        ledger = self.net.ledger
        report: dict[str, Any] = {
            "scenario": self.script.name,
            "seed": self.seed,
            "ledgerMode": ledger.mode,
            "blocks": len(ledger),
            "transactions": ledger.next_seq,
            "finalStateRoot": self.net.state.root().hex(),
            "tipHash": ledger.blocks[-1].hash_hex,
            "identities": {name: key.id for name, key in sorted(self.keys.items())},
            "events": [o.to_report() for o in self.outcomes],
            "dispatchOrders": [dict(o.to_report(), prosumer=self._name(o.prosumer)) for o in self.dispatch_orders],
            "accounts": self._accounts(),
            "districtAggregates": self.aggregates,
            "deviceCommands": self.device_commands,
            "oracleRecords": [
                {"source": r.source, "index": r.index, "observedAt": r.observed_at, "writtenAt": r.written_at, "payload": _jsonable(r.payload)}
                for r in self.oracle_records
            ],
            "lawNotifications": [self._notification(law_id, n) for law_id, n in self.notifications],
            "auditTrails": self._audits(),
            "rejections": len(self.net.rejections),
        }
        checks = []
        for exp in self.script.expectations:
            try:
                actual = lookup_path(report, exp["check"])
            except KeyError:
                actual = None
                ok = False
            else:
                ok = _same(actual, exp["expected"])
            checks.append({"check": exp["check"], "expected": exp["expected"], "actual": _jsonable(actual), "pass": ok})
        report["checks"] = checks
        report["passed"] = all(c["pass"] for c in checks)
        return _jsonable(report)

    def _accounts(self) -> dict:
        out = {}
        for name, key in sorted(self.keys.items()):
            entry = self.net.state.get(account_key(key.id))
            if entry is not None:
                out[name] = str(from_fixed(entry.value["balance"]))
        return out

    def _notification(self, law_id: str, n: int) -> dict:
        note = get_notification(self.net, law_id, n).to_report()
        note["recipients"] = [self._name(r) for r in note["recipients"]]
        note["confirmations"] = {self._name(r): t for r, t in note["confirmations"].items()}
        return note

    def _audits(self) -> dict:
        out = {}
        for name, role in sorted(self.roles.items()):
            if role != "patient":
                continue
            trail = audit_trail(self.net.ledger, self._id(name), self._id(AUTHORITY))
            out[name] = [
                {"seqNo": e.seq_no, "actor": self._name(e.actor), "action": e.action, "outcome": e.outcome} for e in trail
            ]
        return out


def _substitute(value: Any, expand: Callable[[str], str]) -> Any:
    if isinstance(value, str):
        return expand(value)
    if isinstance(value, list):
        return [_substitute(v, expand) for v in value]
    if isinstance(value, dict):
        return {k: _substitute(v, expand) for k, v in value.items()}
    return value


def _same(actual: Any, expected: Any) -> bool:
    if isinstance(expected, str) and isinstance(actual, str):
        try:
            return to_decimal(actual) == to_decimal(expected)
        except ValidationError:
            return actual == expected
    return _jsonable(actual) == expected


def run_script(script: Script, seed: int | None = None, ledger_mode: str | None = None, ledger_path=None, contracts=None) -> RunResult:
    return Runner(script, seed, ledger_mode, ledger_path, contracts).run()


# -- random scripts -----------------------------------------------------------


def random_script(seed: int, events: int = 30, ledger_mode: str = "chain", peer_count: int = 4) -> dict:
    """A valid script mixing every workflow, drawn from ``seed``.

    Used by the replication and replay tests; it exercises failing and
    aborting transactions as well as successful ones.
    """
    rng = random.Random(seed)
    n_pros = rng.randint(1, 3)
    n_pat = rng.randint(1, 2)
    identities = [{"name": f"p{i}", "role": "prosumer", "district": "D1" if i % 2 == 0 else "D2"} for i in range(n_pros)]
    identities += [{"name": f"pat{i}", "role": "patient"} for i in range(n_pat)]
    identities += [{"name": "doc0", "role": "doctor"}, {"name": "doc1", "role": "doctor"}, {"name": "notary0", "role": "notary"}]
    identities += [{"name": "tax0", "role": "taxService"}, {"name": "orc", "role": "oracle"}]
    devices = [{"id": f"m{i}", "owner": f"p{i}", "kind": "meter"} for i in range(n_pros)]
    devices += [{"id": f"w{i}", "owner": f"pat{i}", "kind": "wearable"} for i in range(n_pat)]
    feeds = [
        {
            "name": "law",
            "notify": ["notary0"],
            "events": [{"at": rng.randrange(1, 5000) * 10, "payload": {"lawId": "inheritance", "text": f"rev{seed}"}}],
        }
    ]
    out: list[dict] = []
    labels: list[str] = []
    t = 1000
    for _ in range(events):
        t += rng.choice([0, 10, 500, 3_600_000])
        kind = rng.choice(
            ["meterReading", "meterReading", "vitals", "requestAccess", "decideAccess", "revokeAccess", "read", "dispatch", "aggregate", "thermostat", "thermostatAnswer", "invoke"]
        )
        if kind == "meterReading":
            i = rng.randrange(n_pros)
            out.append({"type": kind, "at": t, "device": f"m{i}", "consumedKWh": str(Decimal(rng.randrange(0, 90000)) / 10000), "producedKWh": str(Decimal(rng.randrange(0, 120000)) / 10000)})
        elif kind == "vitals":
            i = rng.randrange(n_pat)
            out.append({"type": kind, "at": t, "device": f"w{i}", "heartRateBpm": rng.randrange(50, 120)})
        elif kind == "requestAccess":
            label = f"r{len(labels)}"
            labels.append(label)
            out.append({"type": kind, "at": t, "doctor": rng.choice(["doc0", "doc1"]), "patient": f"pat{rng.randrange(n_pat)}", "purpose": "care", "label": label})
        elif kind in ("decideAccess", "revokeAccess") and labels:
            ev = {"type": kind, "at": t, "request": rng.choice(labels)}
            if kind == "decideAccess":
                ev["decision"] = rng.choice(["approve", "deny"])
            out.append(ev)
        elif kind == "read":
            pat = f"pat{rng.randrange(n_pat)}"
            out.append({"type": kind, "at": t, "reader": rng.choice(["doc0", "doc1", pat]), "key": "health/${" + pat + "}/" + str(rng.choice([t - 10, t - 500, 1000]))})
        elif kind == "dispatch":
            out.append({"type": kind, "at": t, "prosumer": f"p{rng.randrange(n_pros)}"})
        elif kind == "aggregate":
            out.append({"type": kind, "at": t, "district": rng.choice(["D1", "D2"])})
        elif kind == "thermostat":
            out.append({"type": kind, "at": t, "prosumer": f"p{rng.randrange(n_pros)}", "tempC": rng.choice(["17", "18", "21", "25", "26"]), "consumptionW": rng.choice(["24", "25", "26"])})
        elif kind == "thermostatAnswer":
            out.append({"type": kind, "at": t, "prosumer": f"p{rng.randrange(n_pros)}", "answer": rng.choice(["YES", "NO"])})
        elif kind == "invoke":
            out.append({"type": kind, "at": t, "as": rng.choice(["p0", "doc0", "authority"]), "contract": "records", "operation": "put", "args": {"writes": [[f"data/{rng.randrange(3)}", rng.randrange(100)]]}})
    script = {
        "meta": {"name": f"random-{seed}", "seed": seed},
        "network": {"peerCount": peer_count, "batchSize": rng.choice([1, 3, 10]), "ledgerMode": ledger_mode},
        "identities": identities,
        "devices": devices,
        "feeds": feeds,
        "events": out,
    }
    problems = validate_script(script)
    if problems:
        raise ScriptError("\n".join(problems))
    return script
