"""Wearable vitals, doctor access requests and the per-patient audit trail."""

from __future__ import annotations

from dataclasses import dataclass

from .contracts.health import health_prefix, vitals_message
from .crypto import KeyPair
from .errors import AccessDeniedError, EgslError
from .ledger import LedgerFile, Transaction, registry_from_transactions
from .network import Network, Receipt
from .state import ConsentRecord


@dataclass(frozen=True)
class VitalsReading:
    device_id: str
    patient: str
    at: int
    heart_rate_bpm: int | None = None
    systolic_mmhg: int | None = None
    diastolic_mmhg: int | None = None

    def to_value(self) -> dict:
        return {
            "device": self.device_id,
            "patient": self.patient,
            "at": self.at,
            "heartRateBpm": self.heart_rate_bpm,
            "systolicMmHg": self.systolic_mmhg,
            "diastolicMmHg": self.diastolic_mmhg,
        }

    def signed(self, device_key: KeyPair) -> dict:
        value = self.to_value()
        value["sig"] = device_key.sign(vitals_message(value)).sig
        return value


def ingest_vitals(net: Network, patient: KeyPair, wearable: KeyPair, reading: VitalsReading) -> Receipt:
    return net.invoke(patient, "health", "ingest", {"reading": reading.signed(wearable)}, reading.at)


def request_access(net: Network, doctor: KeyPair, patient: str, purpose: str, at: int) -> ConsentRecord:
    receipt = net.invoke(doctor, "health", "request", {"patient": patient, "purpose": purpose}, at)
    return ConsentRecord.from_value(receipt.value)


def decide_access(net: Network, patient: KeyPair, consent_id: str, decision: str, at: int) -> ConsentRecord:
    receipt = net.invoke(patient, "health", "decide", {"consent": consent_id, "decision": decision}, at)
    return ConsentRecord.from_value(receipt.value)


def revoke_access(net: Network, patient: KeyPair, consent_id: str, at: int) -> ConsentRecord:
    receipt = net.invoke(patient, "health", "revoke", {"consent": consent_id}, at)
    return ConsentRecord.from_value(receipt.value)


def read_record(net: Network, reader: KeyPair, key: str, at: int) -> Receipt:
    """Permission-checked read; a refusal still lands on the ledger as a failed tx."""
    return net.invoke(reader, "records", "read", {"key": key}, at, check=False)


@dataclass(frozen=True)
class AuditEntry:
    seq_no: int
    actor: str
    action: str
    outcome: str
    consent_id: str | None = None
    key: str | None = None

    def to_value(self) -> dict:
        return {
            "seqNo": self.seq_no,
            "actor": self.actor,
            "action": self.action,
            "outcome": self.outcome,
            "consent": self.consent_id,
            "key": self.key,
        }


DECISION_ACTIONS = {"approve": "approve", "deny": "deny"}


def _args(tx: Transaction) -> dict:
    try:
        args = tx.decoded_args()
    except EgslError:
        return {}
    return args if isinstance(args, dict) else {}


def audit_trail(ledger: LedgerFile, patient: str, caller: str) -> list[AuditEntry]:
    """Every request, decision, revocation and read touching the patient's records.

    Built only from ledger transactions, so replaying the ledger rebuilds it
    exactly. Only the patient and the authority may ask.
    """
    _, authority, _ = registry_from_transactions(ledger.transactions())
    if caller not in (patient, authority):
        raise AccessDeniedError("only the patient or the authority may read the audit trail")
    prefix = health_prefix(patient)
    consents: set[str] = set()
    out: list[AuditEntry] = []
    for tx in ledger.transactions():
        args = _args(tx)
        op = (tx.contract, tx.operation)
        if op == ("health", "request") and args.get("patient") == patient:
            cid = ConsentRecord.make_id(tx.invoker, patient, prefix, args.get("purpose", ""), tx.logical_time)
            if tx.ok:
                consents.add(cid)
            out.append(AuditEntry(tx.seq_no, tx.invoker, "request", tx.status, cid))
        elif op == ("consent", "request") and args.get("subject") == patient and str(args.get("resource", "")).startswith(prefix):
            cid = ConsentRecord.make_id(tx.invoker, patient, args["resource"], args.get("purpose", ""), tx.logical_time)
            if tx.ok:
                consents.add(cid)
            out.append(AuditEntry(tx.seq_no, tx.invoker, "request", tx.status, cid))
        elif tx.contract in ("health", "consent") and tx.operation in ("decide", "revoke") and args.get("consent") in consents:
            action = "revoke" if tx.operation == "revoke" else DECISION_ACTIONS.get(args.get("decision"), "decide")
            out.append(AuditEntry(tx.seq_no, tx.invoker, action, tx.status, args["consent"]))
        elif op == ("records", "read") and str(args.get("key", "")).startswith(prefix):
            out.append(AuditEntry(tx.seq_no, tx.invoker, "read", tx.status, key=args["key"]))
    return out
