"""Versioned world state, identities, access control and consent records."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping

from .crypto import hash_value, sha256
from .encoding import canonical_encode
from .errors import ConsentStateError, ValidationError

ROLES = ("authority", "prosumer", "patient", "doctor", "notary", "taxService", "oracle")
EVERYONE = "*"
READ = "read"
WRITE = "write"

CONSENT_STATUSES = ("requested", "approved", "denied", "revoked")
CONSENT_TRANSITIONS = {
    ("requested", "approved"),
    ("requested", "denied"),
    ("approved", "revoked"),
}
OPEN_STATUSES = ("requested", "approved")


def id_key(identity: str) -> str:
    return f"id/{identity}"


def device_key(device_id: str) -> str:
    return f"id/device/{device_id}"


NETWORK_KEY = "id/network"


def consent_key(consent_id: str) -> str:
    return f"consent/{consent_id}"


def consent_history_key(consent_id: str, n: int) -> str:
    return f"consent/{consent_id}/h/{n}"


def grant_key(requester: str, subject: str) -> str:
    return f"consent/grant/{requester}/{subject}"


def pair_key(requester: str, subject: str) -> str:
    return f"consent/pair/{requester}/{subject}"


def normalize_acl(acl: Mapping[str, Any] | None) -> dict[str, list[str]]:
    if not acl:
        return {}
    out = {}
    for who, perms in acl.items():
        perms = sorted(set(perms))
        if any(p not in (READ, WRITE) for p in perms):
            raise ValidationError(f"unknown permission in {perms}")
        if perms:
            out[who] = perms
    return out


@dataclass(frozen=True)
class StateEntry:
    key: str
    value: Any
    version: int
    owner: str
    acl: dict[str, list[str]] = field(default_factory=dict)

    def to_value(self) -> dict:
        return {"value": self.value, "version": self.version, "owner": self.owner, "acl": self.acl}

    def grants(self, identity: str, perm: str) -> bool:
        return perm in self.acl.get(identity, ()) or perm in self.acl.get(EVERYONE, ())


def write_payload(value: Any, owner: str, acl: Mapping[str, Any] | None = None) -> dict:
    """The writeSet representation of a new entry body (version is assigned at commit)."""
    return {"value": value, "owner": owner, "acl": normalize_acl(acl)}


class WorldState:
    """Key -> :class:`StateEntry` map with a cached SHA-256 state root."""

    def __init__(self, entries: Mapping[str, StateEntry] | None = None):
        self._entries: dict[str, StateEntry] = dict(entries or {})
        self._encoded: dict[str, bytes] = {}
        self._root: bytes | None = None

    def copy(self) -> "WorldState":
        clone = WorldState(self._entries)
        clone._encoded = dict(self._encoded)
        clone._root = self._root
        return clone

    def get(self, key: str) -> StateEntry | None:
        return self._entries.get(key)

    def version(self, key: str) -> int:
        entry = self._entries.get(key)
        return entry.version if entry else 0

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def keys(self, prefix: str = "") -> list[str]:
        return sorted(k for k in self._entries if k.startswith(prefix))

    def items(self) -> Iterator[tuple[str, StateEntry]]:
        for k in sorted(self._entries):
            yield k, self._entries[k]

    def apply_writes(self, write_set) -> None:
        for key, payload in write_set:
            self.put(key, payload["value"], payload["owner"], payload["acl"])

    def put(self, key: str, value: Any, owner: str, acl: Mapping[str, Any] | None = None) -> StateEntry:
        entry = StateEntry(key, value, self.version(key) + 1, owner, normalize_acl(acl))
        self._entries[key] = entry
        self._encoded.pop(key, None)
        self._root = None
        return entry

    def root(self) -> bytes:
        """SHA-256 over the canonical encoding of the whole sorted state."""
        if self._root is None:
            # same bytes as canonical_encode({k: entry.to_value()}), assembled from cached parts
            parts = [b"\x07", len(self._entries).to_bytes(4, "big")]
            for key in sorted(self._entries, key=lambda k: k.encode("utf-8")):
                enc = self._encoded.get(key)
                if enc is None:
                    enc = canonical_encode(self._entries[key].to_value())
                    self._encoded[key] = enc
                raw_key = key.encode("utf-8")
                parts.append(len(raw_key).to_bytes(4, "big"))
                parts.append(raw_key)
                parts.append(enc)
            self._root = sha256(b"".join(parts))
        return self._root

    def to_value(self) -> dict:
        return {k: e.to_value() for k, e in self._entries.items()}


def identity_record(state: WorldState, identity: str) -> dict | None:
    entry = state.get(id_key(identity))
    return entry.value if entry else None


def role_of(state: WorldState, identity: str) -> str | None:
    rec = identity_record(state, identity)
    return rec["role"] if rec else None


def authority_id(state: WorldState) -> str | None:
    entry = state.get(NETWORK_KEY)
    return entry.value["authority"] if entry else None


def read_decision(state: WorldState, reader: str, key: str) -> tuple[bool, list[str]]:
    """Whether ``reader`` may read ``key``; also returns the extra keys consulted.

    Order of checks: owner, authority (bypasses ACLs), ACL grant, then an
    approved, un-revoked consent from the owner covering the key.
    """
    entry = state.get(key)
    if entry is None:
        return False, []
    if entry.owner == reader or role_of(state, reader) == "authority":
        return True, []
    if entry.grants(reader, READ):
        return True, []
    gkey = grant_key(reader, entry.owner)
    grant = state.get(gkey)
    if grant is not None:
        for g in grant.value:
            if key.startswith(g["prefix"]):
                return True, [gkey]
    return False, [gkey]


def may_write(state: WorldState, writer: str, key: str) -> bool:
    entry = state.get(key)
    if entry is None:
        return True
    return entry.owner == writer or role_of(state, writer) == "authority" or entry.grants(writer, WRITE)


@dataclass(frozen=True)
class ConsentRecord:
    consent_id: str
    requester: str
    subject: str
    resource_key: str
    purpose: str
    status: str
    requested_at: int
    decided_at: int | None = None

    def to_value(self) -> dict:
        return {
            "id": self.consent_id,
            "requester": self.requester,
            "subject": self.subject,
            "resource": self.resource_key,
            "purpose": self.purpose,
            "status": self.status,
            "requestedAt": self.requested_at,
            "decidedAt": self.decided_at,
        }

    @classmethod
    def from_value(cls, v: Mapping[str, Any]) -> "ConsentRecord":
        return cls(v["id"], v["requester"], v["subject"], v["resource"], v["purpose"], v["status"], v["requestedAt"], v["decidedAt"])

    @staticmethod
    def make_id(requester: str, subject: str, resource_key: str, purpose: str, requested_at: int) -> str:
        return hash_value(["consent", requester, subject, resource_key, purpose, requested_at]).hex()

    def transition(self, new_status: str, at: int) -> "ConsentRecord":
        if (self.status, new_status) not in CONSENT_TRANSITIONS:
            raise ConsentStateError(f"illegal consent transition {self.status} -> {new_status}")
        if at < self.requested_at:
            raise ConsentStateError("decision precedes request")
        return ConsentRecord(
            self.consent_id, self.requester, self.subject, self.resource_key, self.purpose, new_status, self.requested_at, at
        )
