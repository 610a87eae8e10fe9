"""Oracle agents: scripted external feeds written on-ledger, and law-change notices."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .contracts.oracle import ack_key, law_key, oracle_head_key
from .crypto import KeyPair
from .errors import FeedError, NotFoundError
from .network import Network


@dataclass(frozen=True)
class FeedEvent:
    at: int
    payload: Any


@dataclass(frozen=True)
class OracleRecord:
    source: str
    payload: Any
    observed_at: int
    written_at: int
    oracle_id: str
    index: int

    @property
    def state_key(self) -> str:
        return f"oracle/{self.source}/{self.index}"

    @classmethod
    def from_value(cls, v: Mapping) -> "OracleRecord":
        return cls(v["source"], v["payload"], v["observedAt"], v["writtenAt"], v["oracle"], v["index"])


@dataclass(frozen=True)
class LawNotification:
    law_id: str
    index: int
    version_hash: str
    sent_at: int
    recipients: tuple[str, ...]
    confirmations: dict[str, int] = field(default_factory=dict)

    def to_report(self) -> dict:
        return {
            "lawId": self.law_id,
            "index": self.index,
            "versionHash": self.version_hash,
            "sentAt": self.sent_at,
            "recipients": list(self.recipients),
            "confirmations": dict(sorted(self.confirmations.items())),
        }


class OracleGateway:
    """Replays scripted feeds into the ledger through one oracle identity.

    The write cursor of each feed is the on-ledger record count, so polling
    is idempotent and survives a restart of the gateway object.
    """

    def __init__(self, net: Network, oracle: KeyPair, feeds: Mapping[str, Sequence[FeedEvent]]):
        self.net = net
        self.oracle = oracle
        self.feeds = {name: sorted(events, key=lambda e: e.at) for name, events in feeds.items()}

    def cursor(self, feed: str) -> int:
        head = self.net.state.get(oracle_head_key(feed))
        return head.value["count"] if head else 0

    def poll_feed(self, feed: str, at: int) -> OracleRecord | None:
        """Write the next unwritten event observed at or before ``at``, if any."""
        if feed not in self.feeds:
            raise FeedError(f"feed {feed!r} is not declared")
        events = self.feeds[feed]
        n = self.cursor(feed)
        if n >= len(events) or events[n].at > at:
            return None
        ev = events[n]
        args = {"source": feed, "observedAt": ev.at, "payload": ev.payload}
        receipt = self.net.invoke(self.oracle, "oracle", "record", args, at)
        return OracleRecord.from_value(receipt.value)

    def poll_all(self, at: int) -> list[OracleRecord]:
        out = []
        for feed in sorted(self.feeds):
            while (rec := self.poll_feed(feed, at)) is not None:
                out.append(rec)
        return out

    def notify_law_change(self, record: OracleRecord, recipients: Sequence[str]) -> LawNotification:
        args = {"source": record.source, "index": record.index, "recipients": list(recipients)}
        note = self.net.invoke(self.oracle, "law", "notify", args, record.written_at).value
        return LawNotification(note["lawId"], note["index"], note["versionHash"], note["sentAt"], tuple(note["recipients"]))


def confirm_receipt(net: Network, recipient: KeyPair, law_id: str, index: int, at: int) -> int:
    return net.invoke(recipient, "law", "confirm", {"lawId": law_id, "index": index}, at).value["confirmedAt"]


def get_notification(net: Network, law_id: str, index: int) -> LawNotification:
    entry = net.state.get(law_key(law_id, index))
    if entry is None:
        raise NotFoundError(f"no notification {law_id}/{index}")
    note = entry.value
    confirmations = {}
    for r in note["recipients"]:
        ack = net.state.get(ack_key(law_id, index, r))
        if ack is not None:
            confirmations[r] = ack.value["confirmedAt"]
    return LawNotification(law_id, index, note["versionHash"], note["sentAt"], tuple(note["recipients"]), confirmations)
