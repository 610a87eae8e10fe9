"""Append-only, hash-linked ledger of signed blocks.

File layout: ``b"EGSL"``, one mode byte (``C`` chain, ``D`` dag), then records
of ``(u32 big-endian length, canonical block bytes)``.
"""

from __future__ import annotations

import heapq
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .crypto import KeyPair, Signature, identity_id, sha256, verify_signature
from .encoding import canonical_decode, canonical_encode
from .errors import (
    CorruptLedgerError,
    DagStructureError,
    EgslError,
    LedgerFormatError,
    OrderingError,
)

MAGIC = b"EGSL"
MODE_FLAGS = {"chain": b"C", "dag": b"D"}
FLAG_MODES = {v[0]: k for k, v in MODE_FLAGS.items()}
MAX_DAG_PARENTS = 2
_U32 = struct.Struct(">I")

STATUS_OK = "ok"
STATUS_ABORTED = "aborted"
FAILED_PREFIX = "failed:"


def _expect_keys(value: Any, keys: set[str], what: str) -> dict:
    if not isinstance(value, dict) or set(value) != keys:
        raise CorruptLedgerError(f"malformed {what}")
    return value


def _expect(cond: bool, what: str) -> None:
    if not cond:
        raise CorruptLedgerError(f"malformed {what}")


@dataclass(frozen=True)
class Proposal:
    """The invoker-signed part of a transaction, before ordering and execution."""

    logical_time: int
    invoker: str
    contract: str
    operation: str
    args: bytes
    signature: Signature

    @staticmethod
    def body(logical_time: int, invoker: str, contract: str, operation: str, args: bytes) -> dict:
        return {"t": logical_time, "inv": invoker, "c": contract, "op": operation, "a": args}

    @classmethod
    def create(cls, key: KeyPair, contract: str, operation: str, args: Any, logical_time: int) -> "Proposal":
        raw_args = canonical_encode(args)
        sig = key.sign_value(cls.body(logical_time, key.id, contract, operation, raw_args))
        return cls(logical_time, key.id, contract, operation, raw_args, sig)

    def body_bytes(self) -> bytes:
        return canonical_encode(self.body(self.logical_time, self.invoker, self.contract, self.operation, self.args))

    @property
    def proposal_id(self) -> bytes:
        return sha256(self.body_bytes() + self.signature.sig)

    def decoded_args(self) -> Any:
        return canonical_decode(self.args)


@dataclass(frozen=True)
class Transaction:
    seq_no: int
    logical_time: int
    invoker: str
    contract: str
    operation: str
    args: bytes
    read_set: tuple[tuple[str, int], ...]
    write_set: tuple[tuple[str, Any], ...]
    events: tuple[tuple[str, bytes], ...]
    status: str
    signature: Signature
    tx_id: bytes = b""

    def hashed_value(self) -> dict:
        return {
            "seq": self.seq_no,
            "t": self.logical_time,
            "inv": self.invoker,
            "c": self.contract,
            "op": self.operation,
            "a": self.args,
            "rs": [[k, v] for k, v in self.read_set],
            "ws": [[k, v] for k, v in self.write_set],
            "ev": [[n, p] for n, p in self.events],
            "st": self.status,
        }

    def compute_id(self) -> bytes:
        return sha256(canonical_encode(self.hashed_value()))

    def with_id(self) -> "Transaction":
        return replace(self, tx_id=self.compute_id())

    def to_value(self) -> dict:
        value = self.hashed_value()
        value["sig"] = self.signature.to_value()
        value["id"] = self.tx_id
        return value

    @classmethod
    def from_value(cls, value: Any) -> "Transaction":
        v = _expect_keys(value, {"seq", "t", "inv", "c", "op", "a", "rs", "ws", "ev", "st", "sig", "id"}, "transaction")
        _expect(isinstance(v["seq"], int) and v["seq"] >= 0, "seqNo")
        _expect(isinstance(v["t"], int), "logicalTime")
        for name in ("inv", "c", "op", "st"):
            _expect(isinstance(v[name], str), name)
        _expect(isinstance(v["a"], bytes) and isinstance(v["id"], bytes) and len(v["id"]) == 32, "tx bytes")
        _expect(all(isinstance(v[name], list) for name in ("rs", "ws", "ev")), "tx sets")
        _expect(all(isinstance(p, list) and len(p) == 2 and isinstance(p[0], str) and isinstance(p[1], int) for p in v["rs"]), "readSet")
        _expect(all(isinstance(p, list) and len(p) == 2 and isinstance(p[0], str) for p in v["ws"]), "writeSet")
        _expect(all(isinstance(p, list) and len(p) == 2 and isinstance(p[0], str) and isinstance(p[1], bytes) for p in v["ev"]), "events")
        sig = _expect_keys(v["sig"], {"k", "s"}, "signature")
        _expect(isinstance(sig["k"], str) and isinstance(sig["s"], bytes), "signature")
        return cls(
            seq_no=v["seq"],
            logical_time=v["t"],
            invoker=v["inv"],
            contract=v["c"],
            operation=v["op"],
            args=v["a"],
            read_set=tuple((k, ver) for k, ver in v["rs"]),
            write_set=tuple((k, val) for k, val in v["ws"]),
            events=tuple((n, p) for n, p in v["ev"]),
            status=v["st"],
            signature=Signature.from_value(sig),
            tx_id=v["id"],
        )

    def proposal(self) -> Proposal:
        return Proposal(self.logical_time, self.invoker, self.contract, self.operation, self.args, self.signature)

    def decoded_args(self) -> Any:
        return canonical_decode(self.args)

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK

    @property
    def error_code(self) -> str | None:
        if self.status.startswith(FAILED_PREFIX):
            return self.status[len(FAILED_PREFIX):]
        return None


@dataclass(frozen=True)
class Block:
    height: int
    parent_hashes: tuple[bytes, ...]
    transactions: tuple[Transaction, ...]
    state_root: bytes
    block_hash: bytes
    authority_signature: Signature

    @staticmethod
    def compute_hash(height: int, parent_hashes: Sequence[bytes], tx_ids: Sequence[bytes], state_root: bytes) -> bytes:
        return sha256(canonical_encode({"h": height, "p": list(parent_hashes), "tx": list(tx_ids), "r": state_root}))

    def recompute_hash(self) -> bytes:
        return self.compute_hash(self.height, self.parent_hashes, [t.tx_id for t in self.transactions], self.state_root)

    def to_value(self) -> dict:
        return {
            "h": self.height,
            "p": list(self.parent_hashes),
            "tx": [t.to_value() for t in self.transactions],
            "r": self.state_root,
            "id": self.block_hash,
            "sig": self.authority_signature.to_value(),
        }

    def encode(self) -> bytes:
        return canonical_encode(self.to_value())

    @classmethod
    def from_value(cls, value: Any) -> "Block":
        v = _expect_keys(value, {"h", "p", "tx", "r", "id", "sig"}, "block")
        _expect(isinstance(v["h"], int) and v["h"] >= 0, "height")
        _expect(isinstance(v["p"], list) and all(isinstance(p, bytes) and len(p) == 32 for p in v["p"]), "parents")
        _expect(isinstance(v["r"], bytes) and len(v["r"]) == 32, "stateRoot")
        _expect(isinstance(v["id"], bytes) and len(v["id"]) == 32, "blockHash")
        _expect(isinstance(v["tx"], list), "transactions")
        sig = _expect_keys(v["sig"], {"k", "s"}, "signature")
        _expect(isinstance(sig["k"], str) and isinstance(sig["s"], bytes), "signature")
        return cls(
            height=v["h"],
            parent_hashes=tuple(v["p"]),
            transactions=tuple(Transaction.from_value(t) for t in v["tx"]),
            state_root=v["r"],
            block_hash=v["id"],
            authority_signature=Signature.from_value(sig),
        )

    @classmethod
    def decode(cls, data: bytes) -> "Block":
        try:
            block = cls.from_value(canonical_decode(data))
        except CorruptLedgerError:
            raise
        except EgslError as exc:
            raise CorruptLedgerError(f"undecodable block: {exc}") from None
        # e.g. an empty list re-tagged as an empty map decodes fine but re-encodes differently
        if block.encode() != data:
            raise CorruptLedgerError("block record is not in canonical form")
        return block

    @property
    def seq_range(self) -> tuple[int, int]:
        return self.transactions[0].seq_no, self.transactions[-1].seq_no

    @property
    def hash_hex(self) -> str:
        return self.block_hash.hex()


class LedgerFile:
    """In-memory ledger, optionally mirrored to a file that only ever grows."""

    def __init__(self, mode: str = "chain", path: str | os.PathLike | None = None):
        if mode not in MODE_FLAGS:
            raise ValueError(f"unknown ledger mode {mode!r}")
        self.mode = mode
        self.records: list[bytes] = []
        self._blocks: list[Block] = []
        self._by_hash: dict[bytes, Block] = {}
        self._children: set[bytes] = set()
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.write_bytes(self.header())

    def header(self) -> bytes:
        return MAGIC + MODE_FLAGS[self.mode]

    # -- reading ---------------------------------------------------------

    @classmethod
    def from_bytes(cls, data: bytes) -> "LedgerFile":
        """Parse framing only. Block bodies are decoded lazily by :attr:`blocks`."""
        if len(data) < 5 or data[:4] != MAGIC:
            raise LedgerFormatError("bad magic bytes")
        if data[4] not in FLAG_MODES:
            raise LedgerFormatError(f"unknown mode flag 0x{data[4]:02x}")
        ledger = cls(FLAG_MODES[data[4]])
        pos = 5
        while pos < len(data):
            if pos + 4 > len(data):
                raise LedgerFormatError(f"truncated length prefix at offset {pos}")
            n = _U32.unpack_from(data, pos)[0]
            pos += 4
            if pos + n > len(data):
                raise LedgerFormatError(f"truncated record {len(ledger.records)} at offset {pos}")
            ledger.records.append(bytes(data[pos:pos + n]))
            pos += n
        return ledger

    @classmethod
    def load(cls, path: str | os.PathLike) -> "LedgerFile":
        return cls.from_bytes(Path(path).read_bytes())

    def to_bytes(self) -> bytes:
        out = bytearray(self.header())
        for rec in self.records:
            out += _U32.pack(len(rec))
            out += rec
        return bytes(out)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_bytes(self.to_bytes())

    @property
    def blocks(self) -> list[Block]:
        while len(self._blocks) < len(self.records):
            index = len(self._blocks)
            try:
                block = Block.decode(self.records[index])
            except CorruptLedgerError as exc:
                raise CorruptLedgerError(f"block {index}: {exc}") from None
            self._index(block)
        return self._blocks

    def _index(self, block: Block) -> None:
        self._blocks.append(block)
        self._by_hash[block.block_hash] = block
        self._children.update(block.parent_hashes)

    def __len__(self) -> int:
        return len(self.records)

    def block_by_hash(self, block_hash: bytes) -> Block:
        self.blocks
        return self._by_hash[block_hash]

    @property
    def tips(self) -> list[bytes]:
        """Hashes of blocks with no children, in ascending byte order."""
        return sorted(b.block_hash for b in self.blocks if b.block_hash not in self._children)

    @property
    def next_seq(self) -> int:
        blocks = self.blocks
        return max((b.seq_range[1] for b in blocks if b.transactions), default=-1) + 1

    def transactions(self) -> list[Transaction]:
        """All transactions in execution order (file order for chains, linearized for DAGs)."""
        order = linearize_dag(self) if self.mode == "dag" else self.blocks
        return [tx for b in order for tx in b.transactions]

    def find_transaction(self, tx_id: bytes) -> Transaction | None:
        for block in self.blocks:
            for tx in block.transactions:
                if tx.tx_id == tx_id:
                    return tx
        return None

    # -- writing ---------------------------------------------------------

    def _append_record(self, block: Block) -> None:
        raw = block.encode()
        self.records.append(raw)
        self._index(block)
        if self.path is not None:
            with open(self.path, "ab") as fh:
                fh.write(_U32.pack(len(raw)) + raw)


def append_block(
    ledger: LedgerFile,
    txs: Sequence[Transaction],
    state_root: bytes,
    authority: KeyPair,
    parents: Sequence[bytes] | None = None,
) -> Block:
    """Sign and append one block.

    ``parents`` is only meaningful in DAG mode; by default the block links to
    the current tip set.
    """
    if not txs:
        raise OrderingError("a block needs at least one transaction")
    blocks = ledger.blocks
    if blocks:
        tip = blocks[-1]
        if tip.recompute_hash() != tip.block_hash:
            raise CorruptLedgerError(f"tip block {len(blocks) - 1} does not verify")
    expected = ledger.next_seq
    for tx in txs:
        if tx.seq_no != expected:
            raise OrderingError(f"seqNo gap: expected {expected}, got {tx.seq_no}")
        expected += 1

    if ledger.mode == "chain":
        if parents is not None:
            raise DagStructureError("explicit parents are only allowed in dag mode")
        parent_hashes = (blocks[-1].block_hash,) if blocks else ()
        height = len(blocks)
    else:
        parent_hashes = tuple(sorted(parents if parents is not None else ledger.tips))
        if blocks and not 1 <= len(parent_hashes) <= MAX_DAG_PARENTS:
            raise DagStructureError(f"dag blocks take 1..{MAX_DAG_PARENTS} parents, got {len(parent_hashes)}")
        for p in parent_hashes:
            if p not in ledger._by_hash:
                raise DagStructureError(f"unknown parent {p.hex()}")
        height = 1 + max((ledger._by_hash[p].height for p in parent_hashes), default=-1)

    tx_ids = [t.tx_id for t in txs]
    block_hash = Block.compute_hash(height, parent_hashes, tx_ids, state_root)
    block = Block(height, parent_hashes, tuple(txs), state_root, block_hash, authority.sign(block_hash))
    ledger._append_record(block)
    return block


def linearize_dag(ledger_or_blocks: LedgerFile | Iterable[Block]) -> list[Block]:
    """Topological order with ties broken by ascending block hash.

    Greedy smallest-available selection, so the result is the lexicographically
    smallest topological order and does not depend on arrival order.
    """
    blocks = ledger_or_blocks.blocks if isinstance(ledger_or_blocks, LedgerFile) else list(ledger_or_blocks)
    by_hash = {b.block_hash: b for b in blocks}
    if len(by_hash) != len(blocks):
        raise DagStructureError("duplicate block hash")
    pending = {}
    children: dict[bytes, list[bytes]] = {h: [] for h in by_hash}
    for b in blocks:
        for p in b.parent_hashes:
            if p not in by_hash:
                raise DagStructureError(f"block {b.hash_hex[:16]} references missing parent {p.hex()[:16]}")
            children[p].append(b.block_hash)
        pending[b.block_hash] = len(set(b.parent_hashes))
    ready = [h for h, n in pending.items() if n == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        h = heapq.heappop(ready)
        order.append(by_hash[h])
        for c in children[h]:
            pending[c] -= 1
            if pending[c] == 0:
                heapq.heappush(ready, c)
    if len(order) != len(blocks):
        raise DagStructureError("cycle detected among blocks")
    return order


def ancestors(ledger: LedgerFile, block_hash: bytes) -> set[bytes]:
    """Strict ancestors of a block."""
    seen: set[bytes] = set()
    stack = list(ledger.block_by_hash(block_hash).parent_hashes)
    while stack:
        h = stack.pop()
        if h in seen:
            continue
        seen.add(h)
        stack.extend(ledger.block_by_hash(h).parent_hashes)
    return seen


# -- verification -----------------------------------------------------------


@dataclass
class BlockCheck:
    index: int
    height: int | None = None
    block_hash: str | None = None
    decoded: bool = True
    hash_link: bool = True
    signature: bool = True
    seq_contiguity: bool = True
    transactions: bool = True
    detail: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.decoded and self.hash_link and self.signature and self.seq_contiguity and self.transactions

    def line(self) -> str:
        def flag(ok: bool) -> str:
            return "ok" if ok else "FAIL"

        h = (self.block_hash or "?")[:16]
        text = (
            f"block {self.index} height={self.height} hash={h} decode={flag(self.decoded)} "
            f"link={flag(self.hash_link)} sig={flag(self.signature)} seq={flag(self.seq_contiguity)} "
            f"tx={flag(self.transactions)}"
        )
        if self.detail:
            text += " (" + "; ".join(self.detail) + ")"
        return text


@dataclass
class VerificationReport:
    mode: str
    blocks: list[BlockCheck]
    problems: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.problems and all(b.valid for b in self.blocks)

    @property
    def first_bad_block(self) -> int | None:
        for b in self.blocks:
            if not b.valid:
                return b.index
        return None


def registry_from_transactions(txs: Iterable[Transaction]) -> tuple[dict[str, bytes], str | None, str | None]:
    """Rebuild (identity -> public key, authority id, declared ledger mode) from ledger history."""
    registry: dict[str, bytes] = {}
    authority = None
    mode = None
    for tx in txs:
        if tx.contract != "identity" or tx.status != STATUS_OK:
            continue
        try:
            args = tx.decoded_args()
        except EgslError:
            continue
        if not isinstance(args, dict) or not isinstance(args.get("pk"), bytes):
            continue
        if tx.operation == "bootstrap" and authority is None:
            authority = identity_id(args["pk"])
            registry[authority] = args["pk"]
            mode = args.get("mode")
        elif tx.operation == "register":
            registry[identity_id(args["pk"])] = args["pk"]
    return registry, authority, mode


def verify_ledger(ledger: LedgerFile, registry: Mapping[str, bytes] | None = None) -> VerificationReport:
    """Check framing, hash links, signatures and seqNo contiguity of every block.

    When ``registry`` is omitted it is rebuilt from the ledger's own identity
    transactions. Failures are reported, never raised.
    """
    report = VerificationReport(ledger.mode, [])
    decoded: list[Block | None] = []
    for i, raw in enumerate(ledger.records):
        try:
            decoded.append(Block.decode(raw))
        except CorruptLedgerError as exc:
            decoded.append(None)
            report.blocks.append(BlockCheck(i, decoded=False, detail=[str(exc)]))
            continue
        report.blocks.append(BlockCheck(i))

    good_txs = [tx for b in decoded if b is not None for tx in b.transactions if tx.compute_id() == tx.tx_id]
    derived, authority, declared_mode = registry_from_transactions(good_txs)
    if registry is None:
        registry = derived
    else:
        authority = authority if authority in registry else None
    if not ledger.records:
        return report
    if authority is None:
        report.problems.append("no authority bootstrap found")
    if declared_mode is not None and declared_mode != ledger.mode:
        report.problems.append(f"file mode {ledger.mode!r} differs from genesis-declared mode {declared_mode!r}")

    heights: dict[bytes, int] = {}
    expected_seq = 0
    prev_hash: bytes | None = None
    for i, (block, check) in enumerate(zip(decoded, report.blocks)):
        if block is None:
            prev_hash = None
            expected_seq = None
            continue
        check.height = block.height
        check.block_hash = block.hash_hex

        if block.recompute_hash() != block.block_hash:
            check.hash_link = False
            check.detail.append("blockHash mismatch")
        if ledger.mode == "chain":
            want_parents = () if i == 0 else ((prev_hash,) if prev_hash is not None else None)
            if want_parents is None or block.parent_hashes != want_parents or block.height != i:
                check.hash_link = False
                check.detail.append("chain link broken")
        else:
            ok = True
            if i == 0:
                ok = block.parent_hashes == () and block.height == 0
            else:
                ps = block.parent_hashes
                ok = 1 <= len(ps) <= MAX_DAG_PARENTS and len(set(ps)) == len(ps) and list(ps) == sorted(ps)
                ok = ok and all(p in heights for p in ps)
                ok = ok and block.height == 1 + max((heights[p] for p in ps if p in heights), default=-1)
            if not ok:
                check.hash_link = False
                check.detail.append("dag link broken")
        heights[block.block_hash] = block.height
        prev_hash = block.block_hash

        sig = block.authority_signature
        if authority is None or sig.signer != authority or not verify_signature(registry.get(authority, b""), sig.sig, block.block_hash):
            check.signature = False
            check.detail.append("authority signature invalid")

        if not block.transactions:
            check.seq_contiguity = False
            check.detail.append("empty block")
        for tx in block.transactions:
            if expected_seq is not None and tx.seq_no != expected_seq:
                check.seq_contiguity = False
                check.detail.append(f"seqNo {tx.seq_no} where {expected_seq} expected")
                expected_seq = None
            elif expected_seq is not None:
                expected_seq += 1
            if tx.compute_id() != tx.tx_id:
                check.transactions = False
                check.detail.append(f"txId mismatch at seqNo {tx.seq_no}")
                continue
            pk = registry.get(tx.invoker)
            if tx.contract == "identity" and tx.operation == "bootstrap" and tx.seq_no == 0:
                pk = registry.get(authority) if authority else None
            if pk is None or tx.signature.signer != tx.invoker or not verify_signature(pk, tx.signature.sig, tx.proposal().body_bytes()):
                check.transactions = False
                check.detail.append(f"tx signature invalid at seqNo {tx.seq_no}")
        if expected_seq is None:
            expected_seq = block.transactions[-1].seq_no + 1 if block.transactions else None
    return report
