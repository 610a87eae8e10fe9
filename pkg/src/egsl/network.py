"""In-process permissioned network: endorsing peers plus one ordering authority."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable

from .crypto import KeyPair
from .engine import (
    ContractRegistry,
    EndorsementDecision,
    Event,
    ExecutionResult,
    build_transaction,
    commit,
    decode_events,
    default_registry,
    endorse,
    validate_reads,
)
from .errors import (
    ConfigError,
    DivergenceFault,
    EgslError,
    MvccConflictError,
    OrderingError,
    StateDivergenceError,
    error_for_code,
)
from .contracts.identity import credential_message
from .ledger import STATUS_OK, Block, LedgerFile, Proposal, Transaction, append_block
from .state import WorldState

log = logging.getLogger(__name__)


class Replica:
    """A copy of world state that follows the block stream.

    ``state`` is the fold of every applied block; ``views`` keeps the
    post-block state of each block so DAG siblings can start from their
    parent rather than from the merged state.
    """

    def __init__(self):
        self.state = WorldState()
        self.views: dict[bytes, WorldState] = {}
        self.tips: list[bytes] = []

    def pre_state(self, parent_hashes) -> WorldState:
        parents = list(parent_hashes)
        if not parents:
            return WorldState()
        if sorted(parents) == sorted(self.tips):
            return self.state.copy()
        if len(parents) == 1:
            return self.views[parents[0]].copy()
        raise OrderingError("merge block must reference every current tip")

    def apply_block(self, block: Block) -> bytes:
        """Validate and apply recorded writes; returns the resulting view root."""
        working = self.pre_state(block.parent_hashes)
        merged_into_state = sorted(block.parent_hashes) == sorted(self.tips)
        for tx in block.transactions:
            if tx.ok:
                validate_reads(working, tx.read_set)
                working.apply_writes(tx.write_set)
                if not merged_into_state:
                    self.state.apply_writes(tx.write_set)
        if merged_into_state:
            self.state = working.copy()
        self.views[block.block_hash] = working
        self.tips = [t for t in self.tips if t not in block.parent_hashes] + [block.block_hash]
        return working.root()


@dataclass
class Peer:
    peer_id: str
    replica: Replica = field(default_factory=Replica)
    ledger_view: list[Block] = field(default_factory=list)

    @property
    def state(self) -> WorldState:
        return self.replica.state


@dataclass
class SubmitResult:
    accepted: bool
    reason: str
    proposal_id: bytes
    decision: EndorsementDecision | None = None


@dataclass
class Receipt:
    tx: Transaction
    result: ExecutionResult
    block: Block

    @property
    def value(self) -> Any:
        return self.result.return_value

    def raise_for_status(self) -> "Receipt":
        code = self.tx.error_code
        if code is not None:
            raise error_for_code(code)(f"transaction {self.tx.seq_no} failed: {code}")
        if self.tx.status != STATUS_OK:
            raise MvccConflictError(f"transaction {self.tx.seq_no} aborted on a stale read")
        return self


@dataclass
class _Pending:
    proposal: Proposal
    result: ExecutionResult
    endorsed_root: bytes


class TransactionRejected(EgslError):
    code = "Rejected"

    def __init__(self, submit: SubmitResult):
        super().__init__(submit.reason)
        self.submit = submit


class Network:
    """N peers, an ordering authority that also signs blocks, and a ledger."""

    def __init__(
        self,
        authority: KeyPair,
        peer_count: int = 4,
        quorum_k: int | None = None,
        batch_size: int = 10,
        ledger_mode: str = "chain",
        contracts: ContractRegistry | None = None,
        ledger_path=None,
        test_mode: bool = False,
        genesis_time: int = 0,
    ):
        if peer_count < 1:
            raise ConfigError("need at least one peer")
        self.quorum_k = peer_count // 2 + 1 if quorum_k is None else quorum_k
        if not 1 <= self.quorum_k <= peer_count:
            raise ConfigError(f"quorumK={self.quorum_k} invalid for {peer_count} peers")
        if batch_size < 1:
            raise ConfigError("batchSize must be positive")
        self.authority = authority
        self.batch_size = batch_size
        self.contracts = contracts or default_registry()
        self.test_mode = test_mode
        self.ledger = LedgerFile(ledger_mode, ledger_path)
        self.orderer = Replica()
        self.peers = [Peer(f"peer{i}") for i in range(peer_count)]
        self.pending: deque[_Pending] = deque()
        self.receipts: dict[bytes, Receipt] = {}
        self.rejections: list[SubmitResult] = []
        self.block_peer_roots: list[list[bytes]] = []
        self._subscribers: list[Callable[[Event], None]] = []
        self._bootstrap(genesis_time)

    @property
    def ledger_mode(self) -> str:
        return self.ledger.mode

    @property
    def state(self) -> WorldState:
        return self.orderer.state

    def _bootstrap(self, at: int) -> None:
        cred = self.authority.sign(credential_message(self.authority.id, "authority")).sig
        args = {"pk": self.authority.public_key, "mode": self.ledger.mode, "cred": cred}
        self.invoke(self.authority, "identity", "bootstrap", args, at)

    def subscribe(self, callback: Callable[[Event], None]) -> None:
        self._subscribers.append(callback)

    # -- submission ----------------------------------------------------------

    def submit(self, proposal: Proposal) -> SubmitResult:
        """Endorse over all peers and queue for ordering when the quorum agrees."""
        pid = proposal.proposal_id
        snapshots = [p.state for p in self.peers]
        expected = self.orderer.state.root()
        stray = [p.peer_id for p in self.peers if p.state.root() != expected]
        if stray:
            raise StateDivergenceError(f"{', '.join(stray)} diverged from the ordered state", stray[0], len(self.ledger))
        try:
            decision = endorse(proposal, snapshots, self.quorum_k, self.contracts)
        except StateDivergenceError:
            raise
        except EgslError as exc:
            res = SubmitResult(False, f"{exc.code}: {exc}", pid)
            self.rejections.append(res)
            return res
        if not decision.accepted:
            res = SubmitResult(False, "divergence: " + decision.describe(), pid, decision)
            self.rejections.append(res)
            return res
        self.pending.append(_Pending(proposal, decision.result, snapshots[0].root()))
        return SubmitResult(True, "accepted", pid, decision)

    def propose(self, key: KeyPair, contract: str, operation: str, args: Any, at: int) -> SubmitResult:
        return self.submit(Proposal.create(key, contract, operation, args, at))

    def invoke(self, key: KeyPair, contract: str, operation: str, args: Any, at: int, check: bool = True) -> Receipt:
        """Submit, cut blocks until committed and return the receipt.

        Raises :class:`TransactionRejected` when endorsement refuses the
        proposal and, with ``check``, the contract's own error on failure.
        """
        sub = self.propose(key, contract, operation, args, at)
        if not sub.accepted:
            raise TransactionRejected(sub)
        self.flush()
        receipt = self.receipts[sub.proposal_id]
        return receipt.raise_for_status() if check else receipt

    # -- ordering ------------------------------------------------------------

    def _take_batch(self) -> list[_Pending]:
        if not self.pending:
            raise OrderingError("no pending transactions")
        return [self.pending.popleft() for _ in range(min(self.batch_size, len(self.pending)))]

    def cut_block(self) -> Block:
        """Order up to ``batch_size`` pending transactions into one block."""
        batch = self._take_batch()
        parents = None if self.ledger.mode == "chain" else self.ledger.tips
        return self._seal(batch, parents)

    def cut_fork(self) -> list[Block]:
        """DAG mode: split a batch into two conflict-free sibling blocks.

        Falls back to a single block when the ledger already has two tips or
        the batch cannot be split.
        """
        if self.ledger.mode != "dag":
            raise ConfigError("forks exist only in dag mode")
        tips = self.ledger.tips
        if len(tips) != 1:
            return [self.cut_block()]
        batch = self._take_batch()
        first, rest = split_conflict_free(batch)
        if not rest:
            return [self._seal(batch, tips)]
        return [self._seal(first, tips), self._seal(rest, tips)]

    def flush(self) -> list[Block]:
        """Cut until the queue is empty; in dag mode independent work forks and then merges."""
        blocks = []
        while self.pending:
            if self.ledger.mode == "dag":
                blocks.extend(self.cut_fork())
            else:
                blocks.append(self.cut_block())
        return blocks

    def _seal(self, batch: list[_Pending], parents: list[bytes] | None) -> Block:
        if parents is None:
            parents = [self.ledger.blocks[-1].block_hash] if self.ledger.blocks else []
        pre = self.orderer.pre_state(parents)
        working = pre.copy()
        seq = self.ledger.next_seq
        txs: list[Transaction] = []
        results: list[ExecutionResult] = []
        for item in batch:
            result = item.result
            if item.endorsed_root != pre.root():
                # queued across a block boundary: endorse again on the block's pre-state
                try:
                    decision = endorse(item.proposal, [pre] * len(self.peers), self.quorum_k, self.contracts)
                except EgslError as exc:
                    self.rejections.append(SubmitResult(False, f"{exc.code}: {exc}", item.proposal.proposal_id))
                    continue
                if not decision.accepted:
                    self.rejections.append(
                        SubmitResult(False, "divergence: " + decision.describe(), item.proposal.proposal_id, decision)
                    )
                    continue
                result = decision.result
            status = commit(working, result)
            txs.append(build_transaction(seq, item.proposal, result, status))
            results.append(result)
            seq += 1
        if not txs:
            raise OrderingError("every transaction in the batch was dropped")
        dag_parents = parents if self.ledger.mode == "dag" else None
        block = append_block(self.ledger, txs, working.root(), self.authority, dag_parents)
        root = self.orderer.apply_block(block)
        if root != block.state_root:
            raise DivergenceFault("ordering replica disagrees with its own block", "orderer", block.height)
        self._broadcast(block)
        for tx, result in zip(txs, results):
            self.receipts[tx.proposal().proposal_id] = Receipt(tx, result, block)
            if tx.ok:
                for ev in decode_events(tx):
                    for cb in self._subscribers:
                        cb(ev)
        log.debug("cut block height=%d txs=%d", block.height, len(txs))
        return block

    def _broadcast(self, block: Block) -> None:
        roots = []
        for peer in self.peers:
            try:
                root = peer.replica.apply_block(block)
            except MvccConflictError as exc:
                raise DivergenceFault(f"{peer.peer_id} cannot apply block {block.height}: {exc}", peer.peer_id, block.height) from None
            if root != block.state_root:
                raise DivergenceFault(
                    f"{peer.peer_id} state root diverges at block height {block.height}", peer.peer_id, block.height
                )
            peer.ledger_view.append(block)
            roots.append(root)
        self.block_peer_roots.append(roots)

    # -- fault injection -----------------------------------------------------

    def inject_fault(self, kind: str, **params) -> None:
        """``tamperBlock(index, byte_offset)`` or ``corruptPeerState(peer_id, key)``."""
        if not self.test_mode:
            raise ConfigError("fault injection requires test mode")
        if kind == "tamperBlock":
            index, offset = params["height"], params["byte_offset"]
            rec = bytearray(self.ledger.records[index])
            rec[offset] ^= 0xFF
            self.ledger.records[index] = bytes(rec)
            self.ledger._blocks.clear()
            self.ledger._by_hash.clear()
            self.ledger._children.clear()
            if self.ledger.path is not None:
                self.ledger.save(self.ledger.path)
        elif kind == "corruptPeerState":
            peer = next(p for p in self.peers if p.peer_id == params["peer_id"])
            key = params["key"]
            entry = peer.state.get(key)
            owner = entry.owner if entry else self.authority.id
            peer.replica.state.put(key, {"corrupted": True}, owner)
            for tip in peer.replica.tips:
                peer.replica.views[tip] = peer.replica.state.copy()
        else:
            raise ConfigError(f"unknown fault kind {kind!r}")

    def check_replication(self) -> None:
        roots = {p.state.root() for p in self.peers} | {self.orderer.state.root()}
        if len(roots) != 1:
            raise StateDivergenceError("replicas disagree on the current state root")


def split_conflict_free(batch: list[_Pending]) -> tuple[list[_Pending], list[_Pending]]:
    """Partition into (component of the first tx, everything else).

    Two transactions conflict when one writes a key the other reads or
    writes; the partition keeps every conflicting pair on the same side.
    """
    n = len(batch)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    touched = []
    for item in batch:
        reads = {k for k, _ in item.result.read_set}
        writes = {k for k, _ in item.result.write_set}
        touched.append((reads, writes))
    for i in range(n):
        for j in range(i + 1, n):
            ri, wi = touched[i]
            rj, wj = touched[j]
            if wi & (rj | wj) or wj & ri:
                parent[find(i)] = find(j)
    root0 = find(0)
    first = [b for i, b in enumerate(batch) if find(i) == root0]
    rest = [b for i, b in enumerate(batch) if find(i) != root0]
    return first, rest
