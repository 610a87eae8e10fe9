"""Deterministic smart-contract execution, endorsement, commit and replay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

from .crypto import identity_id, sha256, verify_signature
from .encoding import canonical_decode, canonical_encode
from .errors import (
    AccessDeniedError,
    ConfigError,
    DispatchError,
    EgslError,
    MvccConflictError,
    NotFoundError,
    ReplayDivergenceError,
    SignatureError,
    StateDivergenceError,
    UnknownIdentityError,
    ValidationError,
)
from .ledger import (
    FAILED_PREFIX,
    STATUS_ABORTED,
    STATUS_OK,
    Block,
    LedgerFile,
    Proposal,
    Transaction,
    ancestors,
    linearize_dag,
)
from .state import (
    NETWORK_KEY,
    WorldState,
    authority_id,
    identity_record,
    may_write,
    read_decision,
    write_payload,
)

CATEGORIES = ("static", "dynamic", "oracleDriven")
ORACLE_PREFIX = "oracle/"

Handler = Callable[["Context", Any], Any]


@dataclass
class Contract:
    name: str
    category: str
    operations: dict[str, Handler]

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ConfigError(f"unknown contract category {self.category!r}")


class ContractRegistry:
    def __init__(self, contracts: Iterable[Contract] = ()):
        self._contracts: dict[str, Contract] = {}
        for c in contracts:
            self.add(c)

    def add(self, contract: Contract) -> None:
        self._contracts[contract.name] = contract

    def get(self, name: str) -> Contract:
        try:
            return self._contracts[name]
        except KeyError:
            raise DispatchError(f"unknown contract {name!r}") from None

    def handler(self, name: str, operation: str) -> Handler:
        contract = self.get(name)
        try:
            return contract.operations[operation]
        except KeyError:
            raise DispatchError(f"contract {name!r} has no operation {operation!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._contracts

    def names(self) -> list[str]:
        return sorted(self._contracts)


def default_registry() -> ContractRegistry:
    from .contracts import builtin_contracts

    return ContractRegistry(builtin_contracts())


@dataclass(frozen=True)
class Event:
    name: str
    payload: Any
    source_tx: bytes = b""


class Context:
    """What a handler sees: an immutable snapshot plus capture of reads, writes and events."""

    def __init__(self, snapshot: WorldState, invoker: str, logical_time: int):
        self._snapshot = snapshot
        self.invoker = invoker
        self.time = logical_time
        self.authority = authority_id(snapshot)
        rec = identity_record(snapshot, invoker)
        self.role = rec["role"] if rec else None
        self._reads: dict[str, int] = {}
        self._writes: dict[str, dict] = {}
        self.events: list[tuple[str, Any]] = []

    def _track(self, key: str) -> None:
        if key not in self._writes and key not in self._reads:
            self._reads[key] = self._snapshot.version(key)

    def _current(self, key: str):
        """Entry as seen by this transaction: own pending writes win over the snapshot."""
        if key in self._writes:
            return self._writes[key]
        entry = self._snapshot.get(key)
        if entry is None:
            return None
        return {"value": entry.value, "owner": entry.owner, "acl": entry.acl}

    def lookup(self, key: str) -> Any | None:
        """Trusted contract-internal read: no ACL check, still recorded in the readSet."""
        self._track(key)
        cur = self._current(key)
        return None if cur is None else cur["value"]

    def owner_of(self, key: str) -> str | None:
        self._track(key)
        cur = self._current(key)
        return None if cur is None else cur["owner"]

    def read(self, key: str) -> Any:
        """ACL- and consent-checked read on behalf of the invoker."""
        self._track(key)
        if key in self._writes:
            return self._writes[key]["value"]
        allowed, consulted = read_decision(self._snapshot, self.invoker, key)
        for k in consulted:
            self._track(k)
        if self._snapshot.get(key) is None:
            raise NotFoundError(f"no state entry {key!r}")
        if not allowed:
            raise AccessDeniedError(f"{self.invoker[:12]} may not read {key!r}")
        return self._snapshot.get(key).value

    def can_read(self, key: str) -> bool:
        self._track(key)
        allowed, consulted = read_decision(self._snapshot, self.invoker, key)
        for k in consulted:
            self._track(k)
        return allowed

    def write(self, key: str, value: Any, owner: str | None = None, acl: Mapping[str, Any] | None = None) -> None:
        if key.startswith(ORACLE_PREFIX) and self.role != "oracle":
            raise AccessDeniedError("only oracle identities may write oracle/ keys")
        if key.startswith("id/") and not key.startswith("id/device/") and self.authority is not None and self.role != "authority":
            raise AccessDeniedError("only the authority may write id/ keys")
        current = self._current(key)
        if key not in self._writes and not may_write(self._snapshot, self.invoker, key):
            raise AccessDeniedError(f"{self.invoker[:12]} may not write {key!r}")
        if owner is None:
            owner = current["owner"] if current else self.invoker
        if acl is None and current is not None:
            acl = current["acl"]
        self._writes[key] = write_payload(value, owner, acl)

    def emit(self, name: str, payload: Any) -> None:
        self.events.append((name, payload))

    def identity(self, identity: str) -> dict | None:
        return self.lookup(f"id/{identity}")

    def require_role(self, *roles: str) -> None:
        if self.role not in roles:
            raise AccessDeniedError(f"operation requires role {' or '.join(roles)}, invoker is {self.role}")

    def result_sets(self):
        read_set = tuple(sorted(self._reads.items()))
        write_set = tuple(sorted(self._writes.items()))
        return read_set, write_set


@dataclass(frozen=True)
class ExecutionResult:
    read_set: tuple[tuple[str, int], ...]
    write_set: tuple[tuple[str, dict], ...]
    events: tuple[tuple[str, bytes], ...]
    return_value: Any
    outcome: str

    @property
    def ok(self) -> bool:
        return self.outcome == STATUS_OK

    @property
    def error_code(self) -> str | None:
        return self.outcome[len(FAILED_PREFIX):] if self.outcome.startswith(FAILED_PREFIX) else None

    def encode(self) -> bytes:
        return canonical_encode(
            {
                "rs": [list(r) for r in self.read_set],
                "ws": [[k, v] for k, v in self.write_set],
                "ev": [list(e) for e in self.events],
                "ret": self.return_value,
                "out": self.outcome,
            }
        )


def _check_proposal(snapshot: WorldState, proposal: Proposal) -> None:
    body = proposal.body_bytes()
    if proposal.signature.signer != proposal.invoker:
        raise SignatureError("signature signer differs from invoker")
    if snapshot.get(NETWORK_KEY) is None:
        # only the self-signed bootstrap is acceptable on an empty state
        if (proposal.contract, proposal.operation) != ("identity", "bootstrap"):
            raise UnknownIdentityError("network not bootstrapped")
        try:
            pk = proposal.decoded_args()["pk"]
        except (EgslError, KeyError, TypeError):
            raise ValidationError("bootstrap needs a public key") from None
        if not isinstance(pk, bytes) or identity_id(pk) != proposal.invoker:
            raise SignatureError("bootstrap key does not match invoker")
        if not verify_signature(pk, proposal.signature.sig, body):
            raise SignatureError("bad bootstrap signature")
        return
    rec = identity_record(snapshot, proposal.invoker)
    if rec is None:
        raise UnknownIdentityError(f"unknown identity {proposal.invoker[:12]}")
    auth = identity_record(snapshot, authority_id(snapshot))
    if not verify_signature(auth["pk"], rec["cred"], canonical_encode({"id": rec["id"], "role": rec["role"]})):
        raise UnknownIdentityError("identity credential is not signed by the authority")
    if not verify_signature(rec["pk"], proposal.signature.sig, body):
        raise SignatureError("bad transaction signature")


def execute_transaction(snapshot: WorldState, proposal: Proposal, contracts: ContractRegistry) -> ExecutionResult:
    """Run one proposal against a snapshot without mutating it.

    Signature, identity and dispatch failures raise before execution; handler
    failures come back as a ``failed:<code>`` outcome.
    """
    _check_proposal(snapshot, proposal)
    handler = contracts.handler(proposal.contract, proposal.operation)
    try:
        args = proposal.decoded_args()
    except EgslError as exc:
        raise ValidationError(f"undecodable args: {exc}") from None
    ctx = Context(snapshot, proposal.invoker, proposal.logical_time)
    try:
        ret = handler(ctx, args)
        canonical_encode(ret)
    except EgslError as exc:
        read_set, _ = ctx.result_sets()
        return ExecutionResult(read_set, (), (), None, FAILED_PREFIX + exc.code)
    read_set, write_set = ctx.result_sets()
    events = tuple((name, canonical_encode(payload)) for name, payload in ctx.events)
    return ExecutionResult(read_set, write_set, events, ret, STATUS_OK)


@dataclass
class EndorsementDecision:
    accepted: bool
    result: ExecutionResult | None
    matches: int
    required: int
    divergence: dict[str, list[int]] = field(default_factory=dict)

    def describe(self) -> str:
        if self.accepted:
            return f"accepted ({self.matches}/{self.required} matching)"
        groups = ", ".join(f"{h[:8]}:{len(ix)} peers" for h, ix in self.divergence.items())
        return f"rejected: {self.matches} matching < {self.required} required [{groups}]"


def endorse(
    proposal: Proposal,
    peers: Sequence[WorldState],
    k: int,
    contracts: ContractRegistry,
) -> EndorsementDecision:
    """Execute on every peer snapshot; accept iff at least ``k`` byte-identical results."""
    if not 1 <= k <= len(peers):
        raise ConfigError(f"quorum k={k} invalid for {len(peers)} peers")
    roots = {p.root() for p in peers}
    if len(roots) > 1:
        raise StateDivergenceError("peers are at differing state roots")
    groups: dict[bytes, list[int]] = {}
    results: dict[bytes, ExecutionResult] = {}
    for i, snap in enumerate(peers):
        res = execute_transaction(snap, proposal, contracts)
        enc = res.encode()
        groups.setdefault(enc, []).append(i)
        results.setdefault(enc, res)
    best = max(groups, key=lambda e: (len(groups[e]), -min(groups[e])))
    matches = len(groups[best])
    divergence = {} if len(groups) == 1 else {sha256(e).hex()[:16]: ix for e, ix in groups.items()}
    if matches >= k:
        return EndorsementDecision(True, results[best], matches, k, divergence)
    return EndorsementDecision(False, None, matches, k, divergence)


def validate_reads(state: WorldState, read_set) -> None:
    for key, version in read_set:
        if state.version(key) != version:
            raise MvccConflictError(f"stale read of {key!r}: saw v{version}, now v{state.version(key)}")


def commit(state: WorldState, result: ExecutionResult) -> str:
    """Apply an endorsed result to ``state``; returns the recorded status.

    A stale readSet aborts the transaction and leaves ``state`` untouched.
    """
    if not result.ok:
        return result.outcome
    try:
        validate_reads(state, result.read_set)
    except MvccConflictError:
        return STATUS_ABORTED
    state.apply_writes(result.write_set)
    return STATUS_OK


def build_transaction(seq_no: int, proposal: Proposal, result: ExecutionResult, status: str) -> Transaction:
    write_set = result.write_set if status == STATUS_OK else ()
    events = result.events if status == STATUS_OK else ()
    return Transaction(
        seq_no=seq_no,
        logical_time=proposal.logical_time,
        invoker=proposal.invoker,
        contract=proposal.contract,
        operation=proposal.operation,
        args=proposal.args,
        read_set=result.read_set,
        write_set=write_set,
        events=events,
        status=status,
        signature=proposal.signature,
    ).with_id()


def decode_events(tx: Transaction) -> list[Event]:
    return [Event(name, canonical_decode(payload), tx.tx_id) for name, payload in tx.events]


# -- replay -------------------------------------------------------------------


def fold_blocks(blocks: Iterable[Block]) -> WorldState:
    """State obtained by applying recorded writes of successful transactions in order."""
    state = WorldState()
    for b in blocks:
        for tx in b.transactions:
            if tx.ok:
                state.apply_writes(tx.write_set)
    return state


def block_pre_state(ledger: LedgerFile, block: Block, views: Mapping[bytes, WorldState]) -> WorldState:
    if not block.parent_hashes:
        return WorldState()
    if len(block.parent_hashes) == 1:
        return views[block.parent_hashes[0]].copy()
    anc = ancestors(ledger, block.block_hash)
    return fold_blocks(b for b in linearize_dag(ledger) if b.block_hash in anc)


def replay_from_genesis(ledger: LedgerFile, contracts: ContractRegistry | None = None) -> bytes:
    """Re-execute every transaction and check every recorded state root.

    Transactions of a block execute against the block's pre-state and are
    then MVCC-validated in order, the same discipline the network uses.
    """
    contracts = contracts or default_registry()
    blocks = ledger.blocks
    if not blocks:
        return WorldState().root()
    order = linearize_dag(ledger) if ledger.mode == "dag" else blocks
    index_of = {b.block_hash: i for i, b in enumerate(blocks)}
    views: dict[bytes, WorldState] = {}
    for block in order:
        idx = index_of[block.block_hash]
        pre = block_pre_state(ledger, block, views)
        working = pre.copy()
        for tx in block.transactions:
            try:
                result = execute_transaction(pre, tx.proposal(), contracts)
            except EgslError as exc:
                raise ReplayDivergenceError(f"block {idx}: seqNo {tx.seq_no} not executable: {exc}", idx) from None
            status = commit(working, result)
            again = build_transaction(tx.seq_no, tx.proposal(), result, status)
            if again.tx_id != tx.tx_id:
                raise ReplayDivergenceError(f"block {idx}: seqNo {tx.seq_no} re-executes differently", idx)
        if working.root() != block.state_root:
            raise ReplayDivergenceError(f"block {idx}: stateRoot mismatch", idx)
        views[block.block_hash] = working
    tips = ledger.tips if ledger.mode == "dag" else [blocks[-1].block_hash]
    if len(tips) == 1:
        return views[tips[0]].root()
    return fold_blocks(order).root()


def final_state(ledger: LedgerFile) -> WorldState:
    """World state after all blocks, from recorded writes (no re-execution)."""
    order = linearize_dag(ledger) if ledger.mode == "dag" else ledger.blocks
    return fold_blocks(order)
