import json
import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egsl.contracts.identity import credential_message
from egsl.errors import (
    AccessDeniedError,
    ConsentStateError,
    DuplicateIdentityError,
    DuplicateRequestError,
    NotFoundError,
    SignatureError,
)
from egsl.scenario import parse_script, random_script, run_script
from egsl.state import (
    CONSENT_STATUSES,
    ConsentRecord,
    WorldState,
    consent_key,
    read_decision,
)

from conftest import World
from oracles import CONSENT_TABLE, consent_violations


def test_register_and_lookup(world):
    alice = world.register("alice", "prosumer", "D1")
    entry = world.net.state.get(f"id/{alice.id}")
    assert entry.value["role"] == "prosumer" and entry.value["district"] == "D1"
    assert entry.owner == alice.id


def test_duplicate_identity(world):
    world.register("alice", "prosumer")
    with pytest.raises(DuplicateIdentityError):
        world.register("alice", "prosumer")


def test_only_authority_registers(world):
    world.register("alice", "prosumer")
    eve = world.key("eve")
    args = {"pk": eve.public_key, "role": "doctor", "cred": world.authority.sign(credential_message(eve.id, "doctor")).sig}
    with pytest.raises(AccessDeniedError):
        world.invoke("alice", "identity", "register", args)
    # AccessDeniedError is also a PermissionError
    assert issubclass(AccessDeniedError, PermissionError)


def test_credential_must_be_authority_signed(world):
    eve = world.key("eve")
    forged = eve.sign(credential_message(eve.id, "doctor")).sig
    with pytest.raises(SignatureError):
        world.invoke("authority", "identity", "register", {"pk": eve.public_key, "role": "doctor", "cred": forged})


def test_read_write_acl_and_versions(world):
    world.register("alice", "prosumer")
    world.register("bob", "prosumer")
    world.invoke("alice", "records", "put", {"writes": [["data/x", 1]], "acl": {world.key("bob").id: ["read"]}})
    state = world.net.state
    assert state.version("data/x") == 1
    assert world.invoke("bob", "records", "read", {"key": "data/x"}).value["value"] == 1
    # bob may read but not write
    r = world.invoke("bob", "records", "put", {"writes": [["data/x", 2]]}, check=False)
    assert r.tx.status == "failed:PermissionError"
    world.invoke("alice", "records", "put", {"writes": [["data/x", 3]]})
    assert world.net.state.version("data/x") == 2
    assert world.net.state.get("data/x").value == 3


def test_double_write_collapses(world):
    r = world.invoke("authority", "records", "put", {"writes": [["data/k", 1], ["data/k", 2]]})
    assert [k for k, _ in r.tx.write_set] == ["data/k"]
    assert world.net.state.get("data/k").value == 2
    assert world.net.state.version("data/k") == 1


def test_owner_only_by_default(world):
    world.register("alice", "prosumer")
    world.register("bob", "prosumer")
    world.invoke("alice", "records", "put", {"writes": [["data/secret", "s"]]})
    r = world.invoke("bob", "records", "read", {"key": "data/secret"}, check=False)
    assert r.tx.status == "failed:PermissionError"
    # the authority bypasses ACLs
    assert world.invoke("authority", "records", "read", {"key": "data/secret"}).value["value"] == "s"
    r = world.invoke("bob", "records", "read", {"key": "data/none"}, check=False)
    assert r.tx.status == "failed:NotFoundError"


def test_everyone_acl(world):
    world.register("alice", "prosumer")
    world.register("bob", "prosumer")
    world.invoke("alice", "records", "put", {"writes": [["data/pub", 1]], "acl": {"*": ["read"]}})
    assert world.invoke("bob", "records", "read", {"key": "data/pub"}).value["value"] == 1


def test_state_root_is_order_independent():
    a, b = WorldState(), WorldState()
    a.put("k1", 1, "o")
    a.put("k2", 2, "o")
    b.put("k2", 2, "o")
    b.put("k1", 1, "o")
    assert a.root() == b.root()
    b.put("k1", 1, "o")
    assert a.root() != b.root()  # version differs


# -- consent ------------------------------------------------------------------


def consent_world():
    w = World(seed="consent")
    w.register("pat", "patient")
    w.register("doc", "doctor")
    w.register("other", "doctor")
    return w


def request(w, at=None):
    return ConsentRecord.from_value(
        w.invoke("doc", "consent", "request", {"subject": w.key("pat").id, "resource": "data/pat/", "purpose": "care"}, at).value
    )


def test_consent_happy_path():
    w = consent_world()
    w.invoke("pat", "records", "put", {"writes": [["data/pat/1", 70]]})
    rec = request(w)
    assert rec.status == "requested"
    r = w.invoke("doc", "records", "read", {"key": "data/pat/1"}, check=False)
    assert r.tx.status == "failed:PermissionError"
    w.invoke("pat", "consent", "decide", {"consent": rec.consent_id, "decision": "approve"})
    assert w.invoke("doc", "records", "read", {"key": "data/pat/1"}).value["value"] == 70
    # the other doctor is still refused
    assert w.invoke("other", "records", "read", {"key": "data/pat/1"}, check=False).tx.status == "failed:PermissionError"
    w.invoke("pat", "consent", "revoke", {"consent": rec.consent_id})
    assert w.invoke("doc", "records", "read", {"key": "data/pat/1"}, check=False).tx.status == "failed:PermissionError"
    history = [w.net.state.get(f"{consent_key(rec.consent_id)}/h/{n}").value["status"] for n in range(3)]
    assert history == ["requested", "approved", "revoked"]


def test_only_subject_decides():
    w = consent_world()
    rec = request(w)
    r = w.invoke("doc", "consent", "decide", {"consent": rec.consent_id, "decision": "approve"}, check=False)
    assert r.tx.status == "failed:PermissionError"


def test_duplicate_open_request():
    w = consent_world()
    request(w)
    with pytest.raises(DuplicateRequestError):
        request(w)


def test_unknown_consent():
    w = consent_world()
    with pytest.raises(NotFoundError):
        w.invoke("pat", "consent", "decide", {"consent": "00" * 32, "decision": "approve"})


ACTIONS = ("approve", "deny", "revoke")


def apply_action(w, cid, action):
    if action == "revoke":
        return w.invoke("pat", "consent", "revoke", {"consent": cid}, check=False)
    return w.invoke("pat", "consent", "decide", {"consent": cid, "decision": action}, check=False)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from(ACTIONS), max_size=5))
def test_consent_transitions_follow_table(actions):
    w = consent_world()
    w.invoke("pat", "records", "put", {"writes": [["data/pat/1", 1]]})
    rec = request(w)
    status = "requested"
    for action in actions:
        r = apply_action(w, rec.consent_id, action)
        expected = CONSENT_TABLE.get((status, action))
        if expected is None:
            assert r.tx.status == "failed:ConsentStateError"
        else:
            assert r.tx.ok
            status = expected
        assert w.net.state.get(consent_key(rec.consent_id)).value["status"] == status
        allowed, _ = read_decision(w.net.state, w.key("doc").id, "data/pat/1")
        assert allowed == (status == "approved")


@given(st.sampled_from(CONSENT_STATUSES), st.sampled_from(CONSENT_STATUSES))
def test_transition_function_matches_table(src, dst):
    rec = ConsentRecord("c", "r", "s", "p/", "x", src, 0)
    legal = {(s, v) for (s, _), v in CONSENT_TABLE.items()}
    if (src, dst) in legal:
        assert rec.transition(dst, 1).status == dst
    else:
        with pytest.raises(ConsentStateError):
            rec.transition(dst, 1)


@settings(max_examples=25, deadline=None)
@given(st.data())
def test_confidentiality(data):
    """No key owned by X is readable by Y without owner, authority, ACL or consent."""
    w = World(seed="conf")
    names = ["a", "b", "c"]
    for n in names:
        w.register(n, "prosumer")
    for i in range(data.draw(st.integers(1, 5))):
        owner = data.draw(st.sampled_from(names))
        share = data.draw(st.sets(st.sampled_from(names)))
        acl = {w.key(s).id: ["read"] for s in share}
        w.invoke(owner, "records", "put", {"writes": [[f"data/{i}", i]], "acl": acl})
    state = w.net.state
    for key in state.keys("data/"):
        entry = state.get(key)
        for n in names:
            reader = w.key(n).id
            allowed, _ = read_decision(state, reader, key)
            assert allowed == (reader == entry.owner or entry.grants(reader, "read"))


# -- post-run sweeps over randomized scenario traces ------------------------
CONSENT_LANGUAGE = re.compile(r"R(AV?|D)?")
LETTER = {"requested": "R", "approved": "A", "revoked": "V", "denied": "D"}


@pytest.fixture(scope="module")
def random_runs():
    return [run_script(parse_script(json.dumps(random_script(seed, events=40)))) for seed in range(12)]


def test_consent_sequences_are_regular(random_runs):
    for res in random_runs:
        seen: dict[str, str] = {}
        for tx in res.ledger.transactions():
            for key, payload in tx.write_set:
                parts = key.split("/")
                if len(parts) == 2 and parts[0] == "consent" and parts[1] not in ("grant", "pair"):
                    seen[parts[1]] = seen.get(parts[1], "") + LETTER[payload["value"]["status"]]
        for cid, seq in seen.items():
            assert CONSENT_LANGUAGE.fullmatch(seq), (cid, seq)


def test_versions_strictly_increase(random_runs):
    for res in random_runs:
        count: dict[str, int] = {}
        for tx in res.ledger.transactions():
            if not tx.ok:
                continue
            for key, version in tx.read_set:
                assert version == count.get(key, 0)
            for key, _ in tx.write_set:
                count[key] = count.get(key, 0) + 1
        for key, n in count.items():
            assert res.network.state.version(key) == n


def test_access_soundness(random_runs):
    for res in random_runs:
        ids = res.report["identities"]
        for name, ident in ids.items():
            if name.startswith("pat"):
                assert consent_violations(res.ledger.transactions(), ident, {ident, ids["authority"]}) == []
