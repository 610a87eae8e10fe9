import hashlib

import pytest
from hypothesis import given
from hypothesis import strategies as st

from egsl.crypto import Signature
from egsl.encoding import canonical_decode, canonical_encode
from egsl.errors import EncodingError
from egsl.ledger import Transaction

from oracles import ref_encode

# frozen after cross-checking against ref_encode and `sha256sum`
GOLDEN_MAP = "07000000020000000161060000000600020103ffffffffffffffff0400000002c3a90500000001ff0000000162030000000000000001"
GOLDEN_TX_ID = "4f30e0d4237d094888e694cb4ade81322ab3820c3a20d464579c5c6ed8edbe1c"

values = st.recursive(
    st.none() | st.booleans() | st.integers(-(2**63), 2**63 - 1) | st.text() | st.binary(),
    lambda inner: st.lists(inner, max_size=5) | st.dictionaries(st.text(max_size=8), inner, max_size=5),
    max_leaves=25,
)


def sample_tx():
    enc = canonical_encode({"x": 1})
    ws = (("energy/p/1", {"value": 5, "owner": "ab" * 32, "acl": {}}),)
    return Transaction(7, 1000, "ab" * 32, "energy", "ingest", enc, (("energy/p/1", 0),), ws, (("e", b"\x01"),), "ok", Signature("ab" * 32, bytes(64)))


def test_empty_map_is_stable():
    assert canonical_encode({}) == bytes.fromhex("0700000000")
    assert canonical_encode({}) == canonical_encode(dict())


def test_key_order_independence():
    assert canonical_encode({"b": 1, "a": 2}) == canonical_encode({"a": 2, "b": 1})


def test_golden_map():
    v = {"b": 1, "a": [None, True, False, -1, "é", b"\xff"]}
    assert canonical_encode(v).hex() == GOLDEN_MAP
    assert canonical_encode(v) == ref_encode(v)


def test_transaction_hash_golden_vector():
    tx = sample_tx()
    assert tx.compute_id().hex() == GOLDEN_TX_ID
    assert tx.compute_id() == tx.compute_id()
    assert hashlib.sha256(ref_encode(tx.hashed_value())).hexdigest() == GOLDEN_TX_ID


@pytest.mark.parametrize("bad", [1.5, {1: "x"}, {"a"}, object()])
def test_unsupported_values(bad):
    with pytest.raises(EncodingError):
        canonical_encode(bad)


def test_integer_range():
    canonical_encode(2**63 - 1)
    with pytest.raises(EncodingError):
        canonical_encode(2**63)


def test_decoder_is_strict():
    good = canonical_encode({"a": 1, "b": 2})
    with pytest.raises(EncodingError):
        canonical_decode(good + b"\x00")
    swapped = ref_encode({"a": 1, "b": 2}).replace(b"\x01a", b"\x01c")
    with pytest.raises(EncodingError):
        canonical_decode(swapped.replace(b"\x01b", b"\x01a"))
    with pytest.raises(EncodingError):
        canonical_decode(b"\x09")
    with pytest.raises(EncodingError):
        canonical_decode(good[:-1])


@given(values)
def test_round_trip(v):
    data = canonical_encode(v)
    assert canonical_decode(data) == _listify(v)
    assert canonical_encode(canonical_decode(data)) == data


@given(values)
def test_matches_reference_writer(v):
    assert canonical_encode(v) == ref_encode(v)


def _listify(v):
    if isinstance(v, (list, tuple)):
        return [_listify(x) for x in v]
    if isinstance(v, dict):
        return {k: _listify(x) for k, x in v.items()}
    return v
