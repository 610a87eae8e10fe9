"""Reference implementations the tests compare against.

Each one is written from the rule it checks, sharing no code with the
package, so agreement is evidence rather than tautology.
"""

from __future__ import annotations

import hashlib
import itertools
import struct
from fractions import Fraction


def ref_encode(v) -> bytes:
    """Second, independent writer of the canonical byte format."""
    if v is None:
        return b"\x00"
    if v is False:
        return b"\x01"
    if v is True:
        return b"\x02"
    if isinstance(v, int):
        return b"\x03" + struct.pack(">q", v)
    if isinstance(v, str):
        b = v.encode()
        return b"\x04" + struct.pack(">I", len(b)) + b
    if isinstance(v, bytes):
        return b"\x05" + struct.pack(">I", len(v)) + v
    if isinstance(v, (list, tuple)):
        return b"\x06" + struct.pack(">I", len(v)) + b"".join(ref_encode(x) for x in v)
    if isinstance(v, dict):
        items = sorted((k.encode(), x) for k, x in v.items())
        return b"\x07" + struct.pack(">I", len(items)) + b"".join(struct.pack(">I", len(k)) + k + ref_encode(x) for k, x in items)
    raise TypeError(type(v))


def ref_block_hash(height, parents, tx_ids, state_root) -> bytes:
    return hashlib.sha256(ref_encode({"h": height, "p": list(parents), "tx": list(tx_ids), "r": state_root})).digest()


def all_topological_orders(nodes, parents_of):
    """Every topological order, by brute force over permutations."""
    out = []
    for perm in itertools.permutations(nodes):
        pos = {n: i for i, n in enumerate(perm)}
        if all(pos[p] < pos[n] for n in perm for p in parents_of[n]):
            out.append(list(perm))
    return out


def thermostat_pseudocode(temp, cons, answer, low=18, high=25, threshold=25):
    """The rule table transcribed branch by branch (literal action mapping).

    Returns the action name, or "ProtocolError" when an answer arrives with
    no prompt pending.
    """
    if temp < low:
        if cons < threshold:
            return "ProtocolError" if answer else "turnOnAC"
        if answer is None:
            return "sendPrompt"
        return "turnOnAC" if answer == "YES" else "doNothing"
    if temp > high:
        if cons < threshold:
            return "ProtocolError" if answer else "turnOnHeating"
        if answer is None:
            return "sendPrompt"
        return "turnOnHeating" if answer == "YES" else "doNothing"
    return "ProtocolError" if answer else "doNothing"


CONSENT_TABLE = {
    ("requested", "approve"): "approved",
    ("requested", "deny"): "denied",
    ("approved", "revoke"): "revoked",
}


def hour_of_week_means(history):
    """Brute-force per-slot means: loop over the week, then over the data."""
    means = {}
    for slot in range(168):
        total, count = Fraction(0), 0
        for i, v in enumerate(history):
            if i % 168 == slot:
                total += Fraction(v)
                count += 1
        if count:
            means[slot] = total / count
    return means


def forecast_oracle(history, horizon, k=3):
    from decimal import ROUND_HALF_EVEN, Decimal

    def q(fr):
        return (Decimal(fr.numerator) / Decimal(fr.denominator)).quantize(Decimal("0.0001"), rounding=ROUND_HALF_EVEN)

    n = len(history)
    if n >= 168:
        means = hour_of_week_means(history)
        forecast = [q(means[(n + j) % 168]) for j in range(horizon)]
    else:
        forecast = [q(sum(Fraction(v) for v in history) / n)] * horizon
    by_hour = {}
    for h in range(24):
        vals = [Fraction(v) for i, v in enumerate(history) if i % 24 == h]
        if vals:
            by_hour[h] = sum(vals) / len(vals)
    peaks = []
    remaining = dict(by_hour)
    for _ in range(min(k, len(remaining))):
        best = max(remaining.values())
        h = min(x for x, m in remaining.items() if m == best)
        peaks.append(h)
        del remaining[h]
    return forecast, peaks


def consent_violations(transactions, patient, owner_ids):
    """Successful non-owner reads of the patient's records lacking a live approval.

    Works from raw ledger transactions: consent ids come from request write
    sets, decisions and revocations from their args. Returns offending seqNos.
    """
    from egsl.encoding import canonical_decode

    prefix = f"health/{patient}/"
    requested = {}  # consent id -> (requester, seq)
    approved = {}  # consent id -> seq of approval, removed on revocation
    bad = []
    for tx in sorted(transactions, key=lambda t: t.seq_no):
        args = canonical_decode(tx.args)
        if not tx.ok:
            continue
        if tx.operation == "request" and tx.contract in ("health", "consent"):
            for key, _ in tx.write_set:
                parts = key.split("/")
                if len(parts) == 2 and parts[0] == "consent":
                    requested[parts[1]] = (tx.invoker, tx.seq_no)
        elif tx.operation == "decide" and args.get("decision") == "approve" and args["consent"] in requested:
            if requested[args["consent"]][1] < tx.seq_no:
                approved[args["consent"]] = tx.seq_no
        elif tx.operation == "revoke":
            approved.pop(args.get("consent"), None)
        elif (tx.contract, tx.operation) == ("records", "read") and args["key"].startswith(prefix):
            if tx.invoker in owner_ids:
                continue
            live = [c for c, s in approved.items() if requested[c][0] == tx.invoker and s < tx.seq_no]
            if not live:
                bad.append(tx.seq_no)
    return bad
