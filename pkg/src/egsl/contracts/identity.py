"""Identity registration: authority bootstrap, KYC registration, device keys."""

from __future__ import annotations

from ..crypto import identity_id, verify_signature
from ..encoding import canonical_encode
from ..engine import Contract
from ..errors import AccessDeniedError, DuplicateIdentityError, NotFoundError, SignatureError, ValidationError
from ..state import EVERYONE, NETWORK_KEY, READ, ROLES, device_key, id_key
from ._args import arg

DEVICE_KINDS = ("meter", "wearable")


def credential_message(identity: str, role: str) -> bytes:
    return canonical_encode({"id": identity, "role": role})


def bootstrap(ctx, args):
    if ctx.lookup(NETWORK_KEY) is not None:
        raise ValidationError("network already bootstrapped")
    pk = arg(args, "pk", bytes)
    # the ledger mode lives in the tx args only, so chain and dag runs share state roots
    if arg(args, "mode", str) not in ("chain", "dag"):
        raise ValidationError("mode must be chain or dag")
    cred = arg(args, "cred", bytes)
    ident = identity_id(pk)
    if ident != ctx.invoker:
        raise SignatureError("bootstrap key does not match invoker")
    if not verify_signature(pk, cred, credential_message(ident, "authority")):
        raise SignatureError("authority credential does not verify")
    record = {"id": ident, "role": "authority", "pk": pk, "cred": cred, "district": None}
    ctx.write(id_key(ident), record, owner=ident, acl={EVERYONE: [READ]})
    ctx.write(NETWORK_KEY, {"authority": ident}, owner=ident, acl={EVERYONE: [READ]})
    return record


def register(ctx, args):
    ctx.require_role("authority")
    pk = arg(args, "pk", bytes)
    role = arg(args, "role", str)
    cred = arg(args, "cred", bytes)
    district = arg(args, "district", str, optional=True)
    if role not in ROLES or role == "authority":
        raise ValidationError(f"cannot register role {role!r}")
    ident = identity_id(pk)
    if ctx.lookup(id_key(ident)) is not None:
        raise DuplicateIdentityError(f"identity {ident[:12]} already registered")
    authority = ctx.identity(ctx.authority)
    if not verify_signature(authority["pk"], cred, credential_message(ident, role)):
        raise SignatureError("credential is not signed by the authority")
    record = {"id": ident, "role": role, "pk": pk, "cred": cred, "district": district}
    ctx.write(id_key(ident), record, owner=ident, acl={EVERYONE: [READ]})
    return record


def register_device(ctx, args):
    ctx.require_role("authority")
    device = arg(args, "device", str)
    owner = arg(args, "owner", str)
    pk = arg(args, "pk", bytes)
    kind = arg(args, "kind", str)
    if kind not in DEVICE_KINDS:
        raise ValidationError(f"unknown device kind {kind!r}")
    if "/" in device or not device:
        raise ValidationError("device id must be a non-empty name without '/'")
    if ctx.identity(owner) is None:
        raise NotFoundError(f"device owner {owner[:12]} not registered")
    key = device_key(device)
    if ctx.lookup(key) is not None:
        raise DuplicateIdentityError(f"device {device!r} already registered")
    record = {"device": device, "owner": owner, "pk": pk, "kind": kind, "lastAt": None}
    ctx.write(key, record, owner=owner)
    return record


def registered_device(ctx, device: str, owner: str, kind: str) -> dict:
    rec = ctx.lookup(device_key(device))
    if rec is None or rec["owner"] != owner or rec["kind"] != kind:
        raise AccessDeniedError(f"device {device!r} is not a registered {kind} of this identity")
    return rec


CONTRACT = Contract(
    "identity",
    "dynamic",
    {"bootstrap": bootstrap, "register": register, "registerDevice": register_device},
)
