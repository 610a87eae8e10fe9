"""Generic permission-checked reads, and free-form writes under ``data/``."""

from __future__ import annotations

from ..engine import Contract
from ..errors import ValidationError
from ._args import arg

DATA_PREFIX = "data/"


def read(ctx, args):
    key = arg(args, "key", str)
    return {"key": key, "value": ctx.read(key)}


def put(ctx, args):
    writes = arg(args, "writes", list)
    for item in writes:
        if not isinstance(item, list) or len(item) != 2 or not isinstance(item[0], str):
            raise ValidationError("writes are [key, value] pairs")
        key, value = item
        if not key.startswith(DATA_PREFIX):
            raise ValidationError(f"records.put only writes under {DATA_PREFIX}")
        ctx.write(key, value, acl=arg(args, "acl", dict, optional=True))
    return len(writes)


CONTRACT = Contract("records", "dynamic", {"read": read, "put": put})
