from __future__ import annotations

from typing import Any

from ..errors import ValidationError


def arg(args: Any, name: str, kind: type | tuple[type, ...] = object, optional: bool = False) -> Any:
    if not isinstance(args, dict):
        raise ValidationError("arguments must be a map")
    if name not in args or args[name] is None:
        if optional:
            return None
        raise ValidationError(f"missing argument {name!r}")
    value = args[name]
    if kind is int and isinstance(value, bool):
        raise ValidationError(f"argument {name!r} must be an integer")
    if not isinstance(value, kind):
        raise ValidationError(f"argument {name!r} has the wrong type")
    return value
