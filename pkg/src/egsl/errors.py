"""Exception hierarchy.

Every error carries a stable ``code``. Contract failures are recorded on the
ledger as ``failed:<code>`` and mapped back to the class by :func:`error_for_code`.
"""

from __future__ import annotations


class EgslError(Exception):
    code = "Error"


class EncodingError(EgslError):
    code = "EncodingError"


class OrderingError(EgslError):
    code = "OrderingError"


class CorruptLedgerError(EgslError):
    code = "CorruptLedgerError"


class LedgerFormatError(CorruptLedgerError):
    """The file framing itself is broken (magic, mode flag, truncated record)."""

    code = "LedgerFormatError"


class DagStructureError(EgslError):
    code = "DagStructureError"


class AccessDeniedError(EgslError, PermissionError):
    code = "PermissionError"


class NotFoundError(EgslError, KeyError):
    code = "NotFoundError"

    def __str__(self) -> str:
        return Exception.__str__(self)


class DuplicateIdentityError(EgslError):
    code = "DuplicateIdentityError"


class UnknownIdentityError(EgslError):
    code = "UnknownIdentityError"


class SignatureError(EgslError):
    code = "SignatureError"


class ConsentStateError(EgslError):
    code = "ConsentStateError"


class DuplicateRequestError(EgslError):
    code = "DuplicateRequestError"


class DispatchError(EgslError):
    code = "DispatchError"


class ValidationError(EgslError, ValueError):
    code = "ValidationError"


class ProtocolError(EgslError):
    code = "ProtocolError"


class MvccConflictError(EgslError):
    code = "MvccConflictError"


class DivergenceFault(EgslError):
    """A replica disagrees with the block it was asked to apply."""

    code = "DivergenceFault"

    def __init__(self, message: str, peer_id: str | None = None, height: int | None = None):
        super().__init__(message)
        self.peer_id = peer_id
        self.height = height


class StateDivergenceError(DivergenceFault):
    """Endorsing peers hold different state roots for the same proposal."""

    code = "StateDivergenceError"


class ReplayDivergenceError(EgslError):
    code = "ReplayDivergenceError"

    def __init__(self, message: str, block_index: int | None = None):
        super().__init__(message)
        self.block_index = block_index


class FeedError(EgslError):
    code = "FeedError"


class ConfigError(EgslError):
    code = "ConfigError"


class ForecastError(EgslError, ValueError):
    code = "ForecastError"


class ScriptError(EgslError):
    code = "ScriptError"


class ContractError(EgslError):
    """Generic failure raised by a contract handler."""

    code = "ContractError"


def _all_subclasses(cls: type) -> list[type]:
    out = []
    for sub in cls.__subclasses__():
        out.append(sub)
        out.extend(_all_subclasses(sub))
    return out


def error_for_code(code: str) -> type[EgslError]:
    for cls in _all_subclasses(EgslError):
        if cls.code == code:
            return cls
    return ContractError
