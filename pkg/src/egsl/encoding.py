"""Deterministic binary encoding used for every hash and signature.

Layout: one tag byte followed by the payload.

    0x00 null            0x04 str    u32 length + UTF-8
    0x01 false           0x05 bytes  u32 length + raw
    0x02 true            0x06 list   u32 count + items
    0x03 int  8-byte signed big-endian
    0x07 map  u32 count + (u32 key length, UTF-8 key, value)*, keys in
              strictly ascending byte order

Decoding is strict, so ``encode(decode(b)) == b`` whenever decoding succeeds.
"""

from __future__ import annotations

import struct
from typing import Any

from .errors import EncodingError

_NULL, _FALSE, _TRUE, _INT, _STR, _BYTES, _LIST, _MAP = range(8)
_INT_MIN = -(2**63)
_INT_MAX = 2**63 - 1
_U32 = struct.Struct(">I")
_I64 = struct.Struct(">q")


def canonical_encode(value: Any) -> bytes:
    out = bytearray()
    _encode_into(value, out)
    return bytes(out)


def _encode_into(value: Any, out: bytearray) -> None:
    if value is None:
        out.append(_NULL)
    elif value is True:
        out.append(_TRUE)
    elif value is False:
        out.append(_FALSE)
    elif isinstance(value, int):
        if not _INT_MIN <= value <= _INT_MAX:
            raise EncodingError(f"integer out of 64-bit range: {value}")
        out.append(_INT)
        out += _I64.pack(value)
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out.append(_STR)
        out += _U32.pack(len(raw))
        out += raw
    elif isinstance(value, (bytes, bytearray, memoryview)):
        raw = bytes(value)
        out.append(_BYTES)
        out += _U32.pack(len(raw))
        out += raw
    elif isinstance(value, (list, tuple)):
        out.append(_LIST)
        out += _U32.pack(len(value))
        for item in value:
            _encode_into(item, out)
    elif isinstance(value, dict):
        items = []
        for key, item in value.items():
            if not isinstance(key, str):
                raise EncodingError(f"map keys must be strings, got {type(key).__name__}")
            items.append((key.encode("utf-8"), item))
        items.sort(key=lambda kv: kv[0])
        out.append(_MAP)
        out += _U32.pack(len(items))
        for raw_key, item in items:
            out += _U32.pack(len(raw_key))
            out += raw_key
            _encode_into(item, out)
    else:
        raise EncodingError(f"unsupported value kind: {type(value).__name__}")


def canonical_decode(data: bytes) -> Any:
    value, pos = _decode_at(memoryview(data), 0)
    if pos != len(data):
        raise EncodingError(f"{len(data) - pos} trailing bytes after value")
    return value


def _take(buf: memoryview, pos: int, n: int) -> tuple[bytes, int]:
    end = pos + n
    if end > len(buf):
        raise EncodingError("unexpected end of input")
    return bytes(buf[pos:end]), end


def _length(buf: memoryview, pos: int) -> tuple[int, int]:
    raw, pos = _take(buf, pos, 4)
    n = _U32.unpack(raw)[0]
    if pos + n > len(buf):
        raise EncodingError("length prefix exceeds input")
    return n, pos


def _utf8(raw: bytes) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise EncodingError(f"invalid UTF-8: {exc}") from None


def _decode_at(buf: memoryview, pos: int) -> tuple[Any, int]:
    tag_raw, pos = _take(buf, pos, 1)
    tag = tag_raw[0]
    if tag == _NULL:
        return None, pos
    if tag == _FALSE:
        return False, pos
    if tag == _TRUE:
        return True, pos
    if tag == _INT:
        raw, pos = _take(buf, pos, 8)
        return _I64.unpack(raw)[0], pos
    if tag == _STR:
        n, pos = _length(buf, pos)
        raw, pos = _take(buf, pos, n)
        return _utf8(raw), pos
    if tag == _BYTES:
        n, pos = _length(buf, pos)
        return _take(buf, pos, n)
    if tag == _LIST:
        # each item needs at least one byte, so count is bounded by the remainder
        n, _ = _take(buf, pos, 4)
        count = _U32.unpack(n)[0]
        pos += 4
        if count > len(buf) - pos:
            raise EncodingError("list count exceeds input")
        items = []
        for _ in range(count):
            item, pos = _decode_at(buf, pos)
            items.append(item)
        return items, pos
    if tag == _MAP:
        n, _ = _take(buf, pos, 4)
        count = _U32.unpack(n)[0]
        pos += 4
        if count > len(buf) - pos:
            raise EncodingError("map count exceeds input")
        result: dict[str, Any] = {}
        prev: bytes | None = None
        for _ in range(count):
            klen, pos = _length(buf, pos)
            raw_key, pos = _take(buf, pos, klen)
            if prev is not None and raw_key <= prev:
                raise EncodingError("map keys not in strictly ascending order")
            prev = raw_key
            item, pos = _decode_at(buf, pos)
            result[_utf8(raw_key)] = item
        return result, pos
    raise EncodingError(f"unknown tag 0x{tag:02x}")
