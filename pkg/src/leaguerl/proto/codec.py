"""Schema-driven little-endian binary codec.

A schema is one of the scalar tags below, a container tuple
(``("list", T)``, ``("tuple", T)``, ``("opt", T)``, ``("enum", EnumCls)``) or a
class registered with :func:`register`.  Encoding is canonical: every value has
exactly one byte representation and the decoder rejects anything else.
"""
from __future__ import annotations

import struct

import numpy as np


class CodecError(ValueError):
    """Payload bytes that do not decode to a valid value."""


_SCALARS = {
    "u8": struct.Struct("<B"),
    "u16": struct.Struct("<H"),
    "u32": struct.Struct("<I"),
    "u64": struct.Struct("<Q"),
    "i64": struct.Struct("<q"),
    "f64": struct.Struct("<d"),
}
_U32 = _SCALARS["u32"]
_ARRAYS = {"f64s": np.dtype("<f8"), "i64s": np.dtype("<i8")}

_REGISTRY: dict[type, tuple] = {}


def register(cls, fields: tuple) -> None:
    """Declare the wire layout of ``cls`` as ``((name, schema), ...)``.

    ``cls(**decoded_fields)`` must rebuild the value.
    """
    _REGISTRY[cls] = tuple(fields)


def encode_value(buf: bytearray, schema, value) -> None:
    if isinstance(schema, str):
        if schema in _SCALARS:
            try:
                buf += _SCALARS[schema].pack(value)
            except struct.error as exc:
                raise CodecError(f"{schema} out of range: {value!r}") from exc
        elif schema == "bool":
            buf.append(1 if value else 0)
        elif schema == "str":
            data = value.encode("utf-8")
            buf += _U32.pack(len(data))
            buf += data
        elif schema in _ARRAYS:
            arr = np.ascontiguousarray(value, dtype=_ARRAYS[schema])
            if arr.ndim != 1:
                raise CodecError(f"{schema} needs a 1-D array")
            buf += _U32.pack(arr.size)
            buf += arr.tobytes()
        elif schema == "bools":
            arr = np.ascontiguousarray(value, dtype=bool)
            buf += _U32.pack(arr.size)
            buf += arr.astype(np.uint8).tobytes()
        elif schema == "f64m":
            arr = np.ascontiguousarray(value, dtype="<f8")
            if arr.ndim != 2:
                raise CodecError("f64m needs a 2-D array")
            buf += _U32.pack(arr.shape[0])
            buf += _U32.pack(arr.shape[1])
            buf += arr.tobytes()
        else:
            raise TypeError(f"unknown scalar schema {schema!r}")
    elif isinstance(schema, tuple):
        tag = schema[0]
        if tag in ("list", "tuple"):
            buf += _U32.pack(len(value))
            for item in value:
                encode_value(buf, schema[1], item)
        elif tag == "opt":
            if value is None:
                buf.append(0)
            else:
                buf.append(1)
                encode_value(buf, schema[1], value)
        elif tag == "enum":
            buf.append(int(value))
        else:
            raise TypeError(f"unknown schema {schema!r}")
    else:
        for name, sub in _REGISTRY[schema]:
            encode_value(buf, sub, getattr(value, name))


class Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data, pos: int = 0):
        self.data = memoryview(data)
        self.pos = pos

    def take(self, n: int) -> memoryview:
        end = self.pos + n
        if n < 0 or end > len(self.data):
            raise CodecError("payload truncated")
        out = self.data[self.pos:end]
        self.pos = end
        return out

    def remaining(self) -> int:
        return len(self.data) - self.pos


def decode_value(r: Reader, schema):
    if isinstance(schema, str):
        if schema in _SCALARS:
            s = _SCALARS[schema]
            return s.unpack(r.take(s.size))[0]
        if schema == "bool":
            b = r.take(1)[0]
            if b > 1:
                raise CodecError("non-canonical bool")
            return bool(b)
        if schema == "str":
            n = _U32.unpack(r.take(4))[0]
            try:
                return bytes(r.take(n)).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CodecError("invalid utf-8") from exc
        if schema in _ARRAYS:
            dtype = _ARRAYS[schema]
            n = _U32.unpack(r.take(4))[0]
            arr = np.frombuffer(bytes(r.take(n * dtype.itemsize)), dtype=dtype)
            return arr.astype(dtype.newbyteorder("="))
        if schema == "bools":
            n = _U32.unpack(r.take(4))[0]
            raw = np.frombuffer(bytes(r.take(n)), dtype=np.uint8)
            if np.any(raw > 1):
                raise CodecError("non-canonical bool")
            return raw.astype(bool)
        if schema == "f64m":
            rows = _U32.unpack(r.take(4))[0]
            cols = _U32.unpack(r.take(4))[0]
            arr = np.frombuffer(bytes(r.take(rows * cols * 8)), dtype="<f8")
            return arr.astype(np.float64).reshape(rows, cols)
        raise TypeError(f"unknown scalar schema {schema!r}")
    if isinstance(schema, tuple):
        tag = schema[0]
        if tag in ("list", "tuple"):
            n = _U32.unpack(r.take(4))[0]
            if n > r.remaining():
                raise CodecError("payload truncated")
            items = [decode_value(r, schema[1]) for _ in range(n)]
            return items if tag == "list" else tuple(items)
        if tag == "opt":
            flag = r.take(1)[0]
            if flag > 1:
                raise CodecError("non-canonical optional flag")
            return decode_value(r, schema[1]) if flag else None
        if tag == "enum":
            raw = r.take(1)[0]
            try:
                return schema[1](raw)
            except ValueError as exc:
                raise CodecError(f"invalid {schema[1].__name__} value {raw}") from exc
        raise TypeError(f"unknown schema {schema!r}")
    kwargs = {name: decode_value(r, sub) for name, sub in _REGISTRY[schema]}
    try:
        return schema(**kwargs)
    except (TypeError, ValueError) as exc:
        raise CodecError(f"invalid {schema.__name__}: {exc}") from exc
