"""Message kinds, payload bodies, and frame encode/decode.

Frame layout (all little-endian)::

    u32 length          byte count of everything after this field
    u16 schema_version
    u8  kind
    u64 correlation_id
    ... payload         kind-specific, see PAYLOADS
"""
from __future__ import annotations

import dataclasses
import enum
import struct
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from ..policy import Family, ParamBlob
from ..records import ModelRecord, Outcome, Task, TrajectorySegment
from ..rlmath import HyperParams
from .codec import CodecError, Reader, decode_value, encode_value, register

SCHEMA_VERSION = 1
MAX_FRAME_SIZE = 64 * 1024 * 1024

LENGTH = struct.Struct("<I")
HEADER = struct.Struct("<HBQ")


class ProtocolError(Exception):
    """Base class for malformed or unacceptable frames."""


class TruncatedFrame(ProtocolError):
    pass


class VersionMismatch(ProtocolError):
    pass


class UnknownKind(ProtocolError):
    pass


class OversizedFrame(ProtocolError):
    pass


class MalformedPayload(ProtocolError):
    pass


class Kind(enum.IntEnum):
    TASK_REQUEST = 1
    TASK_REPLY = 2
    OUTCOME_REPORT = 3
    SEGMENT_PUSH = 4
    PARAM_GET = 5
    PARAM_PUT = 6
    PARAM_REPLY = 7
    FREEZE_MODEL = 8
    LIST_MODELS = 9
    INFERENCE_REQUEST = 10
    INFERENCE_REPLY = 11
    LEARNER_TASK_REQUEST = 12
    LEARNER_TASK_REPLY = 13
    END_LEARNING_PERIOD = 14
    ACK = 15
    ERROR = 16


class ErrorCode(enum.IntEnum):
    INTERNAL = 1
    BAD_REQUEST = 2
    NOT_FOUND = 3
    FROZEN = 4
    DUPLICATE = 5
    UNKNOWN_TASK = 6
    NO_GROUP = 7
    NOT_RANK_ZERO = 8
    NO_PERIOD = 9
    RUN_FINISHED = 10
    NO_MODEL = 11
    OVERSIZED = 12
    PROTOCOL = 13


class _ArrayEq:
    """Field-wise equality; arrays and floats compare by their bytes."""

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        for f in dataclasses.fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
                a, b = np.asarray(a), np.asarray(b)
                if a.dtype != b.dtype or a.shape != b.shape or a.tobytes() != b.tobytes():
                    return False
            elif isinstance(a, float) and isinstance(b, float):
                if struct.pack("<d", a) != struct.pack("<d", b):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None


@dataclass(eq=False)
class Empty(_ArrayEq):
    pass


@dataclass(eq=False)
class TaskRequest(_ArrayEq):
    actor_id: int
    learner_group: int = 0


@dataclass(eq=False)
class TaskReply(_ArrayEq):
    task: Task


@dataclass(eq=False)
class OutcomeReport(_ArrayEq):
    """``outcomes[0]`` is the learning agent, then one entry per opponent slot."""
    task_id: int
    outcomes: tuple = ()

    def __post_init__(self):
        self.outcomes = tuple(Outcome.parse(o) for o in self.outcomes)


@dataclass(eq=False)
class SegmentPush(_ArrayEq):
    segment: TrajectorySegment


@dataclass(eq=False)
class ParamGet(_ArrayEq):
    model_key: str


@dataclass(eq=False)
class ParamPut(_ArrayEq):
    record: ModelRecord
    replicated: bool = False


@dataclass(eq=False)
class ParamReply(_ArrayEq):
    record: ModelRecord


@dataclass(eq=False)
class FreezeModel(_ArrayEq):
    model_key: str
    replicated: bool = False


@dataclass(frozen=True, eq=False)
class ModelEntry(_ArrayEq):
    model_key: str
    frozen: bool
    created_at: float


@dataclass(eq=False)
class ListModels(_ArrayEq):
    """Empty ``entries`` in a request; the reply carries the listing."""
    entries: tuple = ()


@dataclass(eq=False)
class InferenceRequest(_ArrayEq):
    actor_id: int
    obs: np.ndarray


@dataclass(eq=False)
class InferenceReply(_ArrayEq):
    model_key: str
    model_version: int
    logits: np.ndarray
    probs: np.ndarray
    log_probs: np.ndarray
    value: float


@dataclass(eq=False)
class LearnerTaskRequest(_ArrayEq):
    learner_group: int
    rank: int = 0


@dataclass(eq=False)
class LearnerTaskReply(_ArrayEq):
    task: Task


@dataclass(eq=False)
class EndLearningPeriod(_ArrayEq):
    """Request carries the group; the reply adds the successor key and whether
    the group has completed its configured number of periods."""
    learner_group: int
    new_model_key: str = ""
    finished: bool = False


@dataclass(eq=False)
class Error(_ArrayEq):
    code: int
    message: str = ""


register(HyperParams, tuple(
    (f.name, {float: "f64", int: "u32", bool: "bool"}[type(f.default)])
    for f in dataclasses.fields(HyperParams)))
register(ParamBlob, (("family", ("enum", Family)), ("shape", ("tuple", "u32")),
                     ("values", "f64s")))
register(ModelRecord, (("model_key", "str"), ("params", ParamBlob),
                       ("hyperparams", HyperParams), ("parent_key", ("opt", "str")),
                       ("created_at", "f64"), ("frozen", "bool"), ("version", "u64")))
register(Task, (("task_id", "u64"), ("learner_group", "u32"),
                ("learning_model_key", "str"), ("opponent_model_keys", ("tuple", "str")),
                ("hyperparams", HyperParams)))
register(TrajectorySegment, (
    ("model_key", "str"), ("actor_id", "u32"), ("incarnation", "u64"),
    ("segment_seq", "u64"), ("obs", "f64m"), ("actions", "i64s"), ("rewards", "f64s"),
    ("behavior_logps", "f64s"), ("values", "f64s"), ("dones", "bools"), ("mask", "bools"),
    ("bootstrap_value", "f64")))
register(ModelEntry, (("model_key", "str"), ("frozen", "bool"), ("created_at", "f64")))

register(Empty, ())
register(TaskRequest, (("actor_id", "u32"), ("learner_group", "u32")))
register(TaskReply, (("task", Task),))
register(OutcomeReport, (("task_id", "u64"), ("outcomes", ("tuple", ("enum", Outcome)))))
register(SegmentPush, (("segment", TrajectorySegment),))
register(ParamGet, (("model_key", "str"),))
register(ParamPut, (("record", ModelRecord), ("replicated", "bool")))
register(ParamReply, (("record", ModelRecord),))
register(FreezeModel, (("model_key", "str"), ("replicated", "bool")))
register(ListModels, (("entries", ("tuple", ModelEntry)),))
register(InferenceRequest, (("actor_id", "u32"), ("obs", "f64s")))
register(InferenceReply, (("model_key", "str"), ("model_version", "u64"), ("logits", "f64s"),
                          ("probs", "f64s"), ("log_probs", "f64s"), ("value", "f64")))
register(LearnerTaskRequest, (("learner_group", "u32"), ("rank", "u32")))
register(LearnerTaskReply, (("task", Task),))
register(EndLearningPeriod, (("learner_group", "u32"), ("new_model_key", "str"),
                             ("finished", "bool")))
register(Error, (("code", "u16"), ("message", "str")))

PAYLOADS: dict[Kind, type] = {
    Kind.TASK_REQUEST: TaskRequest,
    Kind.TASK_REPLY: TaskReply,
    Kind.OUTCOME_REPORT: OutcomeReport,
    Kind.SEGMENT_PUSH: SegmentPush,
    Kind.PARAM_GET: ParamGet,
    Kind.PARAM_PUT: ParamPut,
    Kind.PARAM_REPLY: ParamReply,
    Kind.FREEZE_MODEL: FreezeModel,
    Kind.LIST_MODELS: ListModels,
    Kind.INFERENCE_REQUEST: InferenceRequest,
    Kind.INFERENCE_REPLY: InferenceReply,
    Kind.LEARNER_TASK_REQUEST: LearnerTaskRequest,
    Kind.LEARNER_TASK_REPLY: LearnerTaskReply,
    Kind.END_LEARNING_PERIOD: EndLearningPeriod,
    Kind.ACK: Empty,
    Kind.ERROR: Error,
}
KIND_OF = {cls: kind for kind, cls in PAYLOADS.items()}


@dataclass
class Message:
    kind: Kind
    correlation_id: int = 0
    payload: Any = field(default_factory=Empty)
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def of(cls, payload, correlation_id: int = 0) -> "Message":
        return cls(KIND_OF[type(payload)], correlation_id, payload)


def encode(msg: Message, max_frame_size: int = MAX_FRAME_SIZE) -> bytes:
    kind = Kind(msg.kind)
    if not isinstance(msg.payload, PAYLOADS[kind]):
        raise MalformedPayload(f"{kind.name} carries {type(msg.payload).__name__}")
    buf = bytearray(LENGTH.size)
    try:
        buf += HEADER.pack(msg.schema_version, kind, msg.correlation_id)
        encode_value(buf, PAYLOADS[kind], msg.payload)
    except (CodecError, struct.error, AttributeError, TypeError) as exc:
        raise MalformedPayload(str(exc)) from exc
    body_len = len(buf) - LENGTH.size
    if body_len > max_frame_size:
        raise OversizedFrame(f"frame body of {body_len} bytes exceeds {max_frame_size}")
    LENGTH.pack_into(buf, 0, body_len)
    return bytes(buf)


def decode(data, max_frame_size: int = MAX_FRAME_SIZE) -> Message:
    """Decode exactly one complete frame."""
    data = memoryview(data)
    if len(data) < LENGTH.size:
        raise TruncatedFrame("frame shorter than its length prefix")
    (body_len,) = LENGTH.unpack_from(data, 0)
    if body_len > max_frame_size:
        raise OversizedFrame(f"frame body of {body_len} bytes exceeds {max_frame_size}")
    if len(data) < LENGTH.size + body_len:
        raise TruncatedFrame(f"expected {body_len} body bytes, got {len(data) - LENGTH.size}")
    if len(data) > LENGTH.size + body_len:
        raise MalformedPayload("trailing bytes after frame")
    if body_len < HEADER.size:
        raise TruncatedFrame("frame body shorter than header")
    version, raw_kind, corr = HEADER.unpack_from(data, LENGTH.size)
    if version != SCHEMA_VERSION:
        raise VersionMismatch(f"schema version {version}, expected {SCHEMA_VERSION}")
    try:
        kind = Kind(raw_kind)
    except ValueError:
        raise UnknownKind(f"unknown message kind {raw_kind}") from None
    reader = Reader(data, LENGTH.size + HEADER.size)
    try:
        payload = decode_value(reader, PAYLOADS[kind])
    except CodecError as exc:
        raise MalformedPayload(str(exc)) from exc
    if reader.remaining():
        raise MalformedPayload(f"{reader.remaining()} trailing payload bytes")
    return Message(kind, corr, payload, version)


def split_frames(buffer) -> tuple[list[bytes], bytes]:
    """Cut a byte stream into complete frames; returns (frames, leftover)."""
    data = bytes(buffer)
    frames, pos = [], 0
    while len(data) - pos >= LENGTH.size:
        (body_len,) = LENGTH.unpack_from(data, pos)
        end = pos + LENGTH.size + body_len
        if end > len(data):
            break
        frames.append(data[pos:end])
        pos = end
    return frames, data[pos:]


def read_frame(sock, max_frame_size: int = MAX_FRAME_SIZE) -> Optional[bytes]:
    """Read one frame from a socket; ``None`` on clean EOF before any byte."""
    head = _recv_exact(sock, LENGTH.size, allow_eof=True)
    if head is None:
        return None
    (body_len,) = LENGTH.unpack(head)
    if body_len > max_frame_size:
        raise OversizedFrame(f"frame body of {body_len} bytes exceeds {max_frame_size}")
    return head + _recv_exact(sock, body_len)


def _recv_exact(sock, n: int, allow_eof: bool = False) -> Optional[bytes]:
    chunks, got = [], 0
    while got < n:
        chunk = sock.recv(min(n - got, 1 << 20))
        if not chunk:
            if allow_eof and got == 0:
                return None
            raise TruncatedFrame(f"connection closed after {got} of {n} bytes")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)
