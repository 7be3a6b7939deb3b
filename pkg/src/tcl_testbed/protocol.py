"""Newline-delimited JSON control protocol, version ``tcl-testbed/1``.

Every frame is one UTF-8 JSON object on one line, terminated by ``\\n``, with a
``type`` member naming the frame and every other member required.  Encoding is
canonical (fixed member order, no whitespace, shortest round-trip floats), so
equal frames always produce equal bytes.  See docs/protocol.md.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from enum import Enum
from typing import Any, Iterator, Union

from .etp import Mode
from .switching import Reason

PROTOCOL_VERSION = "tcl-testbed/1"
DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 47810
MAX_LINE = 1 << 22


class ErrorCode(str, Enum):
    MALFORMED = "MALFORMED"
    ORDERING = "ORDERING"
    VERSION = "VERSION"
    UNKNOWN_HOUSE = "UNKNOWN_HOUSE"
    BUSY = "BUSY"


class ProtocolError(Exception):
    code = ErrorCode.MALFORMED

    def __init__(self, message: str, offset: int | None = None) -> None:
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class DecodeError(ProtocolError):
    code = ErrorCode.MALFORMED


class OrderingError(ProtocolError):
    code = ErrorCode.ORDERING


@dataclass(frozen=True)
class Hello:
    version: str
    n_houses: int
    latch_dt: float


@dataclass(frozen=True)
class HouseReport:
    house_id: int
    t_therm: float
    t_a: float
    t_w: float
    mode: Mode
    time_in_mode: float
    time_since_off: float
    real_power: float


@dataclass(frozen=True)
class StateReport:
    step: int
    houses: tuple[HouseReport, ...]
    aggregate_power: float


@dataclass(frozen=True)
class Request:
    house_id: int
    desired_mode: Mode


@dataclass(frozen=True)
class SwitchRequests:
    step: int
    requests: tuple[Request, ...]


@dataclass(frozen=True)
class VerdictEntry:
    house_id: int
    accepted: bool
    reason: Reason

    def __post_init__(self) -> None:
        if self.accepted != (self.reason in (Reason.APPLIED, Reason.NO_CHANGE)):
            raise ValueError(f"accepted={self.accepted} contradicts reason {self.reason.value}")


@dataclass(frozen=True)
class Verdicts:
    step: int
    verdicts: tuple[VerdictEntry, ...]


@dataclass(frozen=True)
class StepAck:
    step: int


@dataclass(frozen=True)
class ErrorFrame:
    code: ErrorCode
    message: str


Frame = Union[Hello, StateReport, SwitchRequests, Verdicts, StepAck, ErrorFrame]

FRAME_TYPES: dict[str, type] = {
    "HELLO": Hello,
    "STATE_REPORT": StateReport,
    "SWITCH_REQUESTS": SwitchRequests,
    "VERDICTS": Verdicts,
    "STEP_ACK": StepAck,
    "ERROR": ErrorFrame,
}
_TYPE_NAMES = {cls: name for name, cls in FRAME_TYPES.items()}

# element types of the list-valued members
_ITEMS = {"houses": HouseReport, "requests": Request, "verdicts": VerdictEntry}


def _to_json(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, tuple):
        return [_to_json(v) for v in value]
    if hasattr(value, "__dataclass_fields__"):
        return {f.name: _to_json(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, float) and not math.isfinite(value):
        raise ValueError(f"non-finite value {value} cannot go on the wire")
    return value


def encode(frame: Frame) -> bytes:
    try:
        name = _TYPE_NAMES[type(frame)]
    except KeyError:
        raise TypeError(f"not a protocol frame: {frame!r}") from None
    body = {"type": name, **_to_json(frame)}
    return (json.dumps(body, separators=(",", ":"), ensure_ascii=False, allow_nan=False)
            + "\n").encode("utf-8")


def _convert(cls: type, obj: Any, where: str, offset: int) -> Any:
    if not isinstance(obj, dict):
        raise DecodeError(f"{where}: expected an object", offset)
    names = [f.name for f in fields(cls)]
    extra = set(obj) - set(names)
    if extra:
        raise DecodeError(f"{where}: unknown field(s) {sorted(extra)}", offset)
    missing = [n for n in names if n not in obj]
    if missing:
        raise DecodeError(f"{where}: missing field(s) {missing}", offset)
    kwargs = {}
    for f in fields(cls):
        kwargs[f.name] = _field(cls, f.name, f.type, obj[f.name], f"{where}.{f.name}", offset)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise DecodeError(f"{where}: {exc}", offset) from None


def _field(cls: type, name: str, tp: str, v: Any, where: str, offset: int) -> Any:
    bad = DecodeError(f"{where}: invalid value {v!r}", offset)
    if name in _ITEMS:
        if not isinstance(v, list):
            raise bad
        item = _ITEMS[name]
        return tuple(_convert(item, x, f"{where}[{i}]", offset) for i, x in enumerate(v))
    if tp == "int":
        if isinstance(v, bool) or not isinstance(v, int):
            raise bad
        if name in ("step", "house_id", "n_houses") and v < 0:
            raise bad
        return v
    if tp == "float":
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise bad
        return float(v)
    if tp == "bool":
        if not isinstance(v, bool):
            raise bad
        return v
    if tp == "str":
        if not isinstance(v, str):
            raise bad
        return v
    enum = {"Mode": Mode, "Reason": Reason, "ErrorCode": ErrorCode}[tp]
    try:
        return enum(v)
    except ValueError:
        raise bad from None


def decode(data: bytes, offset: int = 0) -> Frame:
    """Decode one complete line (including its trailing newline).

    ``offset`` is the absolute stream position of ``data[0]``; errors report
    the byte offset where decoding failed.
    """
    if not data.endswith(b"\n"):
        raise DecodeError("truncated frame: missing newline terminator", offset + len(data))
    body = data[:-1]
    if b"\n" in body:
        raise DecodeError("more than one frame in a line", offset + body.index(b"\n"))
    try:
        text = body.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError(f"invalid UTF-8: {exc.reason}", offset + exc.start) from None
    try:
        obj = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        pos = len(text[: exc.pos].encode("utf-8"))
        raise DecodeError(f"invalid JSON: {exc.msg}", offset + pos) from None
    except ValueError as exc:
        raise DecodeError(str(exc), offset) from None
    if not isinstance(obj, dict):
        raise DecodeError("frame is not a JSON object", offset)
    kind = obj.pop("type", None)
    if kind not in FRAME_TYPES:
        raise DecodeError(f"unknown frame type {kind!r}", offset)
    return _convert(FRAME_TYPES[kind], obj, kind, offset)


def _reject_constant(name: str) -> None:
    raise ValueError(f"non-finite number {name} is not allowed")


class FrameReader:
    """Incremental splitter: feed raw bytes, get decoded frames (or errors) out.

    Keeps the absolute byte offset of the stream so decode errors point at
    the exact byte.  A malformed line is consumed and reported; the stream
    stays usable.
    """

    def __init__(self, max_line: int = MAX_LINE) -> None:
        self._buf = bytearray()
        self._offset = 0  # absolute offset of _buf[0]
        self._max_line = max_line

    def feed(self, data: bytes) -> Iterator[Frame | ProtocolError]:
        self._buf.extend(data)
        while True:
            nl = self._buf.find(b"\n")
            if nl < 0:
                if len(self._buf) > self._max_line:
                    err = DecodeError("line too long", self._offset)
                    self._offset += len(self._buf)
                    self._buf.clear()
                    yield err
                return
            line = bytes(self._buf[: nl + 1])
            start = self._offset
            del self._buf[: nl + 1]
            self._offset += nl + 1
            try:
                yield decode(line, start)
            except ProtocolError as exc:
                yield exc

    def close(self) -> ProtocolError | None:
        """Error for a dangling partial frame at end of stream, if any."""
        if self._buf:
            return DecodeError("truncated frame at end of stream", self._offset + len(self._buf))
        return None

    @property
    def offset(self) -> int:
        return self._offset


class StepOrder:
    """Per-frame-type monotonicity check for step indices."""

    def __init__(self) -> None:
        self._last: dict[type, int] = {}

    def check(self, frame: Frame) -> None:
        step = getattr(frame, "step", None)
        if step is None:
            return
        last = self._last.get(type(frame))
        if last is not None and step <= last:
            raise OrderingError(
                f"{_TYPE_NAMES[type(frame)]} step {step} is not after the last seen step {last}")
        self._last[type(frame)] = step
