"""Protocol client and the scripted square-wave controller built on it."""

from __future__ import annotations

import socket
from dataclasses import dataclass, field
from typing import Callable, Iterator

from .etp import Mode
from .protocol import (
    PROTOCOL_VERSION,
    ErrorFrame,
    Frame,
    FrameReader,
    Hello,
    ProtocolError,
    Request,
    StateReport,
    StepAck,
    SwitchRequests,
    Verdicts,
    encode,
)


class ControllerError(RuntimeError):
    """The server refused the connection or reported a protocol error."""


class ControlClient:
    """Blocking client; keeps the raw bytes of every frame it receives."""

    def __init__(self, host: str, port: int, version: str = PROTOCOL_VERSION,
                 timeout: float | None = 30.0) -> None:
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._reader = FrameReader()
        self._pending: list[tuple[bytes, Frame | ProtocolError]] = []
        self._raw = bytearray()
        self.received: list[bytes] = []
        first = self.recv()
        if isinstance(first, ErrorFrame):
            self.close()
            raise ControllerError(f"{first.code.value}: {first.message}")
        if not isinstance(first, Hello):
            self.close()
            raise ControllerError(f"expected HELLO, got {type(first).__name__}")
        self.hello = first
        self.send(Hello(version, first.n_houses, first.latch_dt))

    def send(self, frame: Frame) -> None:
        self.sock.sendall(encode(frame))

    def _lines(self, data: bytes) -> None:
        # keep raw line bytes paired with decoded frames
        self._raw.extend(data)
        for item in self._reader.feed(data):
            nl = self._raw.find(b"\n")
            cut = len(self._raw) if nl < 0 else nl + 1
            line = bytes(self._raw[:cut])
            del self._raw[:cut]
            self._pending.append((line, item))

    def recv(self) -> Frame | None:
        """Next frame from the server, or None at end of stream."""
        while not self._pending:
            data = self.sock.recv(65536)
            if not data:
                return None
            self._lines(data)
        line, item = self._pending.pop(0)
        if isinstance(item, ProtocolError):
            raise ControllerError(f"bad frame from server: {item}")
        self.received.append(line)
        return item

    def frames(self) -> Iterator[Frame]:
        while (f := self.recv()) is not None:
            yield f

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass

    def __enter__(self) -> "ControlClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


Policy = Callable[[StateReport], list[Request]]


@dataclass
class ControllerTrace:
    requests: list[tuple[int, int, Mode]] = field(default_factory=list)  # (step, house, mode)
    verdicts: list[tuple[int, int, bool, str]] = field(default_factory=list)
    reports: list[bytes] = field(default_factory=list)  # raw STATE_REPORT lines
    errors: list[str] = field(default_factory=list)

    @property
    def rejected(self) -> int:
        return sum(1 for v in self.verdicts if not v[2])


def run_controller(client: ControlClient, policy: Policy, strict: bool = True) -> ControllerTrace:
    """Answer every STATE_REPORT with the policy's requests until the server hangs up.

    With ``strict`` an ERROR frame from the server aborts with its message.
    """
    trace = ControllerTrace()
    for frame in client.frames():
        if isinstance(frame, StateReport):
            trace.reports.append(client.received[-1])
            reqs = policy(frame)
            trace.requests.extend((frame.step, r.house_id, r.desired_mode) for r in reqs)
            client.send(SwitchRequests(frame.step, tuple(reqs)))
        elif isinstance(frame, Verdicts):
            trace.verdicts.extend((frame.step, v.house_id, v.accepted, v.reason.value)
                                  for v in frame.verdicts)
        elif isinstance(frame, ErrorFrame):
            msg = f"{frame.code.value}: {frame.message}"
            if strict:
                raise ControllerError(msg)
            trace.errors.append(msg)
        elif not isinstance(frame, StepAck):
            raise ControllerError(f"unexpected {type(frame).__name__} from server")
    return trace


def square_wave_policy(period: float, duty: float | None, latch_dt: float,
                       n_houses: int) -> Policy:
    """All-ON for the first ``duty`` percent of each period, all-OFF for the rest.

    ``duty=None`` is a silent controller (empty request frames).
    """
    if duty is not None and not 0.0 <= duty <= 100.0:
        raise ValueError("duty must lie in [0, 100]")
    if not period > 0:
        raise ValueError("period must be > 0")

    def policy(report: StateReport) -> list[Request]:
        if duty is None:
            return []
        t = report.step * latch_dt
        phase = (t % period) / period
        mode = Mode.ON if phase < duty / 100.0 else Mode.OFF
        return [Request(i, mode) for i in range(n_houses)]

    return policy


def square_wave_exerciser(period: float, duty: float | None, endpoint: tuple[str, int],
                          strict: bool = True) -> ControllerTrace:
    host, port = endpoint
    with ControlClient(host, port) as client:
        policy = square_wave_policy(period, duty, client.hello.latch_dt, client.hello.n_houses)
        return run_controller(client, policy, strict=strict)
