"""TCP control server: the simulator is the clock master, controllers attach.

Per latch step the stepping thread publishes a STATE_REPORT, collects switch
requests (waiting for them in LOCKSTEP, draining whatever arrived in
FREE_RUN), adjudicates them in arrival order, answers with VERDICTS, advances
the fleet and sends STEP_ACK.  Socket reads happen on a per-connection
thread that only decodes and enqueues; every fleet mutation and every write
on an attached connection happens on the stepping thread.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .etp import Mode
from .fleet import Fleet
from .protocol import (
    DEFAULT_HOST,
    DEFAULT_PORT,
    PROTOCOL_VERSION,
    ErrorCode,
    ErrorFrame,
    FrameReader,
    Hello,
    HouseReport,
    OrderingError,
    ProtocolError,
    StateReport,
    StepAck,
    StepOrder,
    SwitchRequests,
    VerdictEntry,
    Verdicts,
    encode,
)

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 10.0
HANDSHAKE_TIMEOUT = 10.0


class RunMode(str, Enum):
    LOCKSTEP = "LOCKSTEP"
    FREE_RUN = "FREE_RUN"


def state_report(fleet: Fleet, step: int) -> StateReport:
    houses = []
    for h in fleet.houses:
        s = h.state(fleet.clock)
        houses.append(HouseReport(h.house_id, float(h.t_therm()), s.t_a, s.t_w, s.mode,
                                  s.time_in_mode, s.time_since_off, float(h.real_power())))
    return StateReport(step, tuple(houses), fleet.aggregate_power())


@dataclass
class ServeResult:
    steps: int = 0
    requests: int = 0
    verdicts: int = 0
    timeouts: int = 0
    reports: list[bytes] = field(default_factory=list)  # every STATE_REPORT line, in order
    error: BaseException | None = None


class _Conn:
    def __init__(self, sock: socket.socket, cid: int) -> None:
        self.sock = sock
        self.cid = cid
        self.alive = True

    def send(self, data: bytes) -> None:
        if not self.alive:
            return
        try:
            self.sock.sendall(data)
        except OSError:
            self.alive = False


class ControlServer:
    """One fleet, one listening socket, at most one controller at a time."""

    def __init__(self, fleet: Fleet, mode: RunMode | str = RunMode.LOCKSTEP,
                 host: str = DEFAULT_HOST, port: int = DEFAULT_PORT, n_steps: int = 3600,
                 latch_dt: float = 1.0, timeout: float = DEFAULT_TIMEOUT, pacing: bool = False,
                 wait_for_client: bool | None = None,
                 on_step: Callable[[Fleet, int], None] | None = None) -> None:
        if n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if not latch_dt > 0 or not timeout > 0:
            raise ValueError("latch_dt and timeout must be > 0")
        self.fleet = fleet
        self.mode = RunMode(mode)
        self.n_steps = n_steps
        self.latch_dt = latch_dt
        self.timeout = timeout
        self.pacing = pacing
        self.wait_for_client = (self.mode is RunMode.LOCKSTEP) if wait_for_client is None \
            else wait_for_client
        self.on_step = on_step
        self.result = ServeResult()
        self._inbox: queue.Queue = queue.Queue()
        self._stop = threading.Event()
        self._busy = threading.Lock()  # held while a controller is attached
        self._next_cid = 0
        self._listener = socket.create_server((host, port))
        self._listener.settimeout(0.2)
        self.address: tuple[str, int] = self._listener.getsockname()[:2]
        self._threads: list[threading.Thread] = []
        self._conn: _Conn | None = None
        self._order = StepOrder()

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> "ControlServer":
        for target, name in ((self._accept_loop, "accept"), (self._run, "stepper")):
            t = threading.Thread(target=target, name=f"tcl-{name}", daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def join(self, timeout: float | None = None) -> ServeResult:
        self._threads[1].join(timeout)
        if self._threads[1].is_alive():
            raise TimeoutError("server still running")
        return self.result

    def stop(self) -> None:
        self._stop.set()

    # -- connection side ---------------------------------------------------

    def _accept_loop(self) -> None:
        try:
            while not self._stop.is_set():
                try:
                    sock, _ = self._listener.accept()
                except socket.timeout:
                    continue
                except OSError:
                    break
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                threading.Thread(target=self._handle, args=(sock,), daemon=True).start()
        finally:
            self._listener.close()

    def _handle(self, sock: socket.socket) -> None:
        if not self._busy.acquire(blocking=False):
            _refuse(sock, ErrorCode.BUSY, "another controller is already attached")
            return
        try:
            self._next_cid += 1
            conn = _Conn(sock, self._next_cid)
            reader = FrameReader()
            pending = self._handshake(conn, reader)
            if pending is None:
                return
            sock.settimeout(None)
            self._inbox.put(("open", conn))
            for item in pending:
                self._inbox.put(("frame", conn, item))
            while True:
                try:
                    data = sock.recv(65536)
                except OSError:
                    break
                if not data:
                    break
                for item in reader.feed(data):
                    self._inbox.put(("frame", conn, item))
            tail = reader.close()
            if tail is not None:
                self._inbox.put(("frame", conn, tail))
            self._inbox.put(("closed", conn))
        finally:
            self._busy.release()

    def _handshake(self, conn: _Conn, reader: FrameReader) -> list | None:
        """Exchange HELLO frames; returns frames pipelined after the client's HELLO,
        or None when the connection was refused."""
        sock = conn.sock
        conn.send(encode(Hello(PROTOCOL_VERSION, self.fleet.n_houses, self.latch_dt)))
        sock.settimeout(HANDSHAKE_TIMEOUT)
        deadline = time.monotonic() + HANDSHAKE_TIMEOUT
        while time.monotonic() < deadline:
            try:
                data = sock.recv(65536)
            except socket.timeout:
                break
            except OSError:
                data = b""
            if not data:
                sock.close()
                return None
            items = list(reader.feed(data))
            if not items:
                continue
            item, rest = items[0], items[1:]
            if isinstance(item, Hello) and item.version == PROTOCOL_VERSION:
                return rest
            if isinstance(item, Hello):
                _refuse(sock, ErrorCode.VERSION,
                        f"unsupported version {item.version!r}, server speaks "
                        f"{PROTOCOL_VERSION!r}")
            elif isinstance(item, ProtocolError):
                _refuse(sock, item.code, f"handshake failed: {item}")
            else:
                _refuse(sock, ErrorCode.MALFORMED, "expected HELLO")
            return None
        _refuse(sock, ErrorCode.MALFORMED, "handshake timed out")
        return None

    # -- stepping side -----------------------------------------------------

    def _send(self, frame) -> bytes:
        data = encode(frame)
        if self._conn is not None:
            self._conn.send(data)
        return data

    def _error(self, code: ErrorCode, message: str) -> None:
        self._send(ErrorFrame(code, message))

    def _on_message(self, msg: tuple, step: int) -> SwitchRequests | None:
        """Handle one inbox item; return a request frame accepted for ``step``."""
        kind, conn = msg[0], msg[1]
        if kind == "open":
            self._conn = conn
            self._order = StepOrder()
            log.info("controller attached")
            return None
        if conn is not self._conn:
            return None
        if kind == "closed":
            log.info("controller detached")
            conn.sock.close()
            self._conn = None
            return None
        item = msg[2]
        if isinstance(item, ProtocolError):
            self._error(item.code, str(item))
            return None
        if not isinstance(item, SwitchRequests):
            self._error(ErrorCode.MALFORMED,
                        f"unexpected {type(item).__name__} frame from controller")
            return None
        if self.mode is RunMode.LOCKSTEP and item.step != step:
            self._error(ErrorCode.ORDERING,
                        f"SWITCH_REQUESTS for step {item.step} while waiting for step {step}")
            return None
        unknown = sorted({r.house_id for r in item.requests
                          if not 0 <= r.house_id < self.fleet.n_houses})
        if unknown:
            self._error(ErrorCode.UNKNOWN_HOUSE,
                        f"SWITCH_REQUESTS step {item.step}: unknown house id(s) {unknown}")
            return None
        try:
            self._order.check(item)
        except OrderingError as exc:
            self._error(ErrorCode.ORDERING, str(exc))
            return None
        return item

    def _collect(self, step: int) -> list[SwitchRequests]:
        frames: list[SwitchRequests] = []
        if self.mode is RunMode.FREE_RUN:
            while True:
                try:
                    msg = self._inbox.get_nowait()
                except queue.Empty:
                    return frames
                got = self._on_message(msg, step)
                if got is not None:
                    frames.append(got)
        deadline = time.monotonic() + self.timeout
        while self._conn is not None and not self._stop.is_set():
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                log.warning("step %d: no SWITCH_REQUESTS within %.1f s, proceeding without",
                            step, self.timeout)
                self.result.timeouts += 1
                return frames
            try:
                msg = self._inbox.get(timeout=min(remaining, 0.2))
            except queue.Empty:
                continue
            got = self._on_message(msg, step)
            if got is not None:
                return [got]
        return frames

    def _wait_for_controller(self) -> None:
        while self._conn is None and not self._stop.is_set():
            try:
                msg = self._inbox.get(timeout=0.2)
            except queue.Empty:
                continue
            self._on_message(msg, 0)

    def _run(self) -> None:
        try:
            if self.wait_for_client:
                self._wait_for_controller()
            t0 = time.monotonic()
            for step in range(self.n_steps):
                if self._stop.is_set():
                    break
                report = self._send(state_report(self.fleet, step))
                self.result.reports.append(report)
                for frame in self._collect(step):
                    entries = []
                    for r in frame.requests:
                        v = self.fleet.request(r.house_id, Mode(r.desired_mode))
                        entries.append(VerdictEntry(r.house_id, v.accepted, v.reason))
                    self.result.requests += len(frame.requests)
                    self.result.verdicts += len(entries)
                    self._send(Verdicts(frame.step, tuple(entries)))
                self.fleet.advance(self.latch_dt)
                self.result.steps += 1
                if self.on_step is not None:
                    self.on_step(self.fleet, step)
                self._send(StepAck(step))
                if self.pacing:
                    delay = t0 + (step + 1) * self.latch_dt - time.monotonic()
                    if delay > 0:
                        self._stop.wait(delay)
        except BaseException as exc:  # surfaced through join()
            log.exception("server stepping failed")
            self.result.error = exc
        finally:
            if self._conn is not None:
                try:
                    self._conn.sock.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                self._conn.sock.close()
            self._stop.set()


def _refuse(sock: socket.socket, code: ErrorCode, message: str) -> None:
    try:
        sock.sendall(encode(ErrorFrame(code, message)))
    except OSError:
        pass
    finally:
        sock.close()


def serve(fleet: Fleet, mode: RunMode | str = RunMode.LOCKSTEP,
          endpoint: tuple[str, int] = (DEFAULT_HOST, DEFAULT_PORT), **kwargs) -> ControlServer:
    """Bind, start in the background and return the running server handle."""
    host, port = endpoint
    return ControlServer(fleet, mode, host, port, **kwargs).start()
