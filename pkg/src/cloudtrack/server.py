"""Recognition server: one UDP endpoint, one three-stage session per client.

Each client address gets a receive -> process -> send pipeline running on its
own threads, communicating through latest-wins slots: a newer request from
the same client replaces an older one that has not started processing yet.
Malformed datagrams are counted and dropped; nothing a client sends can take
the server down. Idle sessions expire after a configurable timeout.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field

from .errors import MalformedMessage
from .protocol import ResultMessage, decode_request, encode_result
from .recognizer import ObjectIdAssigner, RecognizerConfig, recognize_frame
from .refindex import ReferenceIndex
from .transport import UdpSocket

__all__ = ["ServerConfig", "RecognitionServer", "serve", "LatestSlot"]

log = logging.getLogger("cloudtrack.server")


class LatestSlot:
    """Single-entry handoff where a new put replaces the unconsumed value."""

    def __init__(self) -> None:
        self._value = None
        self._cond = threading.Condition()
        self.replaced = 0

    def put(self, value) -> None:
        with self._cond:
            if self._value is not None:
                self.replaced += 1
            self._value = value
            self._cond.notify()

    def take(self, timeout: float):
        with self._cond:
            if self._value is None:
                self._cond.wait(timeout)
            value, self._value = self._value, None
            return value


@dataclass(frozen=True)
class ServerConfig:
    recognizer: RecognizerConfig = field(default_factory=RecognizerConfig)
    session_timeout_s: float = 30.0
    log_requests: bool = True


@dataclass
class SessionStats:
    received: int = 0
    malformed: int = 0
    processed: int = 0
    sent: int = 0
    preempted: int = 0


class _ClientSession:
    """Three pipeline stages for one client address."""

    def __init__(self, server: "RecognitionServer", addr: tuple[str, int]):
        self.server = server
        self.addr = addr
        self.raw: LatestSlot = LatestSlot()
        self.decoded: LatestSlot = LatestSlot()
        self.outbound: LatestSlot = LatestSlot()
        self.ids = ObjectIdAssigner()
        self.stats = SessionStats()
        self.last_active = time.monotonic()
        self._stop = threading.Event()
        name = f"{addr[0]}:{addr[1]}"
        self._threads = [
            threading.Thread(target=self._receive_stage, name=f"rx-{name}", daemon=True),
            threading.Thread(target=self._process_stage, name=f"proc-{name}", daemon=True),
            threading.Thread(target=self._send_stage, name=f"tx-{name}", daemon=True),
        ]
        for t in self._threads:
            t.start()

    def offer(self, datagram: bytes) -> None:
        self.last_active = time.monotonic()
        self.stats.received += 1
        self.raw.put(datagram)

    def _receive_stage(self) -> None:
        while not self._stop.is_set():
            datagram = self.raw.take(0.1)
            if datagram is None:
                continue
            t0 = time.perf_counter()
            try:
                request = decode_request(datagram)
            except MalformedMessage as exc:
                self.stats.malformed += 1
                log.warning("malformed datagram from %s: %s", self.addr, exc)
                continue
            parse_ms = (time.perf_counter() - t0) * 1000.0
            self.decoded.put((request, parse_ms))

    def _process_stage(self) -> None:
        while not self._stop.is_set():
            item = self.decoded.take(0.1)
            if item is None:
                continue
            request, parse_ms = item
            outcome = recognize_frame(
                self.server.index,
                request.frame,
                self.server.cfg.recognizer,
                ids=self.ids,
                cycle_id=request.cycle_id,
            )
            self.stats.processed += 1
            self.stats.preempted = self.decoded.replaced + self.raw.replaced
            if self.server.cfg.log_requests:
                stages = " ".join(f"{k}_ms={v:.1f}" for k, v in outcome.timings.items())
                log.info(
                    "request client=%s:%d cycle=%d parse_ms=%.1f %s recognized=%d",
                    self.addr[0],
                    self.addr[1],
                    request.cycle_id,
                    parse_ms,
                    stages,
                    len(outcome.recognized),
                )
            message = ResultMessage(
                cycle_id=request.cycle_id, nonce=request.nonce, objects=outcome.recognized
            )
            self.outbound.put(message)

    def _send_stage(self) -> None:
        while not self._stop.is_set():
            message = self.outbound.take(0.1)
            if message is None:
                continue
            self.server.socket.send(encode_result(message), self.addr)
            self.stats.sent += 1

    def stop(self) -> None:
        self._stop.set()
        for t in self._threads:
            t.join(timeout=1.0)


class RecognitionServer:
    """Owns the UDP endpoint and the per-client sessions."""

    def __init__(
        self,
        index: ReferenceIndex,
        bind: tuple[str, int] = ("127.0.0.1", 0),
        cfg: ServerConfig | None = None,
    ):
        self.index = index
        self.cfg = cfg or ServerConfig()
        self._bind = bind
        self.socket: UdpSocket | None = None
        self.sessions: dict[tuple[str, int], _ClientSession] = {}
        self._stop = threading.Event()
        self._dispatch_thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.socket.local_address

    def start(self) -> "RecognitionServer":
        self.socket = UdpSocket(self._bind)  # StartupError propagates
        self._stop.clear()
        self._dispatch_thread = threading.Thread(target=self._dispatch, daemon=True)
        self._dispatch_thread.start()
        log.info("serving on %s:%d with %d references", *self.address, len(self.index))
        return self

    def _dispatch(self) -> None:
        last_sweep = time.monotonic()
        while not self._stop.is_set():
            message = self.socket.wait_message(timeout=0.1)
            if message is not None:
                data, addr = message
                session = self.sessions.get(addr)
                if session is None:
                    session = _ClientSession(self, addr)
                    self.sessions[addr] = session
                    log.info("new client session %s:%d", *addr)
                session.offer(data)
            now = time.monotonic()
            if now - last_sweep > 1.0:
                last_sweep = now
                expired = [
                    addr
                    for addr, s in self.sessions.items()
                    if now - s.last_active > self.cfg.session_timeout_s
                ]
                for addr in expired:
                    self.sessions.pop(addr).stop()
                    log.info("expired idle session %s:%d", *addr)

    def stop(self) -> None:
        self._stop.set()
        if self._dispatch_thread is not None:
            self._dispatch_thread.join(timeout=1.0)
        for session in self.sessions.values():
            session.stop()
        self.sessions.clear()
        if self.socket is not None:
            self.socket.close()

    def __enter__(self) -> "RecognitionServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve(
    index: ReferenceIndex,
    bind: tuple[str, int],
    cfg: ServerConfig | None = None,
    stats_interval_s: float = 0.0,
) -> None:
    """Run a server until interrupted (the CLI entry point)."""
    server = RecognitionServer(index, bind, cfg).start()
    try:
        while True:
            time.sleep(max(stats_interval_s, 1.0))
            if stats_interval_s > 0:
                for addr, session in server.sessions.items():
                    s = session.stats
                    log.info(
                        "stats client=%s:%d received=%d processed=%d sent=%d malformed=%d preempted=%d",
                        addr[0], addr[1], s.received, s.processed, s.sent, s.malformed, s.preempted,
                    )
    except KeyboardInterrupt:
        log.info("shutting down")
    finally:
        server.stop()
