"""Datagram transports: real UDP plus a seedable lossy-link simulator.

Sending never blocks the caller's frame loop. Receives are drained with
``poll`` so the tracker applies results at frame boundaries. Both client
transports expose the same ``send(data) / poll(now_ms)`` surface; the UDP
flavor ignores the simulated clock.
"""

from __future__ import annotations

import heapq
import itertools
import queue
import socket
import threading

import numpy as np

from .errors import StartupError

__all__ = ["UdpSocket", "UdpClientTransport", "SimulatedNetwork", "SimEndpoint"]

_RECV_BUFFER = 65535


class UdpSocket:
    """Non-blocking UDP endpoint with a background receive thread.

    Incoming datagrams queue up as (bytes, sender address) pairs until the
    owner drains them with :meth:`poll`.
    """

    def __init__(self, bind: tuple[str, int] | None = None):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self._sock.bind(bind or ("127.0.0.1", 0))
        except OSError as exc:
            self._sock.close()
            raise StartupError(f"cannot bind UDP endpoint {bind}: {exc}") from exc
        self._sock.settimeout(0.1)
        self._queue: queue.Queue[tuple[bytes, tuple[str, int]]] = queue.Queue()
        self._closed = threading.Event()
        self._thread = threading.Thread(target=self._receive_loop, daemon=True)
        self._thread.start()

    @property
    def local_address(self) -> tuple[str, int]:
        return self._sock.getsockname()

    def _receive_loop(self) -> None:
        while not self._closed.is_set():
            try:
                data, addr = self._sock.recvfrom(_RECV_BUFFER)
            except socket.timeout:
                continue
            except OSError:
                break
            self._queue.put((data, addr))

    def send(self, data: bytes, addr: tuple[str, int]) -> None:
        if self._closed.is_set():
            return
        try:
            self._sock.sendto(data, addr)
        except OSError:
            pass  # fire and forget; losses are tolerated by design

    def poll(self) -> list[tuple[bytes, tuple[str, int]]]:
        out = []
        while True:
            try:
                out.append(self._queue.get_nowait())
            except queue.Empty:
                return out

    def wait_message(self, timeout: float) -> tuple[bytes, tuple[str, int]] | None:
        try:
            return self._queue.get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self) -> None:
        self._closed.set()
        self._sock.close()
        self._thread.join(timeout=1.0)


class UdpClientTransport:
    """Client-side view of a UDP link to one fixed server address."""

    def __init__(self, server: tuple[str, int], bind: tuple[str, int] | None = None):
        self._socket = UdpSocket(bind)
        self._server = server

    def send(self, data: bytes, now_ms: float | None = None) -> None:
        self._socket.send(data, self._server)

    def poll(self, now_ms: float | None = None) -> list[bytes]:
        return [data for data, _ in self._socket.poll()]

    def close(self) -> None:
        self._socket.close()


class SimEndpoint:
    """One side of a simulated link; messages become visible via poll()."""

    def __init__(self, network: "SimulatedNetwork", side: str):
        self._network = network
        self._side = side

    def send(self, data: bytes, now_ms: float) -> None:
        self._network._send(self._side, data, now_ms)

    def poll(self, now_ms: float) -> list[bytes]:
        return self._network._deliver(self._side, now_ms)

    def close(self) -> None:
        pass


class SimulatedNetwork:
    """Two-endpoint lossy link with fixed delay plus uniform jitter.

    Time is whatever clock the caller passes in (the harness uses the
    simulated 30 FPS clock), so runs are deterministic under a fixed seed.
    """

    def __init__(
        self,
        drop: float = 0.0,
        delay_ms: float = 0.0,
        jitter_ms: float = 0.0,
        rng: np.random.Generator | None = None,
    ):
        if not (0.0 <= drop < 1.0):
            raise ValueError("drop probability must be in [0, 1)")
        self.drop = drop
        self.delay_ms = delay_ms
        self.jitter_ms = jitter_ms
        self._rng = rng or np.random.default_rng(0)
        self._pending: dict[str, list[tuple[float, int, bytes]]] = {"client": [], "server": []}
        self._counter = itertools.count()
        self.sent = 0
        self.dropped = 0
        self.client = SimEndpoint(self, "client")
        self.server = SimEndpoint(self, "server")

    def _send(self, from_side: str, data: bytes, now_ms: float) -> None:
        self.sent += 1
        if self._rng.random() < self.drop:
            self.dropped += 1
            return
        deliver_at = now_ms + self.delay_ms + self.jitter_ms * float(self._rng.random())
        to_side = "server" if from_side == "client" else "client"
        heapq.heappush(self._pending[to_side], (deliver_at, next(self._counter), bytes(data)))

    def _deliver(self, side: str, now_ms: float) -> list[bytes]:
        out = []
        pending = self._pending[side]
        while pending and pending[0][0] <= now_ms:
            out.append(heapq.heappop(pending)[2])
        return out
