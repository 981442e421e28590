"""Traffic generation engine: dummy payload, deadline pacing and the
measurement loop recording TransferMetrics.

The loop is single-threaded by contract and runs against a small
environment object (socket factory, heap accounting, monotonic clock),
so the same code drives both native sockets and the relayed facade
behind the emulated TEE boundary.
"""

from __future__ import annotations

import hashlib
import math
import random
import socket
from dataclasses import dataclass

from . import clock
from .boundary.protocol import IoctlCode
from .core import (
    Mode,
    Protocol,
    RunConfig,
    TransferMetrics,
    validate_config,
)

# Below this inter-send gap, chunks are grouped per deadline to bound
# timer pressure; the factor is recorded in the metrics.
MIN_PACING_GAP = 0.001


def fill_dummy_buffer(size: int, seed: int, *, cap: int | None = None) -> bytes:
    """Deterministic pseudo-random payload for a given (size, seed)."""
    if size < 1:
        raise ValueError("buffer size must be >= 1")
    if cap is not None and size > cap:
        raise MemoryError(f"dummy buffer of {size} B exceeds the {cap} B cap")
    return random.Random(seed).randbytes(size)


@dataclass(frozen=True)
class PaceDecision:
    wait_until: float | None    # absolute time to wait for; None when already late
    next_deadline: float


def pace(next_deadline: float, bitrate: float, chunk_size: int, *,
         now: float) -> PaceDecision:
    """Deadline-based pacing step.

    The following deadline is always the previous one plus
    chunk_size*8/bitrate: a late send proceeds immediately but does not
    shift the schedule, so lateness never compounds.
    """
    if bitrate <= 0:
        raise ValueError("bitrate must be > 0")
    interval = chunk_size * 8 / bitrate
    wait = next_deadline if now < next_deadline else None
    return PaceDecision(wait, next_deadline + interval)


def batch_factor(bitrate: float, chunk_size: int,
                 min_gap: float = MIN_PACING_GAP) -> int:
    interval = chunk_size * 8 / bitrate
    if interval >= min_gap:
        return 1
    return math.ceil(min_gap / interval)


class _DirectSocket:
    """Native socket with the same surface as the relayed facade."""

    def __init__(self, host: str, port: int, protocol: Protocol):
        self.protocol = protocol
        self._last_errno = 0
        try:
            if protocol is Protocol.TCP:
                self._sock = socket.create_connection((host, port))
            else:
                self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
                self._sock.connect((host, port))
        except OSError as exc:
            self._last_errno = exc.errno or 0
            raise

    def send(self, data) -> int:
        try:
            return self._sock.send(data)
        except OSError as exc:
            self._last_errno = exc.errno or 0
            raise

    def recv(self, max_bytes: int) -> bytes:
        try:
            return self._sock.recv(max_bytes)
        except OSError as exc:
            self._last_errno = exc.errno or 0
            raise

    def ioctl(self, code: IoctlCode, arg) -> None:
        try:
            if code == IoctlCode.SET_BUF_SIZES:
                send_size, recv_size = arg
                self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, send_size)
                self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, recv_size)
            elif code == IoctlCode.SET_PEER:
                host, port = arg
                self._sock.connect((host, port))
            else:
                raise ValueError(f"unknown ioctl code {code}")
        except OSError as exc:
            self._last_errno = exc.errno or 0
            raise

    def error(self) -> int:
        return self._last_errno

    def close(self) -> None:
        self._sock.close()


class DirectEnv:
    """Measurement environment backed by plain OS sockets, no heap cap."""

    def alloc(self, nbytes: int) -> None:
        pass

    def free(self, nbytes: int) -> None:
        pass

    def monotonic(self) -> float:
        return clock.monotonic()

    def open_socket(self, host: str, port: int, protocol: Protocol) -> _DirectSocket:
        return _DirectSocket(host, port, protocol)


def run_measurement(cfg: RunConfig, env=None) -> TransferMetrics:
    """Send dummy traffic until the configured stop condition and time it.

    Connection failures yield partial metrics with the error flag set
    rather than an exception; a pacing underrun is recorded, not fatal.
    """
    cfg = validate_config(cfg)
    if env is None:
        env = DirectEnv()

    env.alloc(cfg.chunk_size)
    payload = fill_dummy_buffer(cfg.chunk_size, cfg.rng_seed)
    view = memoryview(payload)
    digest = hashlib.sha256()

    calls = 0
    sent_bytes = 0
    time_in_transmit = 0.0
    batch = 1
    underrun = False
    error = None

    try:
        sock = env.open_socket(cfg.host, cfg.port, cfg.protocol)
    except OSError as exc:
        env.free(cfg.chunk_size)
        return TransferMetrics(
            transmit_calls=0, bytes_transferred=0, time_in_transmit=0.0,
            total_runtime=0.0, payload_sha256=digest.hexdigest(),
            error=f"connect failed: errno {exc.errno}",
        )

    try:
        sock.ioctl(IoctlCode.SET_BUF_SIZES,
                   (cfg.socket_buffer_size, cfg.socket_buffer_size))
    except OSError as exc:
        sock.close()
        env.free(cfg.chunk_size)
        return TransferMetrics(
            transmit_calls=0, bytes_transferred=0, time_in_transmit=0.0,
            total_runtime=0.0, payload_sha256=digest.hexdigest(),
            error=f"socket buffer setup failed: errno {exc.errno}",
        )

    def timed_send(piece) -> int:
        nonlocal calls, sent_bytes, time_in_transmit
        start = env.monotonic()
        n = sock.send(piece)
        time_in_transmit += env.monotonic() - start
        calls += 1
        sent_bytes += n
        digest.update(piece[:n])
        return n

    t0 = env.monotonic()
    try:
        if cfg.mode is Mode.FIXED_BYTES:
            remaining = cfg.total_bytes
            while remaining > 0:
                n = timed_send(view[:min(len(view), remaining)])
                if n == 0:
                    error = "transport accepted zero bytes"
                    break
                remaining -= n

        elif cfg.mode is Mode.FIXED_DURATION:
            while env.monotonic() - t0 < cfg.duration:
                timed_send(view)

        else:  # CONSTANT_RATE, bounded by the duration
            interval = cfg.chunk_size * 8 / cfg.bitrate
            batch = batch_factor(cfg.bitrate, cfg.chunk_size)
            group_bytes = batch * cfg.chunk_size
            groups = max(1, int(cfg.duration / (batch * interval)))
            scheduled_end = t0 + groups * batch * interval
            deadline = t0
            for _ in range(groups):
                decision = pace(deadline, cfg.bitrate, group_bytes,
                                now=env.monotonic())
                if decision.wait_until is not None:
                    clock.wait_until(decision.wait_until)
                deadline = decision.next_deadline
                for _ in range(batch):
                    timed_send(view)
            # a paced run owns the full interval of every chunk it sent
            if env.monotonic() < scheduled_end:
                clock.wait_until(scheduled_end)
            scheduled = scheduled_end - t0
            if env.monotonic() - t0 > scheduled * 1.05 + 0.002:
                underrun = True
    except OSError as exc:
        error = f"transmit failed: errno {exc.errno}"

    total_runtime = env.monotonic() - t0

    try:
        sock.close()
    except OSError:
        pass
    env.free(cfg.chunk_size)

    return TransferMetrics(
        transmit_calls=calls,
        bytes_transferred=sent_bytes,
        time_in_transmit=time_in_transmit,
        total_runtime=total_runtime,
        payload_sha256=digest.hexdigest(),
        pacing_batch=batch,
        underrun=underrun,
        error=error,
    )
