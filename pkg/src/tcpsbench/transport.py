"""Bidirectional channel models and the datagram wire codec.

Simulated channels deliver payload objects through the virtual clock with
configurable latency, jitter, drop probability and serialization rate; they
carry full-precision floats and use the configured packet size only for
serialization delay. The byte codec (fixed little-endian header, random
padding to a configured size, trailing CRC-32) is the wire format of the
real-datagram adapter and of anything else that needs bit-exact framing.
"""

from __future__ import annotations

import socket
import struct
import zlib
from dataclasses import dataclass
from random import Random
from typing import Callable

from .clock import EventScheduler, PRIO_DELIVERY
from .core import TcpsbenchError

FORWARD = "forward"   # operator -> teleoperator (kinematic)
BACKWARD = "backward"  # teleoperator -> operator (haptic / video)

KIND_KINEMATIC = 0
KIND_HAPTIC = 1

# kind u32, seq u32, epoch u32, x i64, value i64 (both fixed-point x1000)
_HEADER = struct.Struct("<IIIqq")
_FIELD_BYTES = _HEADER.size      # 28
MIN_PACKET_BYTES = 32            # 28-byte field block + 4-byte CRC
_SCALE = 1000.0


class PacketTooSmall(TcpsbenchError):
    pass


class TruncatedPacket(TcpsbenchError):
    pass


class ChecksumMismatch(TcpsbenchError):
    pass


class ChannelClosed(TcpsbenchError):
    pass


@dataclass(frozen=True)
class Packet:
    """Decoded wire packet. Values are quantized to 0.001 on the wire."""

    kind: int
    seq: int
    epoch: int
    x: float
    value: float


def encode(packet: Packet, size_b: int, rng: Random) -> bytes:
    """Serialize to exactly `size_b` bytes: header fields, RNG padding,
    trailing CRC-32 (polynomial 0xEDB88320) over everything before it."""
    if size_b < MIN_PACKET_BYTES:
        raise PacketTooSmall(f"packet size {size_b} below minimum {MIN_PACKET_BYTES}")
    body = _HEADER.pack(
        packet.kind,
        packet.seq & 0xFFFFFFFF,
        packet.epoch & 0xFFFFFFFF,
        round(packet.x * _SCALE),
        round(packet.value * _SCALE),
    )
    pad_len = size_b - _FIELD_BYTES - 4
    body += bytes(rng.getrandbits(8) for _ in range(pad_len))
    crc = zlib.crc32(body) & 0xFFFFFFFF
    return body + struct.pack("<I", crc)


def decode(data: bytes) -> Packet:
    """Recover the packet fields, verifying length and checksum."""
    if len(data) < MIN_PACKET_BYTES:
        raise TruncatedPacket(f"{len(data)} bytes, need at least {MIN_PACKET_BYTES}")
    body, crc_bytes = data[:-4], data[-4:]
    (crc,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ChecksumMismatch("CRC-32 verification failed")
    kind, seq, epoch, x_fp, v_fp = _HEADER.unpack_from(body)
    return Packet(kind=kind, seq=seq, epoch=epoch, x=x_fp / _SCALE, value=v_fp / _SCALE)


# --- jitter distributions -------------------------------------------------

@dataclass(frozen=True)
class Jitter:
    """Per-packet delay noise: 'none', 'uniform' on [0, a], or a
    non-negative truncated normal(mu, sigma)."""

    kind: str = "none"
    a: float = 0.0
    mu: float = 0.0
    sigma: float = 0.0

    @staticmethod
    def none() -> "Jitter":
        return Jitter("none")

    @staticmethod
    def uniform(a: float) -> "Jitter":
        return Jitter("uniform", a=a)

    @staticmethod
    def truncnorm(mu: float, sigma: float) -> "Jitter":
        return Jitter("truncnorm", mu=mu, sigma=sigma)

    def draw(self, rng: Random) -> float:
        if self.kind == "none":
            return 0.0
        if self.kind == "uniform":
            return rng.uniform(0.0, self.a)
        if self.kind == "truncnorm":
            for _ in range(64):
                v = rng.gauss(self.mu, self.sigma)
                if v >= 0.0:
                    return v
            return 0.0
        raise ValueError(f"unknown jitter kind {self.kind!r}")


@dataclass(frozen=True)
class LinkParams:
    """One direction of an impaired point-to-point link.

    bandwidth_bps = 0 means infinite (no serialization delay). drop_seq
    deterministically drops the packets with those send indices, on top of
    the random drop probability; useful for fault-injection experiments.
    """

    latency_ms: float = 0.5
    jitter: Jitter = Jitter.none()
    drop_prob: float = 0.0
    bandwidth_bps: float = 0.0
    fifo: bool = True
    drop_seq: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        if self.latency_ms < 0.0:
            raise ValueError("latency must be >= 0")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop_prob must lie in [0, 1]")


@dataclass(frozen=True)
class ChannelModel:
    """Static description of a bidirectional impaired channel."""

    forward: LinkParams = LinkParams()
    backward: LinkParams = LinkParams()

    def build(self, seed: int) -> "ImpairedChannel":
        return ImpairedChannel(self, seed)


def ideal_model(latency_each_way_ms: float = 0.5) -> ChannelModel:
    """Zero-loss, zero-jitter channel; 1 ms RTT by default."""
    p = LinkParams(latency_ms=latency_each_way_ms)
    return ChannelModel(forward=p, backward=p)


@dataclass
class DirectionStats:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0


class _LinkState:
    __slots__ = ("params", "send_count", "last_delivery")

    def __init__(self, params: LinkParams) -> None:
        self.params = params
        self.send_count = 0
        self.last_delivery = -1.0


class ImpairedChannel:
    """Parametric lossy/jittery link pair driven by the virtual clock.

    Deterministic per seed: each direction owns independent RNG streams for
    drops and jitter so that raising drop_prob with a fixed seed only adds
    drops (the drop decisions nest).
    """

    def __init__(self, model: ChannelModel, seed: int) -> None:
        self.model = model
        self._links = {
            FORWARD: _LinkState(model.forward),
            BACKWARD: _LinkState(model.backward),
        }
        # integer seed derivation only: string/tuple seeding would go through
        # the per-process randomized hash and break reproducibility
        base = int(seed) * 4
        self._drop_rng = {FORWARD: Random(base), BACKWARD: Random(base + 2)}
        self._jitter_rng = {FORWARD: Random(base + 1), BACKWARD: Random(base + 3)}
        self.stats = {FORWARD: DirectionStats(), BACKWARD: DirectionStats()}
        self._sched: EventScheduler | None = None
        self._closed = False

    def bind(self, scheduler: EventScheduler) -> None:
        self._sched = scheduler

    def close(self) -> None:
        self._closed = True

    def begin_drain(self) -> None:
        """No periodic sources to stop; present for interface symmetry."""

    def transit_time(self, direction: str, size_b: int, t_now: float) -> float | None:
        """Decide drop/delivery for one packet; returns the delivery time or
        None when dropped. Advances per-direction state."""
        link = self._links[direction]
        p = link.params
        seq = link.send_count
        link.send_count += 1
        self.stats[direction].sent += 1
        dropped = seq in p.drop_seq
        # one uniform per packet regardless of drop_prob, so drop decisions
        # nest across drop_prob settings under a shared seed
        if self._drop_rng[direction].random() < p.drop_prob:
            dropped = True
        if dropped:
            self.stats[direction].dropped += 1
            return None
        delay = p.latency_ms + p.jitter.draw(self._jitter_rng[direction])
        if p.bandwidth_bps > 0.0:
            delay += size_b * 8.0 / p.bandwidth_bps * 1000.0
        t_deliver = t_now + delay
        if p.fifo and t_deliver < link.last_delivery:
            t_deliver = link.last_delivery
        link.last_delivery = t_deliver
        return t_deliver

    def send(self, direction: str, payload: object, size_b: int,
             deliver: Callable[[object], None]) -> None:
        if self._closed:
            raise ChannelClosed("channel is closed")
        if self._sched is None:
            raise ChannelClosed("channel not bound to a scheduler")
        t = self.transit_time(direction, size_b, self._sched.now)
        if t is None:
            return
        stats = self.stats[direction]

        def _deliver() -> None:
            stats.delivered += 1
            deliver(payload)

        self._sched.schedule(t, _deliver, PRIO_DELIVERY)


# --- real-datagram adapter -------------------------------------------------

class SocketTimeout(TcpsbenchError):
    """No packet arrived within the configured deadline."""


class DatagramEndpoint:
    """Connectionless datagram endpoint speaking the wire codec.

    One packet per datagram. Safe for use by two concurrently running loops
    (one sending, one receiving): the underlying socket operations are
    atomic per datagram and the padding RNG is guarded.
    """

    def __init__(self, local: tuple[str, int], remote: tuple[str, int] | None = None,
                 packet_size_b: int = MIN_PACKET_BYTES, seed: int = 0) -> None:
        import threading

        self.packet_size_b = packet_size_b
        self._remote = remote
        self._rng = Random(seed)
        self._rng_lock = threading.Lock()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind(local)

    @property
    def local_address(self) -> tuple[str, int]:
        return self._sock.getsockname()

    def send_packet(self, packet: Packet, to: tuple[str, int] | None = None) -> None:
        dest = to or self._remote
        if dest is None:
            raise ChannelClosed("no destination address configured")
        with self._rng_lock:
            data = encode(packet, self.packet_size_b, self._rng)
        self._sock.sendto(data, dest)

    def recv_packet(self, deadline_ms: float | None) -> tuple[Packet, tuple[str, int]]:
        """Blocking receive; raises SocketTimeout after deadline_ms.
        Datagrams that fail checksum verification are counted and skipped."""
        self._sock.settimeout(None if deadline_ms is None else deadline_ms / 1000.0)
        while True:
            try:
                data, addr = self._sock.recvfrom(65535)
            except socket.timeout:
                raise SocketTimeout(f"no packet within {deadline_ms} ms") from None
            try:
                return decode(data), addr
            except (ChecksumMismatch, TruncatedPacket):
                continue

    def poll_packet(self) -> Packet | None:
        """Non-blocking receive of the freshest pending packet, if any."""
        self._sock.setblocking(False)
        newest = None
        while True:
            try:
                data, _addr = self._sock.recvfrom(65535)
            except BlockingIOError:
                break
            except OSError:
                break
            try:
                pkt = decode(data)
            except (ChecksumMismatch, TruncatedPacket):
                continue
            if newest is None or pkt.seq >= newest.seq:
                newest = pkt
        self._sock.setblocking(True)
        return newest

    def close(self) -> None:
        self._sock.close()
