"""Closed-loop step-response experiments.

The operator side is a PI controller paced by a loop wait time; the
teleoperator side is a reactive plant that injects a step change halfway
through the sweep (a pressure drop in the haptic setting, a coordinate jump
in the non-haptic one) and logs every received command with its arrival
time. Experiments run against any simulated channel on a virtual clock, or
against a real datagram endpoint pair in wall-clock time.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

from .clock import EventScheduler, PRIO_CONTROL
from .core import (
    Sample,
    SETTING_HAPTIC,
    StepResponseCurve,
    TcpsbenchError,
)
from .transport import (
    BACKWARD,
    FORWARD,
    KIND_HAPTIC,
    KIND_KINEMATIC,
    DatagramEndpoint,
    Packet,
    SocketTimeout,
)


class NegativeTau(TcpsbenchError):
    pass


class ExperimentTimeout(TcpsbenchError):
    """Real-socket run saw no feedback within its deadline."""


@dataclass(frozen=True)
class LoopConfig:
    """Controller and plant constants for one experiment.

    p_ref doubles as Y_ref in the non-haptic setting. sweep_len is X in cm
    for the haptic sweep or the total epoch count otherwise; the step fires
    at step_at (default: half the sweep). robot_tau_ms > 0 inserts a
    first-order actuation lag at the teleoperator.
    """

    k_p: float = 1.0
    k_1: float = 1.0
    k_2: float = 1.25
    p_ref: float = 100.0
    delta_ms: float = 1.0
    sweep_len: int = 100
    step_at: int | None = None
    packet_size_b: int = 32
    setting: str = SETTING_HAPTIC
    robot_tau_ms: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.delta_ms <= 0.0:
            raise ValueError("delta_ms must be positive")
        if self.k_2 <= 1.0:
            raise ValueError("k_2 must exceed 1")
        gain = self.k_p * self.k_1
        if not 0.0 < gain <= self.k_2 + 1e-12:
            raise ValueError(f"k_p*k_1 = {gain} outside (0, k_2]")
        if self.robot_tau_ms < 0.0:
            raise NegativeTau("robot_tau_ms must be >= 0")
        step = self.step_index
        if not 0 < step < self.sweep_len:
            raise ValueError("step_at must fall inside the sweep")

    @property
    def step_index(self) -> int:
        return self.sweep_len // 2 if self.step_at is None else self.step_at


@dataclass(frozen=True)
class ControllerState:
    """Operator-side state: sweep position, commanded coordinate, and the
    last feedback value (held when nothing new arrived)."""

    x: float
    y: float
    last_p: float
    cmd_seq: int = 0
    fb_seq_seen: int = -1


def initial_state(cfg: LoopConfig) -> ControllerState:
    if cfg.setting == SETTING_HAPTIC:
        # pressure builds from zero; the controller assumes on-target until told otherwise
        return ControllerState(x=0.0, y=0.0, last_p=cfg.p_ref)
    return ControllerState(x=1.0, y=cfg.p_ref, last_p=cfg.p_ref)


def pi_update(state: ControllerState, p: float, cfg: LoopConfig) -> ControllerState:
    """One controller iteration: integrate the feedback error and advance
    the sweep coordinate (epoch) by one."""
    error = cfg.p_ref - p
    return replace(state, x=state.x + 1.0, y=state.y + cfg.k_p * error, last_p=p)


def plant_haptic(x: float, y: float, cfg: LoopConfig) -> float:
    """Contact pressure for commanded coordinate y; drops by k_2 once the
    arm crosses the material boundary."""
    if x < cfg.step_index:
        return cfg.k_1 * y
    return cfg.k_1 * y / cfg.k_2


def plant_nonhaptic(n: float, y: float, cfg: LoopConfig) -> float:
    """Observed robot coordinate for epoch n; the step divisor engages once
    n reaches the step epoch."""
    if n < cfg.step_index:
        return y
    return y / cfg.k_2


def robot_lag(y_cmd: float, y_state: float, dt_ms: float, tau_ms: float) -> float:
    """First-order actuation lag; tau = 0 degenerates to pass-through."""
    if tau_ms < 0.0:
        raise NegativeTau(f"tau_ms = {tau_ms}")
    if tau_ms == 0.0:
        return y_cmd
    return y_state + (y_cmd - y_state) * (1.0 - math.exp(-dt_ms / tau_ms))


def difference_trace(kp: float, k1: float, k2_pre: float, k2_post: float,
                     p_ref: float, step_l: int, n_steps: int,
                     y0: float = 0.0) -> list[tuple[int, float, float]]:
    """Brute-force iteration of the loop difference equation
    y_{l+1} = y_l (1 - kp k1 / k2_eff) + kp p_ref with the effective divisor
    switching at step_l. Accepts arbitrary (even unstable) gains; returns
    (l, y_l, signal_l) where signal_l = k1 y_l / k2_eff."""
    out = []
    y = y0
    for l in range(n_steps):
        k2_eff = k2_pre if l < step_l else k2_post
        sig = k1 * y / k2_eff
        out.append((l, y, sig))
        y = y + kp * (p_ref - sig)
    return out


def oracle_trace(cfg: LoopConfig, n_steps: int | None = None) -> list[tuple[int, float, float]]:
    """Closed-form reference trace for zero-loss channels with RTT < delta:
    (loop index, commanded y, logged signal) per loop. Independent of the
    event-driven runner."""
    n = cfg.sweep_len if n_steps is None else n_steps
    if cfg.setting == SETTING_HAPTIC:
        return difference_trace(cfg.k_p, cfg.k_1, 1.0, cfg.k_2, cfg.p_ref,
                                cfg.step_index, n, y0=0.0)
    # epochs count from 1, so loop index l carries epoch l + 1
    return difference_trace(cfg.k_p, 1.0, 1.0, cfg.k_2, cfg.p_ref,
                            cfg.step_index - 1, n, y0=cfg.p_ref)


@dataclass
class ChannelStatsView:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    stale: int = 0


@dataclass
class StepExperimentRecord:
    """Everything one run produced: the plant-side curve, the operator's
    send trace, and per-direction packet accounting."""

    curve: StepResponseCurve
    operator_trace: list[tuple[float, float, float]]
    channel_stats: dict[str, ChannelStatsView] = field(default_factory=dict)


class _PlantSide:
    """Reactive teleoperator: computes the signal for each fresh command,
    logs it at arrival time and echoes it back."""

    def __init__(self, cfg: LoopConfig, channel, sched: EventScheduler,
                 deliver_feedback) -> None:
        self.cfg = cfg
        self.channel = channel
        self.sched = sched
        self.deliver_feedback = deliver_feedback
        self.samples: list[Sample] = []
        self.robot_y = 0.0
        self.last_t = 0.0
        self.newest_seq = -1
        self.stale = 0

    def on_command(self, pkt: Packet) -> None:
        if pkt.seq <= self.newest_seq:
            self.stale += 1
            return
        self.newest_seq = pkt.seq
        now = self.sched.now
        if self.cfg.robot_tau_ms > 0.0:
            self.robot_y = robot_lag(pkt.value, self.robot_y, now - self.last_t,
                                     self.cfg.robot_tau_ms)
        else:
            self.robot_y = pkt.value
        self.last_t = now
        if self.cfg.setting == SETTING_HAPTIC:
            sig = plant_haptic(pkt.x, self.robot_y, self.cfg)
        else:
            sig = plant_nonhaptic(pkt.epoch, self.robot_y, self.cfg)
        self.samples.append(Sample(t=now, x=pkt.x if self.cfg.setting == SETTING_HAPTIC
                                   else float(pkt.epoch), y=pkt.value, signal=sig))
        fb = Packet(kind=KIND_HAPTIC, seq=pkt.seq, epoch=pkt.epoch, x=pkt.x, value=sig)
        self.channel.send(BACKWARD, fb, self.cfg.packet_size_b, self.deliver_feedback)


def run_step_experiment(cfg: LoopConfig, channel) -> StepExperimentRecord:
    """Execute one full sweep over a simulated channel and return the record.

    Deterministic given (cfg, channel seed): the virtual clock orders all
    deliveries ahead of controller checks at equal instants, the operator
    polls non-blocking with last-value hold, and stale packets (older
    sequence than the newest seen) are discarded on both sides.
    """
    sched = EventScheduler()
    channel.bind(sched)

    state_box = [initial_state(cfg)]
    trace: list[tuple[float, float, float]] = []
    inbox: dict[str, Packet | None] = {"pkt": None}
    op_stale = 0
    done = False

    def deliver_feedback(pkt: Packet) -> None:
        nonlocal op_stale
        held = inbox["pkt"]
        newest = held.seq if held is not None else state_box[0].fb_seq_seen
        if pkt.seq <= newest:
            op_stale += 1
            return
        inbox["pkt"] = pkt

    plant = _PlantSide(cfg, channel, sched, deliver_feedback)

    def send_command() -> None:
        st = state_box[0]
        if cfg.setting == SETTING_HAPTIC:
            pkt = Packet(kind=KIND_KINEMATIC, seq=st.cmd_seq, epoch=0, x=st.x, value=st.y)
        else:
            pkt = Packet(kind=KIND_KINEMATIC, seq=st.cmd_seq, epoch=int(st.x), x=0.0, value=st.y)
        trace.append((sched.now, st.x, st.y))
        channel.send(FORWARD, pkt, cfg.packet_size_b, plant.on_command)
        state_box[0] = replace(st, cmd_seq=st.cmd_seq + 1)

    def finished(st: ControllerState) -> bool:
        if cfg.setting == SETTING_HAPTIC:
            return st.x >= cfg.sweep_len
        return st.x > cfg.sweep_len

    def check() -> None:
        nonlocal done
        st = state_box[0]
        pkt = inbox["pkt"]
        if pkt is not None and pkt.seq > st.fb_seq_seen:
            p = pkt.value
            fb_seen = pkt.seq
            inbox["pkt"] = None
        else:
            p = st.last_p
            fb_seen = st.fb_seq_seen
        st = replace(pi_update(st, p, cfg), fb_seq_seen=fb_seen)
        state_box[0] = st
        if finished(st):
            done = True
            return
        send_command()
        sched.schedule(sched.now + cfg.delta_ms, check, PRIO_CONTROL)

    send_command()
    sched.schedule(cfg.delta_ms, check, PRIO_CONTROL)
    sched.run(stop=lambda: done)
    # let in-flight packets land so the plant log covers the whole sweep
    channel.begin_drain()
    sched.run()

    curve = StepResponseCurve(samples=plant.samples, config=cfg, setting=cfg.setting)
    stats = {}
    for direction, extra_stale in ((FORWARD, plant.stale), (BACKWARD, op_stale)):
        s = channel.stats[direction]
        stats[direction] = ChannelStatsView(sent=s.sent, delivered=s.delivered,
                                            dropped=s.dropped, stale=extra_stale)
    return StepExperimentRecord(curve=curve, operator_trace=trace, channel_stats=stats)


# --- real-socket mode -------------------------------------------------------

def serve_plant(endpoint: DatagramEndpoint, cfg: LoopConfig,
                deadline_ms: float | None = 5000.0) -> StepResponseCurve:
    """Teleoperator responder over datagrams: runs until the full sweep has
    been received (or the deadline passes with no traffic) and returns its
    log. Time stamps are wall-clock milliseconds from the first receive."""
    samples: list[Sample] = []
    newest = -1
    robot_y = 0.0
    t0 = None
    last_t = 0.0
    want_last = cfg.sweep_len - 1 if cfg.setting == SETTING_HAPTIC else cfg.sweep_len
    while True:
        try:
            pkt, addr = endpoint.recv_packet(deadline_ms)
        except SocketTimeout:
            if samples:
                break
            raise ExperimentTimeout("no command packet before deadline") from None
        if pkt.kind != KIND_KINEMATIC or pkt.seq <= newest:
            continue
        newest = pkt.seq
        now = time.perf_counter() * 1000.0
        if t0 is None:
            t0 = now
        t_rel = now - t0
        if cfg.robot_tau_ms > 0.0:
            robot_y = robot_lag(pkt.value, robot_y, t_rel - last_t, cfg.robot_tau_ms)
        else:
            robot_y = pkt.value
        last_t = t_rel
        if cfg.setting == SETTING_HAPTIC:
            sweep_pos = pkt.x
            sig = plant_haptic(pkt.x, robot_y, cfg)
        else:
            sweep_pos = float(pkt.epoch)
            sig = plant_nonhaptic(pkt.epoch, robot_y, cfg)
        samples.append(Sample(t=t_rel, x=sweep_pos, y=pkt.value, signal=sig))
        endpoint.send_packet(Packet(kind=KIND_HAPTIC, seq=pkt.seq, epoch=pkt.epoch,
                                    x=pkt.x, value=sig), to=addr)
        if sweep_pos >= want_last:
            break
    return StepResponseCurve(samples=samples, config=cfg, setting=cfg.setting)


def run_socket_experiment(cfg: LoopConfig, endpoint: DatagramEndpoint,
                          deadline_ms: float = 5000.0) -> StepExperimentRecord:
    """Operator side over real datagrams: timer-paced sends, non-blocking
    receive with last-value hold. The plant-side curve lives with the remote
    responder; the returned record carries the operator trace and local
    packet accounting."""
    state = initial_state(cfg)
    trace: list[tuple[float, float, float]] = []
    sent = 0
    received = 0
    start = time.perf_counter()
    last_rx = start

    def now_ms() -> float:
        return (time.perf_counter() - start) * 1000.0

    def send(st: ControllerState) -> ControllerState:
        nonlocal sent
        if cfg.setting == SETTING_HAPTIC:
            pkt = Packet(kind=KIND_KINEMATIC, seq=st.cmd_seq, epoch=0, x=st.x, value=st.y)
        else:
            pkt = Packet(kind=KIND_KINEMATIC, seq=st.cmd_seq, epoch=int(st.x), x=0.0, value=st.y)
        trace.append((now_ms(), st.x, st.y))
        endpoint.send_packet(pkt)
        sent += 1
        return replace(st, cmd_seq=st.cmd_seq + 1)

    state = send(state)
    next_tick = time.perf_counter() + cfg.delta_ms / 1000.0
    while True:
        lag = next_tick - time.perf_counter()
        if lag > 0:
            time.sleep(lag)
        next_tick += cfg.delta_ms / 1000.0
        pkt = endpoint.poll_packet()
        if pkt is not None and pkt.seq > state.fb_seq_seen:
            received += 1
            last_rx = time.perf_counter()
            state = replace(pi_update(state, pkt.value, cfg), fb_seq_seen=pkt.seq)
        else:
            if (time.perf_counter() - last_rx) * 1000.0 > deadline_ms:
                raise ExperimentTimeout(f"no feedback for {deadline_ms} ms")
            state = pi_update(state, state.last_p, cfg)
        if cfg.setting == SETTING_HAPTIC:
            if state.x >= cfg.sweep_len:
                break
        elif state.x > cfg.sweep_len:
            break
        state = send(state)

    stats = {
        FORWARD: ChannelStatsView(sent=sent),
        BACKWARD: ChannelStatsView(delivered=received),
    }
    empty_curve = StepResponseCurve(samples=[], config=cfg, setting=cfg.setting)
    return StepExperimentRecord(curve=empty_curve, operator_trace=trace, channel_stats=stats)
