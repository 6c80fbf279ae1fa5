"""Cybersickness exposure: predicted and measured from hand trajectories.

Exposure E is the percentage of operation time the error between the
operator's hand and the fed-back robot position stays within 1 mm. Given a
hand-speed ceiling, E can be predicted straight from the trajectory's
velocity histogram; replaying the same trajectory through a channel (with
an optional robot actuation lag) measures it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from random import Random
from typing import Sequence

import numpy as np

from .clock import EventScheduler, PRIO_CONTROL
from .core import TcpsbenchError
from .loopsim import robot_lag
from .qoc import QoCResult
from .transport import BACKWARD, FORWARD, KIND_HAPTIC, KIND_KINEMATIC, Packet

ERROR_LIMIT_MM = 1.0
HIST_BIN_MM = 0.1


class TooShort(TcpsbenchError):
    pass


@dataclass
class HandTrajectory:
    """1-D hand positions (mm) sampled at a fixed rate."""

    fs_hz: float
    positions: np.ndarray
    source: str = "synthetic"

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=float)
        if self.fs_hz <= 0.0:
            raise ValueError("sampling frequency must be positive")
        if len(self.positions) < 2:
            raise TooShort("trajectory needs at least 2 samples")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be finite")

    def velocities_mps(self) -> np.ndarray:
        """Per-step speeds in m/s (mm * Hz / 1000)."""
        return np.diff(self.positions) * self.fs_hz / 1000.0

    def below_fraction(self, v_max_mps: float) -> float:
        v = np.abs(self.velocities_mps())
        return float(np.count_nonzero(v < v_max_mps)) / len(v)

    def duration_s(self) -> float:
        return (len(self.positions) - 1) / self.fs_hz

    def position_at(self, t_ms: float) -> float:
        """Linear interpolation of the hand position at an arbitrary time."""
        idx = t_ms / 1000.0 * self.fs_hz
        return float(np.interp(idx, np.arange(len(self.positions)), self.positions))


def predict_E(traj: HandTrajectory, v_max_mps: float) -> float:
    """Share of trajectory steps whose speed stays under the ceiling, in
    percent. Exact by construction on synthetic trajectories."""
    v = np.abs(traj.velocities_mps())
    if len(v) < 1:
        raise TooShort("trajectory holds no velocity steps")
    # integer count over integer total keeps constructed fractions exact
    return (100.0 * int(np.count_nonzero(v < v_max_mps))) / len(v)


@dataclass
class SicknessReport:
    v_max_mps: float
    predicted_e_pct: float | None
    measured_e_pct: float
    error_histogram: list[tuple[float, float]]  # (bin left edge mm, % of samples)
    n_samples: int = 0

    def summary(self) -> str:
        lines = [
            f"v_max_mps: {self.v_max_mps}",
            f"predicted_E_pct: {self.predicted_e_pct}",
            f"measured_E_pct: {self.measured_e_pct}",
            f"n_samples: {self.n_samples}",
        ]
        return "\n".join(lines)


def _histogram(errors: np.ndarray) -> list[tuple[float, float]]:
    """0.1 mm bins covering the observed error range; masses in percent
    summing to 100."""
    if len(errors) == 0:
        return []
    lo = math.floor(float(np.min(errors)) / HIST_BIN_MM) * HIST_BIN_MM
    hi = math.ceil(float(np.max(errors)) / HIST_BIN_MM) * HIST_BIN_MM
    n_bins = max(1, round((hi - lo) / HIST_BIN_MM))
    edges = lo + np.arange(n_bins + 1) * HIST_BIN_MM
    counts, _ = np.histogram(errors, bins=edges)
    pct = counts / len(errors) * 100.0
    return [(float(edges[i]), float(pct[i])) for i in range(n_bins)]


def measure_E(traj: HandTrajectory, channel, fs_hz: float | None = None,
              robot_tau_ms: float = 0.0, v_max_mps: float = 0.0,
              packet_size_b: int = 32) -> SicknessReport:
    """Replay the trajectory as position commands through a channel and
    measure E from the errors observed at every feedback arrival.

    The robot echoes its (optionally lagged) position for each fresh
    command; on arrival the error is the fed-back position minus the hand's
    interpolated position at that instant.
    """
    fs = traj.fs_hz if fs_hz is None else fs_hz
    period_ms = 1000.0 / fs
    sched = EventScheduler()
    channel.bind(sched)

    robot_pos = float(traj.positions[0])
    robot_last_t = 0.0
    robot_newest = -1
    errors: list[float] = []
    fb_newest = -1

    def on_feedback(pkt: Packet) -> None:
        nonlocal fb_newest
        if pkt.seq <= fb_newest:
            return
        fb_newest = pkt.seq
        hand_now = traj.position_at(sched.now)
        errors.append(pkt.value - hand_now)

    def on_command(pkt: Packet) -> None:
        nonlocal robot_pos, robot_last_t, robot_newest
        if pkt.seq <= robot_newest:
            return
        robot_newest = pkt.seq
        now = sched.now
        if robot_tau_ms > 0.0:
            robot_pos = robot_lag(pkt.value, robot_pos, now - robot_last_t, robot_tau_ms)
        else:
            robot_pos = pkt.value
        robot_last_t = now
        channel.send(BACKWARD, Packet(kind=KIND_HAPTIC, seq=pkt.seq, epoch=pkt.epoch,
                                      x=0.0, value=robot_pos), packet_size_b, on_feedback)

    n = len(traj.positions)
    sent = [0]

    def send_next() -> None:
        k = sent[0]
        pkt = Packet(kind=KIND_KINEMATIC, seq=k, epoch=k, x=0.0, value=float(traj.positions[k]))
        channel.send(FORWARD, pkt, packet_size_b, on_command)
        sent[0] += 1
        if sent[0] < n:
            sched.schedule(sched.now + period_ms, send_next, PRIO_CONTROL)

    sched.schedule(0.0, send_next, PRIO_CONTROL)
    sched.run(stop=lambda: sent[0] >= n)
    # stop any cross-traffic sources, then let in-flight packets land
    channel.begin_drain()
    sched.run()

    if not errors:
        raise TooShort("no feedback arrived; cannot measure exposure")
    err = np.array(errors)
    measured = (100.0 * int(np.count_nonzero(np.abs(err) <= ERROR_LIMIT_MM))) / len(err)
    predicted = predict_E(traj, v_max_mps) if v_max_mps > 0.0 else None
    return SicknessReport(
        v_max_mps=v_max_mps,
        predicted_e_pct=predicted,
        measured_e_pct=measured,
        error_histogram=_histogram(err),
        n_samples=len(err),
    )


@dataclass(frozen=True)
class SpeedDist:
    """Per-step speed draw (m/s): constant, or uniform over [lo, hi]."""

    kind: str = "constant"
    lo: float = 0.0
    hi: float = 0.0

    @staticmethod
    def constant(speed: float) -> "SpeedDist":
        return SpeedDist("constant", lo=speed, hi=speed)

    @staticmethod
    def uniform(lo: float, hi: float) -> "SpeedDist":
        return SpeedDist("uniform", lo=lo, hi=hi)

    def draw(self, rng: Random) -> float:
        if self.kind == "constant":
            return self.lo
        if self.kind == "uniform":
            return rng.uniform(self.lo, self.hi)
        raise ValueError(f"unknown speed distribution {self.kind!r}")


def synth_trajectory(fs_hz: float, duration_s: float, speed_dist: SpeedDist,
                     seed: int, range_mm: float = 250.0) -> HandTrajectory:
    """Random-walk trajectory with per-step speeds from the distribution;
    reflects at +/- range_mm to stay physical. Deterministic per seed."""
    rng = Random(seed)
    n_steps = max(1, round(duration_s * fs_hz))
    pos = [0.0]
    for _ in range(n_steps):
        speed = speed_dist.draw(rng)
        step = speed * 1000.0 / fs_hz * (1.0 if rng.random() < 0.5 else -1.0)
        nxt = pos[-1] + step
        if abs(nxt) > range_mm:
            nxt = pos[-1] - step
        pos.append(nxt)
    return HandTrajectory(fs_hz=fs_hz, positions=np.array(pos), source=f"synthetic(seed={seed})")


def compliant_trajectory(fs_hz: float, n_steps: int, v_max_mps: float, fraction: float,
                         seed: int, n_blocks: int = 6, range_mm: float = 250.0,
                         slow_band: tuple[float, float] = (0.2, 0.6),
                         fast_band: tuple[float, float] = (1.8, 2.6)) -> HandTrajectory:
    """Trajectory with an exact share of steps below the speed ceiling.

    Hand motion is smooth, so both the speed class and the travel direction
    persist over contiguous blocks (direction reverses only at the range
    walls); slow-block speeds draw inside slow_band * v_max, fast blocks
    inside fast_band * v_max. The below-ceiling step count is exactly
    round(fraction * n_steps).
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    rng = Random(seed)
    n_slow = round(fraction * n_steps)
    n_fast = n_steps - n_slow

    def split(total: int, parts: int) -> list[int]:
        if total == 0:
            return []
        parts = max(1, min(parts, total))
        base, extra = divmod(total, parts)
        return [base + (1 if i < extra else 0) for i in range(parts)]

    slow_blocks = [(size, True) for size in split(n_slow, max(1, n_blocks // 2))]
    fast_blocks = [(size, False) for size in split(n_fast, max(1, n_blocks - n_blocks // 2))]
    blocks = []
    for i in range(max(len(slow_blocks), len(fast_blocks))):
        if i < len(slow_blocks):
            blocks.append(slow_blocks[i])
        if i < len(fast_blocks):
            blocks.append(fast_blocks[i])

    pos = [0.0]
    for size, is_slow in blocks:
        band = slow_band if is_slow else fast_band
        direction = 1.0 if rng.random() < 0.5 else -1.0
        for _ in range(size):
            speed = rng.uniform(band[0], band[1]) * v_max_mps
            step = speed * 1000.0 / fs_hz * direction
            nxt = pos[-1] + step
            if abs(nxt) > range_mm:
                direction = -direction
                nxt = pos[-1] - step
            pos.append(nxt)
    return HandTrajectory(fs_hz=fs_hz, positions=np.array(pos),
                          source=f"synthetic(seed={seed},fraction={fraction})")


def error_trace_vs_speed(qoc_result: QoCResult, speeds_mps: Sequence[float],
                         window_ms: float = 200.0) -> list[tuple[float, float, bool]]:
    """Peak hand/robot error while tracking constant-speed motion, per speed.

    The tuned loop behaves as a pure transport delay of t_r_mean / 1.5 (the
    calibration that makes the hand-speed ceiling exact), sampled at the
    tuned loop time; returns (speed, peak |error| mm, exceeds 1 mm).
    """
    delay_ms = qoc_result.t_r_mean_ms / 1.5
    out = []
    for v in speeds_mps:
        if v <= 0.0:
            raise ValueError("speeds must be positive")
        ts = np.arange(0.0, window_ms, qoc_result.delta_opt_bar_ms) + delay_ms
        hand = v * ts
        robot = v * (ts - delay_ms)
        peak = float(np.max(np.abs(hand - robot)))
        out.append((v, peak, peak > ERROR_LIMIT_MM))
    return out


TRAJ_HEADER_PREFIX = "# fs_hz:"


def write_trajectory_csv(traj: HandTrajectory, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"{TRAJ_HEADER_PREFIX} {traj.fs_hz!r}\n")
        w = csv.writer(fh)
        w.writerow(["t_s", "pos_mm"])
        for i, p in enumerate(traj.positions):
            w.writerow([repr(i / traj.fs_hz), repr(float(p))])


def read_trajectory_csv(path: str, fs_hz: float | None = None) -> HandTrajectory:
    """Accepts `t_s,pos_mm` or bare `pos_mm` rows; the sampling rate comes
    from the comment header unless given explicitly."""
    positions: list[float] = []
    times: list[float] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith(TRAJ_HEADER_PREFIX):
                if fs_hz is None:
                    fs_hz = float(line[len(TRAJ_HEADER_PREFIX):])
                continue
            if line.startswith("#"):
                continue
            parts = line.split(",")
            if parts[0] in ("t_s", "pos_mm"):
                continue
            if len(parts) >= 2:
                times.append(float(parts[0]))
                positions.append(float(parts[1]))
            else:
                positions.append(float(parts[0]))
    if fs_hz is None:
        if len(times) >= 2:
            fs_hz = 1.0 / (times[1] - times[0])
        else:
            raise ValueError("sampling rate not in header and not derivable")
    return HandTrajectory(fs_hz=fs_hz, positions=np.array(positions), source=path)


def histogram_csv(report: SicknessReport) -> str:
    lines = ["bin_left_mm,share_pct"]
    for edge, pct in report.error_histogram:
        lines.append(f"{edge!r},{pct!r}")
    return "\n".join(lines) + "\n"
