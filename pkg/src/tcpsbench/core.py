"""Shared domain types, step-response metric extraction and RTT budgets.

A step-response curve is the teleoperator-side log of the controlled signal
(contact pressure in the haptic setting, robot y'-coordinate in the
non-haptic one). The quality of one experiment is summarised by the timing
marks t0/t1/t2, the rise time, overshoot and steady-state error, and a
good/bad verdict against configurable limits.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

LOOP_KVL = "kvl"  # kinematic-video loop
LOOP_KHL = "khl"  # kinematic-haptic loop
LOOP_KAL = "kal"  # kinematic-audio loop

SETTING_HAPTIC = "haptic"
SETTING_NONHAPTIC = "non-haptic"

# One-way video budget (ms) plus the per-modality sync error relative to video.
_VIDEO_BUDGET_MS = 1.0
_SYNC_ERROR_MS = {"video": 0.0, "audio": 45.0, "haptic": 125.0}


class TcpsbenchError(Exception):
    """Base class for all toolkit errors."""


class MalformedCurve(TcpsbenchError):
    """Curve has fewer than two samples or a non-monotone time axis."""


class NoStepDetected(TcpsbenchError):
    """The signal never crosses the lower detection band downward."""


class UnknownModality(TcpsbenchError):
    pass


class NonPositiveInput(TcpsbenchError):
    pass


@dataclass(frozen=True)
class Sample:
    """One teleoperator-side log entry.

    t: arrival time, ms. x: operator sweep coordinate in cm (haptic) or epoch
    index (non-haptic). y: commanded coordinate carried by the packet that
    produced this entry (diagnostic). signal: controlled quantity in plant
    units.
    """

    t: float
    x: float
    y: float
    signal: float


@dataclass(frozen=True)
class GoodnessLimits:
    overshoot_max_pct: float = 20.0
    sse_max_pct: float = 10.0

    def __post_init__(self) -> None:
        for v in (self.overshoot_max_pct, self.sse_max_pct):
            if not 0.0 < v < 100.0:
                raise ValueError(f"goodness limit {v} outside (0, 100)")


DEFAULT_LIMITS = GoodnessLimits()


@dataclass
class StepResponseCurve:
    """Ordered plant log for one experiment run."""

    samples: list[Sample]
    config: "object"  # LoopConfig; kept loose to avoid an import cycle
    setting: str = SETTING_HAPTIC

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples], dtype=float)

    def signals(self) -> np.ndarray:
        return np.array([s.signal for s in self.samples], dtype=float)

    def commands(self) -> np.ndarray:
        return np.array([s.y for s in self.samples], dtype=float)


@dataclass(frozen=True)
class CurveMetrics:
    """Extracted step-response statistics.

    t1/t2/t_r are None when the curve never rises back through the bands
    (a not-good curve). Undershoot and settling time are diagnostics only
    and never gate the verdict.
    """

    t0: float
    t1: float | None
    t2: float | None
    t_r: float | None
    overshoot_pct: float
    steady_state_error_pct: float | None
    delta_y: float | None
    is_good: bool
    undershoot_pct: float = 0.0
    settling_ms: float | None = None


@dataclass(frozen=True)
class RttBudget:
    modality: str
    max_rtt_ms: float


def rtt_budget(modality: str) -> RttBudget:
    """Round-trip budget for a control loop, from the sync-error table."""
    try:
        sync = _SYNC_ERROR_MS[modality]
    except KeyError:
        raise UnknownModality(f"unknown feedback modality: {modality!r}") from None
    return RttBudget(modality=modality, max_rtt_ms=_VIDEO_BUDGET_MS + sync)


def max_rtt_kvl(hand_speed_mps: float, zoom: float = 1.0) -> float:
    """Largest kinematic-video RTT (ms) keeping the perceived hand/robot
    error below 1 mm for the given hand speed and display zoom factor."""
    if hand_speed_mps <= 0.0 or zoom <= 0.0:
        raise NonPositiveInput("hand speed and zoom must be positive")
    if zoom > 1.0:
        raise NonPositiveInput("zoom factor must be <= 1")
    return 1.0 / (hand_speed_mps * zoom)


_CRITICAL_LOOPS = {
    ("high", "high"): frozenset({LOOP_KVL, LOOP_KHL}),
    ("high", "low"): frozenset({LOOP_KVL}),
    ("medium", "high"): frozenset({LOOP_KHL}),
}


def critical_loops(hand_speed_class: str, stiffness_class: str) -> frozenset[str]:
    """Which control loops must be benchmarked for a deployment scenario.

    Falls back to the kinematic-video loop when no tabulated case applies.
    """
    return _CRITICAL_LOOPS.get((hand_speed_class, stiffness_class), frozenset({LOOP_KVL}))


def _bands(curve: StepResponseCurve) -> tuple[float, float, float, float]:
    cfg = curve.config
    p_ref = float(cfg.p_ref)
    k2 = float(cfg.k_2)
    base = p_ref / k2
    span = p_ref - base
    return p_ref, span, base + 0.1 * span, base + 0.9 * span


def _cross_up(t: np.ndarray, sig: np.ndarray, start: int, level: float) -> float | None:
    """Interpolated time of the first upward crossing of `level` at index
    > start. Returns None if the signal never reaches the level."""
    for j in range(start + 1, len(sig)):
        if sig[j] >= level and sig[j - 1] < level:
            frac = (level - sig[j - 1]) / (sig[j] - sig[j - 1])
            return float(t[j - 1] + frac * (t[j] - t[j - 1]))
    return None


def extract_metrics(curve: StepResponseCurve, limits: GoodnessLimits = DEFAULT_LIMITS) -> CurveMetrics:
    """Locate the step and measure rise time, overshoot and steady-state error.

    The injected step is a discontinuity, so t0 snaps to the first logged
    sample at or below the 10% band; the recovery crossings t1/t2 are located
    by linear interpolation between samples, which keeps the rise time
    insensitive to sampling phase. The steady-state window is the final 10%
    of the post-t2 duration.
    """
    n = len(curve.samples)
    if n < 2:
        raise MalformedCurve(f"curve needs at least 2 samples, got {n}")
    t = curve.times()
    if not np.all(np.diff(t) > 0.0):
        raise MalformedCurve("sample times must be strictly increasing")
    sig = curve.signals()
    if not np.all(np.isfinite(sig)):
        raise MalformedCurve("signal contains non-finite values")

    p_ref, span, l10, l90 = _bands(curve)

    step_idx = None
    for i in range(1, n):
        if sig[i] <= l10 < sig[i - 1]:
            step_idx = i
            break
    if step_idx is None:
        raise NoStepDetected("signal never crosses the lower band downward")
    t0 = float(t[step_idx])

    t1 = _cross_up(t, sig, step_idx, l10)
    t2 = _cross_up(t, sig, step_idx, l90)

    post = sig[step_idx:]
    peak = float(np.max(post))
    trough = float(np.min(post))
    overshoot_pct = max(0.0, peak - p_ref) / span * 100.0
    undershoot_pct = max(0.0, (p_ref / curve.config.k_2) - trough) / span * 100.0

    if t2 is None:
        return CurveMetrics(
            t0=t0, t1=t1, t2=None, t_r=None,
            overshoot_pct=overshoot_pct,
            steady_state_error_pct=None,
            delta_y=None, is_good=False,
            undershoot_pct=undershoot_pct,
        )

    t_r = t2 - t0
    t_end = float(t[-1])
    win_start = t2 + 0.9 * max(0.0, t_end - t2)
    window = sig[t >= win_start]
    sse_pct = abs(float(np.mean(window)) - p_ref) / span * 100.0

    y = curve.commands()
    delta_y = abs(float(np.interp(t2, t, y)) - float(np.interp(t0, t, y)))

    settling_ms = None
    tol = 0.02 * span
    inside = np.abs(sig - p_ref) <= tol
    for i in range(step_idx, n):
        if np.all(inside[i:]):
            settling_ms = float(t[i]) - t0
            break

    good = overshoot_pct <= limits.overshoot_max_pct and sse_pct <= limits.sse_max_pct
    return CurveMetrics(
        t0=t0, t1=t1, t2=t2, t_r=t_r,
        overshoot_pct=overshoot_pct,
        steady_state_error_pct=sse_pct,
        delta_y=delta_y, is_good=good,
        undershoot_pct=undershoot_pct,
        settling_ms=settling_ms,
    )


def classify_good(metrics: CurveMetrics, limits: GoodnessLimits = DEFAULT_LIMITS) -> bool:
    """A curve is good when it rose back (t2 defined) and both overshoot and
    steady-state error sit within the limits."""
    if metrics.t2 is None or metrics.steady_state_error_pct is None:
        return False
    return (
        metrics.overshoot_pct <= limits.overshoot_max_pct
        and metrics.steady_state_error_pct <= limits.sse_max_pct
    )


CURVE_CSV_HEADER = ["t_ms", "x", "y", "signal"]


def write_curve_csv(curve: StepResponseCurve, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_CSV_HEADER)
        for s in curve.samples:
            w.writerow([repr(s.t), repr(s.x), repr(s.y), repr(s.signal)])


def read_curve_csv(path: str, config: "object", setting: str = SETTING_HAPTIC) -> StepResponseCurve:
    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        if [h.strip() for h in header] != CURVE_CSV_HEADER:
            raise MalformedCurve(f"unexpected curve header: {header}")
        for row in r:
            if not row:
                continue
            t, x, y, sig = (float(v) for v in row)
            samples.append(Sample(t=t, x=x, y=y, signal=sig))
    return StepResponseCurve(samples=samples, config=config, setting=setting)
