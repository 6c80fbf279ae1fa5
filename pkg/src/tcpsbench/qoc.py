"""Quality-of-Control: loop-time tuning, goodness statistics and the metric.

The loop wait time is tuned by an ascending grid scan: the single-run
optimum is the least grid value whose curve is good, and the statistical
optimum for a target goodness fraction g_spec is the least grid value whose
estimated goodness reaches it. Goodness at one grid point is estimated from
repeated seeded runs, growing the trial count until the 95% confidence
half-width closes under the configured bound. QoC compares the mean rise
time of the good curves against the 1.5 ms ideal; the hand-speed ceiling is
min(1, 10^QoC) m/s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol, Sequence

import numpy as np

from .core import (
    CurveMetrics,
    DEFAULT_LIMITS,
    GoodnessLimits,
    NoStepDetected,
    StepResponseCurve,
    TcpsbenchError,
    extract_metrics,
)
from .loopsim import LoopConfig, StepExperimentRecord, run_step_experiment

T_R_IDEAL_MS = 1.5  # rise time of the ideal system's tuned curve; fixed, never re-measured
_Z95 = 1.96


class NoGoodDelta(TcpsbenchError):
    """The loop-time grid was exhausted without meeting the target."""


class NonPositiveRiseTime(TcpsbenchError):
    pass


class Runner(Protocol):
    limits: GoodnessLimits

    def run(self, delta_ms: float, seed: int) -> StepExperimentRecord: ...


@dataclass
class StepRunner:
    """Binds a loop configuration to a per-trial channel factory so searches
    can re-run the experiment at any loop time with independent seeds."""

    cfg: LoopConfig
    channel_factory: Callable[[int], object]
    limits: GoodnessLimits = DEFAULT_LIMITS

    def run(self, delta_ms: float, seed: int) -> StepExperimentRecord:
        cfg = replace(self.cfg, delta_ms=delta_ms, seed=seed)
        return run_step_experiment(cfg, self.channel_factory(seed))

    def metrics(self, delta_ms: float, seed: int) -> CurveMetrics:
        return extract_metrics(self.run(delta_ms, seed).curve, self.limits)


@dataclass(frozen=True)
class SearchConfig:
    """Grid and stopping parameters for the loop-time searches."""

    delta_min_ms: float = 0.1
    delta_max_ms: float = 5.0
    delta_step_ms: float = 0.1
    deltas: tuple[float, ...] | None = None
    ci_halfwidth: float = 0.05
    m_max: int = 2000
    m_batch: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.deltas is None:
            if self.delta_min_ms <= 0.0 or self.delta_step_ms <= 0.0:
                raise ValueError("grid must be positive")
            if self.delta_max_ms < self.delta_min_ms:
                raise ValueError("delta_max_ms below delta_min_ms")
        elif any(d <= 0.0 for d in self.deltas):
            raise ValueError("explicit grid must be positive")
        if not 0.0 < self.ci_halfwidth < 0.5:
            raise ValueError("ci_halfwidth must lie in (0, 0.5)")
        if self.m_batch < 1 or self.m_max < self.m_batch:
            raise ValueError("need 1 <= m_batch <= m_max")

    def grid(self) -> list[float]:
        if self.deltas is not None:
            return sorted(self.deltas)
        out = []
        i = 0
        while True:
            d = self.delta_min_ms + i * self.delta_step_ms
            if d > self.delta_max_ms + 1e-12:
                break
            out.append(d)
            i += 1
        return out

    def trial_seed(self, trial: int) -> int:
        return self.seed + 1_000_003 * (trial + 1)


def ci_halfwidth(g: float, m: int) -> float:
    """95% normal-approximation confidence half-width of a fraction."""
    if m <= 0:
        return float("inf")
    return _Z95 * math.sqrt(g * (1.0 - g) / m)


@dataclass
class GoodnessEstimate:
    """Outcome of repeated runs at one loop time."""

    delta_ms: float
    g: float
    m: int
    ci: float
    m_cap_exceeded: bool
    good_rise_times: list[float] = field(default_factory=list)

    @property
    def t_r_mean_ms(self) -> float | None:
        if not self.good_rise_times:
            return None
        return float(np.mean(self.good_rise_times))


def _run_trial(runner: Runner, delta_ms: float, seed: int) -> CurveMetrics | None:
    record = runner.run(delta_ms, seed)
    try:
        return extract_metrics(record.curve, runner.limits)
    except (NoStepDetected, TcpsbenchError):
        return None


def estimate_goodness(runner: Runner, delta_ms: float, search: SearchConfig) -> GoodnessEstimate:
    """Estimate the fraction of good curves at one loop time.

    Runs seed-indexed trials in batches until the 95% CI half-width of the
    fraction is within search.ci_halfwidth, or m_max is reached (reported
    via m_cap_exceeded, not fatal). Trial seeds depend only on the trial
    index, so estimates at different loop times share seeds.
    """
    if delta_ms <= 0.0:
        raise ValueError("delta_ms must be positive")
    good = 0
    m = 0
    rise_times: list[float] = []
    capped = False
    while True:
        batch = min(search.m_batch, search.m_max - m)
        for i in range(batch):
            metrics = _run_trial(runner, delta_ms, search.trial_seed(m + i))
            if metrics is not None and metrics.is_good and metrics.t_r is not None:
                good += 1
                rise_times.append(metrics.t_r)
        m += batch
        g = good / m
        ci = ci_halfwidth(g, m)
        if ci <= search.ci_halfwidth:
            break
        if m >= search.m_max:
            capped = True
            break
    return GoodnessEstimate(delta_ms=delta_ms, g=g, m=m, ci=ci,
                            m_cap_exceeded=capped, good_rise_times=rise_times)


def _rejectable(runner: Runner, delta_ms: float, search: SearchConfig, g_spec: float,
                probe_trials: int = 8) -> bool:
    """Cheap scan filter: after a few shared-seed trials, is the upper 95%
    confidence bound on goodness already below g_spec? Used only to skip
    hopeless grid points; accepted points always get the full estimate."""
    good = 0
    for i in range(probe_trials):
        metrics = _run_trial(runner, delta_ms, search.trial_seed(i))
        if metrics is not None and metrics.is_good:
            good += 1
        remaining = probe_trials - (i + 1)
        best_g = (good + remaining) / probe_trials
        if best_g + ci_halfwidth(best_g, probe_trials) < g_spec:
            return True
    g = good / probe_trials
    return g + ci_halfwidth(g, probe_trials) < g_spec


def find_delta_opt(runner: Runner, search: SearchConfig) -> float:
    """Least grid loop time whose single-run curve is good (deterministic
    channels); scans ascending."""
    for delta in search.grid():
        metrics = _run_trial(runner, delta, search.trial_seed(0))
        if metrics is not None and metrics.is_good:
            return delta
    raise NoGoodDelta("no grid loop time produced a good curve")


@dataclass(frozen=True)
class QoCResult:
    """Tuned loop time and the metric values it earned for one target."""

    g_spec: float
    delta_opt_bar_ms: float
    g_achieved: float
    g_ci_halfwidth: float
    m: int
    t_r_mean_ms: float
    qoc: float
    v_max_mps: float
    m_cap_exceeded: bool = False

    def summary(self) -> str:
        lines = [
            f"g_spec: {self.g_spec}",
            f"delta_opt_bar_ms: {self.delta_opt_bar_ms}",
            f"g_achieved: {self.g_achieved} (ci +/- {self.g_ci_halfwidth:.4f}, m={self.m})",
            f"t_r_mean_ms: {self.t_r_mean_ms}",
            f"qoc: {self.qoc}",
            f"v_max_mps: {self.v_max_mps}",
        ]
        if self.m_cap_exceeded:
            lines.append("m_cap_exceeded: true")
        return "\n".join(lines)


def qoc_value(t_r_ms: float) -> float:
    """log10 of the ideal rise time over the measured one; 0 for the ideal
    system, negative for slower ones."""
    if t_r_ms <= 0.0:
        raise NonPositiveRiseTime(f"t_r = {t_r_ms}")
    return math.log10(T_R_IDEAL_MS / t_r_ms)


def v_max(qoc: float) -> float:
    """Hand-speed ceiling in m/s: min(1, 10^qoc)."""
    return min(1.0, 10.0 ** qoc)


class _DeltaStatsCache:
    """Per-search memo of goodness estimates so performance curves reuse one
    batch of trials per loop time across all targets."""

    def __init__(self, runner: Runner, search: SearchConfig) -> None:
        self.runner = runner
        self.search = search
        self._estimates: dict[float, GoodnessEstimate] = {}
        self._rejected: dict[tuple[float, float], bool] = {}

    def estimate(self, delta_ms: float) -> GoodnessEstimate:
        est = self._estimates.get(delta_ms)
        if est is None:
            est = estimate_goodness(self.runner, delta_ms, self.search)
            self._estimates[delta_ms] = est
        return est

    def rejectable(self, delta_ms: float, g_spec: float) -> bool:
        if delta_ms in self._estimates:
            return False
        key = (delta_ms, g_spec)
        if key not in self._rejected:
            self._rejected[key] = _rejectable(self.runner, delta_ms, self.search, g_spec)
        return self._rejected[key]


def _result_from_estimate(g_spec: float, est: GoodnessEstimate) -> QoCResult:
    t_r_mean = est.t_r_mean_ms
    if t_r_mean is None:
        raise NoGoodDelta("estimate holds no good curves")
    q = qoc_value(t_r_mean)
    return QoCResult(
        g_spec=g_spec,
        delta_opt_bar_ms=est.delta_ms,
        g_achieved=est.g,
        g_ci_halfwidth=est.ci,
        m=est.m,
        t_r_mean_ms=t_r_mean,
        qoc=q,
        v_max_mps=v_max(q),
        m_cap_exceeded=est.m_cap_exceeded,
    )


def find_delta_opt_bar(runner: Runner, g_spec: float, search: SearchConfig,
                       _cache: _DeltaStatsCache | None = None) -> QoCResult:
    """Least grid loop time whose goodness estimate reaches g_spec, with the
    QoC computed over that grid point's good curves."""
    if not 0.0 < g_spec <= 1.0:
        raise ValueError("g_spec must lie in (0, 1]")
    cache = _cache or _DeltaStatsCache(runner, search)
    for delta in search.grid():
        if cache.rejectable(delta, g_spec):
            continue
        est = cache.estimate(delta)
        if est.g >= g_spec and est.good_rise_times:
            return _result_from_estimate(g_spec, est)
    raise NoGoodDelta(f"no grid loop time reaches goodness {g_spec}")


@dataclass
class PerfCurve:
    """QoC as a function of the goodness target; non-increasing by
    construction (the scan can only move right as the target grows)."""

    points: list[QoCResult]
    missing: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        specs = [p.g_spec for p in self.points]
        if any(b <= a for a, b in zip(specs, specs[1:])):
            raise ValueError("g_spec values must be strictly increasing")
        qocs = [p.qoc for p in self.points]
        if any(b > a + 1e-9 for a, b in zip(qocs, qocs[1:])):
            raise AssertionError("performance curve must be non-increasing")

    def as_rows(self) -> list[tuple[float, float, float, float, float]]:
        return [(p.g_spec, p.delta_opt_bar_ms, p.t_r_mean_ms, p.qoc, p.v_max_mps)
                for p in self.points]


def perf_curve(runner: Runner, g_specs: Sequence[float], search: SearchConfig) -> PerfCurve:
    """One tuned QoC per target, ascending; grid points and their trial
    batches are shared across targets. Targets the grid cannot satisfy are
    recorded as missing rather than failing the whole curve."""
    specs = list(g_specs)
    if any(b <= a for a, b in zip(specs, specs[1:])):
        raise ValueError("g_spec list must be strictly increasing")
    cache = _DeltaStatsCache(runner, search)
    grid = search.grid()
    points: list[QoCResult] = []
    missing: list[float] = []
    start_idx = 0
    for g_spec in specs:
        found = None
        idx = start_idx
        while idx < len(grid):
            delta = grid[idx]
            if not cache.rejectable(delta, g_spec):
                est = cache.estimate(delta)
                if est.g >= g_spec and est.good_rise_times:
                    found = est
                    break
            idx += 1
        if found is None:
            missing.append(g_spec)
        else:
            start_idx = idx  # a later target can never accept an earlier grid point
            points.append(_result_from_estimate(g_spec, found))
    return PerfCurve(points=points, missing=missing)


def iae(curve: StepResponseCurve, t0: float) -> float:
    """Integral of absolute tracking error from the step onset to the end of
    the record (units * ms). The trapezoid includes the last sample before
    the onset, reconstructing the error ramp across the discontinuity."""
    t = curve.times()
    if len(t) < 2:
        raise NoStepDetected("curve too short to integrate")
    err = np.abs(curve.config.p_ref - curve.signals())
    start = int(np.searchsorted(t, t0))
    start = max(0, start - 1)
    if start >= len(t) - 1:
        return 0.0
    return float(np.trapezoid(err[start:], t[start:]))


def quad_cost(curve: StepResponseCurve, operator_trace: Sequence[tuple[float, float, float]],
              r_weight: float, q_weight: float, t0: float | None = None) -> float:
    """Quadratic cost J = 1/2 * (R * integral(u^2) + Q * integral(s^2)) with
    u the per-loop command increment and s the tracking error, both from the
    step onset onward (detected from the curve bands when t0 is omitted)."""
    if t0 is None:
        t0 = extract_metrics(curve).t0
    t = curve.times()
    err = curve.config.p_ref - curve.signals()
    start = max(0, int(np.searchsorted(t, t0)) - 1)
    s_term = float(np.trapezoid(err[start:] ** 2, t[start:])) if start < len(t) - 1 else 0.0

    ts = np.array([p[0] for p in operator_trace], dtype=float)
    ys = np.array([p[2] for p in operator_trace], dtype=float)
    u_term = 0.0
    if len(ts) >= 2:
        u = np.diff(ys)
        tu = ts[1:]
        mask = tu >= t0
        if int(np.count_nonzero(mask)) >= 2:
            u_term = float(np.trapezoid(u[mask] ** 2, tu[mask]))
    return 0.5 * (r_weight * u_term + q_weight * s_term)


def result_rows_csv(results: Sequence[QoCResult]) -> str:
    """CSV rendering shared by the summary artifacts."""
    lines = ["g_spec,delta_opt_ms,t_r_ms,qoc,v_max"]
    for p in results:
        lines.append(f"{p.g_spec!r},{p.delta_opt_bar_ms!r},{p.t_r_mean_ms!r},{p.qoc!r},{p.v_max_mps!r}")
    return "\n".join(lines) + "\n"
