"""Tune the loop wait time and grade a channel with QoC and V_max.

The tuned loop time is the least grid value whose goodness (fraction of good
curves over repeated seeded runs) reaches the target; QoC compares the mean
rise time of those good curves against the 1.5 ms ideal, and V_max caps the
operator hand speed at min(1, 10^QoC) m/s.
"""

from tcpsbench import (
    ChannelModel,
    Jitter,
    LinkParams,
    LoopConfig,
    SearchConfig,
    StepRunner,
    find_delta_opt,
    find_delta_opt_bar,
    perf_curve,
)

# a desk-scale stand-in for a software testbed: sub-millisecond base latency
# with a heavy jitter tail
link = LinkParams(latency_ms=0.45, jitter=Jitter.truncnorm(0.1, 0.3))
model = ChannelModel(forward=link, backward=link)
runner = StepRunner(cfg=LoopConfig(), channel_factory=model.build)
search = SearchConfig(delta_min_ms=0.5, delta_max_ms=4.0, delta_step_ms=0.1, seed=7)

# single-run optimum (deterministic channels would stop here)
one_shot = find_delta_opt(runner, search)
print(f"single-run optimum loop time: {one_shot:.1f} ms")

# statistical optimum for a 90% goodness target
result = find_delta_opt_bar(runner, g_spec=0.9, search=search)
print(f"tuned loop time for 90% goodness: {result.delta_opt_bar_ms:.1f} ms "
      f"(goodness {result.g_achieved:.3f} over {result.m} runs)")
print(f"mean rise time of good curves: {result.t_r_mean_ms:.3f} ms")
print(f"QoC = {result.qoc:.3f}   V_max = {result.v_max_mps:.3f} m/s")

# the performance curve publishes QoC across goodness targets; it can only
# fall as the target climbs
curve = perf_curve(runner, [0.5, 0.7, 0.9, 0.99], search)
print("\n g_spec   delta(ms)   t_r(ms)    QoC     V_max")
for p in curve.points:
    print(f"  {p.g_spec:4.2f}    {p.delta_opt_bar_ms:6.2f}    {p.t_r_mean_ms:7.3f}"
          f"  {p.qoc:7.3f}   {p.v_max_mps:.3f}")
