#!/usr/bin/env python3
"""Flow-matching basics: the interpolation schedule, the straight-path
velocity, and Euler integration landing exactly on its target.

Run:  python3 demos/01_flow_matching_rollout.py
"""

import numpy as np

from livepipe import (
    EngineConfig,
    LatentBlock,
    TimestepSchedule,
    flow_step,
    interpolate,
    run_sequential,
    true_velocity,
)
from livepipe.denoiser import OracleDenoiser, build_weights
from livepipe.engine import build_runtime
from livepipe.numerics import Prng

# ---------------------------------------------------------------------------
# The schedule: descending interpolation levels, constant negative step.
# ---------------------------------------------------------------------------
for steps in (1, 4, 8):
    sched = TimestepSchedule.uniform(steps)
    print(f"T={steps}: levels={[round(s, 3) for s in sched.levels]} dt={sched.dt:+.3f}")

# ---------------------------------------------------------------------------
# A noisy state at level s is a lerp between the clean frame and pure noise;
# the target velocity is their difference. One full Euler step undoes it.
# ---------------------------------------------------------------------------
clean = Prng(1, 0).gaussian(16)
noise = Prng(2, 0).gaussian(16)
s = 0.75
x_s = interpolate(clean, noise, s)
v = true_velocity(clean, noise)
recovered = x_s - np.float32(s) * v
print(f"\nlevel {s}: |x_s - clean| = {np.abs(x_s - clean).max():.3f}, "
      f"|recovered - clean| = {np.abs(recovered - clean).max():.2e}")

# ---------------------------------------------------------------------------
# The analytic oracle predicts (x - target)/s, the exact straight-path
# velocity of a perfectly trained model. Euler integration with it reaches
# the target no matter how many steps the schedule has.
# ---------------------------------------------------------------------------
print("\noracle rollouts (error of the final block vs the target):")
weights = build_weights(7)
target = LatentBlock(Prng(70, 0).normal((3, 16)), 0)
for steps in (1, 2, 4, 8):
    sched = TimestepSchedule.uniform(steps)
    oracle = OracleDenoiser(weights, sched, target)
    x = LatentBlock(Prng(3, 0).normal((3, 16)), 0)
    for j in range(steps, 0, -1):
        out = oracle.denoise_block(x, j, (), None, None, 0)
        x = flow_step(x, out.velocity, sched.dt)
    print(f"  T={steps}: max err {np.abs(x.values - target.values).max():.2e}")

# ---------------------------------------------------------------------------
# The same thing through the full engine: one block, oracle denoiser, and the
# decoded frames match the decoded target.
# ---------------------------------------------------------------------------
cfg = EngineConfig(mode="sequential", steps=4, blocks=1, denoiser_kind="oracle")
rt = build_runtime(cfg)
result = run_sequential(cfg)
frame_err = np.abs(result.frames - rt.codec.decode(rt.denoiser.target)).max()
print(f"\nengine rollout: nfe={result.nfe}, decoded-frame err vs target {frame_err:.2e}")
