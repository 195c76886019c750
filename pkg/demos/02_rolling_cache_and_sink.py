#!/usr/bin/env python3
"""The cache machinery: FIFO eviction at fixed capacity, the permanent sink
slot with its rolling position, the one-shot sink swap, and history
corruption.

Run:  python3 demos/02_rolling_cache_and_sink.py
"""

import numpy as np

from livepipe import (
    RollingKvCache,
    SinkSlot,
    ToyVideoCodec,
    aas_update,
    corrupt_history,
    rolling_rope_index,
)
from livepipe.denoiser import KvEntry
from livepipe.kvcache import SinkLockedError
from livepipe.latent import LatentBlock
from livepipe.numerics import Prng


def entry(block_index, t_index=2):
    prng = Prng(0, block_index)
    return KvEntry(
        keys=(prng.normal((3, 16)),),
        values=(prng.normal((3, 16)),),
        block_index=block_index,
        timestep_index=t_index,
        rope_index=block_index,
    )


# ---------------------------------------------------------------------------
# Rolling eviction: capacity L, oldest out first. Each noise level owns its
# own cache like this one.
# ---------------------------------------------------------------------------
cache = RollingKvCache(timestep_index=2, capacity=4)
print("push blocks 0..7 into an L=4 cache:")
for i in range(8):
    cache.push(entry(i))
    held = [e.block_index for e in cache.entries]
    print(f"  after block {i}: holds {held}")

# ---------------------------------------------------------------------------
# The sink never enters the FIFO. Its position is recomputed per block as
# current_block + delta, so the relative offset the model saw in training
# survives arbitrarily long rollouts.
# ---------------------------------------------------------------------------
print("\nsink position for blocks 0, 10, 10_000 (delta=1):",
      [rolling_rope_index(b, 1) for b in (0, 10, 10_000)])

# ---------------------------------------------------------------------------
# The sink swap: after the first block is generated, the reference sink is
# replaced by the model's own first frame, taken through the decode/encode
# round trip. It is one-shot; a second swap is an error.
# ---------------------------------------------------------------------------
codec = ToyVideoCodec(seed=7, latent_dim=16, pixel_dim=32, upsample=4)
slot = SinkSlot(Prng(1, 0).gaussian(16), rope_delta=1)
block0 = LatentBlock(Prng(2, 0).normal((3, 16)), 0)
print(f"\nsink before swap: locked={slot.locked}, |content|={np.abs(slot.content).max():.3f}")
aas_update(slot, block0, codec)
roundtrip_err = np.abs(slot.content - block0.values[0]).max()
print(f"sink after swap:  locked={slot.locked}, "
      f"|content - first latent frame| = {roundtrip_err:.2e}")
try:
    aas_update(slot, block0, codec)
except SinkLockedError as exc:
    print(f"second swap rejected: {exc}")

# ---------------------------------------------------------------------------
# History corruption: a perturbed *view* of the cache (the stored entries are
# untouched, the sink never passes through).
# ---------------------------------------------------------------------------
view = corrupt_history(cache, sigma=0.1, prng=Prng(9, 0))
delta = np.abs(view[0].keys[0] - cache.entries[0].keys[0])
print(f"\ncorrupted view: mean |key delta| = {delta.mean():.4f} (sigma 0.1); "
      f"stored cache unchanged: {np.array_equal(cache.entries[0].keys[0], entry(4).keys[0])}")
