"""Rolling per-noise-level KV caches, the persistent sink slot, and the
history-corruption perturbation.

Each noise level owns an independent FIFO of block entries with capacity L;
the sink is held outside the FIFO and can never be evicted. The sink's
positional index is not stored with it -- it is recomputed every call as
``current_block + delta`` so its relative offset to the block being denoised
stays constant over arbitrarily long rollouts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .denoiser import KvEntry
from .latent import LatentBlock, ToyVideoCodec
from .numerics import F32, Prng

_CORRUPT_STREAM = 1 << 45


class SinkLockedError(RuntimeError):
    """The one-shot sink replacement was attempted twice."""


@dataclass
class RollingKvCache:
    """FIFO of per-block KV entries for a single noise level."""

    timestep_index: int
    capacity: int
    entries: list = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")

    def push(self, entry: KvEntry) -> None:
        """Append, evicting the oldest entry first when full."""
        if entry.timestep_index != self.timestep_index:
            raise ValueError(
                f"entry at timestep {entry.timestep_index} pushed into "
                f"cache for timestep {self.timestep_index}"
            )
        if self.entries and entry.block_index <= self.entries[-1].block_index:
            raise ValueError("block indices must be strictly increasing")
        if len(self.entries) == self.capacity:
            self.entries.pop(0)
        self.entries.append(entry)

    def view(self) -> tuple:
        """Immutable snapshot of the current entries, oldest first."""
        return tuple(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def cache_push(cache: RollingKvCache, entry: KvEntry) -> RollingKvCache:
    cache.push(entry)
    return cache


@dataclass
class SinkSlot:
    """The persistent sink latent plus its positional offset.

    ``locked`` flips false -> true exactly once per rollout, when the slot's
    content is swapped from the reference latent to the model's own first
    generated frame.
    """

    content: np.ndarray  # (D,) float32 latent
    rope_delta: int = 1
    locked: bool = False

    def __post_init__(self):
        if self.rope_delta < 1:
            raise ValueError("rope_delta must be >= 1")
        self.content = np.asarray(self.content, dtype=F32)


def rolling_rope_index(current_block: int, delta: int) -> int:
    """Sink position for the given block: a constant ``delta`` ahead of it."""
    if delta < 1:
        raise ValueError("delta must be >= 1")
    return current_block + delta


def aas_update(slot: SinkSlot, first_generated: LatentBlock,
               codec: ToyVideoCodec) -> SinkSlot:
    """Swap the sink to the re-encoded first decoded frame of block 0.

    One-shot: a second call is an error. Keeping the sink inside the model's
    own output distribution is the point, so the latent is taken through the
    decode/encode round trip rather than copied directly.
    """
    if slot.locked:
        raise SinkLockedError("sink already replaced once this rollout")
    if first_generated.block_index != 0:
        raise ValueError(
            f"sink replacement uses block 0, got block {first_generated.block_index}"
        )
    slot.content = codec.encode(codec.decode(first_generated)[0])
    slot.locked = True
    return slot


def receive_sink(slot: SinkSlot, content: np.ndarray) -> SinkSlot:
    """Install broadcast sink content on a worker-local slot (one-shot)."""
    if slot.locked:
        raise SinkLockedError("sink already replaced once this rollout")
    slot.content = np.asarray(content, dtype=F32)
    slot.locked = True
    return slot


def corrupt_history(cache: RollingKvCache, sigma: float, prng: Prng) -> tuple:
    """Gaussian-perturbed snapshot of the cached keys/values.

    Returns a view like ``cache.view()`` with N(0, sigma^2) noise added to
    every cached key/value matrix. The stored cache is untouched and sink
    material never passes through here. sigma = 0 returns the entries as-is.
    """
    if sigma < 0.0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0.0:
        return cache.view()
    out = []
    for entry in cache.entries:
        keys = tuple(k + prng.normal(k.shape) * F32(sigma) for k in entry.keys)
        values = tuple(v + prng.normal(v.shape) * F32(sigma) for v in entry.values)
        out.append(dataclasses.replace(entry, keys=keys, values=values))
    return tuple(out)


def corruption_prng(seed: int, block_index: int, t_index: int) -> Prng:
    """Stream addressed by (block, step) so perturbations match across
    engines regardless of execution order."""
    return Prng(seed, _CORRUPT_STREAM + block_index * 4096 + t_index)
