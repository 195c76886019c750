"""Per-step velocity predictors.

Three interchangeable routes live here:

  * ``ToyDenoiser`` -- a tiny block-causal transformer. Each block of F
    latent frames is F tokens; tokens attend with full visibility inside the
    block, to cached key/value entries from earlier blocks *at the same noise
    level*, and to a persistent sink token. Keys and queries carry a rotary
    position keyed by block index; cached keys are stored already rotated at
    their creation index, while the sink's keys are kept unrotated so every
    call can re-rotate them at a fresh index just ahead of the current block.

  * ``OracleDenoiser`` -- the analytic velocity (x - target)/s of a perfectly
    trained model on straight paths. Euler integration with it lands exactly
    on the target, which pins down the schedule/step wiring independent of
    any learned weights.

  * ``attention_bruteforce`` -- a replay of a whole rollout at one noise
    level that keeps *every* block's keys/values and applies the causal-block
    and sliding-window rules as explicit logit masks instead of cache
    eviction. It is a test oracle for the rolling-cache path: the weight
    projections are shared by definition (same weights), but history handling
    is written independently -- no cache, no eviction, masks only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .latent import LatentBlock, TimestepSchedule
from .numerics import F32, Prng, matmul, rope_rotate_rows, softmax

_WEIGHT_STREAM = 1 << 44

FFN_MULT = 2
TIME_FEATURES = 8


class TimestepForcingError(ValueError):
    """A cache view mixed entries from different noise levels."""


@dataclass(frozen=True)
class KvEntry:
    """Cached keys/values for one block at one noise level.

    ``keys[l]`` is (F, model_dim) already rotated at ``rope_index``;
    ``values[l]`` is unrotated. One entry per layer.
    """

    keys: tuple  # per layer, (F, model_dim) float32
    values: tuple  # per layer, (F, model_dim) float32
    block_index: int
    timestep_index: int
    rope_index: int


@dataclass(frozen=True)
class DenoiseOutput:
    velocity: np.ndarray  # (F, D) float32
    kv: KvEntry


@dataclass(frozen=True)
class BlockCond:
    """Conditioning slice for a single call: this block's audio embedding and
    the shared prompt embedding."""

    audio: np.ndarray
    prompt: np.ndarray


@dataclass(frozen=True)
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray


@dataclass(frozen=True)
class DenoiserWeights:
    layers: tuple
    w_audio: np.ndarray
    w_prompt: np.ndarray
    w_time: np.ndarray
    w_vel: np.ndarray
    n_heads: int
    head_dim: int

    @property
    def model_dim(self) -> int:
        return self.n_heads * self.head_dim


def build_weights(
    seed: int,
    n_layers: int = 2,
    n_heads: int = 2,
    head_dim: int = 8,
    audio_dim: int = 8,
    prompt_dim: int = 8,
) -> DenoiserWeights:
    """Seeded weight construction; every engine rebuilds identical weights
    from the seed alone, so no weight state ever crosses a worker boundary."""
    dm = n_heads * head_dim
    prng = Prng(seed, _WEIGHT_STREAM)

    def mat(rows, cols, gain=1.0):
        return prng.normal((rows, cols)) * F32(gain / np.sqrt(rows))

    # Residual branches are damped so the hidden stream stays near the noise
    # scale over arbitrarily long rollouts (the cache feeds block i's
    # activations into block i+1; a loop gain above 1 would compound).
    layers = tuple(
        LayerWeights(
            wq=mat(dm, dm),
            wk=mat(dm, dm),
            wv=mat(dm, dm),
            wo=mat(dm, dm, gain=0.25),
            w1=mat(dm, FFN_MULT * dm),
            w2=mat(FFN_MULT * dm, dm, gain=0.25),
        )
        for _ in range(n_layers)
    )
    return DenoiserWeights(
        layers=layers,
        w_audio=mat(audio_dim, dm),
        w_prompt=mat(prompt_dim, dm),
        w_time=mat(TIME_FEATURES, dm),
        w_vel=mat(dm, dm, gain=0.5),
        n_heads=n_heads,
        head_dim=head_dim,
    )


def time_features(s: float) -> np.ndarray:
    """Sinusoidal features of the interpolation level; injected additively."""
    j = np.arange(TIME_FEATURES // 2, dtype=np.float64)
    ang = 2.0 * np.pi * s * (2.0**j)
    return np.concatenate([np.sin(ang), np.cos(ang)]).astype(F32)


def _split_heads(x: np.ndarray, n_heads: int, head_dim: int) -> np.ndarray:
    return x.reshape(x.shape[0], n_heads, head_dim)


def _attend_head(q: np.ndarray, k: np.ndarray, v: np.ndarray, scale: np.float32,
                 mask: np.ndarray | None = None) -> np.ndarray:
    """Scaled dot-product attention for one head; mask is additive logits."""
    logits = matmul(q, k.T) * scale
    if mask is not None:
        logits = logits + mask
    return matmul(softmax(logits), v)


class ToyDenoiser:
    """Block-causal transformer over cached history plus a rolling sink token.

    The sink token's hidden state is its latent frame itself (it is an
    identity anchor, not part of the residual stream), so its keys/values are
    single projections recomputed cheaply inside every call.
    """

    def __init__(self, weights: DenoiserWeights, schedule: TimestepSchedule,
                 rope_base: float = 10000.0):
        self.weights = weights
        self.schedule = schedule
        self.rope_base = rope_base
        self._scale = F32(1.0) / F32(np.sqrt(weights.head_dim))

    # -- shared pieces -------------------------------------------------------

    def _cond_bias(self, t_index: int, cond: BlockCond) -> np.ndarray:
        w = self.weights
        audio = np.zeros(w.w_audio.shape[0], dtype=F32) if cond.audio.size == 0 else cond.audio
        s = self.schedule.level(t_index) if t_index > 0 else 0.0
        bias = matmul(audio[None, :], w.w_audio)
        bias += matmul(cond.prompt[None, :], w.w_prompt)
        bias += matmul(time_features(s)[None, :], w.w_time)
        return bias  # (1, dm), broadcasts over tokens

    def _sink_kv(self, layer: LayerWeights, sink: np.ndarray) -> tuple:
        """Unrotated sink key/value rows for one layer."""
        row = sink[None, :]
        return matmul(row, layer.wk), matmul(row, layer.wv)

    def _rope(self, rows: np.ndarray, pos: int) -> np.ndarray:
        w = self.weights
        heads = _split_heads(rows, w.n_heads, w.head_dim)
        flat = heads.reshape(-1, w.head_dim)
        rot = rope_rotate_rows(flat, pos, self.rope_base)
        return rot.reshape(rows.shape)

    # -- main entry ----------------------------------------------------------

    def denoise_block(
        self,
        x: LatentBlock,
        t_index: int,
        cache_view,
        cond: BlockCond,
        sink: np.ndarray,
        sink_rope_index: int,
        require_same_timestep: bool = True,
        max_entries: int | None = None,
    ) -> DenoiseOutput:
        """Predict per-frame velocities for ``x`` at step ``t_index``.

        ``cache_view`` is an ordered sequence of KvEntry from earlier blocks.
        All entries must share one noise level; with ``require_same_timestep``
        (the timestep-forcing rule) that level must equal ``t_index``.
        Pure: mutates nothing, returns the block's own cache entry.
        """
        w = self.weights
        entries = list(cache_view)
        seen = {e.timestep_index for e in entries}
        if len(seen) > 1:
            raise TimestepForcingError(
                f"cache view mixes timestep indices {sorted(seen)}"
            )
        if require_same_timestep and seen and seen != {t_index}:
            raise TimestepForcingError(
                f"cache holds timestep {seen.pop()} but denoising at {t_index}"
            )
        if max_entries is not None and len(entries) > max_entries:
            raise ValueError(f"cache view exceeds capacity {max_entries}")
        for prev, nxt in zip(entries, entries[1:]):
            if nxt.block_index <= prev.block_index:
                raise ValueError("cache entries out of block order")

        h = x.values + self._cond_bias(t_index, cond)
        pos = x.block_index
        out_keys, out_values = [], []
        for layer in w.layers:
            q = self._rope(matmul(h, layer.wq), pos)
            k_cur = self._rope(matmul(h, layer.wk), pos)
            v_cur = matmul(h, layer.wv)
            out_keys.append(k_cur)
            out_values.append(v_cur)

            sink_k, sink_v = self._sink_kv(layer, sink)
            li = len(out_keys) - 1
            keys = np.vstack(
                [self._rope(sink_k, sink_rope_index)]
                + [e.keys[li] for e in entries]
                + [k_cur]
            )
            values = np.vstack([sink_v] + [e.values[li] for e in entries] + [v_cur])

            qh = _split_heads(q, w.n_heads, w.head_dim)
            kh = _split_heads(keys, w.n_heads, w.head_dim)
            vh = _split_heads(values, w.n_heads, w.head_dim)
            attn = np.concatenate(
                [
                    _attend_head(qh[:, i], kh[:, i], vh[:, i], self._scale)
                    for i in range(w.n_heads)
                ],
                axis=1,
            )
            h = h + matmul(attn, layer.wo)
            h = h + matmul(np.maximum(matmul(h, layer.w1), F32(0.0)), layer.w2)

        velocity = matmul(h, w.w_vel)
        entry = KvEntry(
            keys=tuple(out_keys),
            values=tuple(out_values),
            block_index=x.block_index,
            timestep_index=t_index,
            rope_index=pos,
        )
        return DenoiseOutput(velocity=velocity, kv=entry)

    def cache_entry(self, x: LatentBlock, cache_view, cond: BlockCond,
                    sink: np.ndarray, sink_rope_index: int) -> KvEntry:
        """Extra forward pass that only harvests keys/values (the clean-cache
        baseline's +1 NFE per block); runs the full stack at level s = 0."""
        out = self.denoise_block(
            x,
            t_index=0,
            cache_view=cache_view,
            cond=cond,
            sink=sink,
            sink_rope_index=sink_rope_index,
            require_same_timestep=False,
        )
        return out.kv


class OracleDenoiser:
    """Analytic straight-path velocity (x - target)/s.

    Ignores cache, sink and conditioning, but still emits cache entries
    (plain weight projections of x) so engines exercise identical cache
    machinery whichever denoiser is configured.
    """

    def __init__(self, weights: DenoiserWeights, schedule: TimestepSchedule,
                 target: LatentBlock, rope_base: float = 10000.0):
        self.weights = weights
        self.schedule = schedule
        self.target = target
        self.rope_base = rope_base

    def _project_kv(self, x: LatentBlock, t_index: int) -> KvEntry:
        w = self.weights
        keys, values = [], []
        for layer in w.layers:
            k = matmul(x.values, layer.wk)
            heads = _split_heads(k, w.n_heads, w.head_dim).reshape(-1, w.head_dim)
            k = rope_rotate_rows(heads, x.block_index, self.rope_base).reshape(k.shape)
            keys.append(k)
            values.append(matmul(x.values, layer.wv))
        return KvEntry(
            keys=tuple(keys),
            values=tuple(values),
            block_index=x.block_index,
            timestep_index=t_index,
            rope_index=x.block_index,
        )

    def denoise_block(self, x: LatentBlock, t_index: int, cache_view, cond,
                      sink, sink_rope_index, require_same_timestep: bool = True,
                      max_entries: int | None = None) -> DenoiseOutput:
        s = self.schedule.level(t_index)
        if s == 0.0:
            raise ValueError("oracle velocity undefined at s = 0")
        velocity = (x.values - self.target.values) / F32(s)
        return DenoiseOutput(velocity=velocity, kv=self._project_kv(x, t_index))

    def oracle_velocity(self, x: LatentBlock, s: float) -> np.ndarray:
        """(x - target)/s for an explicit level; s must be positive."""
        if s <= 0.0:
            raise ValueError("oracle velocity undefined at s <= 0")
        return (x.values - self.target.values) / F32(s)

    def cache_entry(self, x: LatentBlock, cache_view, cond, sink,
                    sink_rope_index) -> KvEntry:
        return self._project_kv(x, t_index=0)


def attention_bruteforce(
    blocks,
    t_index: int,
    conds,
    sink: np.ndarray,
    sink_delta: int,
    window: int,
    weights: DenoiserWeights,
    schedule: TimestepSchedule,
    rope_base: float = 10000.0,
):
    """Reference velocities for a whole same-noise-level rollout.

    Replays ``blocks`` in order keeping every block's per-layer keys/values,
    and expresses both the block-causal rule and the width-``window`` sliding
    window as additive -inf masks over the full history instead of evicting
    anything. Written independently of the cache path on purpose; only the
    primitive kernels are shared.

    Returns one (F, D) velocity array per block.
    """
    # Shares only the per-token projection helpers (cond bias, rotation,
    # sink K/V); all history bookkeeping below is mask-based and local.
    dn = ToyDenoiser(weights, schedule, rope_base)
    scale = F32(1.0) / F32(np.sqrt(weights.head_dim))
    n_layers = len(weights.layers)
    all_keys = [[] for _ in range(n_layers)]  # per layer, per block (F, dm)
    all_values = [[] for _ in range(n_layers)]
    velocities = []

    for n, (blk, cond) in enumerate(zip(blocks, conds)):
        h = blk.values + dn._cond_bias(t_index, cond)
        frames = blk.values.shape[0]
        for li, layer in enumerate(weights.layers):
            q = dn._rope(matmul(h, layer.wq), blk.block_index)
            k_cur = dn._rope(matmul(h, layer.wk), blk.block_index)
            v_cur = matmul(h, layer.wv)
            all_keys[li].append(k_cur)
            all_values[li].append(v_cur)

            sink_k, sink_v = dn._sink_kv(layer, sink)
            sink_k = dn._rope(sink_k, blk.block_index + sink_delta)
            keys = np.vstack([sink_k] + all_keys[li])
            values = np.vstack([sink_v] + all_values[li])

            # Additive mask over [sink | block 0 | ... | block n]: the sink
            # and the current block are always visible; history only inside
            # the causal window of the last `window` blocks. When nothing is
            # masked the mask is dropped entirely so this path stays
            # bit-identical to the cache path.
            mask = np.zeros((frames, keys.shape[0]), dtype=F32)
            col = 1
            masked_any = False
            for m in range(n + 1):
                f = all_keys[li][m].shape[0]
                visible = (m == n) or (n - window <= m <= n - 1)
                if not visible:
                    mask[:, col : col + f] = -np.inf
                    masked_any = True
                col += f
            if not masked_any:
                mask = None

            qh = _split_heads(q, weights.n_heads, weights.head_dim)
            kh = _split_heads(keys, weights.n_heads, weights.head_dim)
            vh = _split_heads(values, weights.n_heads, weights.head_dim)
            attn = np.concatenate(
                [
                    _attend_head(qh[:, i], kh[:, i], vh[:, i], scale, mask)
                    for i in range(weights.n_heads)
                ],
                axis=1,
            )
            h = h + matmul(attn, layer.wo)
            h = h + matmul(np.maximum(matmul(h, layer.w1), F32(0.0)), layer.w2)
        velocities.append(matmul(h, weights.w_vel))
    return velocities
