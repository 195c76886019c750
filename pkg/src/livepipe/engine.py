"""Execution engines over identical math.

Four ways to run the same rollout:

  * ``run_sequential`` -- one worker does all T denoise steps per block, then
    decodes; the reference all other engines are measured against.
  * ``run_clean_kv`` -- the baseline cache design: one *noise-free* unified
    cache, refreshed by an extra forward pass on each fully denoised block
    (+1 NFE), which serializes blocks and forfeits pipelining.
  * ``run_tpp`` -- T denoise workers, each pinned to one timestep with a
    private rolling cache, plus a dedicated decode worker; blocks stream
    through the stages and only latents cross worker boundaries. Produces
    latents and frames bit-identical to ``run_sequential``.
  * ``run_simulation`` -- the virtual-clock schedule alone (see simulate.py).

The concurrent engine takes its timeline from the virtual clock too: timing
is modeled, data flow is real. That keeps every exported artifact
deterministic down to the byte.
"""

from __future__ import annotations

import os
import queue
import threading
from dataclasses import dataclass

import numpy as np

from .denoiser import (
    BlockCond,
    DenoiserWeights,
    OracleDenoiser,
    ToyDenoiser,
    build_weights,
)
from .kvcache import (
    RollingKvCache,
    SinkSlot,
    aas_update,
    corrupt_history,
    corruption_prng,
    receive_sink,
    rolling_rope_index,
)
from .latent import (
    Conditions,
    LatentBlock,
    TimestepSchedule,
    ToyVideoCodec,
    flow_step,
    synthetic_conditions,
)
from .metrics import MetricsBundle, drift_metric, metrics_from_timeline
from .numerics import Prng
from .simulate import SimResult, simulate

THREADS_ENV = "LIVE_PIPE_THREADS"
_ORACLE_TARGET_STREAM = 1 << 46

MODES = ("sequential", "clean_kv", "tpp", "simulate")
DENOISER_KINDS = ("toy", "oracle")


class EngineConfigError(ValueError):
    """Invalid engine configuration (CLI exit code 2)."""


class PipelineInvariantError(RuntimeError):
    """A runtime invariant was violated mid-run (CLI exit code 3)."""


@dataclass(frozen=True)
class EngineConfig:
    """Everything needed to reproduce a rollout from seeds alone.

    Short names from the problem domain: T = steps, L = cache capacity in
    blocks, F = frames per block, D = latent dim, P = pixel dim, r = temporal
    upsampling of the decoder, delta = sink position offset, M = blocks.
    """

    mode: str = "sequential"
    steps: int = 4
    cache_capacity: int = 4
    frames_per_block: int = 3
    latent_dim: int = 16
    pixel_dim: int = 32
    upsample: int = 4
    sink_delta: int = 1
    blocks: int = 8
    weight_seed: int = 7
    noise_seed: int = 11
    denoiser_kind: str = "toy"
    oracle_target_seed: int = 99
    history_sigma: float = 0.0
    history_mode: str = "fixed"  # fixed | scaled (by the step's level s)
    n_layers: int = 2
    n_heads: int = 2
    head_dim: int = 8
    rope_base: float = 10000.0
    audio_dim: int = 8
    prompt_dim: int = 8
    denoise_latency: float = 1.0
    decode_latency: float = 1.0
    arrival_offset: float = 0.0
    link_capacity: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise EngineConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.denoiser_kind not in DENOISER_KINDS:
            raise EngineConfigError(f"denoiser must be one of {DENOISER_KINDS}")
        for name in ("steps", "cache_capacity", "frames_per_block", "blocks",
                     "upsample", "sink_delta", "n_layers", "n_heads", "head_dim",
                     "link_capacity"):
            if getattr(self, name) < 1:
                raise EngineConfigError(f"{name} must be >= 1")
        if self.history_sigma < 0.0:
            raise EngineConfigError("history_sigma must be >= 0")
        if self.history_mode not in ("fixed", "scaled"):
            raise EngineConfigError("history_mode must be 'fixed' or 'scaled'")
        if self.latent_dim != self.n_heads * self.head_dim:
            raise EngineConfigError(
                f"latent_dim ({self.latent_dim}) must equal "
                f"n_heads*head_dim ({self.n_heads * self.head_dim})"
            )
        if self.pixel_dim < self.latent_dim:
            raise EngineConfigError("pixel_dim must be >= latent_dim")
        if self.denoise_latency <= 0.0 or self.decode_latency <= 0.0:
            raise EngineConfigError("latencies must be positive")

    @property
    def stage_latencies(self) -> list:
        return [self.denoise_latency] * self.steps + [self.decode_latency]

    @property
    def total_frames(self) -> int:
        return self.blocks * self.frames_per_block * self.upsample


@dataclass(frozen=True)
class StageMessage:
    """What crosses a stage boundary: a latent block and bookkeeping, nothing
    else -- cached keys/values stay put on their stage."""

    block: LatentBlock
    block_index: int
    producer: int
    sequence: int


@dataclass(frozen=True)
class RolloutResult:
    blocks: tuple  # final LatentBlock per block index
    frames: np.ndarray  # (M*F*r, P) decoded frames
    nfe: int
    timeline: tuple
    metrics: MetricsBundle


def count_nfe(result) -> int:
    """Denoiser forward passes performed by a finished rollout."""
    return result.nfe


@dataclass(frozen=True)
class Runtime:
    """Deterministically rebuilt per run; shared read-only by all workers."""

    schedule: TimestepSchedule
    weights: DenoiserWeights
    denoiser: object
    codec: ToyVideoCodec
    conditions: Conditions


def build_runtime(cfg: EngineConfig) -> Runtime:
    schedule = TimestepSchedule.uniform(cfg.steps)
    weights = build_weights(
        cfg.weight_seed,
        n_layers=cfg.n_layers,
        n_heads=cfg.n_heads,
        head_dim=cfg.head_dim,
        audio_dim=cfg.audio_dim,
        prompt_dim=cfg.prompt_dim,
    )
    codec = ToyVideoCodec(cfg.weight_seed, cfg.latent_dim, cfg.pixel_dim, cfg.upsample)
    conditions = synthetic_conditions(
        cfg.noise_seed, cfg.blocks, cfg.audio_dim, cfg.prompt_dim, cfg.latent_dim
    )
    if cfg.denoiser_kind == "oracle":
        target = LatentBlock(
            Prng(cfg.oracle_target_seed, _ORACLE_TARGET_STREAM).normal(
                (cfg.frames_per_block, cfg.latent_dim)
            ),
            0,
        )
        denoiser = OracleDenoiser(weights, schedule, target, cfg.rope_base)
    else:
        denoiser = ToyDenoiser(weights, schedule, cfg.rope_base)
    return Runtime(schedule, weights, denoiser, codec, conditions)


def noise_block(cfg: EngineConfig, block_index: int) -> LatentBlock:
    """Initial noise for a block, addressed by (seed, block index) so any
    worker can draw it without coordination."""
    values = Prng(cfg.noise_seed, block_index).normal(
        (cfg.frames_per_block, cfg.latent_dim)
    )
    return LatentBlock(values, block_index)


def _cond_for(rt: Runtime, i: int) -> BlockCond:
    return BlockCond(audio=rt.conditions.audio_for(i), prompt=rt.conditions.prompt)


def _cache_view(cfg: EngineConfig, rt: Runtime, cache: RollingKvCache,
                i: int, j: int):
    if cfg.history_sigma == 0.0:
        return cache.view()
    sigma = cfg.history_sigma
    if cfg.history_mode == "scaled" and j >= 1:
        sigma = sigma * rt.schedule.level(j)
    return corrupt_history(cache, sigma, corruption_prng(cfg.noise_seed, i, j))


def _finish(cfg: EngineConfig, rt: Runtime, blocks, frame_chunks, nfe: int,
            sink: SinkSlot, sim_mode: str) -> RolloutResult:
    frames = np.concatenate(frame_chunks)
    sim = simulate(
        cfg.stage_latencies,
        sim_mode,
        cfg.blocks,
        cfg.frames_per_block * cfg.upsample,
        cfg.arrival_offset,
        cfg.link_capacity,
    )
    drift = drift_metric(frames, rt.codec.decode_frame(sink.content)[0])
    metrics = metrics_from_timeline(
        sim.timeline, cfg.total_frames, cfg.arrival_offset, nfe, drift
    )
    return RolloutResult(
        blocks=tuple(blocks),
        frames=frames,
        nfe=nfe,
        timeline=sim.timeline,
        metrics=metrics,
    )


# ---------------------------------------------------------------------------
# sequential reference
# ---------------------------------------------------------------------------

def run_sequential(cfg: EngineConfig) -> RolloutResult:
    """Single-worker rollout: per block, T steps against per-timestep rolling
    caches with the sink re-positioned each block; decode; swap the sink to
    the first generated frame after block 0."""
    if cfg.mode != "sequential":
        raise EngineConfigError(f"run_sequential called with mode {cfg.mode!r}")
    rt = build_runtime(cfg)
    caches = {j: RollingKvCache(j, cfg.cache_capacity) for j in range(1, cfg.steps + 1)}
    sink = SinkSlot(rt.conditions.reference.copy(), cfg.sink_delta)
    blocks, chunks, nfe = [], [], 0

    for i in range(cfg.blocks):
        x = noise_block(cfg, i)
        for j in range(cfg.steps, 0, -1):
            out = rt.denoiser.denoise_block(
                x,
                j,
                _cache_view(cfg, rt, caches[j], i, j),
                _cond_for(rt, i),
                sink.content,
                rolling_rope_index(i, cfg.sink_delta),
                max_entries=cfg.cache_capacity,
            )
            nfe += 1
            x = flow_step(x, out.velocity, rt.schedule.dt)
            caches[j].push(out.kv)
        blocks.append(x)
        chunks.append(rt.codec.decode(x))
        if i == 0:
            aas_update(sink, x, rt.codec)
    return _finish(cfg, rt, blocks, chunks, nfe, sink, "sequential")


# ---------------------------------------------------------------------------
# clean-cache baseline
# ---------------------------------------------------------------------------

def run_clean_kv(cfg: EngineConfig) -> RolloutResult:
    """Unified noise-free cache: every step of every block attends to entries
    produced by an extra forward pass on previous blocks' final latents.
    Costs (T+1) forwards per block and strictly serializes blocks."""
    if cfg.mode != "clean_kv":
        raise EngineConfigError(f"run_clean_kv called with mode {cfg.mode!r}")
    rt = build_runtime(cfg)
    unified = RollingKvCache(0, cfg.cache_capacity)
    sink = SinkSlot(rt.conditions.reference.copy(), cfg.sink_delta)
    blocks, chunks, nfe = [], [], 0

    for i in range(cfg.blocks):
        x = noise_block(cfg, i)
        for j in range(cfg.steps, 0, -1):
            out = rt.denoiser.denoise_block(
                x,
                j,
                _cache_view(cfg, rt, unified, i, j),
                _cond_for(rt, i),
                sink.content,
                rolling_rope_index(i, cfg.sink_delta),
                require_same_timestep=False,
                max_entries=cfg.cache_capacity,
            )
            nfe += 1
            x = flow_step(x, out.velocity, rt.schedule.dt)
        entry = rt.denoiser.cache_entry(
            x,
            unified.view(),
            _cond_for(rt, i),
            sink.content,
            rolling_rope_index(i, cfg.sink_delta),
        )
        nfe += 1
        unified.push(entry)
        blocks.append(x)
        chunks.append(rt.codec.decode(x))
        if i == 0:
            aas_update(sink, x, rt.codec)
    return _finish(cfg, rt, blocks, chunks, nfe, sink, "clean_kv")


# ---------------------------------------------------------------------------
# timestep-pinned pipeline
# ---------------------------------------------------------------------------

class _Aborted(Exception):
    """Internal: another worker failed; unwind quietly."""


class _Link:
    """Blocking FIFO between adjacent stages with bounded capacity.

    Enforces the two message-layer invariants: per-link sequence numbers are
    strictly increasing (FIFO delivery) and payloads are latent blocks only.
    """

    def __init__(self, capacity: int, abort: threading.Event):
        self._q = queue.Queue(maxsize=capacity)
        self._abort = abort
        self._next_send = 0
        self._next_recv = 0

    def send(self, msg: StageMessage) -> None:
        if not isinstance(msg, StageMessage) or not isinstance(msg.block, LatentBlock):
            raise PipelineInvariantError(
                "stage boundary crossed by something other than a latent block"
            )
        if msg.sequence != self._next_send:
            raise PipelineInvariantError(
                f"out-of-order send: expected seq {self._next_send}, got {msg.sequence}"
            )
        self._next_send += 1
        while True:
            if self._abort.is_set():
                raise _Aborted()
            try:
                self._q.put(msg, timeout=0.05)
                return
            except queue.Full:
                continue

    def recv(self) -> StageMessage:
        while True:
            if self._abort.is_set():
                raise _Aborted()
            try:
                msg = self._q.get(timeout=0.05)
                break
            except queue.Empty:
                continue
        if msg.sequence != self._next_recv:
            raise PipelineInvariantError(
                f"FIFO violated: expected seq {self._next_recv}, got {msg.sequence}"
            )
        self._next_recv += 1
        return msg


def _check_thread_budget(cfg: EngineConfig) -> None:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return
    try:
        cap = int(raw)
    except ValueError:
        raise EngineConfigError(f"{THREADS_ENV}={raw!r} is not an integer") from None
    needed = cfg.steps + 1
    if cap < needed:
        raise EngineConfigError(
            f"{THREADS_ENV}={cap} but pipelined mode needs T+1={needed} workers"
        )


def run_tpp(cfg: EngineConfig) -> RolloutResult:
    """Concurrent pipeline: stage k owns step t_{T-k+1} and its own rolling
    cache; a dedicated worker decodes and, after block 0, broadcasts the
    swapped sink which every stage installs before touching block 1. Latents
    and frames are bit-identical to ``run_sequential``."""
    if cfg.mode != "tpp":
        raise EngineConfigError(f"run_tpp called with mode {cfg.mode!r}")
    _check_thread_budget(cfg)
    rt = build_runtime(cfg)
    abort = threading.Event()
    links = [_Link(cfg.link_capacity, abort) for _ in range(cfg.steps)]
    sink_feeds = [queue.Queue(maxsize=1) for _ in range(cfg.steps)]
    errors: list = []
    err_lock = threading.Lock()
    stage_nfe = [0] * cfg.steps
    out_blocks: list = [None] * cfg.blocks
    out_chunks: list = [None] * cfg.blocks
    decoder_sink = SinkSlot(rt.conditions.reference.copy(), cfg.sink_delta)

    def fail(exc: BaseException) -> None:
        with err_lock:
            if not isinstance(exc, _Aborted):
                errors.append(exc)
        abort.set()

    def stage_worker(k: int) -> None:
        # Stage k (1-based) performs step index j = T-k+1.
        j = cfg.steps - k + 1
        cache = RollingKvCache(j, cfg.cache_capacity)
        sink = SinkSlot(rt.conditions.reference.copy(), cfg.sink_delta)
        try:
            for i in range(cfg.blocks):
                if i == 1:
                    receive_sink(sink, _get(sink_feeds[k - 1], abort))
                if k == 1:
                    x = noise_block(cfg, i)
                else:
                    msg = links[k - 2].recv()
                    if msg.block_index != i:
                        raise PipelineInvariantError(
                            f"stage {k} expected block {i}, got {msg.block_index}"
                        )
                    x = msg.block
                out = rt.denoiser.denoise_block(
                    x,
                    j,
                    _cache_view(cfg, rt, cache, i, j),
                    _cond_for(rt, i),
                    sink.content,
                    rolling_rope_index(i, cfg.sink_delta),
                    max_entries=cfg.cache_capacity,
                )
                stage_nfe[k - 1] += 1
                cache.push(out.kv)
                x = flow_step(x, out.velocity, rt.schedule.dt)
                links[k - 1].send(StageMessage(x, i, producer=k, sequence=i))
        except BaseException as exc:  # noqa: BLE001 - worker boundary
            fail(exc)

    def decode_worker() -> None:
        try:
            for i in range(cfg.blocks):
                msg = links[cfg.steps - 1].recv()
                if msg.block_index != i:
                    raise PipelineInvariantError(
                        f"decoder expected block {i}, got {msg.block_index}"
                    )
                out_blocks[i] = msg.block
                out_chunks[i] = rt.codec.decode(msg.block)
                if i == 0:
                    aas_update(decoder_sink, msg.block, rt.codec)
                    for feed in sink_feeds:
                        feed.put(decoder_sink.content)
        except BaseException as exc:  # noqa: BLE001 - worker boundary
            fail(exc)

    workers = [
        threading.Thread(target=stage_worker, args=(k,), name=f"stage-{k}")
        for k in range(1, cfg.steps + 1)
    ]
    workers.append(threading.Thread(target=decode_worker, name="decoder"))
    for w in workers:
        w.start()
    for w in workers:
        w.join()
    if errors:
        raise errors[0]

    return _finish(
        cfg, rt, out_blocks, out_chunks, sum(stage_nfe), decoder_sink, "tpp"
    )


def _get(q: queue.Queue, abort: threading.Event):
    while True:
        if abort.is_set():
            raise _Aborted()
        try:
            return q.get(timeout=0.05)
        except queue.Empty:
            continue


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

_RUNNERS = {
    "sequential": run_sequential,
    "clean_kv": run_clean_kv,
    "tpp": run_tpp,
}


def run(cfg: EngineConfig) -> RolloutResult:
    """Run the engine selected by ``cfg.mode`` (not the simulate mode)."""
    if cfg.mode == "simulate":
        raise EngineConfigError("mode 'simulate' has no math to run; use run_simulation")
    return _RUNNERS[cfg.mode](cfg)


def run_simulation(cfg: EngineConfig, sim_mode: str = "tpp") -> SimResult:
    """Virtual-clock schedule for this config without running any math."""
    return simulate(
        cfg.stage_latencies,
        sim_mode,
        cfg.blocks,
        cfg.frames_per_block * cfg.upsample,
        cfg.arrival_offset,
        cfg.link_capacity,
    )
