"""Virtual-clock schedules for the three execution modes.

The simulator reproduces each mode's dependency structure exactly and charges
configurable latencies, so throughput/latency arithmetic can be studied (and
exported byte-stably) without running any math. The concurrent engine also
uses these schedules for its timelines: its *data* flow is real, its clock is
virtual, which keeps exported artifacts deterministic.

Stage ids: 1..T are the denoise steps (stage k performs step t_{T-k+1}),
T+1 is the decoder. The clean-cache baseline's extra forward pass gets its
own id T+2 so every block still appears exactly once per stage.

Mode dependency structures:

  pipelined   stage k of block i waits for: its own block i-1 fully handed
              off, block i arriving from stage k-1, and -- for block 1 only --
              the sink broadcast that the decoder emits after finishing
              block 0 (the secondary warm-up). Handoff links hold at most
              ``link_capacity`` undelivered blocks.
  sequential  one worker: T steps then decode, block after block.
  clean_kv    one denoise worker runs T steps plus the cache-refresh forward
              per block, strictly serialized across blocks (block i+1's
              first step needs block i's refreshed cache); only the decoder
              overlaps.
"""

from __future__ import annotations

from dataclasses import dataclass

from .metrics import TimelineEvent

SIM_MODES = ("sequential", "clean_kv", "tpp")


@dataclass(frozen=True)
class SimResult:
    timeline: tuple
    mode: str
    blocks: int
    frames_per_block: int
    arrival_offset: float

    @property
    def nfe(self) -> int:
        return sum(1 for e in self.timeline if e.kind == "denoise")

    @property
    def total_frames(self) -> int:
        return self.blocks * self.frames_per_block


def simulate(
    stage_latencies,
    mode: str,
    blocks: int,
    frames_per_block: int,
    arrival_offset: float = 0.0,
    link_capacity: int = 1,
) -> SimResult:
    """Discrete-event schedule for ``blocks`` blocks under the given mode.

    ``stage_latencies`` holds the T per-step denoise latencies followed by
    the decode latency (T+1 values in total).
    """
    lat = [float(x) for x in stage_latencies]
    if len(lat) < 2:
        raise ValueError("need at least one denoise latency plus the decode latency")
    if any(x <= 0.0 for x in lat):
        raise ValueError("latencies must be positive")
    if mode not in SIM_MODES:
        raise ValueError(f"mode must be one of {SIM_MODES}, got {mode!r}")
    if blocks < 1 or frames_per_block < 1:
        raise ValueError("blocks and frames_per_block must be >= 1")
    if link_capacity < 1:
        raise ValueError("link_capacity must be >= 1")

    steps, decode_lat = lat[:-1], lat[-1]
    if mode == "sequential":
        events = _simulate_sequential(steps, decode_lat, blocks)
    elif mode == "clean_kv":
        events = _simulate_clean_kv(steps, decode_lat, blocks)
    else:
        events = _simulate_tpp(steps, decode_lat, blocks, link_capacity)

    events.sort(key=lambda e: (e.start, e.stage, e.block))
    return SimResult(
        timeline=tuple(events),
        mode=mode,
        blocks=blocks,
        frames_per_block=frames_per_block,
        arrival_offset=arrival_offset,
    )


def _simulate_sequential(steps, decode_lat, blocks) -> list:
    events = []
    t = 0.0
    decoder = len(steps) + 1
    for i in range(blocks):
        for k, d in enumerate(steps, start=1):
            events.append(TimelineEvent(k, i, t, t + d, "denoise"))
            t += d
        events.append(TimelineEvent(decoder, i, t, t + decode_lat, "decode"))
        t += decode_lat
    return events


def _simulate_clean_kv(steps, decode_lat, blocks) -> list:
    events = []
    t = 0.0
    decoder = len(steps) + 1
    refresh_stage = len(steps) + 2
    refresh_lat = steps[0]  # same forward cost as a denoise step
    decoder_free = 0.0
    for i in range(blocks):
        for k, d in enumerate(steps, start=1):
            events.append(TimelineEvent(k, i, t, t + d, "denoise"))
            t += d
        latent_ready = t
        events.append(TimelineEvent(refresh_stage, i, t, t + refresh_lat, "denoise"))
        t += refresh_lat
        start = max(decoder_free, latent_ready)
        events.append(TimelineEvent(decoder, i, start, start + decode_lat, "decode"))
        decoder_free = start + decode_lat
    return events


def _simulate_tpp(steps, decode_lat, blocks, cap) -> list:
    events = []
    n_stages = len(steps)
    decoder = n_stages + 1

    # start[k][i] is also the pickup time of the link k-1 -> k for block i.
    start = [[0.0] * blocks for _ in range(n_stages + 2)]  # 1-based stages
    deposit = [[0.0] * blocks for _ in range(n_stages + 1)]
    busy_until = [0.0] * (n_stages + 2)
    broadcast_time = None

    for i in range(blocks):
        for k in range(1, n_stages + 1):
            free = busy_until[k]
            if i == 1 and broadcast_time is not None:
                # The sink broadcast is awaited before the next input; the
                # stall between the first and second block is a measured
                # feature of the schedule.
                if broadcast_time > free:
                    events.append(
                        TimelineEvent(k, i, free, broadcast_time, "broadcast_wait")
                    )
                free = max(free, broadcast_time)
            arrive = deposit[k - 1][i] if k >= 2 else 0.0
            s = max(free, arrive)
            f = s + steps[k - 1]
            events.append(TimelineEvent(k, i, s, f, "denoise"))
            consumer = k + 1 if k < n_stages else decoder
            slot_free = start[consumer][i - cap] if i - cap >= 0 else 0.0
            deposit[k][i] = max(f, slot_free)
            busy_until[k] = deposit[k][i]
            start[k][i] = s

        s = max(busy_until[decoder], deposit[n_stages][i])
        f = s + decode_lat
        events.append(TimelineEvent(decoder, i, s, f, "decode"))
        start[decoder][i] = s
        busy_until[decoder] = f
        if i == 0:
            broadcast_time = f
    return events
