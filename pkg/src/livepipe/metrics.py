"""Timeline records and runtime metrics.

Frame rate is measured from virtual-clock zero (pipeline initialization)
through the last decode, and separately in steady state from the spacing of
consecutive decodes once warm-up has drained. Time-to-first-frame is the
arrival wait plus the first block's full denoise latency plus its decode
cost -- pipelining shortens neither, which is why the pipelined and
sequential engines report identical TTFF for equal stage latencies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

EVENT_KINDS = ("denoise", "decode", "idle", "broadcast_wait")

# Metric comparisons at and below this resolution are meaningless; schedule
# arithmetic is exact for latencies representable in binary.
VIRTUAL_TICK = 1e-9


@dataclass(frozen=True)
class TimelineEvent:
    stage: int
    block: int
    start: float
    end: float
    kind: str

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.end < self.start:
            raise ValueError(f"event ends before it starts: {self}")

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class MetricsBundle:
    fps: float  # whole run, from clock zero to the last decode
    fps_steady: float  # excluding warm-up: frames/block over the tail block period
    ttff: float
    nfe: int
    utilization: tuple  # per stage id, ascending
    drift: np.ndarray | None = None  # per decoded frame, sink similarity


class FpsReport(NamedTuple):
    whole_run: float
    steady: float


def _decodes(timeline) -> list:
    return sorted((e for e in timeline if e.kind == "decode"), key=lambda e: e.block)


def compute_fps(timeline, total_frames: int) -> FpsReport:
    """Whole-run and steady-state frames per second for a finished timeline.

    Steady state uses the spacing of the last two decodes (block period once
    the pipeline is full); with fewer than two blocks it equals the whole-run
    number.
    """
    if not timeline:
        raise ValueError("empty timeline")
    decodes = _decodes(timeline)
    if not decodes:
        raise ValueError("timeline has no decode events")
    whole = total_frames / decodes[-1].end
    if len(decodes) >= 2:
        period = decodes[-1].end - decodes[-2].end
        steady = (total_frames / len(decodes)) / period
    else:
        steady = whole
    return FpsReport(whole_run=whole, steady=steady)


def compute_ttff(arrival_offset: float, timeline) -> float:
    """Arrival wait + first block's denoise span + its decode cost."""
    first_block = [e for e in timeline if e.block == 0 and e.kind == "denoise"]
    decodes = [e for e in timeline if e.block == 0 and e.kind == "decode"]
    if not decodes:
        raise ValueError("timeline has no decode event for the first block")
    denoise_start = min(e.start for e in first_block) if first_block else 0.0
    return arrival_offset + (decodes[0].end - denoise_start)


def stage_utilization(timeline, warmup_blocks: int = 2) -> tuple:
    """Busy fraction per stage, over each stage's own post-warm-up span.

    The first ``warmup_blocks`` blocks (pipeline fill plus the sink-swap
    stall) are excluded when enough blocks remain; short runs fall back to
    the whole span.
    """
    stages = sorted({e.stage for e in timeline})
    utils = []
    for sid in stages:
        events = [e for e in timeline if e.stage == sid and e.kind in ("denoise", "decode")]
        tail = [e for e in events if e.block >= warmup_blocks]
        window = tail if tail else events
        if not window:
            utils.append(0.0)
            continue
        busy = sum(e.duration for e in window)
        span = max(e.end for e in window) - min(e.start for e in window)
        utils.append(1.0 if span == 0.0 else min(1.0, busy / span))
    return tuple(utils)


def drift_metric(frames: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Cosine similarity of every decoded frame against a reference frame.

    Zero-norm frames yield NaN (undefined) rather than raising.
    """
    frames = np.asarray(frames, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    ref_norm = np.linalg.norm(reference)
    norms = np.linalg.norm(frames, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = (frames @ reference) / (norms * ref_norm)
    return sims


def metrics_from_timeline(
    timeline,
    total_frames: int,
    arrival_offset: float,
    nfe: int,
    drift: np.ndarray | None = None,
) -> MetricsBundle:
    fps = compute_fps(timeline, total_frames)
    return MetricsBundle(
        fps=fps.whole_run,
        fps_steady=fps.steady,
        ttff=compute_ttff(arrival_offset, timeline),
        nfe=nfe,
        utilization=stage_utilization(timeline),
        drift=drift,
    )
