#!/usr/bin/env python3
"""Virtual-clock throughput arithmetic: the published operating point
(five equal 0.574 s stages, 12 frames per block), the T+1 pipeline speedup
law, and an ASCII Gantt of warm-up plus the sink-broadcast stall.

Run:  python3 demos/04_throughput_timeline.py
"""

from livepipe import compute_fps, compute_ttff, simulate

# ---------------------------------------------------------------------------
# Operating-point fit: 4 denoise stages + 1 decode stage, 0.574 s each.
# Steady state emits one 12-frame block per 0.574 s; the first frame waits
# for the whole warm-up chain.
# ---------------------------------------------------------------------------
sim = simulate([0.574] * 5, "tpp", blocks=32, frames_per_block=12)
fps = compute_fps(sim.timeline, sim.total_frames)
print(f"tpp, 5 x 0.574s: steady fps = {fps.steady:.2f}  "
      f"whole-run fps = {fps.whole_run:.2f}  ttff = {compute_ttff(0.0, sim.timeline):.2f}s")

seq = simulate([0.574] * 5, "sequential", blocks=32, frames_per_block=12)
seq_fps = compute_fps(seq.timeline, seq.total_frames)
print(f"sequential, same latencies: steady fps = {seq_fps.steady:.2f}  "
      f"ttff = {compute_ttff(0.0, seq.timeline):.2f}s  (pipelining buys "
      f"throughput, not first-frame latency)")

# ---------------------------------------------------------------------------
# Speedup law: with T denoise stages and a decoder all at latency d, the
# pipeline improves FPS by exactly T+1.
# ---------------------------------------------------------------------------
print("\nspeedup over the sequential engine (equal stage latencies):")
for steps in (2, 4, 8):
    lat = [1.0] * (steps + 1)
    t = compute_fps(simulate(lat, "tpp", 24, 12).timeline, 24 * 12).steady
    s = compute_fps(simulate(lat, "sequential", 24, 12).timeline, 24 * 12).steady
    print(f"  T={steps}: {t / s:.1f}x")

# ---------------------------------------------------------------------------
# Gantt view of the first blocks: '#' is busy, '~' is the wait for the sink
# broadcast (the secondary warm-up after block 0), '.' is idle. Stage 5 is
# the decoder.
# ---------------------------------------------------------------------------
blocks = 6
sim = simulate([1.0] * 5, "tpp", blocks=blocks, frames_per_block=12)
horizon = max(e.end for e in sim.timeline)
cols = int(horizon * 2)  # half-second buckets
print(f"\ntimeline, {blocks} blocks, equal unit latencies "
      f"(one column = 0.5s):")
for stage in range(1, 6):
    row = ["."] * cols
    for e in sim.timeline:
        if e.stage != stage:
            continue
        mark = "~" if e.kind == "broadcast_wait" else "#"
        for c in range(int(e.start * 2), int(e.end * 2)):
            row[c] = mark
    label = f"stage {stage}" if stage < 5 else "decoder"
    print(f"  {label:8s} |{''.join(row)}|")
print("  the '~' span on every denoise stage is the sink-broadcast stall"
      " between the first and second block.")
