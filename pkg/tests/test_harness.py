"""Scenario parsing, artifact export/parse round trips, latent dumps,
digest verification, and the CLI surface."""

import os

import numpy as np
import pytest

from livepipe.cli import main
from livepipe.engine import EngineConfig, run_sequential
from livepipe.harness import (
    ConfigError,
    SHIPPED_SCENARIOS,
    export_timeline,
    format_timeline,
    frames_digest,
    latents_digest,
    load_scenario,
    parse_timeline,
    read_latents,
    run_scenario,
    scenario_path,
    verify_equivalence,
    write_latents,
)
from livepipe.latent import LatentBlock
from livepipe.metrics import metrics_from_timeline
from livepipe.numerics import Prng
from livepipe.simulate import simulate


def _write_cfg(tmp_path, text, name="scenario.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


BASIC_CFG = """
[scenario]
kind = run

[engine]
mode = sequential
T = 2
L = 2
M = 3
noise_seed = 11

[output]
dump_latents = true
"""


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def test_load_scenario_basic(tmp_path):
    sc = load_scenario(_write_cfg(tmp_path, BASIC_CFG))
    assert sc.kind == "run"
    assert sc.engine.mode == "sequential"
    assert sc.engine.steps == 2
    assert sc.engine.cache_capacity == 2
    assert sc.engine.blocks == 3
    assert sc.dump_latents


def test_load_scenario_unknown_key(tmp_path):
    path = _write_cfg(tmp_path, "[engine]\nwarp_factor = 9\n")
    with pytest.raises(ConfigError, match="warp_factor"):
        load_scenario(path)


def test_load_scenario_bad_value(tmp_path):
    path = _write_cfg(tmp_path, "[engine]\nT = banana\n")
    with pytest.raises(ConfigError, match="t = 'banana'"):  # keys are case-folded
        load_scenario(path)


def test_load_scenario_bad_syntax(tmp_path):
    path = _write_cfg(tmp_path, "[engine\nT = 2\n")
    with pytest.raises(ConfigError, match="malformed"):
        load_scenario(path)


def test_load_scenario_invalid_engine_combo(tmp_path):
    path = _write_cfg(tmp_path, "[engine]\nD = 24\n")  # != heads*head_dim
    with pytest.raises(ConfigError, match="latent_dim"):
        load_scenario(path)


def test_load_scenario_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_scenario("/nonexistent/path.cfg")


def test_shipped_scenarios_parse():
    for name in SHIPPED_SCENARIOS:
        sc = load_scenario(scenario_path(name))
        assert sc.kind in ("run", "verify_grid", "compare_modes")


def test_scenario_path_unknown():
    with pytest.raises(ConfigError):
        scenario_path("made_up")


# ---------------------------------------------------------------------------
# timeline export / parse
# ---------------------------------------------------------------------------

def test_timeline_round_trip(tmp_path):
    sim = simulate([0.574] * 3, "tpp", blocks=4, frames_per_block=12)
    bundle = metrics_from_timeline(sim.timeline, sim.total_frames, 0.0, sim.nfe)
    path = str(tmp_path / "timeline.csv")
    export_timeline(sim.timeline, path, bundle)
    events, metrics = parse_timeline(path)
    assert tuple(events) == sim.timeline  # floats survive exactly (repr)
    assert metrics["nfe"] == sim.nfe
    assert metrics["fps"] == pytest.approx(bundle.fps)


def test_replayed_timeline_reproduces_metrics_exactly(tmp_path):
    # FPS/TTFF are pure functions of the timeline: recomputing them from a
    # parsed export matches the originals bit for bit
    from livepipe.metrics import compute_fps, compute_ttff

    sim = simulate([0.574] * 5, "tpp", blocks=8, frames_per_block=12)
    path = str(tmp_path / "timeline.csv")
    export_timeline(sim.timeline, path)
    events, _ = parse_timeline(path)
    orig_fps = compute_fps(sim.timeline, sim.total_frames)
    replay_fps = compute_fps(events, sim.total_frames)
    assert replay_fps == orig_fps
    assert compute_ttff(0.25, events) == compute_ttff(0.25, sim.timeline)


def test_timeline_export_byte_stable(tmp_path):
    sim = simulate([0.574] * 3, "tpp", blocks=4, frames_per_block=12)
    a = format_timeline(sim.timeline)
    b = format_timeline(sim.timeline)
    assert a == b
    p1, p2 = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    export_timeline(sim.timeline, p1)
    export_timeline(sim.timeline, p2)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_empty_timeline_exports_header_only(tmp_path):
    path = str(tmp_path / "empty.csv")
    export_timeline([], path)
    assert open(path).read() == "stage,block,start,end,kind\n"
    events, metrics = parse_timeline(path)
    assert events == [] and metrics is None


def test_parse_rejects_non_timeline(tmp_path):
    path = tmp_path / "nope.csv"
    path.write_text("bogus\n")
    with pytest.raises(ConfigError):
        parse_timeline(str(path))


def test_table3_scenario_event_count(tmp_path):
    # T+1 stages times M blocks of denoise/decode events
    sim = simulate([0.574] * 5, "tpp", blocks=32, frames_per_block=12)
    busy = [e for e in sim.timeline if e.kind in ("denoise", "decode")]
    assert len(busy) == 5 * 32


# ---------------------------------------------------------------------------
# latent dumps / digests
# ---------------------------------------------------------------------------

def _blocks(seed=3, m=4):
    return [LatentBlock(Prng(seed, i).normal((3, 16)), i) for i in range(m)]


def test_latent_dump_round_trip(tmp_path):
    blocks = _blocks()
    path = str(tmp_path / "latents.bin")
    write_latents(path, blocks)
    back = read_latents(path)
    assert back.shape == (4, 3, 16)
    for i, b in enumerate(blocks):
        np.testing.assert_array_equal(back[i], b.values)
    assert os.path.getsize(path) == 16 + 4 * 3 * 16 * 4


def test_latent_dump_header(tmp_path):
    path = str(tmp_path / "latents.bin")
    write_latents(path, _blocks())
    raw = open(path, "rb").read()
    assert raw[:4] == b"LPD1"
    assert np.frombuffer(raw[4:16], dtype="<u4").tolist() == [16, 3, 4]


def test_latent_dump_rejects_corruption(tmp_path):
    path = str(tmp_path / "latents.bin")
    write_latents(path, _blocks())
    raw = open(path, "rb").read()
    open(path, "wb").write(raw[:-8])
    with pytest.raises(ConfigError, match="truncated"):
        read_latents(path)
    open(path, "wb").write(b"XXXX" + raw[4:])
    with pytest.raises(ConfigError, match="magic"):
        read_latents(path)


def test_digests_stable_and_sensitive():
    blocks = _blocks()
    assert latents_digest(blocks) == latents_digest(blocks)
    assert latents_digest(blocks) != latents_digest(_blocks(seed=4))
    frames = Prng(5, 0).normal((8, 32))
    assert frames_digest(frames) == frames_digest(frames.copy())


def test_verify_equivalence_matches():
    ok, latent_digests, frame_digests = verify_equivalence(
        EngineConfig(mode="tpp", steps=2, cache_capacity=2, blocks=3)
    )
    assert ok
    assert latent_digests[0] == latent_digests[1]
    assert frame_digests[0] == frame_digests[1]


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

def test_run_scenario_writes_artifacts(tmp_path):
    cfg = _write_cfg(tmp_path, BASIC_CFG)
    out = str(tmp_path / "out")
    outcome = run_scenario(cfg, out)
    assert outcome.ok
    assert os.path.exists(os.path.join(out, "timeline.csv"))
    assert os.path.exists(os.path.join(out, "latents.bin"))
    assert read_latents(os.path.join(out, "latents.bin")).shape == (3, 3, 16)


def test_run_scenario_deterministic_bytes(tmp_path):
    cfg = _write_cfg(tmp_path, BASIC_CFG)
    out1, out2 = str(tmp_path / "o1"), str(tmp_path / "o2")
    run_scenario(cfg, out1)
    run_scenario(cfg, out2)
    for name in ("timeline.csv", "latents.bin"):
        a = open(os.path.join(out1, name), "rb").read()
        b = open(os.path.join(out2, name), "rb").read()
        assert a == b, name


def test_run_scenario_mode_and_seed_override(tmp_path):
    cfg = _write_cfg(tmp_path, BASIC_CFG)
    out = str(tmp_path / "out")
    outcome = run_scenario(cfg, out, mode_override="tpp", seed_override=77)
    assert outcome.ok
    assert "tpp" in outcome.bundles
    direct = run_sequential(
        EngineConfig(mode="sequential", steps=2, cache_capacity=2, blocks=3,
                     noise_seed=77)
    )
    dumped = read_latents(os.path.join(out, "latents.bin"))
    np.testing.assert_array_equal(dumped[2], direct.blocks[2].values)


def test_table3_fit_scenario(tmp_path):
    outcome = run_scenario(scenario_path("table3_fit"), str(tmp_path / "t3"))
    bundle = outcome.bundles["simulate[tpp]"]
    assert abs(bundle.fps_steady - 20.88) / 20.88 < 0.01
    assert abs(bundle.ttff - 2.89) / 2.89 < 0.05


def test_clean_kv_vs_tpp_scenario(tmp_path):
    outcome = run_scenario(scenario_path("clean_kv_vs_tpp"), str(tmp_path / "cmp"))
    assert outcome.bundles["clean_kv"].nfe == 35  # 5 per block
    assert outcome.bundles["tpp"].nfe == 28  # 4 per block
    events, _ = parse_timeline(str(tmp_path / "cmp" / "timeline_clean_kv.csv"))
    denoise = [e for e in events if e.kind == "denoise"]
    for i in range(6):
        last = max(e.end for e in denoise if e.block == i)
        first = min(e.start for e in denoise if e.block == i + 1)
        assert first >= last


def test_long_rollout_drift_trend_recorded(tmp_path):
    # no ground truth for the toy net's similarity series; the harness just
    # has to record its spread faithfully for a long rollout
    cfg = _write_cfg(
        tmp_path,
        "[scenario]\nkind = run\n\n[engine]\nmode = sequential\nT = 2\nM = 64\n",
    )
    outcome = run_scenario(cfg, str(tmp_path / "out"))
    bundle = outcome.bundles["sequential"]
    assert bundle.drift.shape == (64 * 3 * 4,)
    _, metrics = parse_timeline(str(tmp_path / "out" / "timeline.csv"))
    assert np.isfinite(metrics["drift_min"])
    assert np.isfinite(metrics["drift_mean"])
    assert -1.0 <= metrics["drift_min"] <= metrics["drift_mean"] <= 1.0


def test_verify_grid_scenario_small(tmp_path):
    cfg = _write_cfg(
        tmp_path,
        """
[scenario]
kind = verify_grid

[engine]
mode = tpp

[verify]
grid_T = 2
grid_L = 2
grid_M = 1, 3
seeds = 11
""",
    )
    outcome = run_scenario(cfg, str(tmp_path / "grid"))
    assert outcome.ok
    assert len(outcome.lines) == 2
    assert all("MATCH" in line for line in outcome.lines)
    report = open(os.path.join(str(tmp_path / "grid"), "equivalence_report.txt")).read()
    assert report.count("MATCH") == 2


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def test_cli_run_exit_codes(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, BASIC_CFG)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert "nfe=6" in out
    assert "wrote" in out


def test_cli_run_shipped_scenario_by_name(tmp_path):
    assert main(["run", "--config", "table3_fit", "--out", str(tmp_path / "o")]) == 0


def test_cli_config_error_is_exit_2(tmp_path, capsys):
    bad = _write_cfg(tmp_path, "[engine]\nT = zero\n")
    assert main(["run", "--config", bad, "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.cfg"),
                 "--out", str(tmp_path / "o")]) == 2


def test_cli_simulate(tmp_path, capsys):
    rc = main([
        "simulate", "--latencies", "0.574,0.574,0.574,0.574,0.574",
        "--blocks", "16", "--mode", "tpp", "--out", str(tmp_path / "sim"),
    ])
    assert rc == 0
    out = capsys.readouterr().out
    assert "fps_steady=20.9059" in out
    assert os.path.exists(str(tmp_path / "sim" / "timeline.csv"))


def test_cli_simulate_bad_latencies():
    assert main(["simulate", "--latencies", "a,b", "--blocks", "4"]) == 2


def test_cli_module_entry_point(tmp_path):
    import subprocess
    import sys

    proc = subprocess.run(
        [sys.executable, "-m", "livepipe", "simulate",
         "--latencies", "1,1,1", "--blocks", "4", "--mode", "sequential"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "fps_steady=" in proc.stdout
    bad = subprocess.run(
        [sys.executable, "-m", "livepipe", "run",
         "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path / "o")],
        capture_output=True, text=True,
    )
    assert bad.returncode == 2


def test_cli_unwritable_out_is_exit_2(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, BASIC_CFG)
    blocker = tmp_path / "blocked"
    blocker.write_text("")  # a file where the out dir should go
    assert main(["run", "--config", cfg, "--out", str(blocker)]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_verify_ok(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, BASIC_CFG)
    assert main(["verify", "--config", cfg]) == 0
    assert "digests match" in capsys.readouterr().out


def test_cli_thread_env_error(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("LIVE_PIPE_THREADS", "1")
    cfg = _write_cfg(tmp_path, BASIC_CFG)
    assert main(["verify", "--config", cfg]) == 2
    assert "LIVE_PIPE_THREADS" in capsys.readouterr().err


def test_cli_invariant_violation_is_exit_3(tmp_path, monkeypatch, capsys):
    from livepipe import cli
    from livepipe.engine import PipelineInvariantError

    def boom(*args, **kwargs):
        raise PipelineInvariantError("FIFO violated: synthetic")

    monkeypatch.setattr(cli, "run_scenario", boom)
    cfg = _write_cfg(tmp_path, BASIC_CFG)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "invariant violation" in capsys.readouterr().err


def test_cli_digest_mismatch_is_exit_4(tmp_path, monkeypatch, capsys):
    from livepipe import cli
    from livepipe.harness import ScenarioOutcome

    def mismatch(*args, **kwargs):
        return ScenarioOutcome("verify_grid", False, ("T=2 ...: MISMATCH",), {}, ())

    monkeypatch.setattr(cli, "run_scenario", mismatch)
    cfg = _write_cfg(tmp_path, BASIC_CFG)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 4
    assert "FAILED" in capsys.readouterr().err


def test_shipped_grid_covers_full_verification_matrix():
    sc = load_scenario(scenario_path("equivalence_grid"))
    assert sc.grid_steps == (2, 4)
    assert sc.grid_capacity == (1, 4)
    assert sc.grid_blocks == (1, 8, 32)
    assert len(sc.grid_seeds) == 3
