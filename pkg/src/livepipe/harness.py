"""Scenario configs, artifact export, and digest-based verification.

Scenario files are flat ``key = value`` text with one section per module
(engine / denoiser / cache / simulate), diff-friendly on purpose. Exported
artifacts are byte-stable: identical config in, identical bytes out. The
latent dump is a fixed little-endian float32 layout behind a 16-byte header
so independent implementations can compare digests.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

from .engine import EngineConfig, EngineConfigError, run, run_simulation
from .metrics import MetricsBundle, TimelineEvent, metrics_from_timeline
from .simulate import SIM_MODES

LATENT_MAGIC = b"LPD1"


class ConfigError(ValueError):
    """Malformed scenario file (CLI exit code 2)."""


class DigestMismatchError(RuntimeError):
    """Two engines disagreed on a digest (CLI exit code 4)."""


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------

SHIPPED_SCENARIOS = ("table3_fit", "equivalence_grid", "clean_kv_vs_tpp")

_ENGINE_KEYS = {
    "mode": ("mode", str),
    "t": ("steps", int),
    "l": ("cache_capacity", int),
    "f": ("frames_per_block", int),
    "d": ("latent_dim", int),
    "p": ("pixel_dim", int),
    "r": ("upsample", int),
    "delta": ("sink_delta", int),
    "m": ("blocks", int),
    "weight_seed": ("weight_seed", int),
    "noise_seed": ("noise_seed", int),
    "denoiser": ("denoiser_kind", str),
    "oracle_target_seed": ("oracle_target_seed", int),
    "history_sigma": ("history_sigma", float),
}
_DENOISER_KEYS = {
    "layers": ("n_layers", int),
    "heads": ("n_heads", int),
    "head_dim": ("head_dim", int),
    "rope_base": ("rope_base", float),
    "audio_dim": ("audio_dim", int),
    "prompt_dim": ("prompt_dim", int),
}
_CACHE_KEYS = {
    "sigma_mode": ("history_mode", str),
}
_SIMULATE_KEYS = {
    "denoise_latency": ("denoise_latency", float),
    "decode_latency": ("decode_latency", float),
    "arrival_offset": ("arrival_offset", float),
    "link_capacity": ("link_capacity", int),
}


def scenario_path(name: str) -> str:
    """Filesystem path of a scenario shipped with the package."""
    if name not in SHIPPED_SCENARIOS:
        raise ConfigError(
            f"unknown scenario {name!r}; shipped: {', '.join(SHIPPED_SCENARIOS)}"
        )
    return str(resources.files("livepipe").joinpath(f"scenarios/{name}.cfg"))


@dataclass(frozen=True)
class Scenario:
    kind: str  # run | verify_grid | compare_modes
    engine: EngineConfig
    sim_structure: str  # dependency structure for mode == simulate
    compare_modes: tuple
    grid_steps: tuple
    grid_capacity: tuple
    grid_blocks: tuple
    grid_seeds: tuple
    dump_latents: bool


def _parse_int_list(raw: str, where: str) -> tuple:
    try:
        return tuple(int(tok.strip()) for tok in raw.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: expected comma-separated integers, got {raw!r}") from exc


def load_scenario(path: str) -> Scenario:
    """Parse and validate a scenario file (raises ConfigError with the
    offending location on any problem)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh, source=path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    known = {"scenario", "engine", "denoiser", "cache", "simulate", "verify", "output"}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"{path}: unknown section [{section}]")

    fields: dict = {}
    for section, keymap in (
        ("engine", _ENGINE_KEYS),
        ("denoiser", _DENOISER_KEYS),
        ("cache", _CACHE_KEYS),
        ("simulate", _SIMULATE_KEYS),
    ):
        if not parser.has_section(section):
            continue
        for key, raw in parser.items(section):
            if section == "simulate" and key == "structure":
                continue  # dependency structure, handled below
            if key not in keymap:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            field_name, conv = keymap[key]
            try:
                fields[field_name] = conv(raw)
            except ValueError as exc:
                raise ConfigError(
                    f"{path}: [{section}] {key} = {raw!r}: {exc}"
                ) from exc
    try:
        engine = EngineConfig(**fields)
    except EngineConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    kind = parser.get("scenario", "kind", fallback="run")
    if kind not in ("run", "verify_grid", "compare_modes"):
        raise ConfigError(f"{path}: [scenario] kind must be run|verify_grid|compare_modes")

    sim_structure = parser.get("simulate", "structure", fallback="tpp")
    if sim_structure not in SIM_MODES:
        raise ConfigError(f"{path}: [simulate] structure must be one of {SIM_MODES}")

    modes_raw = parser.get("scenario", "modes", fallback="")
    compare = tuple(m.strip() for m in modes_raw.split(",") if m.strip())
    for m in compare:
        if m not in ("sequential", "clean_kv", "tpp"):
            raise ConfigError(f"{path}: [scenario] modes: unknown mode {m!r}")
    if kind == "compare_modes" and len(compare) < 2:
        raise ConfigError(f"{path}: compare_modes needs [scenario] modes with >= 2 entries")

    grid_steps = grid_capacity = grid_blocks = grid_seeds = ()
    if kind == "verify_grid":
        if not parser.has_section("verify"):
            raise ConfigError(f"{path}: verify_grid needs a [verify] section")
        grid_steps = _parse_int_list(parser.get("verify", "grid_t", fallback="4"), f"{path}: [verify] grid_t")
        grid_capacity = _parse_int_list(parser.get("verify", "grid_l", fallback="4"), f"{path}: [verify] grid_l")
        grid_blocks = _parse_int_list(parser.get("verify", "grid_m", fallback="8"), f"{path}: [verify] grid_m")
        grid_seeds = _parse_int_list(parser.get("verify", "seeds", fallback="11"), f"{path}: [verify] seeds")

    dump = parser.getboolean("output", "dump_latents", fallback=False) \
        if parser.has_section("output") else False

    return Scenario(
        kind=kind,
        engine=engine,
        sim_structure=sim_structure,
        compare_modes=compare,
        grid_steps=grid_steps,
        grid_capacity=grid_capacity,
        grid_blocks=grid_blocks,
        grid_seeds=grid_seeds,
        dump_latents=dump,
    )


# ---------------------------------------------------------------------------
# timeline export
# ---------------------------------------------------------------------------

TIMELINE_HEADER = "stage,block,start,end,kind"


def metrics_record(bundle: MetricsBundle) -> dict:
    rec = {
        "fps": float(bundle.fps),
        "fps_steady": float(bundle.fps_steady),
        "ttff": float(bundle.ttff),
        "nfe": int(bundle.nfe),
        "utilization": [float(u) for u in bundle.utilization],
    }
    if bundle.drift is not None and len(bundle.drift):
        drift = np.asarray(bundle.drift, dtype=np.float64)
        finite = drift[np.isfinite(drift)]
        rec["drift_min"] = float(finite.min()) if len(finite) else None
        rec["drift_mean"] = float(finite.mean()) if len(finite) else None
    return rec


def format_timeline(timeline, metrics: MetricsBundle | None = None) -> str:
    """Deterministic delimited-text rendering (floats via shortest repr, so
    parsing it back reproduces the exact values)."""
    lines = [TIMELINE_HEADER]
    for e in timeline:
        lines.append(f"{e.stage},{e.block},{e.start!r},{e.end!r},{e.kind}")
    if metrics is not None:
        lines.append("# metrics: " + json.dumps(metrics_record(metrics), sort_keys=True))
    return "\n".join(lines) + "\n"


def export_timeline(timeline, path: str, metrics: MetricsBundle | None = None) -> str:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_timeline(timeline, metrics))
    return path


def parse_timeline(path: str):
    """Inverse of export: returns (events, metrics dict or None)."""
    events = []
    metrics = None
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != TIMELINE_HEADER:
            raise ConfigError(f"{path}: not a timeline file (header {header!r})")
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("# metrics: "):
                metrics = json.loads(line[len("# metrics: "):])
                continue
            stage, block, start, end, kind = line.split(",")
            events.append(
                TimelineEvent(int(stage), int(block), float(start), float(end), kind)
            )
    return events, metrics


# ---------------------------------------------------------------------------
# latent dumps and digests
# ---------------------------------------------------------------------------

def latents_bytes(blocks) -> bytes:
    """16-byte header (magic, D, F, M as little-endian u32) followed by the
    blocks' float32 frames, row-major, block-ascending."""
    m = len(blocks)
    if m == 0:
        raise ValueError("no blocks to serialize")
    f, d = blocks[0].values.shape
    header = LATENT_MAGIC + np.array([d, f, m], dtype="<u4").tobytes()
    body = b"".join(b.values.astype("<f4").tobytes() for b in blocks)
    return header + body


def write_latents(path: str, blocks) -> str:
    with open(path, "wb") as fh:
        fh.write(latents_bytes(blocks))
    return path


def read_latents(path: str) -> np.ndarray:
    """Returns the dumped latents as an (M, F, D) float32 array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != LATENT_MAGIC:
        raise ConfigError(f"{path}: bad magic {raw[:4]!r}")
    d, f, m = np.frombuffer(raw[4:16], dtype="<u4")
    body = np.frombuffer(raw[16:], dtype="<f4")
    if body.size != m * f * d:
        raise ConfigError(f"{path}: truncated latent dump")
    return body.reshape(int(m), int(f), int(d)).astype(np.float32)


def latents_digest(blocks) -> str:
    return hashlib.sha256(latents_bytes(blocks)).hexdigest()


def frames_digest(frames: np.ndarray) -> str:
    return hashlib.sha256(np.asarray(frames).astype("<f4").tobytes()).hexdigest()


# ---------------------------------------------------------------------------
# scenario execution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioOutcome:
    kind: str
    ok: bool
    lines: tuple  # human-readable summary, one string per result line
    bundles: dict  # label -> MetricsBundle
    artifacts: tuple  # paths written


def _apply_overrides(cfg: EngineConfig, mode: str | None, seed: int | None) -> EngineConfig:
    if mode is not None:
        if mode not in ("sequential", "clean_kv", "tpp", "simulate"):
            raise ConfigError(f"unknown mode override {mode!r}")
        cfg = replace(cfg, mode=mode)
    if seed is not None:
        cfg = replace(cfg, noise_seed=seed)
    return cfg


def verify_equivalence(cfg: EngineConfig) -> tuple:
    """Run the pipelined and sequential engines on one config and compare
    latent and frame digests. Returns (ok, latent digests, frame digests)."""
    tpp = run(replace(cfg, mode="tpp"))
    seq = run(replace(cfg, mode="sequential"))
    ld = (latents_digest(tpp.blocks), latents_digest(seq.blocks))
    fd = (frames_digest(tpp.frames), frames_digest(seq.frames))
    return ld[0] == ld[1] and fd[0] == fd[1], ld, fd


def run_scenario(
    config_path: str,
    out_dir: str,
    mode_override: str | None = None,
    seed_override: int | None = None,
) -> ScenarioOutcome:
    """Execute a scenario file and write its artifacts under ``out_dir``."""
    sc = load_scenario(config_path)
    os.makedirs(out_dir, exist_ok=True)
    if sc.kind == "run":
        return _scenario_run(sc, out_dir, mode_override, seed_override)
    if sc.kind == "compare_modes":
        return _scenario_compare(sc, out_dir, seed_override)
    return _scenario_verify_grid(sc, out_dir, seed_override)


def _scenario_run(sc: Scenario, out_dir: str, mode_override, seed_override) -> ScenarioOutcome:
    cfg = _apply_overrides(sc.engine, mode_override, seed_override)
    artifacts = []
    if cfg.mode == "simulate":
        sim = run_simulation(cfg, sc.sim_structure)
        bundle = metrics_from_timeline(
            sim.timeline, sim.total_frames, cfg.arrival_offset, sim.nfe
        )
        timeline = sim.timeline
        label = f"simulate[{sc.sim_structure}]"
        blocks = None
    else:
        result = run(cfg)
        bundle = result.metrics
        timeline = result.timeline
        label = cfg.mode
        blocks = result.blocks
    tl_path = os.path.join(out_dir, "timeline.csv")
    export_timeline(timeline, tl_path, bundle)
    artifacts.append(tl_path)
    if blocks is not None and sc.dump_latents:
        lat_path = os.path.join(out_dir, "latents.bin")
        write_latents(lat_path, blocks)
        artifacts.append(lat_path)
    lines = (
        f"{label}: fps={bundle.fps:.4f} fps_steady={bundle.fps_steady:.4f} "
        f"ttff={bundle.ttff:.4f} nfe={bundle.nfe}",
    )
    return ScenarioOutcome("run", True, lines, {label: bundle}, tuple(artifacts))


def _scenario_compare(sc: Scenario, out_dir: str, seed_override) -> ScenarioOutcome:
    bundles = {}
    lines = []
    artifacts = []
    for mode in sc.compare_modes:
        cfg = _apply_overrides(sc.engine, mode, seed_override)
        result = run(cfg)
        bundles[mode] = result.metrics
        tl_path = os.path.join(out_dir, f"timeline_{mode}.csv")
        export_timeline(result.timeline, tl_path, result.metrics)
        artifacts.append(tl_path)
        per_block = result.nfe / cfg.blocks
        lines.append(
            f"{mode}: nfe={result.nfe} ({per_block:g}/block) "
            f"fps_steady={result.metrics.fps_steady:.4f} ttff={result.metrics.ttff:.4f}"
        )
    return ScenarioOutcome("compare_modes", True, tuple(lines), bundles, tuple(artifacts))


def _scenario_verify_grid(sc: Scenario, out_dir: str, seed_override) -> ScenarioOutcome:
    lines = []
    all_ok = True
    for t in sc.grid_steps:
        for cap in sc.grid_capacity:
            for m in sc.grid_blocks:
                for seed in sc.grid_seeds:
                    cfg = replace(
                        sc.engine,
                        mode="tpp",
                        steps=t,
                        cache_capacity=cap,
                        blocks=m,
                        noise_seed=seed if seed_override is None else seed_override,
                    )
                    ok, latent_digests, frame_digests = verify_equivalence(cfg)
                    all_ok = all_ok and ok
                    status = "MATCH" if ok else "MISMATCH"
                    lines.append(
                        f"T={t} L={cap} M={m} seed={cfg.noise_seed}: {status} "
                        f"latents={latent_digests[0][:12]} frames={frame_digests[0][:12]}"
                    )
    report = os.path.join(out_dir, "equivalence_report.txt")
    with open(report, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return ScenarioOutcome("verify_grid", all_ok, tuple(lines), {}, (report,))
