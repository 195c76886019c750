"""Command-line front end.

Subcommands:
  run       execute a scenario file and write its artifacts
  simulate  virtual-clock schedule from explicit stage latencies
  verify    run the pipelined and sequential engines on one config and
            compare output digests

Exit codes: 0 success, 2 config error, 3 invariant violation mid-run,
4 digest mismatch.
"""

from __future__ import annotations

import argparse
import os
import sys

from .engine import EngineConfigError, PipelineInvariantError
from .harness import (
    ConfigError,
    SHIPPED_SCENARIOS,
    export_timeline,
    load_scenario,
    run_scenario,
    scenario_path,
    verify_equivalence,
)
from .metrics import metrics_from_timeline
from .simulate import simulate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_DIGEST = 4


def _resolve_config(value: str) -> str:
    """Accept either a filesystem path or the name of a shipped scenario."""
    if os.path.exists(value):
        return value
    if value in SHIPPED_SCENARIOS:
        return scenario_path(value)
    raise ConfigError(f"no such config file or shipped scenario: {value!r}")


def _cmd_run(args) -> int:
    outcome = run_scenario(
        _resolve_config(args.config),
        args.out,
        mode_override=args.mode,
        seed_override=args.seed,
    )
    for line in outcome.lines:
        print(line)
    for path in outcome.artifacts:
        print(f"wrote {path}")
    if not outcome.ok:
        print("verification FAILED", file=sys.stderr)
        return EXIT_DIGEST
    return EXIT_OK


def _cmd_simulate(args) -> int:
    try:
        latencies = [float(tok) for tok in args.latencies.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"--latencies must be a comma-separated float list: {args.latencies!r}")
    sim = simulate(
        latencies,
        args.mode,
        args.blocks,
        args.frames_per_block,
        args.arrival,
    )
    bundle = metrics_from_timeline(sim.timeline, sim.total_frames, args.arrival, sim.nfe)
    print(
        f"{args.mode}: blocks={args.blocks} fps={bundle.fps:.4f} "
        f"fps_steady={bundle.fps_steady:.4f} ttff={bundle.ttff:.4f} nfe={bundle.nfe}"
    )
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "timeline.csv")
        export_timeline(sim.timeline, path, bundle)
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    sc = load_scenario(_resolve_config(args.config))
    ok, latent_digests, frame_digests = verify_equivalence(sc.engine)
    print(f"latents: tpp={latent_digests[0]} sequential={latent_digests[1]}")
    print(f"frames:  tpp={frame_digests[0]} sequential={frame_digests[1]}")
    if not ok:
        print("digest MISMATCH", file=sys.stderr)
        return EXIT_DIGEST
    print("digests match")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="livepipe",
        description="Streaming-diffusion inference engines and schedule simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario file")
    p_run.add_argument("--config", required=True,
                       help="scenario file path or shipped scenario name")
    p_run.add_argument("--out", required=True, help="artifact output directory")
    p_run.add_argument("--mode", default=None,
                       choices=["sequential", "clean_kv", "tpp", "simulate"],
                       help="override the engine mode")
    p_run.add_argument("--seed", type=int, default=None, help="override the noise seed")
    p_run.set_defaults(fn=_cmd_run)

    p_sim = sub.add_parser("simulate", help="virtual-clock schedule only")
    p_sim.add_argument("--latencies", required=True,
                       help="comma-separated stage latencies (T denoise + decode)")
    p_sim.add_argument("--blocks", type=int, required=True)
    p_sim.add_argument("--mode", default="tpp",
                       choices=["sequential", "clean_kv", "tpp"])
    p_sim.add_argument("--frames-per-block", type=int, default=12)
    p_sim.add_argument("--arrival", type=float, default=0.0)
    p_sim.add_argument("--out", default=None)
    p_sim.set_defaults(fn=_cmd_simulate)

    p_ver = sub.add_parser("verify", help="compare pipelined vs sequential digests")
    p_ver.add_argument("--config", required=True,
                       help="scenario file path or shipped scenario name")
    p_ver.set_defaults(fn=_cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, EngineConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineInvariantError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
