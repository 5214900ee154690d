"""Command-line pipeline: stats -> normalize -> simulate/replay/play -> sweep.

Exit codes: 0 success, 1 usage error (bad flags or parameter values),
2 data error (missing or malformed files, shape mismatches).

Defaults reproduce the standard protocol: 500 timesteps, threshold 1.0,
robust readout, percentile 99.9, epsilon 0.05, up to 30 no-op starts,
at most 15000 calibration frames, 10 episodes per sweep point and 50
for plain evaluation.  All randomness derives from --seed, so reruns
with the same flags produce identical bytes.  Reports gain a
"<out>.meta.json" sidecar recording the full protocol configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import modelio
from .evaluate import (EvalConfig, collect_frames_by_play, evaluate, replay_trace,
                       sweep_percentile, sweep_time)
from .lincatch import LineCatchEnv
from .modelio import EpisodeTrace, FormatError, ReportRow, TraceStep
from .network import greedy_action
from .normalize import NormConfig, apply_normalization, collect_stats, load_stats, save_stats
from .simulate import SimConfig, diagnostics, readout, run

DEFAULT_TIME_VALUES = [100, 500]
DEFAULT_PERCENTILE_VALUES = [99.9, 99.99]
SWEEP_EPISODES = 10
EVAL_EPISODES = 50
CALIBRATION_FRAMES = 512


class UsageError(Exception):
    """Bad parameter values; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; usage errors are 1
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_sim_flags(p, default_t=500):
    p.add_argument("--timesteps", type=int, default=default_t,
                   help=f"simulation steps per decision (default {default_t})")
    p.add_argument("--vthr", type=float, default=1.0, help="spike threshold (default 1.0)")
    p.add_argument("--readout", choices=("rate", "robust"), default="robust",
                   help="output readout (default robust)")


def _add_eval_flags(p, episodes):
    p.add_argument("--episodes", type=int, default=episodes,
                   help=f"episodes to run (default {episodes})")
    p.add_argument("--epsilon", type=float, default=0.05,
                   help="exploration probability (default 0.05)")
    p.add_argument("--max-noop", type=int, default=30,
                   help="max random no-op starts (default 30)")
    p.add_argument("--frame-budget", type=int, default=18000,
                   help="max environment steps per episode (default 18000)")
    p.add_argument("--cr-mode", choices=("greedy", "executed"), default="greedy",
                   help="compare greedy intents or executed actions (default greedy)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")


def _add_env_flags(p):
    p.add_argument("--grid-size", type=int, default=8, help="environment grid (default 8)")
    p.add_argument("--episode-len", type=int, default=112,
                   help="environment steps per episode (default 112)")


def build_parser() -> _Parser:
    parser = _Parser(prog="rateconv",
                     description="Convert value networks to spiking networks and "
                                 "measure how faithfully they act.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", parents=[], help="collect activation scale statistics")
    p.add_argument("--model", required=True, help="model directory")
    p.add_argument("--frames", required=True, help="frame blob or trace file")
    p.add_argument("--percentile", type=float, default=99.9,
                   help="scale percentile in [99, 100] (default 99.9)")
    p.add_argument("--max-frames", type=int, default=15000,
                   help="calibration frame cap (default 15000)")
    p.add_argument("--provenance", default="", help="free-form note on frame origin")
    p.add_argument("--out", required=True, help="stats JSON output path")

    p = sub.add_parser("normalize", help="rescale a model by collected statistics")
    p.add_argument("--model", required=True)
    p.add_argument("--stats", required=True, help="stats JSON from the stats command")
    p.add_argument("--out", required=True, help="output model directory")

    p = sub.add_parser("simulate", help="run the spiking network on one frame")
    p.add_argument("--model", required=True)
    p.add_argument("--frame", required=True, help="frame blob (or trace; first frame)")
    _add_sim_flags(p)
    p.add_argument("--diagnose", metavar="PATH", default=None,
                   help="also write identity residuals and case counts as JSON")

    p = sub.add_parser("replay", help="replay a trace through source and conversion")
    p.add_argument("--snn-model", required=True, help="converted model directory")
    p.add_argument("--source", default=None,
                   help="source model directory (else trust trace actions)")
    p.add_argument("--trace", required=True)
    _add_sim_flags(p)
    p.add_argument("--out", required=True, help="report CSV path")

    p = sub.add_parser("play", help="play the built-in environment")
    p.add_argument("--model", required=True, help="source model directory")
    p.add_argument("--snn-model", default=None,
                   help="converted model; omit to play the source alone")
    _add_sim_flags(p)
    _add_eval_flags(p, EVAL_EPISODES)
    _add_env_flags(p)
    p.add_argument("--record-trace", metavar="PATH", default=None,
                   help="record decision frames and source actions to a trace file")
    p.add_argument("--out", required=True, help="report CSV path")

    p = sub.add_parser("sweep", help="sweep simulation time or percentile")
    p.add_argument("--mode", choices=("time", "percentile"), required=True)
    p.add_argument("--values", default=None,
                   help="comma-separated sweep values (defaults: time 100,500; "
                        "percentile 99.9,99.99)")
    p.add_argument("--model", required=True, help="source model directory")
    p.add_argument("--frames", default=None,
                   help="calibration frames (blob or trace); collected by play if omitted")
    p.add_argument("--percentile", type=float, default=99.9,
                   help="fixed percentile for time sweeps (default 99.9)")
    p.add_argument("--max-frames", type=int, default=15000)
    _add_sim_flags(p)
    _add_eval_flags(p, SWEEP_EPISODES)
    _add_env_flags(p)
    p.add_argument("--out", required=True, help="report CSV path")

    return parser


# ---------------------------------------------------------------------------
# shared argument checks

def _sim_config(args) -> SimConfig:
    if args.timesteps < 1:
        raise UsageError(f"--timesteps must be >= 1, got {args.timesteps}")
    if not args.vthr > 0:
        raise UsageError(f"--vthr must be positive, got {args.vthr}")
    return SimConfig(timesteps=args.timesteps, v_thr=args.vthr, readout=args.readout)


def _eval_config(args) -> EvalConfig:
    if not 0.0 <= args.epsilon <= 1.0:
        raise UsageError(f"--epsilon must be in [0, 1], got {args.epsilon}")
    if args.episodes < 1:
        raise UsageError(f"--episodes must be >= 1, got {args.episodes}")
    if args.max_noop < 0:
        raise UsageError(f"--max-noop must be >= 0, got {args.max_noop}")
    if args.frame_budget < 0:
        raise UsageError(f"--frame-budget must be >= 0, got {args.frame_budget}")
    return EvalConfig(epsilon=args.epsilon, max_noop=args.max_noop, episodes=args.episodes,
                      seed=args.seed, frame_budget=args.frame_budget, cr_mode=args.cr_mode)


def _check_percentile(p: float) -> float:
    if not 99.0 <= p <= 100.0:
        raise UsageError(f"percentile must be in [99, 100], got {p}")
    return p


def _env(args) -> LineCatchEnv:
    if args.grid_size < 2:
        raise UsageError(f"--grid-size must be >= 2, got {args.grid_size}")
    if args.episode_len < 1:
        raise UsageError(f"--episode-len must be >= 1, got {args.episode_len}")
    return LineCatchEnv(grid_size=args.grid_size, episode_len=args.episode_len)


def _parse_values(raw: str | None, mode: str) -> list[float]:
    if raw is None:
        return [float(v) for v in
                (DEFAULT_TIME_VALUES if mode == "time" else DEFAULT_PERCENTILE_VALUES)]
    items = [s.strip() for s in raw.split(",") if s.strip()]
    if not items:
        raise UsageError("--values must list at least one number")
    try:
        values = [float(s) for s in items]
    except ValueError as exc:
        raise UsageError(f"--values failed to parse: {exc}") from exc
    if mode == "time":
        if any(v < 1 or v != int(v) for v in values):
            raise UsageError(f"time values must be positive integers, got {raw}")
    else:
        for v in values:
            _check_percentile(v)
    return values


def _write_meta(out_path: str, payload: dict) -> None:
    Path(str(out_path) + ".meta.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_frame(path: str, input_shape) -> np.ndarray:
    """One frame from a blob (exact shape or stacked) or a trace (first frame)."""
    p = Path(path)
    if not p.is_file():
        raise FormatError(f"{p}: no such file")
    with open(p, "rb") as fh:
        magic = fh.read(8)
    if magic == modelio.TRACE_MAGIC:
        frames = modelio.read_trace(p).observations()
        if frames.shape[0] < 1:
            raise FormatError(f"{p}: trace contains no frames")
        return frames[0].astype(np.float64)
    arr = modelio.read_blob(p)
    if tuple(arr.shape) != tuple(input_shape) and arr.ndim >= 1 \
            and arr.shape[0] >= 1 and tuple(arr.shape[1:]) == tuple(input_shape):
        arr = arr[0]  # stacked frames: take the first
    return arr.astype(np.float64)


# ---------------------------------------------------------------------------
# commands

def cmd_stats(args) -> int:
    _check_percentile(args.percentile)
    if args.max_frames < 1:
        raise UsageError(f"--max-frames must be >= 1, got {args.max_frames}")
    net = modelio.load_model(args.model)
    frames = modelio.load_frames(args.frames)
    stats = collect_stats(net, frames, NormConfig(args.percentile, args.max_frames),
                          provenance=args.provenance or str(args.frames))
    save_stats(stats, args.out)
    print(f"wrote {args.out}: {len(stats.scales)} scales, "
          f"{len(stats.warnings)} warnings")
    return 0


def cmd_normalize(args) -> int:
    net = modelio.load_model(args.model)
    stats = load_stats(args.stats)
    modelio.save_model(apply_normalization(net, stats), args.out)
    print(f"wrote normalized model to {args.out}")
    return 0


def cmd_simulate(args) -> int:
    config = _sim_config(args)
    net = modelio.load_model(args.model)
    frame = _load_frame(args.frame, net.input_shape)
    result = run(net, frame, config)
    values = readout(result)
    print("readout:", " ".join(format(v, ".9g") for v in values))
    print("action:", greedy_action(values))
    if args.diagnose:
        payload = diagnostics(result, net, frame=frame)
        Path(args.diagnose).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        print(f"wrote diagnostics to {args.diagnose}")
    return 0


def cmd_replay(args) -> int:
    config = _sim_config(args)
    snn_net = modelio.load_model(args.snn_model)
    source = modelio.load_model(args.source) if args.source else None
    trace = modelio.read_trace(args.trace)
    report = replay_trace(trace, snn_net, config, source_net=source)
    row = ReportRow("replay", float(config.timesteps), 1,
                    report.mean_source_score, 0.0,
                    report.cr, 0.0, float("nan"))
    modelio.write_report([row], args.out)
    _write_meta(args.out, {
        "command": "replay", "timesteps": config.timesteps, "v_thr": config.v_thr,
        "readout": config.readout, "decisions": report.decisions,
        "agreements": report.agreements, "conversion_rate": report.cr,
        "source_recomputed": args.source is not None,
    })
    print(f"conversion rate {report.cr:.6f} "
          f"({report.agreements}/{report.decisions} decisions)")
    return 0


def _record_trace(records, env: LineCatchEnv, path: str) -> None:
    steps = []
    for rec in records:
        actions = rec.shadow_actions if rec.shadow_actions is not None else rec.greedy_actions
        for obs, action, reward in zip(rec.frames, actions, rec.rewards):
            steps.append(TraceStep(observation=obs, action=int(action), reward=float(reward)))
    trace = EpisodeTrace(action_count=env.action_count,
                         observation_shape=env.observation_shape, steps=steps)
    modelio.write_trace(trace, path)


def cmd_play(args) -> int:
    sim_config = _sim_config(args)
    eval_config = _eval_config(args)
    env = _env(args)
    source = modelio.load_model(args.model)
    snn_net = modelio.load_model(args.snn_model) if args.snn_model else None
    report = evaluate(source, snn_net, sim_config, eval_config, env=env,
                      keep_records=args.record_trace is not None)
    if args.record_trace:
        _record_trace(report.records, env, args.record_trace)
    mean_score, std_score = ((report.mean_snn_score, report.std_snn_score)
                             if snn_net is not None
                             else (report.mean_source_score, report.std_source_score))
    row = ReportRow("play", float(sim_config.timesteps), eval_config.episodes,
                    mean_score, std_score, report.mean_cr, report.std_cr, float("nan"))
    modelio.write_report([row], args.out)
    _write_meta(args.out, {
        "command": "play", "episodes": eval_config.episodes,
        "epsilon": eval_config.epsilon, "max_noop": eval_config.max_noop,
        "frame_budget": eval_config.frame_budget, "cr_mode": eval_config.cr_mode,
        "seed": eval_config.seed, "timesteps": sim_config.timesteps,
        "v_thr": sim_config.v_thr, "readout": sim_config.readout,
        "grid_size": env.grid_size, "episode_len": env.episode_len,
        "spiking_agent": snn_net is not None,
        "mean_source_score": report.mean_source_score,
        "conversion_rate": report.cr,
    })
    print(f"mean score {mean_score:.3f} over {eval_config.episodes} episodes, "
          f"conversion rate {report.cr:.6f}")
    return 0


def cmd_sweep(args) -> int:
    sim_config = _sim_config(args)
    eval_config = _eval_config(args)
    env = _env(args)
    values = _parse_values(args.values, args.mode)
    _check_percentile(args.percentile)
    if args.max_frames < 1:
        raise UsageError(f"--max-frames must be >= 1, got {args.max_frames}")
    source = modelio.load_model(args.model)

    if args.frames:
        frames = modelio.load_frames(args.frames).astype(np.float64)
    else:
        frames = collect_frames_by_play(source, env, CALIBRATION_FRAMES,
                                        replace(eval_config, episodes=1))
    if args.mode == "time":
        rows = sweep_time(source, env, frames, [int(v) for v in values], sim_config,
                          eval_config, percentile=args.percentile, max_frames=args.max_frames)
    else:
        rows = sweep_percentile(source, env, frames, values, sim_config, eval_config,
                                max_frames=args.max_frames)
    modelio.write_report(rows, args.out)
    _write_meta(args.out, {
        "command": "sweep", "mode": args.mode, "values": values,
        "episodes": eval_config.episodes, "epsilon": eval_config.epsilon,
        "max_noop": eval_config.max_noop, "frame_budget": eval_config.frame_budget,
        "cr_mode": eval_config.cr_mode, "seed": eval_config.seed,
        "percentile": args.percentile, "timesteps": sim_config.timesteps,
        "v_thr": sim_config.v_thr, "readout": sim_config.readout,
        "grid_size": env.grid_size, "episode_len": env.episode_len,
        "calibration_frames": int(frames.shape[0]),
        "points": [{"value": r.value, "mean_score": r.mean_score,
                    "std_score": r.std_score, "mean_cr": r.mean_cr,
                    "std_cr": r.std_cr} for r in rows],
    })
    print(f"wrote {len(rows)} sweep rows to {args.out} "
          f"(pearson {rows[0].pearson_score_cr:.6g})")
    return 0


COMMANDS = {
    "stats": cmd_stats,
    "normalize": cmd_normalize,
    "simulate": cmd_simulate,
    "replay": cmd_replay,
    "play": cmd_play,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else int(exc.code)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"rateconv {args.command}: {exc}", file=sys.stderr)
        return 1
    except (FormatError, FileNotFoundError, NotADirectoryError, IsADirectoryError,
            PermissionError, ValueError, OSError) as exc:
        print(f"rateconv {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
