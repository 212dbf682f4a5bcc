"""Single CLI entry point: precompute / train / generate / eval / dry-run.

Every run prints the resolved config fingerprint and seed first. Exit codes:
0 success, 1 flag/config validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .config import (
    ConfigError,
    TrainConfig,
    config_fingerprint,
    get_preset,
    load_config,
)


class CliError(Exception):
    """Validation error surfaced with exit code 1."""


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", choices=["full", "toy"], default="toy")
    parser.add_argument("--config", help="JSON config file (overrides --preset)")
    parser.add_argument("--seed", type=int, default=None, help="override train seed")
    parser.add_argument("--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="physvid")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("precompute", help="stream synthetic clips into a binary shard")
    _add_common(sp)
    sp.add_argument("--seeds", default="0..63", help="seed range a..b (inclusive)")

    sp = sub.add_parser("train", help="joint training of denoiser and physics predictor")
    _add_common(sp)
    sp.add_argument("--steps", type=int, default=None, help="override max_steps")
    sp.add_argument("--data", help="precomputed shard file (default: synthesize --seeds)")
    sp.add_argument("--seeds", default="0..63", help="synthesis seed range if no --data")
    sp.add_argument("--resume", help="checkpoint to resume from")
    sp.add_argument("--freeze-policy", choices=["spatial-frozen", "all-trainable"], default="spatial-frozen")
    sp.add_argument("--detach-physics", action="store_true",
                    help="stop diffusion-loss gradients at the predicted physics tokens")

    sp = sub.add_parser("generate", help="text-to-video sampling from a checkpoint")
    _add_common(sp)
    sp.add_argument("--prompt", required=True)
    sp.add_argument("--steps", type=int, default=None, help="reverse steps (default: full T)")
    sp.add_argument("--physics", choices=["on", "off"], default="on")
    sp.add_argument("--checkpoint", help="trained checkpoint (.pvgk)")

    sp = sub.add_parser("eval", help="run video metrics over a directory of frame folders")
    _add_common(sp)
    sp.add_argument("--videos", required=True, help="directory of PPM frame subdirectories")
    sp.add_argument("--metrics", default="flow,embed,tlpips")
    sp.add_argument("--report", default=None, help="report path (default: <out>/report.jsonl)")

    sp = sub.add_parser("dry-run", help="single checkpoint-free denoising step")
    _add_common(sp)
    sp.add_argument("--prompt", required=True)
    return p


def _resolve_configs(args):
    if args.config:
        model_cfg, diff_cfg, train_cfg = load_config(args.config)
    else:
        model_cfg, diff_cfg, train_cfg = get_preset(args.preset)
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    return model_cfg, diff_cfg, train_cfg


def _parse_seed_range(spec: str) -> range:
    try:
        a, b = spec.split("..")
        lo, hi = int(a), int(b)
    except ValueError:
        raise CliError(f"--seeds must look like 'a..b', got {spec!r}") from None
    if hi < lo:
        raise CliError(f"--seeds range is empty: {spec}")
    return range(lo, hi + 1)


def _banner(model_cfg, seed: int) -> None:
    print(f"config fingerprint: {config_fingerprint(model_cfg)}")
    print(f"seed: {seed}")


def cmd_precompute(args) -> int:
    from . import data

    model_cfg, _, train_cfg = _resolve_configs(args)
    _banner(model_cfg, train_cfg.seed)
    seeds = _parse_seed_range(args.seeds)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "shard.pvgc")
    n = data.write_shard(data.stream_samples(seeds, model_cfg), path, model_cfg)
    print(f"wrote {n} samples to {path}")
    return 0


def _load_dataset(args, model_cfg):
    from . import data

    if args.data:
        return list(data.read_shard(args.data, model_cfg))
    return list(data.stream_samples(_parse_seed_range(args.seeds), model_cfg))


def cmd_train(args) -> int:
    from . import plots, training

    model_cfg, diff_cfg, train_cfg = _resolve_configs(args)
    if args.steps is not None:
        if args.steps < 0:
            raise CliError(f"--steps must be >= 0, got {args.steps}")
        train_cfg = dataclasses.replace(train_cfg, max_steps=args.steps)
    if args.detach_physics:
        train_cfg = dataclasses.replace(train_cfg, detach_physics=True)
    _banner(model_cfg, train_cfg.seed)
    dataset = _load_dataset(args, model_cfg)
    if args.resume:
        state = training.load_checkpoint(args.resume, model_cfg, train_cfg)
    else:
        state = training.init_state(model_cfg, train_cfg, args.freeze_policy)
    reports = training.train_loop(dataset, state, model_cfg, diff_cfg, train_cfg, args.out)
    if reports:
        plots.plot_loss_curves(reports, os.path.join(args.out, "loss_curves.png"))
        last = reports[-1]
        print(
            f"step {last.step}: diffusion={last.diffusion_loss:.4f} "
            f"physics={last.physics_loss:.4f} total={last.total_loss:.4f}"
        )
    print(f"checkpoint: {os.path.join(args.out, 'checkpoint.pvgk')}")
    return 0


def cmd_generate(args) -> int:
    from . import inference, plots, training
    from .diffusion import make_schedule

    model_cfg, diff_cfg, train_cfg = _resolve_configs(args)
    _banner(model_cfg, args.seed if args.seed is not None else train_cfg.seed)
    if not args.checkpoint:
        raise CliError(
            "generate requires --checkpoint; run `physvid train --out <dir>` first and "
            "pass <dir>/checkpoint.pvgk"
        )
    state = training.load_checkpoint(args.checkpoint, model_cfg, train_cfg)
    sched = make_schedule(diff_cfg)
    steps = args.steps if args.steps is not None else sched.num_timesteps
    req = inference.GenerationRequest(
        prompt=args.prompt,
        num_steps=steps,
        seed=args.seed if args.seed is not None else train_cfg.seed,
        physics=args.physics,
    )
    video = inference.generate(req, state.predictor, state.generator, sched, model_cfg)
    frames_dir = os.path.join(args.out, "frames")
    inference.write_video(video, frames_dir)
    plots.plot_physics_norms(
        video.per_step_physics_norm, os.path.join(args.out, "physics_norms.png")
    )
    with open(os.path.join(args.out, "generation.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "prompt": req.prompt,
                "seed": req.seed,
                "num_steps": req.num_steps,
                "physics": req.physics,
                "per_step_physics_norm": video.per_step_physics_norm,
            },
            fh,
            indent=2,
        )
    print(f"wrote {video.frames.shape[1]} frames to {frames_dir}")
    return 0


def cmd_eval(args) -> int:
    from . import inference, metrics, plots

    model_cfg, _, train_cfg = _resolve_configs(args)
    _banner(model_cfg, train_cfg.seed)
    selected = tuple(m for m in args.metrics.split(",") if m)
    unknown = [m for m in selected if m not in metrics.ALL_METRICS]
    if unknown:
        raise CliError(f"unknown metrics: {', '.join(unknown)}")
    if not os.path.isdir(args.videos):
        raise CliError(f"--videos directory not found: {args.videos}")
    videos = []
    for name in sorted(os.listdir(args.videos)):
        sub = os.path.join(args.videos, name)
        if os.path.isdir(sub):
            videos.append((name, inference.read_video(sub)))
    reports = metrics.eval_corpus(videos, selected)
    os.makedirs(args.out, exist_ok=True)
    report_path = args.report or os.path.join(args.out, "report.jsonl")
    with open(report_path, "w", encoding="utf-8") as fh:
        for r in reports:
            row = dataclasses.asdict(r)
            # reserved for external benchmark scores merged later
            row["videophy_semantic"] = None
            row["videophy_physical"] = None
            fh.write(json.dumps(row) + "\n")
        fh.write(json.dumps({"summary": metrics.summarize(reports)}) + "\n")
    plots.plot_metric_report(reports, os.path.join(args.out, "report_figures.png"))
    print(f"evaluated {len(videos)} videos -> {report_path}")
    return 0


def cmd_dry_run(args) -> int:
    from . import inference

    model_cfg, diff_cfg, train_cfg = _resolve_configs(args)
    _banner(model_cfg, train_cfg.seed)
    diag = inference.dry_run(args.prompt, model_cfg, diff_cfg, seed=train_cfg.seed)
    print(json.dumps(diag, indent=2))
    return 0 if diag["all_finite"] else 2


_COMMANDS = {
    "precompute": cmd_precompute,
    "train": cmd_train,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "dry-run": cmd_dry_run,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return _COMMANDS[args.command](args)
    except (CliError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
