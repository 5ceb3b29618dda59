"""Command-line interface: dataset creation, training, sampling, evaluation.

Every command is deterministic given its flags.  Exit code 0 means the
command completed; failures print a single-line diagnostic to stderr and
exit nonzero.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ._conditioning import plan_autoregression
from ._dataset import generate_dataset
from ._diffusion import make_cosine_schedule
from ._io import (
    CheckpointError,
    FrameFormatError,
    load_checkpoint,
    load_frames,
    save_checkpoint,
    save_frames,
)
from ._metrics import psnr, ssim
from ._sampler import run_plan
from ._training import (
    TrainingConfig,
    config_from_tensors,
    state_from_tensors,
    state_tensors,
    train,
)

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fragdiff",
        description="Autoregressive fragment-wise video diffusion engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("make-data", help="write synthetic bouncing-square clips")
    d.add_argument("--out", required=True, help="output directory of clip folders")
    d.add_argument("--count", type=int, required=True, help="number of clips")
    d.add_argument("--length", type=int, default=14, help="frames per clip")
    d.add_argument("--size", type=int, default=16, help="frame height and width")
    d.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train on a clip directory")
    t.add_argument("--data", required=True, help="directory of clip folders")
    t.add_argument("--out", required=True, help="checkpoint path (resumes if present)")
    t.add_argument("--steps", type=int, default=2000, help="total optimizer steps")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--no-stage2", action="store_true", help="skip the second-stage update")
    t.add_argument(
        "--no-global", action="store_true", help="zero and freeze cross-attention values"
    )

    s = sub.add_parser("sample", help="sample frames from a checkpoint")
    s.add_argument("--task", choices=("predict", "interpolate", "generate"), required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--cond", help="condition frame directory")
    s.add_argument("--p", type=int, help="given past frames (condition count for predict)")
    s.add_argument("--k", type=int, help="frames added per pass")
    s.add_argument("--n", type=int, required=True, help="total frames to emit")
    s.add_argument("--steps", type=int, default=100, help="reverse-chain length")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output frame directory")

    e = sub.add_parser("eval", help="report per-frame and mean PSNR/SSIM")
    e.add_argument("--pred", help="predicted frame directory")
    e.add_argument("--truth", required=True, help="ground-truth frame directory")
    e.add_argument("--best-of", type=int, dest="best_of", help="resample N trajectories")
    e.add_argument("--ckpt", help="checkpoint for --best-of resampling")
    e.add_argument("--task", choices=("predict", "interpolate", "generate"))
    e.add_argument("--cond", help="condition frames for --best-of resampling")
    e.add_argument("--p", type=int)
    e.add_argument("--k", type=int)
    e.add_argument("--n", type=int)
    e.add_argument("--steps", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_make_data(args) -> int:
    clips = generate_dataset(args.count, args.length, args.size, args.seed)
    out = Path(args.out)
    for i, clip in enumerate(clips):
        save_frames(clip.frames, out / f"clip_{i:04d}")
    print(f"wrote {len(clips)} clips to {out}")
    return 0


def _load_clip_dir(data: str) -> np.ndarray:
    root = Path(data)
    dirs = sorted(d for d in root.iterdir() if (d / "manifest.json").exists())
    if not dirs:
        raise FrameFormatError(f"{root}: no clip directories with manifests found")
    clips = [load_frames(d) for d in dirs]
    shapes = {c.shape for c in clips}
    if len(shapes) > 1:
        raise FrameFormatError(f"{root}: clips disagree on shape: {sorted(shapes)}")
    return np.stack(clips)


def _cmd_train(args) -> int:
    clips = _load_clip_dir(args.data)
    _, length, _, h, w = clips.shape
    cfg = TrainingConfig(
        clip_length=length,
        frame_size=h,
        channels=clips.shape[2],
        max_steps=args.steps,
        seed=args.seed,
        two_stage=not args.no_stage2,
        global_context=not args.no_global,
    )
    ckpt = Path(args.out)
    state = None
    log_mode = "w"
    if ckpt.exists():
        tensors = load_checkpoint(ckpt)
        saved_cfg, _ = config_from_tensors(tensors)
        if replace(saved_cfg, max_steps=cfg.max_steps) != cfg:
            raise CheckpointError(
                f"incompatible checkpoint resume: {ckpt} was trained with "
                f"{saved_cfg}, flags ask for {cfg}"
            )
        state = state_from_tensors(tensors)
        state.cfg = cfg
        log_mode = "a"
    log_path = ckpt.with_name(ckpt.name + ".log")
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, log_mode) as log:

        def on_step(step, loss1, loss2):
            log.write(f"{step}\t{loss1:.6f}\t{loss2:.6f}\n")
            log.flush()

        state = train(clips, cfg, state=state, on_step=on_step)
    save_checkpoint(ckpt, state_tensors(state))
    print(f"trained to step {state.step}; checkpoint at {ckpt}, loss log at {log_path}")
    return 0


def _restore(ckpt_path: str):
    tensors = load_checkpoint(ckpt_path)
    state = state_from_tensors(tensors)
    return state.model, make_cosine_schedule(state.cfg.diffusion_steps), state.cfg


def _plan_and_given(args, cfg, model):
    window = cfg.cond_slots + cfg.frames_per_stage
    if args.task == "generate":
        if args.cond:
            raise ValueError("generate draws from pure noise; --cond is not allowed")
        if args.p:
            raise ValueError("generate takes no given frames; drop --p")
        k = cfg.frames_per_stage if args.k is None else args.k
        return plan_autoregression("generate", 0, k, args.n, cond_slots=cfg.cond_slots), None
    if not args.cond:
        raise ValueError(f"{args.task} requires --cond frames")
    given = load_frames(args.cond)
    if args.p is None:
        raise ValueError(f"{args.task} requires --p")
    if args.task == "predict":
        if given.shape[0] != args.p:
            raise ValueError(
                f"condition directory holds {given.shape[0]} frames but --p is {args.p}"
            )
        k = window - args.p if args.k is None else args.k
        plan = plan_autoregression("predict", args.p, k, args.n, cond_slots=cfg.cond_slots)
    else:
        f = cfg.cond_slots - args.p
        if given.shape[0] != args.p + f:
            raise ValueError(
                f"interpolation needs p+f = {args.p + f} endpoint frames, "
                f"condition directory holds {given.shape[0]}"
            )
        k = window - cfg.cond_slots if args.k is None else args.k
        plan = plan_autoregression(
            "interpolate", args.p, k, args.n, cond_slots=cfg.cond_slots
        )
    return plan, given


def _cmd_sample(args) -> int:
    model, sched, cfg = _restore(args.ckpt)
    plan, given = _plan_and_given(args, cfg, model)
    frames = run_plan(model, sched, plan, given, steps=args.steps, seed=args.seed)
    save_frames(frames, args.out)
    print(f"wrote {frames.shape[0]} frames to {args.out}")
    return 0


def _report(per_psnr: np.ndarray, per_ssim: np.ndarray, mean_psnr: float, mean_ssim: float):
    for i, (p, s) in enumerate(zip(per_psnr, per_ssim)):
        print(f"{i}\t{p:.4f}\t{s:.6f}")
    print(f"mean\t{mean_psnr:.4f}\t{mean_ssim:.6f}")


def _cmd_eval(args) -> int:
    truth = load_frames(args.truth)
    if args.best_of is None:
        if not args.pred:
            raise ValueError("eval needs --pred (or --best-of with sampler flags)")
        pred = load_frames(args.pred)
        if pred.shape[0] != truth.shape[0]:
            raise ValueError(
                f"frame count mismatch: pred {pred.shape[0]} vs truth {truth.shape[0]}"
            )
        pp, mp = psnr(pred, truth)
        ps, ms = ssim(pred, truth)
        _report(pp, ps, mp, ms)
        return 0
    if args.best_of < 1:
        raise ValueError("--best-of must be >= 1")
    if not args.ckpt or not args.task or args.n is None:
        raise ValueError("--best-of needs --ckpt, --task and --n to resample")
    model, sched, cfg = _restore(args.ckpt)
    plan, given = _plan_and_given(args, cfg, model)
    best = None
    best_mean_ssim = -np.inf
    for seed in range(args.seed, args.seed + args.best_of):
        frames = run_plan(model, sched, plan, given, steps=args.steps, seed=seed)
        if frames.shape[0] != truth.shape[0]:
            raise ValueError(
                f"frame count mismatch: sampled {frames.shape[0]} vs truth {truth.shape[0]}"
            )
        pp, mp = psnr(frames, truth)
        ps, ms = ssim(frames, truth)
        if best is None or mp > best[2]:
            best = (pp, ps, mp, ms)
        best_mean_ssim = max(best_mean_ssim, ms)
    pp, ps, mp, _ = best
    _report(pp, ps, mp, best_mean_ssim)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "make-data": _cmd_make_data,
        "train": _cmd_train,
        "sample": _cmd_sample,
        "eval": _cmd_eval,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, OSError, RuntimeError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
