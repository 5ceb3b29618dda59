"""Drive an autoregression plan: one DDPM pass per fragment.

Each fragment builds its condition stack from already-available frames,
encodes its global context once (the previous fragment's denoised window,
or the zero stand-in U for the first fragment), and denoises a full
window.  Only the fragment's target positions are written to the output;
given frames are passed through untouched.
"""

from __future__ import annotations

import numpy as np

from ._conditioning import AutoregressionPlan, FixedContext, build_condition
from ._diffusion import NoiseSchedule, ddpm_sample
from ._network import DenoisingModel
from ._tensor import Array

__all__ = ["run_plan"]


def _conditions_for(fragment, given, out) -> tuple[list, list[int]]:
    frames: list[np.ndarray | None] = []
    for ref in fragment.cond_refs:
        kind = ref[0]
        if kind == "fixed":
            frames.append(None)
        elif kind == "input":
            frames.append(given[ref[1]])
        elif kind == "output":
            frames.append(out[ref[1]])
        else:
            raise ValueError(f"unknown condition source {ref!r}")
    return frames, list(fragment.cond_labels)


def run_plan(
    model: DenoisingModel,
    sched: NoiseSchedule,
    plan: AutoregressionPlan,
    given: np.ndarray | None,
    steps: int,
    seed: int,
) -> np.ndarray:
    """Execute a plan and return all n frames as [n, C, H, W] in [-1, 1]."""
    cfg = model.cfg
    if plan.window_len != cfg.frames:
        raise ValueError(
            f"plan windows hold {plan.window_len} frames but the model "
            f"denoises {cfg.frames}"
        )
    if plan.cond_slots != cfg.cond_slots:
        raise ValueError(
            f"plan uses {plan.cond_slots} condition slots, model has {cfg.cond_slots}"
        )
    n_given = max((ref[1] for frag in plan.fragments for ref in frag.cond_refs
                   if ref[0] == "input"), default=-1) + 1
    n_given = max(n_given, max((i for _, i in plan.pinned), default=-1) + 1)
    if n_given:
        if given is None:
            raise ValueError(f"plan needs {n_given} given frames, got none")
        given = np.asarray(given, dtype=np.float32)
        if given.ndim != 4 or given.shape[0] < n_given:
            raise ValueError(f"plan needs {n_given} given frames, got {given.shape}")

    c, h, w = cfg.channels, cfg.frame_size, cfg.frame_size
    out = np.zeros((plan.n, c, h, w), dtype=np.float32)
    for abs_idx, input_idx in plan.pinned:
        out[abs_idx] = given[input_idx]

    frag_seeds = np.random.SeedSequence(seed).spawn(len(plan.fragments))
    shape = (cfg.frames, c, h, w)
    u_context = FixedContext((cfg.frames, c, h, w))
    prev_window: np.ndarray | None = None

    for fragment, frag_seed in zip(plan.fragments, frag_seeds):
        frames, labels = _conditions_for(fragment, given, out)
        source = prev_window if fragment.global_from_previous else u_context
        cond = build_condition(frames, labels, plan.k, source, frame_shape=(c, h, w))
        context = (
            source.fragment() if isinstance(source, FixedContext) else source
        )
        z = model.encode(Array(model.fold(context)))
        y_m = Array(cond.y_m[None])

        def denoiser(x_t, t, _cond, _z=z, _y=y_m):
            folded = Array(model.fold(x_t))
            v_hat = model.unet(folded, np.array([t]), _y, _z)
            return model.unfold(v_hat.data)[0]

        window = ddpm_sample(denoiser, cond, shape, sched, steps, frag_seed)
        for pos, abs_idx in zip(fragment.target_positions, fragment.target_frames):
            out[abs_idx] = window[pos]
        prev_window = window
    return out
