"""Frame conditioning: positional masks, condition stacks, and fragment plans.

A denoised window holds ``window_len`` frames.  Condition frames are
labelled by an integer j in [-1, k]: j = -1 marks the fixed all-zeros
stand-in U, labels 0..k-1 sit at the matching window position, and the
top label j = k marks the final window position (the future endpoint used
for interpolation).  The mask plane carries (j+1)/(k+1), so U reads 0 and
the endpoint reads 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "AutoregressionPlan",
    "ConditionSet",
    "FixedContext",
    "FragmentPlan",
    "PositionalMask",
    "StageWindows",
    "build_condition",
    "mask_value",
    "plan_autoregression",
    "select_stage_windows",
    "window_slot",
]


def mask_value(j: int, k: int) -> float:
    """Mask fill value (j+1)/(k+1) for label j in [-1, k]."""
    if k < 1:
        raise ValueError(f"fragment length k must be >= 1, got {k}")
    if not -1 <= j <= k:
        raise ValueError(f"label j must lie in [-1, {k}], got {j}")
    return (j + 1) / (k + 1)


def window_slot(j: int, k: int, window_len: int) -> int:
    """Window position carrying label j: itself below k, else the last slot."""
    if not 0 <= j <= k:
        raise ValueError(f"only labels 0..{k} occupy a window slot, got {j}")
    if window_len < 2 or window_len <= k:
        raise ValueError(f"window of {window_len} cannot carry labels up to {k}")
    return j if j < k else window_len - 1


@dataclass(frozen=True)
class PositionalMask:
    """A constant plane recording which window position a condition holds."""

    j: int
    k: int
    value: float
    plane: np.ndarray  # [1, H, W]

    @staticmethod
    def make(j: int, k: int, height: int, width: int, dtype=np.float32) -> "PositionalMask":
        value = mask_value(j, k)
        plane = np.full((1, height, width), value, dtype=dtype)
        return PositionalMask(j=j, k=k, value=value, plane=plane)


@dataclass(frozen=True)
class FixedContext:
    """The all-zeros stand-in U for missing local or global context."""

    shape: tuple[int, ...]

    def fragment(self, dtype=np.float32) -> np.ndarray:
        return np.zeros(self.shape, dtype=dtype)


@dataclass(frozen=True)
class ConditionSet:
    """Ordered condition frames with masks, plus the global-context source."""

    entries: tuple[tuple[np.ndarray, PositionalMask], ...]
    global_source: object  # ndarray fragment or FixedContext
    y_m: np.ndarray  # [P*(C+1), H, W]


def build_condition(
    frames: Sequence[np.ndarray | None],
    positions: Sequence[int],
    k: int,
    global_source,
    frame_shape: tuple[int, int, int] | None = None,
) -> ConditionSet:
    """Stack condition frames with their mask planes into y_m channels.

    ``positions[i]`` labels ``frames[i]``; entries with label -1 use the
    all-zeros frame U and may pass None.  Entries are re-sorted by label,
    so the output is invariant to input order.  Labels >= 0 must be
    distinct.
    """
    if len(frames) != len(positions):
        raise ValueError("frames and positions must have equal length")
    if not frames:
        raise ValueError("at least one condition entry is required")
    real = [j for j in positions if j != -1]
    if len(set(real)) != len(real):
        raise ValueError(f"duplicate condition labels: {sorted(real)}")

    shape = frame_shape
    for f in frames:
        if f is not None:
            f = np.asarray(f)
            if f.ndim != 3:
                raise ValueError(f"condition frames must be [C,H,W], got {f.shape}")
            if shape is None:
                shape = f.shape
            elif tuple(f.shape) != tuple(shape):
                raise ValueError(f"condition frame shapes differ: {f.shape} vs {shape}")
    if shape is None:
        raise ValueError("all entries are U; frame_shape is required")
    c, h, w = shape

    entries = []
    for f, j in sorted(zip(frames, positions), key=lambda fj: fj[1]):
        mask = PositionalMask.make(j, k, h, w)
        if j == -1:
            frame = np.zeros(shape, dtype=np.float32)
        else:
            if f is None:
                raise ValueError(f"label {j} needs a frame, got None")
            frame = np.asarray(f, dtype=np.float32)
        entries.append((frame, mask))
    y_m = np.concatenate(
        [np.concatenate([frame, mask.plane.astype(frame.dtype)]) for frame, mask in entries]
    )
    return ConditionSet(entries=tuple(entries), global_source=global_source, y_m=y_m)


# Condition sources inside a fragment plan:
#   ("input", i)   the i-th user-supplied frame
#   ("output", i)  absolute index i of an already-emitted frame
#   ("fixed",)     the all-zeros stand-in U
CondRef = tuple


@dataclass(frozen=True)
class FragmentPlan:
    index: int
    cond_refs: tuple[CondRef, ...]
    cond_labels: tuple[int, ...]
    target_positions: tuple[int, ...]  # window slots kept from this pass
    target_frames: tuple[int, ...]  # absolute output indices they land on
    global_from_previous: bool  # else FixedContext


@dataclass(frozen=True)
class AutoregressionPlan:
    task: str
    p: int
    k: int
    n: int
    window_len: int
    cond_slots: int
    pinned: tuple[tuple[int, int], ...]  # (absolute frame, input index)
    fragments: tuple[FragmentPlan, ...]

    @property
    def frames_produced(self) -> int:
        return len(self.pinned) + sum(len(f.target_frames) for f in self.fragments)


def _fragment(
    index: int,
    refs: list[CondRef],
    labels: list[int],
    window_len: int,
    cond_slots: int,
    k: int,
    first_target_slot: int,
    last_target_slot: int,
    first_abs: int,
    n: int,
    global_from_previous: bool,
) -> FragmentPlan:
    while len(refs) < cond_slots:
        refs.append(("fixed",))
        labels.append(-1)
    slots = range(first_target_slot, last_target_slot + 1)
    keep = min(len(slots), n - first_abs)
    return FragmentPlan(
        index=index,
        cond_refs=tuple(refs),
        cond_labels=tuple(labels),
        target_positions=tuple(list(slots)[:keep]),
        target_frames=tuple(range(first_abs, first_abs + keep)),
        global_from_previous=global_from_previous,
    )


def plan_autoregression(
    task: str,
    p: int,
    k: int,
    n: int,
    window_len: int | None = None,
    cond_slots: int = 2,
) -> AutoregressionPlan:
    """Lay out the fragment passes that assemble an n-frame output.

    ``predict`` seeds the window with the p given frames and appends k new
    frames per pass, each pass conditioning on the last window_len - k
    already-emitted frames.  ``generate`` produces the whole first window
    from U, then continues like predict.  ``interpolate`` is a single pass
    with the given frames pinned at both window ends.  The final pass is
    truncated so exactly n frames come out.
    """
    if k < 1 or n < 1:
        raise ValueError("k and n must be >= 1")
    if cond_slots < 1 or cond_slots > k + 1:
        raise ValueError(
            f"{cond_slots} condition slots cannot carry distinct labels in [0, {k}]"
        )
    if task == "predict":
        if p < 1:
            raise ValueError("predict needs at least one given frame")
        if n <= p:
            raise ValueError(f"n={n} adds nothing beyond the {p} given frames")
        window_len = p + k if window_len is None else window_len
        if window_len != p + k:
            raise ValueError(f"window of {window_len} cannot seed p={p} and step k={k}")
        if p > cond_slots:
            raise ValueError(f"p={p} exceeds the {cond_slots} condition slots")
        pinned = tuple((i, i) for i in range(p))
        refs: list[CondRef] = [("input", i) for i in range(p)]
        labels = list(range(p))
        fragments = [
            _fragment(0, refs, labels, window_len, cond_slots, k, p, window_len - 1, p, n, False)
        ]
        produced = p + len(fragments[0].target_frames)
    elif task == "generate":
        if p != 0:
            raise ValueError("generate takes no given frames")
        window_len = k + cond_slots if window_len is None else window_len
        pinned = ()
        fragments = [
            _fragment(0, [], [], window_len, cond_slots, k, 0, window_len - 1, 0, n, False)
        ]
        produced = len(fragments[0].target_frames)
    elif task == "interpolate":
        if p < 1:
            raise ValueError("interpolate needs at least one past frame")
        future = cond_slots - p
        if future != 1:
            raise ValueError(
                f"interpolate supports exactly one future endpoint; "
                f"p={p} with {cond_slots} condition slots leaves {future}"
            )
        window_len = p + k + future if window_len is None else window_len
        if window_len != p + k + future:
            raise ValueError(f"window of {window_len} cannot infill p={p}, k={k}, f={future}")
        if n != window_len:
            raise ValueError(f"interpolation emits the full {window_len}-frame window, n={n}")
        pinned = tuple((i, i) for i in range(p)) + ((window_len - 1, p),)
        refs = [("input", i) for i in range(p)] + [("input", p)]
        labels = list(range(p)) + [k]
        fragments = [
            _fragment(
                0, refs, labels, window_len, cond_slots, k, p, window_len - 2, p, n - 1, False
            )
        ]
        produced = len(pinned) + len(fragments[0].target_frames)
    else:
        raise ValueError(f"unknown task: {task!r}")

    if task != "interpolate":
        cond_count = window_len - k
        if cond_count > cond_slots:
            raise ValueError(
                f"continuation needs {cond_count} conditions but only "
                f"{cond_slots} slots exist"
            )
        index = 1
        while produced < n:
            start = produced
            refs = [("output", start - cond_count + i) for i in range(cond_count)]
            labels = list(range(cond_count))
            frag = _fragment(
                index,
                refs,
                labels,
                window_len,
                cond_slots,
                k,
                cond_count,
                window_len - 1,
                start,
                n,
                True,
            )
            fragments.append(frag)
            produced += len(frag.target_frames)
            index += 1

    plan = AutoregressionPlan(
        task=task,
        p=p,
        k=k,
        n=n,
        window_len=window_len,
        cond_slots=cond_slots,
        pinned=pinned,
        fragments=tuple(fragments),
    )
    if plan.frames_produced != n:
        raise AssertionError(f"plan produces {plan.frames_produced} frames, wanted {n}")
    return plan


@dataclass(frozen=True)
class StageWindows:
    stage1_target: range
    stage2_target: range
    stage2_cond: range


def select_stage_windows(length: int, p: int, k: int) -> StageWindows:
    """Frame index ranges for the two training stages of one clip.

    Stage 1 covers the leading window, stage 2 the following k frames;
    stage 2 is conditioned on the window positions the first stage
    predicted at [k, k+p).  Trailing frames beyond 2k+p go unused.
    """
    if p < 1 or k < 1:
        raise ValueError("p and k must be >= 1")
    if length < 2 * k + p:
        raise ValueError(f"clip of {length} frames is shorter than 2k+p = {2 * k + p}")
    return StageWindows(
        stage1_target=range(0, p + k),
        stage2_target=range(k + p, 2 * k + p),
        stage2_cond=range(k, k + p),
    )
