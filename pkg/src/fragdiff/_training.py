"""Two-stage training: denoise a window, then continue from its own output.

Each step runs two optimizer updates.  Stage 1 denoises the leading
window with conditions drawn from its ground-truth frames (each possibly
swapped for the zero stand-in U) and no global context.  The stage-1
velocity output is converted straight to a clean-window estimate; stage 2
then denoises the following frames conditioned on the predicted overlap
frames, with the global context encoded from the whole predicted window.
No gradient crosses the stage boundary: the stage-2 inputs are detached
data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._conditioning import build_condition, select_stage_windows, window_slot
from ._diffusion import NoiseSchedule, make_cosine_schedule, q_sample, v_from_x0_eps, x0_from_v
from ._network import DenoisingModel, NetworkConfig
from ._tensor import Array, Graph, backward, mean_all, mul, sub

__all__ = [
    "AdamState",
    "TrainState",
    "TrainingConfig",
    "adam_update",
    "two_stage_step",
    "train",
    "v_loss",
]

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainingConfig:
    """Knobs for one training run; defaults match the desk-scale setup."""

    diffusion_steps: int = 1000  # T
    clip_length: int = 14  # L
    frames_per_stage: int = 6  # k: new frames each stage predicts
    cond_slots: int = 2  # p: condition entries per window
    channels: int = 3
    frame_size: int = 16
    base_width: int = 32
    learning_rate: float = 3e-4
    batch_size: int = 8
    max_steps: int = 2000
    seed: int = 0
    two_stage: bool = True
    global_context: bool = True

    def __post_init__(self):
        # checkpoints persist the rate at single precision; normalize up
        # front so a restored config compares equal to a fresh one
        object.__setattr__(self, "learning_rate", float(np.float32(self.learning_rate)))
        if self.clip_length < 2 * self.frames_per_stage + self.cond_slots:
            raise ValueError(
                f"clip_length {self.clip_length} shorter than "
                f"2k+p = {2 * self.frames_per_stage + self.cond_slots}"
            )
        if min(self.batch_size, self.max_steps + 1, self.diffusion_steps) < 1:
            raise ValueError("batch_size and diffusion_steps must be >= 1, max_steps >= 0")
        if not 0 <= self.seed < 2**32:
            raise ValueError("seed must fit in 32 bits")

    @property
    def window_len(self) -> int:
        return self.cond_slots + self.frames_per_stage

    def network(self) -> NetworkConfig:
        return NetworkConfig(
            frames=self.window_len,
            channels=self.channels,
            cond_slots=self.cond_slots,
            base_width=self.base_width,
            frame_size=self.frame_size,
        )


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    updates: int = 0

    @classmethod
    def zeros(cls, params: dict[str, Array]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a.data) for k, a in params.items()},
            v={k: np.zeros_like(a.data) for k, a in params.items()},
        )


def adam_update(
    params: dict[str, Array],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    frozen: set[str] = frozenset(),
) -> None:
    """One bias-corrected Adam update, in place; frozen names are skipped."""
    state.updates += 1
    t = state.updates
    c1 = 1.0 - _ADAM_BETA1**t
    c2 = 1.0 - _ADAM_BETA2**t
    for name, p in params.items():
        if name in frozen:
            continue
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= _ADAM_BETA1
        m += (1.0 - _ADAM_BETA1) * g
        v *= _ADAM_BETA2
        v += (1.0 - _ADAM_BETA2) * g * g
        p.data -= (lr / c1) * m / (np.sqrt(v / c2) + _ADAM_EPS)


def v_loss(
    model: DenoisingModel,
    x0_window: np.ndarray,
    y_m: np.ndarray,
    global_fragment: np.ndarray,
    t: np.ndarray,
    eps: np.ndarray,
    sched: NoiseSchedule,
) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Velocity-matching MSE and its parameter gradients for one batch.

    ``x0_window`` is [B, F, C, H, W]; ``t`` holds one timestep per sample.
    The global fragment is encoded inside the loss graph so the sequence
    encoder trains too.  Returns (loss, gradients by name, predicted
    velocity as folded channels).
    """
    x0 = model.fold(x0_window)
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} does not match folded {x0.shape}")
    x_t = q_sample(x0, t, eps, sched)
    v_target = v_from_x0_eps(x0, eps, t, sched)
    with Graph() as graph:
        z = model.encode(Array(global_fragment))
        v_hat = model.unet(Array(x_t), t, Array(y_m), z)
        diff = sub(v_hat, Array(v_target))
        loss = mean_all(mul(diff, diff))
    by_array = backward(loss, graph, params=model.params.values())
    grads = {name: by_array[arr] for name, arr in model.params.items()}
    return loss.item(), grads, v_hat.data


@dataclass
class TrainState:
    model: DenoisingModel
    adam: AdamState
    sched: NoiseSchedule
    cfg: TrainingConfig
    rng: np.random.Generator
    step: int = 0
    history: list[tuple[int, float, float]] = field(default_factory=list)

    @classmethod
    def create(cls, cfg: TrainingConfig) -> "TrainState":
        seeds = np.random.SeedSequence(cfg.seed).spawn(2)
        model = DenoisingModel.create(cfg.network(), seed=seeds[0])
        if not cfg.global_context:
            model.disable_global_context()
        return cls(
            model=model,
            adam=AdamState.zeros(model.params),
            sched=make_cosine_schedule(cfg.diffusion_steps),
            cfg=cfg,
            rng=np.random.default_rng(seeds[1]),
        )


def _stage1_labels(rng: np.random.Generator, cond_slots: int, k: int) -> list[int]:
    # draw distinct window labels, each independently swapped for U
    labels = rng.choice(k + 1, size=cond_slots, replace=False)
    return [-1 if rng.random() < 1.0 / (k + 2) else int(j) for j in labels]


def _stack_conditions(
    windows: np.ndarray,
    labels_per_sample: list[list[int]],
    k: int,
    positional: bool = True,
) -> np.ndarray:
    """Build per-sample condition stacks [B, P*(C+1), H, W].

    With ``positional`` the source frames sit at their window slots; pass
    False when ``windows`` already lists frames in label order (the
    stage-2 stack of predicted condition frames).
    """
    stacks = []
    for window, labels in zip(windows, labels_per_sample):
        if positional:
            frames = [
                None if j == -1 else window[window_slot(j, k, window.shape[0])]
                for j in labels
            ]
        else:
            frames = [None if j == -1 else window[i] for i, j in enumerate(labels)]
        cond = build_condition(
            frames, labels, k, global_source=None, frame_shape=window.shape[1:]
        )
        stacks.append(cond.y_m)
    return np.stack(stacks)


def two_stage_step(
    state: TrainState, clips: np.ndarray, cfg: TrainingConfig | None = None
) -> tuple[float, float]:
    """Run both stages on a batch of clips; returns (loss1, loss2).

    With ``cfg.two_stage`` off, the second update is skipped and loss2 is
    NaN.
    """
    cfg = state.cfg if cfg is None else cfg
    clips = np.asarray(clips, dtype=np.float32)
    if clips.ndim == 4:
        clips = clips[None]
    if clips.ndim != 5:
        raise ValueError(f"expected [B, L, C, H, W] clips, got {clips.shape}")
    b = clips.shape[0]
    k, p = cfg.frames_per_stage, cfg.cond_slots
    windows = select_stage_windows(clips.shape[1], p, k)
    model, sched, rng = state.model, state.sched, state.rng

    # stage 1: conditions from the ground-truth window, global context U
    s1 = clips[:, windows.stage1_target]
    labels = [_stage1_labels(rng, p, k) for _ in range(b)]
    y_m1 = _stack_conditions(s1, labels, k)
    global1 = np.zeros((b, model.cfg.fragment_channels, *s1.shape[-2:]), dtype=np.float32)
    t1 = rng.integers(1, cfg.diffusion_steps + 1, size=b)
    eps1 = rng.standard_normal(model.fold(s1).shape).astype(np.float32)
    loss1, grads1, v_hat1 = v_loss(model, s1, y_m1, global1, t1, eps1, sched)
    adam_update(model.params, grads1, state.adam, cfg.learning_rate, model.frozen)

    if not cfg.two_stage:
        state.step += 1
        state.history.append((state.step, loss1, float("nan")))
        return loss1, float("nan")

    # detached clean-window estimate from the stage-1 forward pass
    x_t1 = q_sample(model.fold(s1), t1, eps1, sched)
    x0_hat = model.unfold(x0_from_v(x_t1, v_hat1, t1, sched))

    # stage 2: conditions and global context come from the prediction
    cond_frames = x0_hat[:, list(windows.stage2_cond)]
    s2 = np.concatenate([cond_frames, clips[:, windows.stage2_target]], axis=1)
    y_m2 = _stack_conditions(cond_frames, [list(range(p))] * b, k, positional=False)
    global2 = model.fold(x0_hat)
    t2 = rng.integers(1, cfg.diffusion_steps + 1, size=b)
    eps2 = rng.standard_normal(model.fold(s2).shape).astype(np.float32)
    loss2, grads2, _ = v_loss(model, s2, y_m2, global2, t2, eps2, sched)
    adam_update(model.params, grads2, state.adam, cfg.learning_rate, model.frozen)

    state.step += 1
    state.history.append((state.step, loss1, loss2))
    return loss1, loss2


def train(
    clips: np.ndarray,
    cfg: TrainingConfig,
    state: TrainState | None = None,
    on_step=None,
) -> TrainState:
    """Seeded training loop over a clip array [n, L, C, H, W].

    Pass a ``state`` (for example one restored from a checkpoint) to
    continue a run; otherwise a fresh model is initialized from
    ``cfg.seed``.  ``on_step(step, loss1, loss2)`` fires after each step.
    """
    clips = np.asarray(clips, dtype=np.float32)
    if clips.ndim != 5:
        raise ValueError(f"expected [n, L, C, H, W] clips, got {clips.shape}")
    if clips.shape[0] < 1:
        raise ValueError("dataset is empty")
    if state is None:
        state = TrainState.create(cfg)
    n = clips.shape[0]
    while state.step < cfg.max_steps:
        idx = state.rng.choice(n, size=cfg.batch_size, replace=n < cfg.batch_size)
        loss1, loss2 = two_stage_step(state, clips[idx], cfg)
        if on_step is not None:
            on_step(state.step, loss1, loss2)
    return state


_META_PREFIX = "meta."
_META_INT_FIELDS = (
    "diffusion_steps",
    "clip_length",
    "frames_per_stage",
    "cond_slots",
    "channels",
    "frame_size",
    "base_width",
    "batch_size",
    "max_steps",
)


def _split_u32(value: int) -> tuple[float, float]:
    # float32 holds integers up to 2**24 exactly; 16-bit halves always fit
    return float(value >> 16), float(value & 0xFFFF)


def state_tensors(state: TrainState) -> dict[str, np.ndarray]:
    """Flatten a training state to named tensors for the checkpoint format."""
    out = {name: arr.data for name, arr in state.model.params.items()}
    for fname in _META_INT_FIELDS:
        out[_META_PREFIX + fname] = np.asarray(getattr(state.cfg, fname), dtype=np.float32)
    hi, lo = _split_u32(state.cfg.seed)
    out[_META_PREFIX + "seed_hi"] = np.asarray(hi, dtype=np.float32)
    out[_META_PREFIX + "seed_lo"] = np.asarray(lo, dtype=np.float32)
    out[_META_PREFIX + "learning_rate"] = np.asarray(state.cfg.learning_rate, dtype=np.float32)
    out[_META_PREFIX + "two_stage"] = np.asarray(float(state.cfg.two_stage), dtype=np.float32)
    out[_META_PREFIX + "global_context"] = np.asarray(
        float(state.cfg.global_context), dtype=np.float32
    )
    out[_META_PREFIX + "step"] = np.asarray(state.step, dtype=np.float32)
    return out


def config_from_tensors(tensors: dict[str, np.ndarray]) -> tuple[TrainingConfig, int]:
    """Rebuild the training config and step count saved by state_tensors."""
    try:
        kwargs = {f: int(tensors[_META_PREFIX + f]) for f in _META_INT_FIELDS}
        kwargs["seed"] = (int(tensors[_META_PREFIX + "seed_hi"]) << 16) + int(
            tensors[_META_PREFIX + "seed_lo"]
        )
        kwargs["learning_rate"] = float(tensors[_META_PREFIX + "learning_rate"])
        kwargs["two_stage"] = bool(float(tensors[_META_PREFIX + "two_stage"]))
        kwargs["global_context"] = bool(float(tensors[_META_PREFIX + "global_context"]))
        step = int(tensors[_META_PREFIX + "step"])
    except KeyError as exc:
        raise ValueError(f"checkpoint is missing metadata entry {exc}") from exc
    return TrainingConfig(**kwargs), step


def state_from_tensors(tensors: dict[str, np.ndarray]) -> TrainState:
    """Restore a resumable training state (fresh optimizer moments)."""
    cfg, step = config_from_tensors(tensors)
    state = TrainState.create(cfg)
    for name, arr in state.model.params.items():
        saved = tensors.get(name)
        if saved is None:
            raise ValueError(f"checkpoint is missing parameter {name!r}")
        if saved.shape != arr.data.shape:
            raise ValueError(
                f"checkpoint parameter {name!r} has shape {saved.shape}, "
                f"model wants {arr.data.shape}"
            )
        arr.data[...] = saved
    state.step = step
    return state


def expected_tensor_shapes(cfg: TrainingConfig) -> dict[str, tuple]:
    """Name -> shape map a checkpoint for this config must match exactly."""
    probe = DenoisingModel.create(cfg.network(), seed=0)
    shapes: dict[str, tuple] = {name: arr.shape for name, arr in probe.params.items()}
    for fname in _META_INT_FIELDS:
        shapes[_META_PREFIX + fname] = ()
    for fname in ("seed_hi", "seed_lo", "learning_rate", "two_stage", "global_context", "step"):
        shapes[_META_PREFIX + fname] = ()
    return shapes
