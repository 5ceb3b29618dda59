"""Scikit-learn style facade over the video diffusion engine.

``VideoDiffusion`` fits on an array of clips and then predicts futures,
infills between endpoints, or generates clips from noise.  Construction
arguments follow the estimator convention (stored verbatim, validated at
fit time) so ``get_params`` / ``set_params`` / ``clone`` compose with the
wider ecosystem.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._conditioning import plan_autoregression
from ._metrics import psnr
from ._sampler import run_plan
from ._training import TrainingConfig, TrainState, train
from ._validation import check_clips, check_frame_stack

__all__ = ["VideoDiffusion"]


class VideoDiffusion(BaseEstimator):
    """Autoregressive video diffusion over fixed-size frame windows.

    Parameters
    ----------
    frames_per_step : frames added by each autoregressive pass (k).
    cond_frames : condition slots per window (p); the denoised window
        holds ``cond_frames + frames_per_step`` frames.
    channels, frame_size : clip geometry.
    diffusion_steps : length T of the forward noising chain.
    sample_steps : respaced reverse-chain length used at inference.
    base_width : UNet channel width at full resolution.
    learning_rate, batch_size, train_steps : optimization settings.
    two_stage : train a second update per step on the model's own
        window reconstruction.
    global_context : cross-attend to sequence-encoder tokens; when off,
        the value projections are zeroed and frozen so the output is
        exactly independent of the encoder.
    seed : seeds parameter init, batch order, noise draws, and default
        sampling.
    """

    def __init__(
        self,
        frames_per_step: int = 6,
        cond_frames: int = 2,
        channels: int = 3,
        frame_size: int = 16,
        diffusion_steps: int = 1000,
        sample_steps: int = 100,
        base_width: int = 32,
        learning_rate: float = 3e-4,
        batch_size: int = 8,
        train_steps: int = 2000,
        two_stage: bool = True,
        global_context: bool = True,
        seed: int = 0,
    ):
        self.frames_per_step = frames_per_step
        self.cond_frames = cond_frames
        self.channels = channels
        self.frame_size = frame_size
        self.diffusion_steps = diffusion_steps
        self.sample_steps = sample_steps
        self.base_width = base_width
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.train_steps = train_steps
        self.two_stage = two_stage
        self.global_context = global_context
        self.seed = seed

    def _config(self, clip_length: int) -> TrainingConfig:
        return TrainingConfig(
            diffusion_steps=self.diffusion_steps,
            clip_length=clip_length,
            frames_per_stage=self.frames_per_step,
            cond_slots=self.cond_frames,
            channels=self.channels,
            frame_size=self.frame_size,
            base_width=self.base_width,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_steps=self.train_steps,
            seed=self.seed,
            two_stage=self.two_stage,
            global_context=self.global_context,
        )

    @property
    def _window(self) -> int:
        return self.cond_frames + self.frames_per_step

    def fit(self, X, y=None) -> "VideoDiffusion":
        """Train on clips X of shape [n, L, C, H, W] with values in [-1, 1]."""
        min_len = 2 * self.frames_per_step + self.cond_frames
        X = check_clips(X, min_len, self.channels, self.frame_size)
        self.state_ = train(X, self._config(X.shape[1]))
        self.loss_history_ = list(self.state_.history)
        return self

    def from_state(self, state: TrainState) -> "VideoDiffusion":
        """Adopt an already-trained state (e.g. restored from a checkpoint)."""
        self.state_ = state
        self.loss_history_ = list(state.history)
        return self

    def _run(self, plan, given, seed):
        state: TrainState = self.state_
        return run_plan(
            state.model,
            state.sched,
            plan,
            given,
            steps=min(self.sample_steps, self.diffusion_steps),
            seed=self.seed if seed is None else seed,
        )

    def predict(self, X, n_frames: int | None = None, seed: int | None = None) -> np.ndarray:
        """Continue each sample of past frames out to n_frames total.

        X has shape [n, p, C, H, W] (or a single [p, C, H, W] stack); the
        output keeps the given frames as its first p entries.  p must not
        exceed ``cond_frames`` and each pass fills the rest of the window,
        so p + k equals the window length.
        """
        check_is_fitted(self, "state_")
        X = np.asarray(X, dtype=np.float32)
        single = X.ndim == 4
        p = X.shape[1] if not single else X.shape[0]
        X = check_frame_stack(X, p, self.channels, self.frame_size, "condition frames")
        n = self._window if n_frames is None else int(n_frames)
        plan = plan_autoregression(
            "predict", p, self._window - p, n, cond_slots=self.cond_frames
        )
        outs = np.stack([self._run(plan, sample, seed) for sample in X])
        return outs[0] if single else outs

    def interpolate(self, X, seed: int | None = None) -> np.ndarray:
        """Infill between endpoint frames.

        X holds ``cond_frames`` given frames per sample (the last one is
        the future endpoint); the output is the full window with the
        endpoints pinned.
        """
        check_is_fitted(self, "state_")
        X = np.asarray(X, dtype=np.float32)
        single = X.ndim == 4
        X = check_frame_stack(X, self.cond_frames, self.channels, self.frame_size, "endpoints")
        p = self.cond_frames - 1
        n = p + self.frames_per_step + 1
        plan = plan_autoregression(
            "interpolate", p, self.frames_per_step, n, cond_slots=self.cond_frames
        )
        outs = np.stack([self._run(plan, sample, seed) for sample in X])
        return outs[0] if single else outs

    def generate(
        self, n_videos: int = 1, n_frames: int | None = None, seed: int | None = None
    ) -> np.ndarray:
        """Sample clips from noise: [n_videos, n_frames, C, H, W]."""
        check_is_fitted(self, "state_")
        n = self._window if n_frames is None else int(n_frames)
        plan = plan_autoregression(
            "generate", 0, self.frames_per_step, n, cond_slots=self.cond_frames
        )
        base = self.seed if seed is None else seed
        return np.stack([self._run(plan, None, base + i) for i in range(n_videos)])

    def score(self, X, y=None) -> float:
        """Mean prediction PSNR: continue each clip's first ``cond_frames``
        frames and compare the newly generated window tail to the clip."""
        check_is_fitted(self, "state_")
        X = check_clips(X, self._window, self.channels, self.frame_size)
        p = self.cond_frames
        scores = []
        for i, clip in enumerate(X):
            pred = self.predict(clip[:p], n_frames=self._window, seed=self.seed + i)
            _, mean = psnr(pred[p:], clip[p : self._window])
            scores.append(mean)
        return float(np.mean(scores))
