"""Fragment-wise video diffusion: train a denoiser on short frame windows,
then roll it forward autoregressively to predict, infill, or dream clips.

The public surface is the :class:`VideoDiffusion` estimator plus the
lower-level pieces it is built from (noise schedule, conditioning planner,
network, trainer, sampler, frame/checkpoint IO, metrics).
"""

from ._conditioning import (
    AutoregressionPlan,
    ConditionSet,
    build_condition,
    mask_value,
    plan_autoregression,
    select_stage_windows,
    window_slot,
)
from ._dataset import generate_dataset
from ._diffusion import (
    NoiseSchedule,
    SamplingError,
    ddpm_sample,
    eps_from_v,
    make_cosine_schedule,
    make_sampling_subsequence,
    posterior_moments,
    q_sample,
    v_from_x0_eps,
    x0_from_eps,
    x0_from_v,
)
from ._io import (
    CheckpointError,
    FrameFormatError,
    dequantize,
    load_checkpoint,
    load_frames,
    quantize,
    save_checkpoint,
    save_frames,
)
from ._metrics import psnr, ssim
from ._network import DenoisingModel, NetworkConfig
from ._tensor import Array, Graph, GraphConsumedError, NonFiniteError, backward
from ._training import TrainingConfig, TrainState, train, two_stage_step, v_loss
from ._sampler import run_plan
from .estimator import VideoDiffusion

__version__ = "0.1.0"

__all__ = [
    "Array",
    "AutoregressionPlan",
    "CheckpointError",
    "ConditionSet",
    "DenoisingModel",
    "FrameFormatError",
    "Graph",
    "GraphConsumedError",
    "NetworkConfig",
    "NoiseSchedule",
    "NonFiniteError",
    "SamplingError",
    "TrainState",
    "TrainingConfig",
    "VideoDiffusion",
    "backward",
    "build_condition",
    "ddpm_sample",
    "dequantize",
    "eps_from_v",
    "generate_dataset",
    "load_checkpoint",
    "load_frames",
    "make_cosine_schedule",
    "make_sampling_subsequence",
    "mask_value",
    "plan_autoregression",
    "posterior_moments",
    "psnr",
    "q_sample",
    "quantize",
    "run_plan",
    "save_checkpoint",
    "save_frames",
    "select_stage_windows",
    "ssim",
    "train",
    "two_stage_step",
    "v_loss",
    "v_from_x0_eps",
    "window_slot",
    "x0_from_eps",
    "x0_from_v",
    "__version__",
]
