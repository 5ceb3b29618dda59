"""DDPM noise schedules, v-parameterized conversions, and ancestral sampling.

Timesteps are 1-based: t in {1..T}, with alpha_bar[0] pinned to 1 so the
t=1 posterior collapses to the clean signal.  Schedule tables are kept in
float64; coefficients are cast to the dtype of the data they scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "NoiseSchedule",
    "PosteriorMoments",
    "SamplingError",
    "ddpm_sample",
    "eps_from_v",
    "make_cosine_schedule",
    "make_sampling_subsequence",
    "posterior_moments",
    "q_sample",
    "v_from_x0_eps",
    "x0_from_eps",
    "x0_from_v",
]

_MAX_BETA = 0.999
_COSINE_OFFSET = 0.008


class SamplingError(RuntimeError):
    """Raised when the reverse chain produces non-finite values."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Tables for a forward noising process of ``steps`` timesteps.

    Arrays are indexed by timestep: ``beta[0]`` is an unused sentinel and
    ``alpha_bar[0] == 1`` exactly.  ``timesteps[i]`` is the timestep value
    the denoiser should be shown at chain index ``i`` (the identity for a
    full schedule, the original-schedule steps for a respaced one).
    """

    steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_beta: np.ndarray
    timesteps: np.ndarray

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("schedule needs at least one step")
        for name in ("beta", "alpha", "alpha_bar", "posterior_beta", "timesteps"):
            if getattr(self, name).shape != (self.steps + 1,):
                raise ValueError(f"{name} must have length steps+1")
        if self.alpha_bar[0] != 1.0:
            raise ValueError("alpha_bar[0] must be exactly 1")
        # respaced chains may collapse a tail stride to beta == 1.0 exactly
        if not ((self.beta[1:] > 0.0) & (self.beta[1:] <= 1.0)).all():
            raise ValueError("betas must lie in (0, 1]")
        if not (np.diff(self.alpha_bar) < 0.0).all():
            raise ValueError("alpha_bar must be strictly decreasing")


def _assemble(
    betas: np.ndarray, alpha_bar_tail: np.ndarray, timesteps: np.ndarray
) -> NoiseSchedule:
    steps = betas.shape[0]
    beta = np.concatenate([[0.0], betas]).astype(np.float64)
    alpha = 1.0 - beta
    alpha[0] = 1.0
    alpha_bar = np.concatenate([[1.0], np.asarray(alpha_bar_tail, dtype=np.float64)])
    posterior_beta = np.zeros(steps + 1)
    posterior_beta[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]
    ts = np.concatenate([[0], np.asarray(timesteps, dtype=np.int64)])
    return NoiseSchedule(
        steps=steps,
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        posterior_beta=posterior_beta,
        timesteps=ts,
    )


def _tables_from_betas(betas: np.ndarray, timesteps: np.ndarray) -> NoiseSchedule:
    alpha_bar_tail = np.cumprod(1.0 - np.asarray(betas, dtype=np.float64))
    return _assemble(betas, alpha_bar_tail, timesteps)


def make_cosine_schedule(T: int) -> NoiseSchedule:
    """Cosine alpha_bar curve with betas capped at 0.999.

    alpha_bar follows f(t)/f(0) with f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2),
    s = 0.008.  Betas are 1 - f(t)/f(t-1) clipped to the cap; the stored
    alpha_bar is the cumulative product of the clipped alphas so the tables
    stay mutually consistent.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((t / T + _COSINE_OFFSET) / (1.0 + _COSINE_OFFSET)) * math.pi / 2.0) ** 2
    betas = np.clip(1.0 - f[1:] / f[:-1], None, _MAX_BETA)
    return _tables_from_betas(betas, np.arange(1, T + 1))


@dataclass(frozen=True)
class PosteriorMoments:
    mean: np.ndarray
    variance: np.ndarray  # scalar per timestep, broadcast over the mean


def _check_t(t, sched: NoiseSchedule, low: int = 1):
    t = np.asarray(t, dtype=np.int64)
    if t.min() < low or t.max() > sched.steps:
        raise ValueError(
            f"timestep out of range [{low}, {sched.steps}]: {t.min()}..{t.max()}"
        )
    return t


def _coef(table: np.ndarray, t: np.ndarray, data: np.ndarray) -> np.ndarray:
    """Gather per-timestep scalars and shape them to broadcast over data."""
    vals = table[t].astype(data.dtype)
    if vals.ndim == 0:
        return vals
    return vals.reshape(vals.shape + (1,) * (data.ndim - vals.ndim))


def q_sample(x0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Noise clean data to timestep t: sqrt(ab_t) x0 + sqrt(1 - ab_t) eps."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 and eps shapes differ: {x0.shape} vs {eps.shape}")
    t = _check_t(t, sched)
    ab = sched.alpha_bar
    return _coef(np.sqrt(ab), t, x0) * x0 + _coef(np.sqrt(1.0 - ab), t, eps) * eps


def posterior_moments(
    x0: np.ndarray, xt: np.ndarray, t, sched: NoiseSchedule
) -> PosteriorMoments:
    """Mean and variance of the forward-process posterior q(x_{t-1} | x_t, x0)."""
    x0 = np.asarray(x0)
    xt = np.asarray(xt)
    if x0.shape != xt.shape:
        raise ValueError(f"x0 and xt shapes differ: {x0.shape} vs {xt.shape}")
    t = _check_t(t, sched)
    ab = sched.alpha_bar
    ab_prev = ab[t - 1]
    denom = 1.0 - ab[t]
    coef0 = np.sqrt(ab_prev) * sched.beta[t] / denom
    coef_t = np.sqrt(sched.alpha[t]) * (1.0 - ab_prev) / denom
    mean = _coef_vals(coef0, x0) * x0 + _coef_vals(coef_t, xt) * xt
    variance = sched.posterior_beta[t]
    return PosteriorMoments(mean=mean.astype(x0.dtype, copy=False), variance=variance)


def _coef_vals(vals: np.ndarray, data: np.ndarray) -> np.ndarray:
    vals = np.asarray(vals, dtype=data.dtype)
    if vals.ndim == 0:
        return vals
    return vals.reshape(vals.shape + (1,) * (data.ndim - vals.ndim))


def x0_from_eps(xt: np.ndarray, eps_hat: np.ndarray, t, sched: NoiseSchedule) -> np.ndarray:
    """Invert q_sample for a predicted noise: (x_t - sqrt(1-ab) eps) / sqrt(ab)."""
    xt = np.asarray(xt)
    eps_hat = np.asarray(eps_hat)
    t = _check_t(t, sched)
    ab = sched.alpha_bar[t]
    if ab.min() < 1e-12:
        raise ValueError("alpha_bar too small to divide by (below 1e-12)")
    num = xt - _coef(np.sqrt(1.0 - sched.alpha_bar), t, eps_hat) * eps_hat
    return num / _coef(np.sqrt(sched.alpha_bar), t, xt)


def v_from_x0_eps(x0: np.ndarray, eps: np.ndarray, t, sched: NoiseSchedule) -> np.ndarray:
    """Velocity target: sqrt(ab_t) eps - sqrt(1 - ab_t) x0."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    t = _check_t(t, sched)
    ab = sched.alpha_bar
    return _coef(np.sqrt(ab), t, eps) * eps - _coef(np.sqrt(1.0 - ab), t, x0) * x0


def x0_from_v(xt: np.ndarray, v_hat: np.ndarray, t, sched: NoiseSchedule) -> np.ndarray:
    """Clean-signal estimate from velocity: sqrt(ab_t) x_t - sqrt(1 - ab_t) v."""
    xt = np.asarray(xt)
    v_hat = np.asarray(v_hat)
    t = _check_t(t, sched)
    ab = sched.alpha_bar
    return _coef(np.sqrt(ab), t, xt) * xt - _coef(np.sqrt(1.0 - ab), t, v_hat) * v_hat


def eps_from_v(xt: np.ndarray, v_hat: np.ndarray, t, sched: NoiseSchedule) -> np.ndarray:
    """Noise estimate from velocity: sqrt(1 - ab_t) x_t + sqrt(ab_t) v."""
    xt = np.asarray(xt)
    v_hat = np.asarray(v_hat)
    t = _check_t(t, sched)
    ab = sched.alpha_bar
    return _coef(np.sqrt(1.0 - ab), t, xt) * xt + _coef(np.sqrt(ab), t, v_hat) * v_hat


def make_sampling_subsequence(
    sched: NoiseSchedule, steps: int
) -> tuple[np.ndarray, NoiseSchedule]:
    """Uniformly strided timestep subsequence ending at T, plus its schedule.

    The respaced chain has ``steps`` transitions with betas
    1 - alpha_bar[tau_i] / alpha_bar[tau_{i-1}]; its alpha_bar values equal
    the original table at the selected timesteps.
    """
    T = sched.steps
    if not 1 <= steps <= T:
        raise ValueError(f"steps must lie in [1, {T}], got {steps}")
    taus = np.rint(np.arange(1, steps + 1) * (T / steps)).astype(np.int64)
    taus[-1] = T
    if (np.diff(taus) <= 0).any() or taus[0] < 1:
        raise ValueError("respacing produced a non-increasing subsequence")
    ab = sched.alpha_bar[np.concatenate([[0], taus])]
    betas = 1.0 - ab[1:] / ab[:-1]
    # carry the original alpha_bar values bit-for-bit instead of re-deriving
    sub = _assemble(betas, ab[1:], taus)
    return taus, sub


def ddpm_sample(
    model: Callable[[np.ndarray, int, object], np.ndarray],
    cond,
    shape: Sequence[int],
    sched: NoiseSchedule,
    steps: int,
    rng_seed: int,
    value_range: tuple[float, float] = (-1.0, 1.0),
) -> np.ndarray:
    """Ancestral DDPM sampling from unit Gaussian noise.

    ``model(x_t, t, cond)`` must return the predicted velocity for the
    original-schedule timestep ``t``.  Each step forms the clean-signal
    estimate, clips it to ``value_range``, and draws from the posterior;
    the final step adds no noise.  Deterministic given ``rng_seed``.
    """
    rng = np.random.default_rng(rng_seed)
    taus, sub = make_sampling_subsequence(sched, steps)
    x = rng.standard_normal(tuple(shape)).astype(np.float32)
    lo, hi = value_range
    for i in range(sub.steps, 0, -1):
        v_hat = np.asarray(model(x, int(sub.timesteps[i]), cond))
        if not np.isfinite(v_hat).all():
            raise SamplingError(
                f"non-finite denoiser output at chain index {i} "
                f"(t={int(sub.timesteps[i])}), input range "
                f"[{x.min():.3g}, {x.max():.3g}]"
            )
        x0_hat = np.clip(x0_from_v(x, v_hat, i, sub), lo, hi)
        moments = posterior_moments(x0_hat, x, i, sub)
        if i > 1:
            noise = rng.standard_normal(x.shape).astype(x.dtype)
            x = moments.mean + np.sqrt(moments.variance).astype(x.dtype) * noise
        else:
            x = moments.mean
        if not np.isfinite(x).all():
            raise SamplingError(
                f"non-finite chain state at chain index {i} "
                f"(t={int(sub.timesteps[i])})"
            )
    return x.astype(np.float32, copy=False)
