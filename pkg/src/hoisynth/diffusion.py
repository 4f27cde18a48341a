"""Forward noising process, the noise-prediction training objective, and the
ancestral reverse sampler. Also owns the per-dimension normalization applied
to states (and to the value slots of the condition grid) before any diffusion
math."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .model import ConditionBundle, denoise
from .motion import HUMAN_DIM, MaskedCondition, OBJECT_DIM, STATE_DIM


@dataclass
class NoiseSchedule:
    steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray


def make_schedule(steps, beta_start=1e-4, beta_end=0.02):
    """Linear beta schedule; alpha_bar is the running product."""
    if steps < 1:
        raise ValueError("schedule needs at least one step")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"invalid beta bounds ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, steps)
    alpha = 1.0 - beta
    return NoiseSchedule(steps=int(steps), beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))


def schedule_from_beta(beta):
    """Rebuild a schedule from a stored beta array (checkpoint field)."""
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    alpha = 1.0 - beta
    return NoiseSchedule(steps=len(beta), beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))


def q_sample(x0, t, eps, sched):
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, with 1-based t."""
    if not 1 <= t <= sched.steps:
        raise ValueError(f"timestep {t} outside [1, {sched.steps}]")
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError("noise shape must match the clean state")
    ab = sched.alpha_bar[t - 1]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


# -- normalization ---------------------------------------------------------------


@dataclass
class NormStats:
    mean: np.ndarray  # (216,)
    std: np.ndarray  # (216,)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(STATE_DIM)
        self.std = np.maximum(np.asarray(self.std, dtype=np.float64).reshape(STATE_DIM), 1e-8)


def normalize_state(x, stats):
    return (x - stats.mean) / stats.std


def denormalize_state(x, stats):
    return x * stats.std + stats.mean


def normalize_condition(cond, stats):
    """Normalize the value slots of the condition grid with the state stats
    (the grid's object block precedes its human block; the state layout is the
    reverse). Zero padding stays exactly zero: only layout-constrained slots
    are touched. Contact flags are left unscaled."""
    masked = cond.masked
    grid = masked.grid.copy()
    obj_mean, obj_std = stats.mean[HUMAN_DIM:], stats.std[HUMAN_DIM:]
    hum_mean, hum_std = stats.mean[:HUMAN_DIM], stats.std[:HUMAN_DIM]
    T = masked.T
    grid[0, :OBJECT_DIM] = (grid[0, :OBJECT_DIM] - obj_mean) / obj_std
    grid[0, OBJECT_DIM : OBJECT_DIM + HUMAN_DIM] = (
        grid[0, OBJECT_DIM : OBJECT_DIM + HUMAN_DIM] - hum_mean
    ) / hum_std
    for t in masked.constrained_frames():
        if t == 0:
            continue
        span = 3 if t == T - 1 else 2
        grid[t, :span] = (grid[t, :span] - obj_mean[:span]) / obj_std[:span]
    return ConditionBundle(
        text=cond.text,
        masked=MaskedCondition(grid=grid, interval=masked.interval),
        bps_deltas=cond.bps_deltas,
    )


# -- training -------------------------------------------------------------------


def training_loss(params, cfg, batch, sched, rng, use_kha=None, use_gapa=None):
    """Noise-prediction MSE over a batch of (normalized state, normalized
    condition) pairs: t ~ U{1..steps} and eps ~ N(0, I) per item. Returns
    (loss value, gradients by parameter name)."""
    if not batch:
        raise ValueError("empty training batch")
    total = None
    try:
        # every intermediate tensor is finiteness-checked at construction, so
        # a NaN loss surfaces here with the offending op attached
        for x0, cond in batch:
            t = int(rng.integers(1, sched.steps + 1))
            eps = rng.standard_normal(x0.shape)
            x_t = q_sample(x0, t, eps, sched)
            eps_hat = denoise(params, cfg, x_t, t, cond, use_kha=use_kha,
                              use_gapa=use_gapa, rng=rng, train=True)
            err = nm.Tensor(eps) - eps_hat
            item_loss = (err * err).mean()
            total = item_loss if total is None else total + item_loss
    except ValueError as exc:
        raise ValueError(f"non-finite value while computing the training loss: {exc}") from exc
    loss = total / len(batch)
    grad_map = nm.backward(loss)
    grads = {name: grad_map.get(p) for name, p in params.items()}
    return loss.item(), grads


# -- sampling -------------------------------------------------------------------


@dataclass
class SampleState:
    x: np.ndarray
    t: int
    rng: np.random.Generator


def p_sample_step(params, cfg, state, cond, sched, use_kha=None, use_gapa=None):
    """One reverse step: mean from the predicted noise, fixed variance beta_t,
    and no noise on the final step."""
    t = state.t
    if t < 1:
        raise ValueError("sampler already reached t=0")
    eps_hat = denoise(params, cfg, state.x, t, cond, use_kha=use_kha, use_gapa=use_gapa).data
    beta = sched.beta[t - 1]
    alpha = sched.alpha[t - 1]
    ab = sched.alpha_bar[t - 1]
    mean = (state.x - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(alpha)
    if t > 1:
        mean = mean + np.sqrt(beta) * state.rng.standard_normal(state.x.shape)
    return SampleState(x=mean, t=t - 1, rng=state.rng)


def sample(params, cfg, cond, sched, seed, t_frames, use_kha=None, use_gapa=None):
    """Full reverse chain from Gaussian noise; a pure function of
    (params, cond, seed). Returns the normalized (T, 216) state estimate."""
    rng = np.random.default_rng(seed)
    state = SampleState(x=rng.standard_normal((t_frames, STATE_DIM)), t=sched.steps, rng=rng)
    while state.t >= 1:
        state = p_sample_step(params, cfg, state, cond, sched, use_kha=use_kha, use_gapa=use_gapa)
    return state.x
