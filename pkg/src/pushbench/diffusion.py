"""Noise schedules, forward noising, and DDPM/DDIM reverse samplers.

Samplers are pure given the noise predictor, schedule, and random draws.
``eps_fn(x, k)`` receives the current batch of noisy chunks (B, D) and a
diffusion step (scalar int) and returns the predicted noise (B, D); all
guidance happens inside ``eps_fn``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError

EpsFn = Callable[[np.ndarray, int], np.ndarray]

SCHEDULE_KINDS = ("linear", "squared_cosine")


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step beta/alpha tables, 0-indexed internally: index i holds step k=i+1."""

    kind: str
    k_steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_var: np.ndarray

    def abar(self, k: int | np.ndarray) -> np.ndarray:
        """Cumulative alpha at step k, with abar(0) == 1 (clean data)."""
        k = np.asarray(k)
        return np.where(k > 0, self.alpha_bar[np.maximum(k, 1) - 1], 1.0)


def build_schedule(kind: str, k_steps: int) -> NoiseSchedule:
    if k_steps < 2:
        raise ConfigError(f"need at least 2 diffusion steps, got {k_steps}")
    if kind == "linear":
        beta = np.linspace(1e-4, 0.02, k_steps)
    elif kind == "squared_cosine":
        # squared-cosine cumulative curve with the usual 0.008 offset
        s = 0.008
        ks = np.arange(k_steps + 1, dtype=np.float64)
        f = np.cos((ks / k_steps + s) / (1.0 + s) * np.pi / 2.0) ** 2
        abar = f / f[0]
        beta = np.clip(1.0 - abar[1:] / abar[:-1], 1e-8, 0.999)
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    abar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    posterior_var = beta * (1.0 - abar_prev) / (1.0 - alpha_bar)
    return NoiseSchedule(kind, k_steps, beta, alpha, alpha_bar, posterior_var)


def forward_noise(chunk: np.ndarray, k: int, noise: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Noise clean data directly to step k: sqrt(abar_k)*x0 + sqrt(1-abar_k)*eps."""
    chunk = np.asarray(chunk, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != chunk.shape:
        raise ConfigError(f"noise shape {noise.shape} != chunk shape {chunk.shape}")
    if not 1 <= k <= sched.k_steps:
        raise ConfigError(f"step {k} outside [1, {sched.k_steps}]")
    ab = sched.alpha_bar[k - 1]
    return np.sqrt(ab) * chunk + np.sqrt(1.0 - ab) * noise


def _initial_draw(rngs, shape: tuple[int, int]) -> np.ndarray:
    if isinstance(rngs, np.random.Generator):
        return rngs.standard_normal(shape)
    if len(rngs) != shape[0]:
        raise ConfigError(f"got {len(rngs)} rngs for batch {shape[0]}")
    return np.stack([r.standard_normal(shape[1]) for r in rngs])


def ddpm_sample(
    eps_fn: EpsFn,
    sched: NoiseSchedule,
    rngs: np.random.Generator | Sequence[np.random.Generator],
    shape: tuple[int, int],
    x_init: np.ndarray | None = None,
) -> np.ndarray:
    """Ancestral sampling over all K steps; the final step adds no noise."""
    x = _initial_draw(rngs, shape) if x_init is None else np.array(x_init, dtype=np.float64)
    for k in range(sched.k_steps, 0, -1):
        i = k - 1
        eps = eps_fn(x, k)
        mean = (x - sched.beta[i] / np.sqrt(1.0 - sched.alpha_bar[i]) * eps) / np.sqrt(sched.alpha[i])
        if k > 1:
            sigma = np.sqrt(sched.posterior_var[i])
            x = mean + sigma * _initial_draw(rngs, shape)
        else:
            x = mean
    return x


def ddim_steps(k_steps: int, num_inference_steps: int) -> np.ndarray:
    """Descending subsequence of diffusion steps visited by DDIM."""
    if num_inference_steps > k_steps:
        raise ConfigError(
            f"inference steps {num_inference_steps} exceed schedule length {k_steps}"
        )
    if num_inference_steps < 1:
        raise ConfigError("need at least one inference step")
    grid = np.unique(np.round(np.linspace(1, k_steps, num_inference_steps)).astype(int))
    return grid[::-1]


def ddim_sample(
    eps_fn: EpsFn,
    sched: NoiseSchedule,
    num_inference_steps: int,
    rngs: np.random.Generator | Sequence[np.random.Generator],
    shape: tuple[int, int],
    x_init: np.ndarray | None = None,
) -> np.ndarray:
    """Deterministic DDIM (eta=0): the initial draw is the only randomness."""
    steps = ddim_steps(sched.k_steps, num_inference_steps)
    x = _initial_draw(rngs, shape) if x_init is None else np.array(x_init, dtype=np.float64)
    for idx, k in enumerate(steps):
        k_next = steps[idx + 1] if idx + 1 < len(steps) else 0
        ab_hi = sched.alpha_bar[k - 1]
        ab_lo = sched.abar(k_next)
        eps = eps_fn(x, int(k))
        x0_pred = (x - np.sqrt(1.0 - ab_hi) * eps) / np.sqrt(ab_hi)
        x = np.sqrt(ab_lo) * x0_pred + np.sqrt(1.0 - ab_lo) * eps
    return x
