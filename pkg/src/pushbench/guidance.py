"""Score-combination rules turning raw noise predictions into guided ones.

Every variant shares the same arithmetic: extrapolate away from a negative
prediction, ``(1+w)*eps_cond - w*eps_neg``.  The variants differ only in
where the negative branch comes from: the null condition (CFG), a weak
checkpoint (AutoGuidance), the previous observation (self-guidance), a
perturbed observation, or a perturbed diffusion step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .denoiser import MLPDenoiser
from .errors import ConfigError

GUIDANCE_KINDS = ("none", "cfg", "autoguidance", "self_guidance", "noised_obs", "timestep_guidance")


@dataclass(frozen=True)
class GuidanceSpec:
    """Which negative branch to use and how hard to extrapolate away from it."""

    kind: str = "none"
    w: float = 0.0
    delta_t: int = 1
    noise_scale: float = 0.1
    tsg_scale: float = 2.0
    tsg_alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in GUIDANCE_KINDS:
            raise ConfigError(f"unknown guidance kind {self.kind!r}; expected one of {GUIDANCE_KINDS}")
        if self.w < 0:
            raise ConfigError(f"guidance scale must be >= 0, got {self.w}")
        if self.delta_t < 1:
            raise ConfigError(f"delta_t must be a positive integer, got {self.delta_t}")


def combine(eps_cond: np.ndarray, eps_neg: np.ndarray, w: float) -> np.ndarray:
    """Extrapolate away from the negative prediction: (1+w)*cond - w*neg."""
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    eps_neg = np.asarray(eps_neg, dtype=np.float64)
    if eps_cond.shape != eps_neg.shape:
        raise ConfigError(f"prediction shapes differ: {eps_cond.shape} vs {eps_neg.shape}")
    if w < 0:
        raise ConfigError(f"guidance scale must be >= 0, got {w}")
    return (1.0 + w) * eps_cond - w * eps_neg


def _paired_forward(model, x: np.ndarray, cond_a: np.ndarray, cond_b: np.ndarray, k, w: float) -> np.ndarray:
    """One batched forward evaluating both branches on the same noisy input."""
    x = np.atleast_2d(x)
    cond_a = np.atleast_2d(cond_a)
    cond_b = np.atleast_2d(cond_b)
    batch = x.shape[0]
    out = model.forward(
        np.concatenate([x, x], axis=0),
        np.concatenate([cond_a, cond_b], axis=0),
        k,
    )
    return combine(out[:batch], out[batch:], w)


def self_guided_eps(model, x, cond_now, cond_past, k: int, w: float) -> np.ndarray:
    """Negative branch conditions on the previous observation window."""
    return _paired_forward(model, x, cond_now, cond_past, k, w)


def cfg_eps(model, x, cond, k: int, w: float) -> np.ndarray:
    """Negative branch is the null (unconditional) prediction."""
    cond = np.atleast_2d(cond)
    return _paired_forward(model, x, cond, model.null_cond(cond.shape[0]), k, w)


def auto_guided_eps(strong: MLPDenoiser, weak: MLPDenoiser, x, cond, k: int, w: float) -> np.ndarray:
    """Negative branch is an undertrained checkpoint with the same conditioning."""
    if strong.arch != weak.arch:
        raise ConfigError(
            f"strong/weak architecture mismatch: {strong.arch} vs {weak.arch}"
        )
    x = np.atleast_2d(x)
    cond = np.atleast_2d(cond)
    return combine(strong.forward(x, cond, k), weak.forward(x, cond, k), w)


def noised_obs_eps(model, x, cond, k: int, w: float, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Negative branch perturbs the observation with fresh Gaussian noise."""
    if scale < 0:
        raise ConfigError(f"observation noise scale must be >= 0, got {scale}")
    cond = np.atleast_2d(cond)
    neg = cond.copy()
    # perturb the observation dimensions only, never the null flag
    neg[:, :-1] += scale * rng.standard_normal(neg[:, :-1].shape)
    return _paired_forward(model, x, cond, neg, k, w)


def perturbed_step(k: int, scale: float, alpha: float, k_max: int) -> float:
    """TSG's shifted diffusion step, clamped into the valid range."""
    return float(min(max(k + scale * k**alpha, 1.0), k_max))


def timestep_guided_eps(model, x, cond, k: int, w: float, scale: float, alpha: float, k_max: int) -> np.ndarray:
    """Negative branch re-predicts at a perturbed diffusion step."""
    x = np.atleast_2d(x)
    cond = np.atleast_2d(cond)
    batch = x.shape[0]
    k_neg = perturbed_step(k, scale, alpha, k_max)
    ks = np.concatenate([np.full(batch, float(k)), np.full(batch, k_neg)])
    out = model.forward(np.concatenate([x, x], axis=0), np.concatenate([cond, cond], axis=0), ks)
    return combine(out[:batch], out[batch:], w)


def make_eps_fn(
    model: MLPDenoiser,
    spec: GuidanceSpec,
    cond_now: np.ndarray,
    cond_past: np.ndarray | None = None,
    weak: MLPDenoiser | None = None,
    rngs: Sequence[np.random.Generator] | None = None,
    k_max: int | None = None,
):
    """Build the per-step noise predictor the samplers iterate with.

    ``cond_now``/``cond_past`` carry one row per batch element; the returned
    function closes over them and applies the configured guidance at every
    denoising step.
    """
    cond_now = np.atleast_2d(cond_now)

    if spec.kind == "none":
        return lambda x, k: model.forward(x, cond_now, k)
    if spec.kind == "self_guidance":
        if cond_past is None:
            raise ConfigError("self-guidance requires the past observation window")
        cond_past = np.atleast_2d(cond_past)
        return lambda x, k: self_guided_eps(model, x, cond_now, cond_past, k, spec.w)
    if spec.kind == "cfg":
        return lambda x, k: cfg_eps(model, x, cond_now, k, spec.w)
    if spec.kind == "autoguidance":
        if weak is None:
            raise ConfigError("autoguidance requires a weak checkpoint")
        return lambda x, k: auto_guided_eps(model, weak, x, cond_now, k, spec.w)
    if spec.kind == "noised_obs":
        if rngs is None:
            raise ConfigError("noised-observation guidance requires per-episode rngs")

        def eps_no(x, k):
            cond = np.atleast_2d(cond_now)
            neg = cond.copy()
            delta = np.stack([r.standard_normal(cond.shape[1] - 1) for r in rngs])
            neg[:, :-1] += spec.noise_scale * delta
            return _paired_forward(model, x, cond, neg, k, spec.w)

        return eps_no
    if spec.kind == "timestep_guidance":
        if k_max is None:
            raise ConfigError("timestep guidance requires the schedule length")
        return lambda x, k: timestep_guided_eps(
            model, x, cond_now, k, spec.w, spec.tsg_scale, spec.tsg_alpha, k_max
        )
    raise ConfigError(f"unknown guidance kind {spec.kind!r}")
