"""Reconstruction pipelines: iterative diffusion inpainting and RegDif."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .core import Measurement, VideoCube
from .encoder import masked_init
from .masking import Mask, validate_one_hot
from .predictors import PredictorSet, from_tensor, merge_known, module_dtype, to_tensor
from .rng import gaussian_stream
from .sde import (
    SIGMA_BAR_FLOOR,
    DegenerateScaleError,
    Scheduler,
    SdeState,
    coeffs_at_step,
    reverse_step,
)

REGDIF_NOISE_STREAM = 101


def reconstruct_diffusion(
    y: Measurement,
    mask: Mask,
    predictor,
    s: Scheduler = Scheduler(),
    seed: int = 0,
    stochastic: bool = True,
) -> VideoCube:
    """Iterative reverse-SDE inpainting from the zero-filled measurement.

    ``predictor(state, t)`` returns the estimated noise; it is called exactly
    ``s.steps`` times. Measured pixels are not re-imposed between steps.
    """
    if not validate_one_hot(mask):
        raise ValueError("diffusion inpainting requires a one-hot mask")
    x_tilde = masked_init(y, mask)
    state = SdeState(x_tilde, 1.0)
    for i in range(s.steps, 0, -1):
        if not coeffs_at_step(s, i).sigma_bar > 0:
            raise DegenerateScaleError(f"sigma_bar is zero at step {i}")
        eps = predictor(state.x, i * s.dt)
        state = reverse_step(state, x_tilde, eps, s, i, s.dt, seed=seed, stochastic=stochastic)
    return state.x


@dataclass(frozen=True)
class RegDifTrace:
    x1: VideoCube
    coarse: VideoCube
    updated: VideoCube
    t_hat: float
    eps: VideoCube
    final: VideoCube


def sde_terms(s: Scheduler, t: torch.Tensor):
    """Differentiable (mu, sigma, sigma_bar) at continuous time(s) t."""
    mu = s.mu_continuous(t)
    theta = s.theta_continuous(t)
    sigma = s.lam * torch.sqrt(2.0 * mu)
    sigma_bar = s.lam * torch.sqrt(-torch.expm1(-2.0 * theta))
    return mu, sigma, sigma_bar


def regdif_forward(
    p: PredictorSet,
    x1: torch.Tensor,
    mask: torch.Tensor,
    s: Scheduler,
    z: torch.Tensor | None = None,
    y_c: torch.Tensor | None = None,
) -> dict:
    """Batched one-step regression + one-step diffusion on tensors.

    Args:
        x1: masked initialisation, (N, 1, B, H, W).
        mask: one-hot mask in the same layout.
        z: standard normal draws for the refinement noise; None disables it.
        y_c: compensatory measurements (N, H, W); enables fusion when given.

    Returns:
        dict with coarse, updated, t_hat (N,), eps and final tensors.
    """
    coarse = p.regressor(x1)
    if y_c is not None:
        coarse = p.fusion.x(coarse, y_c)
    updated = merge_known(x1, coarse, mask)
    t_hat = p.timestep(updated)
    eps = p.noise(updated, t_hat)
    if y_c is not None:
        eps = p.fusion.eps(eps, y_c)
    mu, sigma, sigma_bar = sde_terms(s, t_hat)
    if torch.any(sigma_bar <= SIGMA_BAR_FLOOR * s.lam):
        raise DegenerateScaleError("sigma_bar(t_hat) is below the floor")
    tb = t_hat[:, None, None, None, None]
    mu, sigma, sigma_bar = (v[:, None, None, None, None] for v in (mu, sigma, sigma_bar))
    delta = (mu * (x1 - updated) + sigma**2 / sigma_bar * eps) * tb
    if z is not None:
        # Refinement noise ~ N(0, t_hat): variance t_hat.
        delta = delta + sigma * torch.sqrt(tb) * z
    return {
        "coarse": coarse,
        "updated": updated,
        "t_hat": t_hat,
        "eps": eps,
        "final": updated - delta,
    }


def _run(p, y, mask, s, seed, stochastic, y_c=None) -> RegDifTrace:
    if not validate_one_hot(mask):
        raise ValueError("RegDif requires a one-hot mask")
    dtype = module_dtype(p)
    x1 = masked_init(y, mask)
    z = None
    if stochastic:
        noise = gaussian_stream(seed, REGDIF_NOISE_STREAM).standard_normal(x1.shape)
        z = to_tensor(noise, dtype)
    yc = None if y_c is None else torch.tensor(y_c.data, dtype=dtype)[None]
    with torch.no_grad():
        out = regdif_forward(
            p, to_tensor(x1, dtype), to_tensor(mask.as_float(), dtype), s.continuous(), z, yc
        )
    return RegDifTrace(
        x1=x1,
        coarse=from_tensor(out["coarse"]),
        updated=from_tensor(out["updated"]),
        t_hat=float(out["t_hat"][0]),
        eps=from_tensor(out["eps"]),
        final=from_tensor(out["final"]),
    )


def reconstruct_regdif(
    y: Measurement,
    mask: Mask,
    p: PredictorSet,
    s: Scheduler = Scheduler(),
    seed: int = 0,
    stochastic: bool = True,
) -> RegDifTrace:
    """Coarse regression, timestep inference and a single refinement step.

    Each learned component is evaluated exactly once.
    """
    return _run(p, y, mask, s, seed, stochastic)


def reconstruct_regdif_dual(
    y: Measurement,
    y_c: Measurement,
    mask: Mask,
    p: PredictorSet,
    s: Scheduler = Scheduler(),
    seed: int = 0,
    stochastic: bool = True,
) -> RegDifTrace:
    """RegDif with coarse and noise predictions enhanced by the compensatory path."""
    if y.shape != y_c.shape:
        raise ValueError(f"measurement dims differ: {y.shape} vs {y_c.shape}")
    if p.fusion is None:
        raise ValueError("predictor set has no fusion modules")
    return _run(p, y, mask, s, seed, stochastic, y_c=y_c)
