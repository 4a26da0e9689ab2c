"""Mean-reverting SDE that carries a clean video toward its masked version.

Forward process::

    dX = mu(t) (X_dst - X) dt + sigma(t) dW,   sigma(t)^2 = 2 lambda^2 mu(t)

with marginal ``X(t) = (1 - mu_bar) X_src + mu_bar X_dst + sigma_bar * eps`` where
``mu_bar = 1 - exp(-theta)``, ``sigma_bar = lambda sqrt(1 - exp(-2 theta))`` and
``theta(t)`` is the integral of ``mu`` over ``[0, t]``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .core import VideoCube
from .rng import gaussian_stream

SCHEDULES = ("constant", "linear", "cosine")
SIGMA_BAR_FLOOR = 1e-6  # relative to lambda


class DegenerateScaleError(ArithmeticError):
    """sigma_bar is too small for the score scale sigma^2 / sigma_bar."""


def _xp(t):
    """Array namespace for ``t``: torch for tensors, numpy otherwise."""
    if type(t).__module__.startswith("torch"):
        import torch

        return torch
    return np


@dataclass(frozen=True)
class Scheduler:
    """Reversion-speed schedule mu(t) on [0, 1] and stationary std lambda.

    Every schedule is normalised so that theta(1) == theta_total. With
    ``discrete`` set, mu is piecewise constant over the ``steps`` intervals
    (value taken at each interval midpoint) and theta is its cumulative sum.

    Schedules:
        constant: mu(t) = theta_total
        linear:   mu(t) = theta_total * (0.5 + t)
        cosine:   mu(t) = theta_total * (1 - 0.9 cos(pi t))
    """

    schedule: str = "constant"
    theta_total: float = 7.0
    lam: float = 0.02
    steps: int = 100
    discrete: bool = True

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}; use one of {SCHEDULES}")
        if not self.theta_total > 0:
            raise ValueError("theta_total must be positive")
        if not self.lam >= 0:
            raise ValueError("lambda must be non-negative")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    @property
    def dt(self) -> float:
        return 1.0 / self.steps

    def continuous(self) -> "Scheduler":
        return replace(self, discrete=False)

    def mu_continuous(self, t):
        xp = _xp(t)
        c = self.theta_total
        if self.schedule == "constant":
            return c + 0.0 * t
        if self.schedule == "linear":
            return c * (0.5 + t)
        return c * (1.0 - 0.9 * xp.cos(math.pi * t))

    def theta_continuous(self, t):
        xp = _xp(t)
        c = self.theta_total
        if self.schedule == "constant":
            return c * t
        if self.schedule == "linear":
            return c * (0.5 * t + 0.5 * t * t)
        return c * (t - 0.9 * xp.sin(math.pi * t) / math.pi)

    def mu_steps(self) -> np.ndarray:
        """[mu_1, ..., mu_N] for the discrete scheme."""
        mid = (np.arange(1, self.steps + 1) - 0.5) * self.dt
        return np.asarray(self.mu_continuous(mid), dtype=np.float64)

    def theta_steps(self) -> np.ndarray:
        """[theta_1, ..., theta_N] = cumsum(mu * dt)."""
        return np.cumsum(self.mu_steps() * self.dt)

    def mu(self, t):
        if not self.discrete:
            return self.mu_continuous(t)
        i = np.clip(np.ceil(np.asarray(t) * self.steps - 1e-9).astype(int), 1, self.steps)
        return self.mu_steps()[i - 1]

    def theta(self, t):
        if not self.discrete:
            return self.theta_continuous(t)
        grid = np.linspace(0.0, 1.0, self.steps + 1)
        return np.interp(t, grid, np.concatenate([[0.0], self.theta_steps()]))

    def sigma(self, t):
        return self.lam * _xp(t).sqrt(2.0 * self.mu(t) + 0.0 * t)


@dataclass(frozen=True)
class SdeCoeffs:
    t: float
    mu: float
    sigma: float
    mu_bar: float
    sigma_bar: float
    lam: float

    @property
    def sigma_tilde(self) -> float:
        """Score scale sigma^2 / sigma_bar."""
        if not self.sigma_bar > SIGMA_BAR_FLOOR * self.lam:
            raise DegenerateScaleError(
                f"sigma_bar={self.sigma_bar:.3g} at t={self.t} is below the floor"
            )
        return self.sigma**2 / self.sigma_bar


@dataclass(frozen=True)
class SdeState:
    x: VideoCube
    t: float
    eps: VideoCube | None = None


def _check_time(t: float) -> None:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")


def coeffs_at(s: Scheduler, t: float) -> SdeCoeffs:
    _check_time(t)
    theta = float(s.theta(t))
    mu = float(s.mu(t))
    return SdeCoeffs(
        t=t,
        mu=mu,
        sigma=s.lam * math.sqrt(2.0 * mu),
        mu_bar=-math.expm1(-theta),
        sigma_bar=s.lam * math.sqrt(-math.expm1(-2.0 * theta)),
        lam=s.lam,
    )


def coeffs_at_step(s: Scheduler, i: int) -> SdeCoeffs:
    """Coefficients at grid time i / N, read from the discrete arrays."""
    if not 1 <= i <= s.steps:
        raise ValueError(f"step index must lie in [1, {s.steps}], got {i}")
    mu = float(s.mu_steps()[i - 1])
    theta = float(s.theta_steps()[i - 1])
    return SdeCoeffs(
        t=i * s.dt,
        mu=mu,
        sigma=s.lam * math.sqrt(2.0 * mu),
        mu_bar=-math.expm1(-theta),
        sigma_bar=s.lam * math.sqrt(-math.expm1(-2.0 * theta)),
        lam=s.lam,
    )


def _match(a: VideoCube, b: VideoCube) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dims differ: {a.shape} vs {b.shape}")


def mean_state(x_src: VideoCube, x_dst: VideoCube, mu_bar: float) -> np.ndarray:
    return (1.0 - mu_bar) * x_src.data + mu_bar * x_dst.data


def forward_sample(
    x_src: VideoCube,
    x_dst: VideoCube,
    s: Scheduler,
    t: float,
    seed: int = 0,
    eps: np.ndarray | None = None,
) -> SdeState:
    """Draw X(t) from the closed-form marginal.

    ``eps`` overrides the Gaussian draw; the draw actually used is returned
    on the state.
    """
    _match(x_src, x_dst)
    c = coeffs_at(s, t)
    if eps is None:
        eps = gaussian_stream(seed).standard_normal(x_src.shape)
    eps = np.asarray(eps, dtype=np.float64)
    x = mean_state(x_src, x_dst, c.mu_bar) + c.sigma_bar * eps
    return SdeState(VideoCube(x), t, VideoCube(eps))


def em_paths(
    x_src: VideoCube,
    x_dst: VideoCube,
    s: Scheduler,
    n_steps: int,
    n_paths: int,
    seed: int = 0,
    record=(1.0,),
) -> dict[float, np.ndarray]:
    """Euler-Maruyama integration of the forward SDE over many paths.

    Returns ``{t: array(n_paths, H, W, B)}`` for each requested time, which must
    fall on the ``1 / n_steps`` grid.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    _match(x_src, x_dst)
    dt = 1.0 / n_steps
    wanted = {int(round(t * n_steps)): t for t in record}
    for k, t in wanted.items():
        if abs(k * dt - t) > 1e-12:
            raise ValueError(f"record time {t} is not on the step grid")
    rng = gaussian_stream(seed, 7)
    x = np.broadcast_to(x_src.data, (n_paths,) + x_src.shape).copy()
    dst = x_dst.data
    out = {}
    if 0 in wanted:
        out[wanted[0]] = x.copy()
    sqrt_dt = math.sqrt(dt)
    for k in range(n_steps):
        t_mid = (k + 0.5) * dt
        mu = float(s.mu(t_mid))
        sigma = s.lam * math.sqrt(2.0 * mu)
        x += mu * (dst - x) * dt
        if sigma > 0:
            x += sigma * sqrt_dt * rng.standard_normal(x.shape)
        if k + 1 in wanted:
            out[wanted[k + 1]] = x.copy()
    return out


def forward_integrate_em(
    x_src: VideoCube, x_dst: VideoCube, s: Scheduler, n_steps: int, seed: int = 0
) -> SdeState:
    final = em_paths(x_src, x_dst, s, n_steps, 1, seed)[1.0][0]
    return SdeState(VideoCube(final), 1.0)


def reverse_step(
    state: SdeState,
    x_dst_proxy: VideoCube,
    eps: VideoCube,
    s: Scheduler,
    step_index: int,
    dt: float | None = None,
    seed: int = 0,
    stochastic: bool = True,
) -> SdeState:
    """One discretised reverse-time step from ``step_index * dt`` to one step earlier.

    ``X <- X - [(mu (X_dst_proxy - X) + sigma^2 / sigma_bar * eps) dt + sigma * dW]``
    with ``dW ~ N(0, dt)``. The noise is keyed on ``(seed, step_index)``.
    """
    _match(state.x, x_dst_proxy)
    _match(state.x, eps)
    dt = s.dt if dt is None else dt
    c = coeffs_at_step(s, step_index)
    x = state.x.data
    delta = (c.mu * (x_dst_proxy.data - x) + c.sigma_tilde * eps.data) * dt
    if stochastic and c.sigma > 0:
        noise = gaussian_stream(seed, step_index).standard_normal(x.shape)
        delta = delta + c.sigma * math.sqrt(dt) * noise
    return SdeState(VideoCube(x - delta), max(state.t - dt, 0.0))


@dataclass(frozen=True)
class DistanceCurve:
    points: list[tuple[float, float]]
    degenerate: bool = False


def distance_curve(
    x_src: VideoCube, x_dst: VideoCube, s: Scheduler, n_points: int = 101
) -> DistanceCurve:
    """Distance of the noiseless mean trajectory from X(0), normalised by
    ``||X_dst - X_src||``; the value at ``t`` equals ``mu_bar(t)``."""
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    _match(x_src, x_dst)
    ts = np.linspace(0.0, 1.0, n_points)
    scale = float(np.linalg.norm(x_dst.data - x_src.data))
    if scale == 0.0:
        warnings.warn("x_src equals x_dst; distance curve is identically zero")
        return DistanceCurve([(float(t), 0.0) for t in ts], degenerate=True)
    points = []
    for t in ts:
        mean = mean_state(x_src, x_dst, coeffs_at(s, float(t)).mu_bar)
        points.append((float(t), float(np.linalg.norm(mean - x_src.data)) / scale))
    return DistanceCurve(points)


def temporal_sum(x: np.ndarray) -> np.ndarray:
    return np.sum(x, axis=-1)
