"""Joint training of the RegDif components and gradient verification.

The objective is the sum of three distances::

    regression  ||X_updated - X(0)||
    alignment   ||X_updated - X(t_hat)||   X(t_hat) drawn from the forward marginal
    diffusion   ||X_final   - X(0)||
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .core import VideoCube
from .data import TrainingSample, simulate_sample
from .metrics import psnr
from .predictors import (
    DTYPE,
    T_MAX,
    T_MIN,
    PredictorSet,
    TimestepPredictor,
    batch_tensor,
    module_dtype,
)
from .recon import reconstruct_regdif, reconstruct_regdif_dual, regdif_forward, sde_terms
from .sde import Scheduler, forward_sample

log = logging.getLogger(__name__)


class TrainingDivergedError(ArithmeticError):
    pass


@dataclass(frozen=True)
class LossBreakdown:
    regression: float
    alignment: float
    diffusion: float

    @property
    def total(self) -> float:
        return self.regression + self.alignment + self.diffusion


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    epochs: int = 30
    finetune_epochs: int = 0
    reg: bool = True
    align: bool = True
    dif: bool = True
    seed: int = 0
    squared: bool = False
    shared_noise: bool = False  # alignment target reuses the refinement draw
    noise_std: float | None = None  # measurement noise; default lambda * sqrt(B)
    dual: bool = False
    precision: str = "float32"  # network arithmetic during training


    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if not (self.reg or self.align or self.dif):
            raise ValueError("all loss terms are disabled; nothing to optimise")

    def lr_at(self, epoch: int) -> float:
        """Halve every quarter of the main phase, then fine-tune at a tenth."""
        if epoch >= self.epochs:
            return self.lr * 0.1
        quarter = max(self.epochs // 4, 1)
        return self.lr * 0.5 ** min(epoch // quarter, 3)


@dataclass
class EpochLog:
    epoch: int
    reg: float
    align: float
    dif: float
    total: float
    final_err: float
    coarse_err: float

    CSV_HEADER = "epoch,reg,align,dif,total,final_err,coarse_err"

    def csv_row(self) -> str:
        return (
            f"{self.epoch},{self.reg:.9g},{self.align:.9g},{self.dif:.9g},"
            f"{self.total:.9g},{self.final_err:.9g},{self.coarse_err:.9g}"
        )


@dataclass
class TrainResult:
    predictors: PredictorSet
    log: list[EpochLog] = field(default_factory=list)


def _dist(a, b, squared: bool):
    diff = (a - b).flatten(1)
    if squared:
        return (diff**2).mean(dim=1)
    return torch.linalg.vector_norm(diff, dim=1)


def batch_losses(
    p: PredictorSet,
    batch: dict,
    s: Scheduler,
    z: torch.Tensor | None,
    align_eps: torch.Tensor,
    squared: bool = False,
    dual: bool = False,
    shared_noise: bool = False,
):
    """Per-sample loss terms (each shape (N,)) and the pipeline outputs."""
    s = s.continuous()
    out = regdif_forward(
        p, batch["x1"], batch["mask"], s, z, batch["y_c"] if dual else None
    )
    t_hat = out["t_hat"]
    theta = s.theta_continuous(t_hat)
    mu_bar = (-torch.expm1(-theta))[:, None, None, None, None]
    _, _, sigma_bar = sde_terms(s, t_hat)
    noise = z if (shared_noise and z is not None) else align_eps
    x_t = (1 - mu_bar) * batch["x0"] + mu_bar * batch["x_dst"]
    x_t = x_t + sigma_bar[:, None, None, None, None] * noise
    terms = {
        "reg": _dist(out["updated"], batch["x0"], squared),
        "align": _dist(out["updated"], x_t, squared),
        "dif": _dist(out["final"], batch["x0"], squared),
    }
    return terms, out


def stack_samples(samples: list[TrainingSample], dtype=DTYPE) -> dict:
    return {
        "x0": batch_tensor([s.x0 for s in samples], dtype),
        "x1": batch_tensor([s.x1 for s in samples], dtype),
        "x_dst": batch_tensor([s.x_dst for s in samples], dtype),
        "mask": batch_tensor([s.mask.as_float() for s in samples], dtype),
        "y_c": torch.as_tensor(np.stack([s.y_c.data for s in samples]), dtype=dtype),
    }


def _total(terms: dict, cfg: TrainConfig):
    total = 0.0
    for key, on in (("reg", cfg.reg), ("align", cfg.align), ("dif", cfg.dif)):
        if on:
            total = total + terms[key]
    return total


def simulate_dataset(videos: list[VideoCube], s: Scheduler, seed: int = 0, noise_std=None):
    if not videos:
        raise ValueError("dataset is empty")
    shape = videos[0].shape
    if any(v.shape != shape for v in videos):
        raise ValueError("all training videos must share dimensions")
    std = s.lam * math.sqrt(shape[2]) if noise_std is None else noise_std
    return [simulate_sample(v, seed * 1_000_003 + i, std) for i, v in enumerate(videos)]


def train(
    config: TrainConfig,
    dataset: list[VideoCube] | list[TrainingSample],
    p: PredictorSet,
    s: Scheduler = Scheduler(),
) -> TrainResult:
    """Optimise all components of ``p`` with Adam on the enabled loss terms.

    Network arithmetic runs in ``config.precision``; the returned predictors
    are converted back to float64.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    if isinstance(dataset[0], VideoCube):
        dataset = simulate_dataset(dataset, s, config.seed, config.noise_std)
    if config.dual and p.fusion is None:
        p.add_fusion(config.seed)
    dtype = {"float32": torch.float32, "float64": torch.float64}[config.precision]
    p.to(dtype)
    data = stack_samples(dataset, dtype)
    n = data["x0"].shape[0]
    opt = torch.optim.Adam(p.parameters(), lr=config.lr, betas=(0.9, 0.99), eps=1e-8)
    gen = torch.Generator().manual_seed(config.seed)
    result = TrainResult(p)
    for epoch in range(config.epochs + config.finetune_epochs):
        for group in opt.param_groups:
            group["lr"] = config.lr_at(epoch)
        order = torch.randperm(n, generator=gen)
        sums = dict(reg=0.0, align=0.0, dif=0.0, total=0.0, final=0.0, coarse=0.0)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = {k: v[idx] for k, v in data.items()}
            z = torch.randn(batch["x0"].shape, generator=gen, dtype=dtype)
            align_eps = torch.randn(batch["x0"].shape, generator=gen, dtype=dtype)
            terms, out = batch_losses(
                p, batch, s, z, align_eps, config.squared, config.dual, config.shared_noise
            )
            loss_vec = _total(terms, config)
            loss = loss_vec.mean()
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch + 1}, batch starting {start}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            with torch.no_grad():
                for key in ("reg", "align", "dif"):
                    sums[key] += float(terms[key].sum())
                sums["total"] += float(loss_vec.sum())
                sums["final"] += float(_dist(out["final"], batch["x0"], False).sum())
                # Coarse error is taken after the merge: measured pixels of the
                # raw regressor output are discarded by construction.
                sums["coarse"] += float(_dist(out["updated"], batch["x0"], False).sum())
        entry = EpochLog(
            epoch + 1, sums["reg"] / n, sums["align"] / n, sums["dif"] / n,
            sums["total"] / n, sums["final"] / n, sums["coarse"] / n,
        )
        result.log.append(entry)
        log.info("epoch %s", entry.csv_row())
    p.to(torch.float64)
    return result


def pretrain_timestep(
    h: TimestepPredictor,
    samples: list[TrainingSample],
    s: Scheduler = Scheduler(),
    epochs: int = 20,
    lr: float = 2e-3,
    batch_size: int = 16,
    seed: int = 0,
) -> list[float]:
    """Optional supervised pre-training of the timestep predictor.

    Each step draws t ~ U(T_MIN, T_MAX) per sample, forms X(t) from the
    forward marginal and regresses H(X(t)) onto t with an L1 loss. Returns
    the mean absolute error of every epoch.
    """
    sc = s.continuous()
    dtype = module_dtype(h)
    data = stack_samples(samples, dtype)
    n = data["x0"].shape[0]
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(h.parameters(), lr=lr, betas=(0.9, 0.99), eps=1e-8)
    history = []
    for _ in range(epochs):
        order = torch.randperm(n, generator=gen)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            x0, dst = data["x0"][idx], data["x_dst"][idx]
            t = T_MIN + (T_MAX - T_MIN) * torch.rand(len(idx), generator=gen, dtype=dtype)
            _, _, sigma_bar = sde_terms(sc, t)
            mu_bar = -torch.expm1(-sc.theta_continuous(t))
            shape = (-1, 1, 1, 1, 1)
            eps = torch.randn(x0.shape, generator=gen, dtype=dtype)
            x_t = (1 - mu_bar.view(shape)) * x0 + mu_bar.view(shape) * dst + sigma_bar.view(shape) * eps
            err = (h(x_t) - t).abs()
            opt.zero_grad()
            err.mean().backward()
            opt.step()
            total += float(err.detach().sum())
        history.append(total / n)
    return history


def timestep_mae(h: TimestepPredictor, samples: list[TrainingSample], s: Scheduler, ts, seed: int = 0):
    """Mean |H(X(t)) - t| over samples and the given times."""
    sc = s.continuous()
    errs = []
    with torch.no_grad():
        for i, smp in enumerate(samples):
            for j, t in enumerate(ts):
                x_t = forward_sample(smp.x0, smp.x_dst, sc, float(t), seed=seed + 1000 * i + j).x
                errs.append(abs(float(h(batch_tensor([x_t], module_dtype(h)))[0]) - t))
    return float(np.mean(errs))


def loss_terms(trace, x0: VideoCube, x_dst: VideoCube, s: Scheduler, seed: int = 0) -> LossBreakdown:
    """Loss terms of one reconstruction trace against its ground truth."""
    for cube in (trace.updated, trace.final, x_dst):
        if cube.shape != x0.shape:
            raise ValueError(f"dims differ: {cube.shape} vs {x0.shape}")
    x_t = forward_sample(x0, x_dst, s.continuous(), trace.t_hat, seed).x
    return LossBreakdown(
        regression=float(np.linalg.norm(trace.updated.data - x0.data)),
        alignment=float(np.linalg.norm(trace.updated.data - x_t.data)),
        diffusion=float(np.linalg.norm(trace.final.data - x0.data)),
    )


def evaluate(p: PredictorSet, samples: list[TrainingSample], s: Scheduler, dual=False, seed=0):
    """Mean PSNR of the final and coarse (merged) outputs over held-out samples."""
    finals, coarses = [], []
    for i, smp in enumerate(samples):
        if dual:
            tr = reconstruct_regdif_dual(smp.y, smp.y_c, smp.mask, p, s, seed=seed + i)
        else:
            tr = reconstruct_regdif(smp.y, smp.mask, p, s, seed=seed + i)
        finals.append(psnr(smp.x0, tr.final).mean)
        coarses.append(psnr(smp.x0, tr.updated).mean)
    return float(np.mean(finals)), float(np.mean(coarses))


# --- gradient verification ---------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    tolerance: float
    worst: str = ""

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def compare_gradients(analytic, numeric, names, tolerance, atol=1e-6) -> GradCheckReport:
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol)
    rel = np.abs(analytic - numeric) / denom
    k = int(np.argmax(rel))
    return GradCheckReport(float(rel[k]), rel.size, tolerance, names[k])


def grad_check(
    p: PredictorSet,
    sample: TrainingSample,
    s: Scheduler = Scheduler(),
    tolerance: float = 1e-3,
    step: float = 1e-5,
    max_coords: int = 400,
    seed: int = 0,
    config: TrainConfig | None = None,
    corrupt=None,
) -> GradCheckReport:
    """Compare autograd parameter gradients of the total loss with central
    finite differences.

    At most ``max_coords`` parameter coordinates are checked, chosen with a
    seeded generator when the model is larger. ``corrupt`` may transform the
    analytic gradient vector before comparison (negative controls).
    """
    config = config or TrainConfig()
    batch = stack_samples([sample])
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(batch["x0"].shape, generator=gen, dtype=DTYPE)
    align_eps = torch.randn(batch["x0"].shape, generator=gen, dtype=DTYPE)

    def loss_fn():
        terms, _ = batch_losses(
            p, batch, s, z, align_eps, config.squared, config.dual, config.shared_noise
        )
        return _total(terms, config).sum()

    params = [(name, prm) for name, prm in p.named_parameters()]
    p.zero_grad()
    loss_fn().backward()
    coords = [(name, prm, j) for name, prm in params for j in range(prm.numel())]
    if len(coords) > max_coords:
        pick = np.random.default_rng(seed).choice(len(coords), max_coords, replace=False)
        coords = [coords[k] for k in sorted(pick)]
    analytic, numeric, names = [], [], []
    with torch.no_grad():
        for name, prm, j in coords:
            flat = prm.view(-1)
            analytic.append(float(prm.grad.view(-1)[j]))
            orig = float(flat[j])
            flat[j] = orig + step
            up = float(loss_fn())
            flat[j] = orig - step
            down = float(loss_fn())
            flat[j] = orig
            numeric.append((up - down) / (2 * step))
            names.append(f"{name}[{j}]")
    analytic = np.asarray(analytic)
    if corrupt is not None:
        analytic = corrupt(analytic)
    return compare_gradients(analytic, numeric, names, tolerance)
