import math

import numpy as np
import pytest
import torch

from onehot_sci.core import VideoCube
from onehot_sci.data import simulate_sample, synthetic_dataset, synthetic_video
from onehot_sci.predictors import PredictorSet, ToyBlockConfig
from onehot_sci.recon import RegDifTrace
from onehot_sci.sde import Scheduler, coeffs_at
from onehot_sci.training import (
    EpochLog,
    TrainConfig,
    TrainingDivergedError,
    batch_losses,
    grad_check,
    loss_terms,
    stack_samples,
    train,
)

SMALL = ToyBlockConfig(hidden_channels=4, noise_blocks=1)


def _cube(values):
    return VideoCube(np.asarray(values, dtype=float).reshape(1, 1, -1))


def _sample(seed=0, shape=(4, 4, 2)):
    return simulate_sample(synthetic_video(*shape, seed), seed, 0.02 * math.sqrt(shape[2]))


def test_loss_terms_hand_case():
    x0 = _cube([0.5, 0.2])
    dst = _cube([0.5, 0.0])
    updated = _cube([0.5, 0.3])
    final = _cube([0.4, 0.2])
    tr = RegDifTrace(x1=dst, coarse=updated, updated=updated, t_hat=0.3, eps=dst, final=final)
    s = Scheduler()
    out = loss_terms(tr, x0, dst, s, seed=0)
    assert out.regression == pytest.approx(0.1, abs=1e-15)
    assert out.diffusion == pytest.approx(0.1, abs=1e-15)
    # Alignment target rebuilt by hand from the closed-form marginal.
    from onehot_sci.sde import forward_sample

    eps = forward_sample(x0, dst, s.continuous(), 0.3, seed=0).eps.data.ravel()
    c = coeffs_at(s.continuous(), 0.3)
    target = (1 - c.mu_bar) * np.array([0.5, 0.2]) + c.mu_bar * np.array([0.5, 0.0]) + c.sigma_bar * eps
    assert out.alignment == pytest.approx(np.linalg.norm(np.array([0.5, 0.3]) - target), rel=1e-12)
    assert out.total == pytest.approx(out.regression + out.alignment + out.diffusion)


def test_loss_terms_zero_cases():
    x0 = _cube([0.5, 0.2])
    tr = RegDifTrace(x1=x0, coarse=x0, updated=x0, t_hat=0.5, eps=x0, final=x0)
    out = loss_terms(tr, x0, x0, Scheduler())
    assert out.regression == 0 and out.diffusion == 0


def test_loss_terms_dims():
    x0 = _cube([0.5, 0.2])
    bad = _cube([0.1, 0.2, 0.3])
    tr = RegDifTrace(x1=x0, coarse=x0, updated=bad, t_hat=0.5, eps=x0, final=x0)
    with pytest.raises(ValueError):
        loss_terms(tr, x0, x0, Scheduler())


def test_all_flags_off_rejected():
    with pytest.raises(ValueError):
        TrainConfig(reg=False, align=False, dif=False)


def test_lr_schedule():
    cfg = TrainConfig(lr=1e-4, epochs=8, finetune_epochs=2)
    rates = [cfg.lr_at(e) for e in range(10)]
    assert rates[:8] == [1e-4, 1e-4, 5e-5, 5e-5, 2.5e-5, 2.5e-5, 1.25e-5, 1.25e-5]
    assert rates[8:] == pytest.approx([1e-5, 1e-5])


def test_zero_learning_rate_leaves_parameters():
    p = PredictorSet(SMALL, seed=0)
    before = {k: v.clone() for k, v in p.state_dict().items()}
    train(TrainConfig(lr=0.0, epochs=2, batch_size=4, precision="float64"), [_sample(i).x0 for i in range(8)], p)
    for k, v in p.state_dict().items():
        assert torch.equal(v, before[k]), k


def test_disabled_term_contributes_no_gradient():
    # Regression-only vs regression+diffusion with the diffusion path removed:
    # the noise predictor only enters through the diffusion term.
    batch = stack_samples([_sample(0), _sample(1)])
    s = Scheduler()
    gen = torch.Generator().manual_seed(0)
    z = torch.randn(batch["x0"].shape, generator=gen, dtype=torch.float64)
    a = torch.randn(batch["x0"].shape, generator=gen, dtype=torch.float64)
    p = PredictorSet(SMALL, seed=0)
    terms, _ = batch_losses(p, batch, s, z, a)
    (terms["reg"] + terms["align"]).sum().backward()
    assert all(prm.grad is None or torch.all(prm.grad == 0) for prm in p.noise.parameters())
    grads = {k: v.grad.clone() for k, v in p.named_parameters() if v.grad is not None}
    p.zero_grad()
    terms, _ = batch_losses(p, batch, s, z, a)
    (terms["reg"] + terms["align"] + 0 * terms["dif"]).sum().backward()
    for k, v in p.named_parameters():
        if k in grads:
            assert torch.equal(v.grad, grads[k]), k


def test_flag_off_gives_identical_updates_to_manual_total():
    videos = [_sample(i).x0 for i in range(4)]
    p1, p2 = PredictorSet(SMALL, seed=3), PredictorSet(SMALL, seed=3)
    train(TrainConfig(lr=1e-3, epochs=1, batch_size=4, dif=False, precision="float64"), videos, p1)
    train(TrainConfig(lr=1e-3, epochs=1, batch_size=4, dif=False, precision="float64"), videos, p2)
    for a, b in zip(p1.parameters(), p2.parameters()):
        assert torch.equal(a, b)
    # The noise predictor is untouched when the diffusion term is off.
    p3 = PredictorSet(SMALL, seed=3)
    for a, b in zip(p1.noise.parameters(), p3.noise.parameters()):
        assert torch.equal(a, b)


def test_divergence_detected():
    p = PredictorSet(SMALL, seed=0)
    with torch.no_grad():
        p.regressor.tail.bias.fill_(float("nan"))
    with pytest.raises(TrainingDivergedError):
        train(TrainConfig(epochs=1, batch_size=2, precision="float64"), [_sample(0).x0] * 2, p)


def test_epoch_log_csv():
    row = EpochLog(3, 1.0, 2.0, 3.0, 6.0, 0.5, 0.25).csv_row()
    assert EpochLog.CSV_HEADER.count(",") == row.count(",")
    assert [float(v) for v in row.split(",")] == [3, 1, 2, 3, 6, 0.5, 0.25]


def test_grad_check_full_pipeline():
    report = grad_check(PredictorSet(seed=0), _sample(0), Scheduler(), tolerance=1e-3)
    assert report.passed, report


def test_grad_check_linear_zero_parameters_exact():
    p = PredictorSet(ToyBlockConfig(hidden_channels=2, activation="linear", noise_blocks=1))
    with torch.no_grad():
        for prm in p.parameters():
            prm.zero_()
    report = grad_check(p, _sample(1), Scheduler(), tolerance=1e-6, max_coords=10**6)
    assert report.n_checked == sum(prm.numel() for prm in p.parameters())
    assert report.passed, report


def test_grad_check_negative_control():
    report = grad_check(PredictorSet(SMALL), _sample(0), Scheduler(), corrupt=lambda g: -g)
    assert not report.passed


def test_grad_check_dual():
    p = PredictorSet(SMALL, dual=True, seed=1)
    with torch.no_grad():  # move fusion away from the zero-output start
        for prm in p.fusion.parameters():
            prm.add_(0.05)
    report = grad_check(p, _sample(2), Scheduler(), config=TrainConfig(dual=True))
    assert report.passed, report


@pytest.mark.slow
def test_toy_run_loss_decreases():
    videos = synthetic_dataset(200, 16, 16, 4, seed=1)
    result = train(TrainConfig(lr=2e-3, epochs=30, seed=0), videos, PredictorSet(seed=0))
    assert len(result.log) == 30
    assert result.log[-1].total < result.log[0].total
