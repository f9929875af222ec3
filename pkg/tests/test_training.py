import math

import numpy as np
import pytest
import torch

from adrrec.config import TrainConfig
from adrrec.corpus import SequenceBatch, cyclic_corpus
from adrrec.errors import NumericalError
from adrrec.gradcheck import gradcheck, tiny_setup
from adrrec.noisereg import LnsrConfig
from adrrec.training import (
    Streams,
    build_model,
    fit,
    make_optimizer,
    objective,
    task_loss,
    train_step,
)
from conftest import tiny_corpus

f64 = torch.float64


def test_task_loss_perfect_prediction_is_zero():
    targets = torch.tensor([[1, 2]])
    logits = torch.full((1, 2, 4), float("-inf"))
    logits[0, 0, 1] = logits[0, 1, 2] = 0.0
    assert task_loss(logits, targets, torch.ones(1, 2, dtype=torch.bool)).item() == 0.0


def test_task_loss_uniform_is_log_vocab():
    logits = torch.zeros(3, 5, 100, dtype=f64)
    targets = torch.randint(0, 100, (3, 5))
    loss = task_loss(logits, targets, torch.ones(3, 5, dtype=torch.bool))
    assert loss.item() == pytest.approx(math.log(100)) == pytest.approx(4.6052, abs=1e-4)


def test_task_loss_masked_positions_ignored():
    g = torch.Generator().manual_seed(0)
    logits = torch.randn(2, 4, 6, generator=g, dtype=f64)
    targets = torch.tensor([[0, 0, 3, 4], [0, 1, 2, 5]])
    mask = targets != 0
    other = logits.clone()
    other[~mask] = torch.randn(int((~mask).sum()), 6, generator=g, dtype=f64)
    assert task_loss(logits, targets, mask).item() == task_loss(other, targets, mask).item()
    with pytest.raises(ValueError):
        task_loss(logits, targets, torch.zeros_like(mask))


def _tiny(mode="p-s-l-o", **kw):
    corpus = tiny_corpus(n_users=4)
    cfg = TrainConfig(mode=mode, d_model=8, n_layers=2, d_ff=16, max_len=4, dtype="float64", **kw).validate()
    batch = SequenceBatch(
        items=np.array([[3, 1, 4, 1], [0, 0, 9, 2]]),
        times=np.array([[1_600_000_000 + 100 * k for k in range(4)], [0, 0, 1_600_000_000, 1_600_000_500]]),
        pad_mask=np.array([[True] * 4, [False, False, True, True]]),
        targets=np.array([[1, 4, 1, 5], [0, 0, 2, 6]]),
    )
    return cfg, corpus, batch


def _params(model):
    return {n: p.detach().clone() for n, p in model.named_parameters()}


def test_lambda_zero_sigma_zero_matches_plain_step_bit_for_bit():
    cfg, corpus, batch = _tiny("p-s-l-o", lam=0.0, lnsr=LnsrConfig(sigma0=0.0), dropout=0.2)
    plain_cfg = cfg.replace(mode="p-s-l")
    reg_model = build_model(cfg, corpus)
    plain_model = build_model(plain_cfg, corpus)
    plain_model.load_state_dict(reg_model.state_dict())
    for model, c in ((reg_model, cfg), (plain_model, plain_cfg)):
        opt = make_optimizer(c, model.parameters())
        streams = Streams.from_seeds(c.seeds)
        for step in range(3):
            train_step(model, batch, c, opt, streams, step)
    a, b = _params(reg_model), _params(plain_model)
    assert all(torch.equal(a[n], b[n]) for n in a)


def test_objective_composition():
    cfg, corpus, batch = _tiny(lam=0.3, lnsr=LnsrConfig(sigma0=0.2))
    model = build_model(cfg, corpus)
    streams = Streams.from_seeds(cfg.seeds)
    opt = make_optimizer(cfg, model.parameters())
    gen_state = [streams.dropout.get_state(), streams.noise.get_state()]
    loss, reg = objective(model, batch, cfg, streams)
    streams.dropout.set_state(gen_state[0])
    streams.noise.set_state(gen_state[1])
    res = train_step(model, batch, cfg, opt, streams)
    assert res.task_loss == loss.item() and res.reg == reg.item()
    assert res.total == (loss + 0.3 * reg).item()
    assert reg.item() > 0


def test_overfits_tiny_batch():
    cfg, corpus, batch = _tiny("p-b-s-l-r-o", lr=1e-2, dropout=0.0)
    model = build_model(cfg, corpus)
    opt = make_optimizer(cfg, model.parameters())
    streams = Streams.from_seeds(cfg.seeds)
    first = train_step(model, batch, cfg, opt, streams).task_loss
    for step in range(1, 200):
        last = train_step(model, batch, cfg, opt, streams, step).task_loss
    assert last < 0.1 < first


def test_train_step_deterministic():
    runs = []
    for _ in range(2):
        cfg, corpus, batch = _tiny(dropout=0.3, lnsr=LnsrConfig(sigma0=0.1))
        model = build_model(cfg, corpus)
        opt = make_optimizer(cfg, model.parameters())
        streams = Streams.from_seeds(cfg.seeds)
        for step in range(3):
            train_step(model, batch, cfg, opt, streams, step)
        runs.append(_params(model))
    assert all(torch.equal(runs[0][n], runs[1][n]) for n in runs[0])


def test_non_finite_objective_aborts():
    cfg, corpus, batch = _tiny()
    model = build_model(cfg, corpus)
    with torch.no_grad():
        model.layers[0].out.bias.fill_(float("nan"))
    opt = make_optimizer(cfg, model.parameters())
    with pytest.raises(NumericalError, match="step 7"):
        train_step(model, batch, cfg, opt, Streams.from_seeds(cfg.seeds), step=7)


def test_sgd_update_rule():
    p = torch.nn.Parameter(torch.tensor([1.0, -2.0], dtype=f64))
    cfg = TrainConfig(optimizer="sgd", lr=0.1)
    opt = make_optimizer(cfg, [p])
    g = torch.tensor([0.5, -3.0], dtype=f64)
    for k in range(1, 4):
        p.grad = g.clone()
        opt.step()
        assert torch.allclose(p.detach(), torch.tensor([1.0, -2.0], dtype=f64) - k * 0.1 * g, atol=1e-15)


def test_adam_constant_gradient_step_approaches_lr():
    p = torch.nn.Parameter(torch.zeros(3, dtype=f64))
    opt = make_optimizer(TrainConfig(lr=1e-3), [p])
    g = torch.tensor([2.0, -0.5, 10.0], dtype=f64)
    for _ in range(100):
        before = p.detach().clone()
        p.grad = g.clone()
        opt.step()
    step = (p.detach() - before).abs()
    assert torch.allclose(step, torch.full((3,), 1e-3, dtype=f64), rtol=1e-6)


@pytest.mark.parametrize("name", ["adam", "sgd"])
def test_zero_gradient_no_change(name):
    p = torch.nn.Parameter(torch.tensor([1.0, 2.0], dtype=f64))
    opt = make_optimizer(TrainConfig(optimizer=name), [p])
    for _ in range(5):
        p.grad = torch.zeros(2, dtype=f64)
        opt.step()
    assert p.detach().tolist() == [1.0, 2.0]


@pytest.mark.parametrize("mode", ["p-b-s-l-r-o", "p-b-t-s-e-l-r-o", "s-e-o"])
def test_gradient_check(mode):
    model, batch, cfg, eps = tiny_setup(mode)
    res = gradcheck(model, batch, cfg, eps)
    name, worst = res.worst
    assert res.passed, (name, worst)
    assert any(n.startswith("embed.sigma") for n in res.errors)


def _small_cfg(**kw):
    base = dict(mode="p-s-o", d_model=16, d_ff=32, n_layers=1, max_len=12, batch_size=32, epochs=2,
                n_negatives=None, eval_ks=[1, 10], lr=3e-3)
    base.update(kw)
    return TrainConfig(**base).validate()


def test_zero_epochs_returns_initial_model():
    corpus = cyclic_corpus(n_users=20)
    cfg = _small_cfg(epochs=0)
    res = fit(cfg, corpus)
    assert res.report.epochs == [] and res.report.best_epoch is None
    init = build_model(cfg, corpus)
    assert all(torch.equal(a, b) for a, b in zip(init.state_dict().values(), res.checkpoint["state_dict"].values()))


def test_fit_deterministic_and_report_finite():
    corpus = cyclic_corpus(n_users=40)
    a = fit(_small_cfg(), corpus)
    b = fit(_small_cfg(), corpus)
    assert a.report.records() == b.report.records()
    assert a.checkpoint["id"] == b.checkpoint["id"]
    for rec in a.report.records():
        assert math.isfinite(rec["task_loss"]) and math.isfinite(rec["reg"]) and "wall_clock" not in rec
    assert len(a.report.epochs) == 2 and a.report.best_epoch in (1, 2)


def test_fit_different_seed_differs():
    corpus = cyclic_corpus(n_users=40)
    a = fit(_small_cfg(), corpus)
    b = fit(_small_cfg().with_seed(5), corpus)
    assert a.checkpoint["id"] != b.checkpoint["id"]
