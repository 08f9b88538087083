"""Learning-rate schedule, SGD arithmetic and the training loop."""

import numpy as np
import pytest

from calibforge.data import Standardizer, batches, gen_blobs
from calibforge.errors import ConfigError, DivergenceError, NumericError, ShapeError
from calibforge.loss import LossConfig, l2_penalty
from calibforge.model import ModelSpec, forward_deterministic, init_params, load_checkpoint
from calibforge.rng import RngStream
from calibforge.stochastic import StochasticConfig
from calibforge.tensor import backward
from calibforge.trainer import (
    SGD,
    TrainConfig,
    batch_objective,
    lr_at_epoch,
    predict_probs,
    sgd_step,
    train,
    training_mask,
)

SPEC = ModelSpec(input_dim=2, num_classes=3, hidden=(16,), keep_prob=0.8)


@pytest.fixture
def blobs():
    ds = gen_blobs(3, 40, 2, 3.0, 0.7, seed=0)
    return Standardizer.fit(ds).transform(ds)


def _cfg(**kwargs):
    base = dict(epochs=3, batch_size=32, milestones=(2,), seed=1)
    base.update(kwargs)
    return TrainConfig(**base)


def test_lr_schedule_examples():
    cfg = TrainConfig(lr=0.1, decay=0.2, milestones=(60, 120, 160, 200, 250))
    assert lr_at_epoch(cfg, 0) == 0.1
    assert lr_at_epoch(cfg, 59) == 0.1
    assert lr_at_epoch(cfg, 60) == pytest.approx(0.02)
    assert lr_at_epoch(cfg, 120) == pytest.approx(0.004)
    assert lr_at_epoch(cfg, 299) == pytest.approx(0.1 * 0.2 ** 5)
    assert lr_at_epoch(TrainConfig(milestones=()), 500) == 0.1
    with pytest.raises(ConfigError):
        lr_at_epoch(cfg, -1)


@pytest.mark.parametrize("kwargs", [
    dict(lr=0.0),
    dict(momentum=1.0),
    dict(milestones=(30, 30)),
    dict(batch_size=0),
    dict(epochs=-1),
])
def test_train_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_sgd_step_hand_arithmetic():
    theta, v = sgd_step(np.array([1.0]), np.array([2.0]), np.array([0.0]), lr=0.1, momentum=0.9)
    assert theta[0] == pytest.approx(0.8)
    theta, v = sgd_step(theta, np.array([2.0]), v, lr=0.1, momentum=0.9)
    assert v[0] == pytest.approx(3.8)
    assert theta[0] == pytest.approx(0.42)


def test_sgd_step_reductions():
    theta = np.array([0.5, -1.0])
    plain, _ = sgd_step(theta, np.array([1.0, 2.0]), np.zeros(2), lr=0.1, momentum=0.0)
    assert np.allclose(plain, [0.4, -1.2])
    fixed, v = sgd_step(theta, np.zeros(2), np.zeros(2), lr=0.1, momentum=0.9)
    assert np.array_equal(fixed, theta) and np.array_equal(v, np.zeros(2))
    with pytest.raises(NumericError):
        sgd_step(theta, np.array([np.nan, 0.0]), np.zeros(2), lr=0.1, momentum=0.9)
    with pytest.raises(ShapeError):
        sgd_step(theta, np.zeros(3), np.zeros(2), lr=0.1, momentum=0.9)


def test_weight_decay_alone_shrinks_the_weights():
    params = init_params(SPEC, RngStream(4))
    opt = SGD(params, momentum=0.9)
    norms = []
    for _ in range(5):
        norms.append(sum(float((w.data ** 2).sum()) for w in params.weights()))
        params.zero_grad()
        backward(l2_penalty(params, 0.01))
        opt.step(0.1)
    assert all(b < a for a, b in zip(norms, norms[1:]))


def test_training_is_deterministic(blobs):
    a, log_a = train(SPEC, blobs, _cfg())
    b, log_b = train(SPEC, blobs, _cfg())
    assert log_a.losses == log_b.losses
    for name, arr in a.arrays().items():
        assert np.array_equal(arr, b[name].data)


def test_log_matches_schedule(blobs):
    cfg = _cfg(epochs=4, milestones=(1, 3))
    _, log = train(SPEC, blobs, cfg)
    assert len(log) == 4
    assert [e.lr for e in log.entries] == [lr_at_epoch(cfg, k) for k in range(4)]
    assert all(0.0 <= e.acc <= 1.0 for e in log.entries)


def test_logged_loss_equals_recomputed_loss(blobs):
    cfg = _cfg(epochs=1, batch_size=len(blobs))
    start = init_params(SPEC, RngStream(cfg.seed))
    index = next(batches(len(blobs), cfg.batch_size, cfg.seed, 0))
    expected = batch_objective(start, blobs.x[index], blobs.y[index], blobs.ids[index],
                               cfg, 0).objective.loss.item()
    _, log = train(SPEC, blobs, cfg)
    assert log.entries[0].loss == pytest.approx(expected, abs=1e-12)


def test_training_mask_follows_the_example_not_its_position():
    spec = ModelSpec(input_dim=2, num_classes=3, hidden=(8, 8), keep_prob=0.5,
                     residual_blocks=1)
    passes = 3
    first = training_mask(spec, np.array([3, 7, 11]), passes, seed=5, epoch=2)
    shuffled = training_mask(spec, np.array([11, 3, 7]), passes, seed=5, epoch=2)
    alone = training_mask(spec, np.array([7]), passes, seed=5, epoch=2)

    def rows(mask, slot):
        sl = slice(slot * passes, (slot + 1) * passes)
        return [u[sl] for u in mask.units] + [mask.gates[sl]]

    for a, b in zip(rows(first, 1), rows(shuffled, 2)):
        assert np.array_equal(a, b)
    for a, b in zip(rows(first, 1), rows(alone, 0)):
        assert np.array_equal(a, b)
    later = training_mask(spec, np.array([7]), passes, seed=5, epoch=3)
    assert not all(np.array_equal(a, b) for a, b in zip(rows(alone, 0), rows(later, 0)))


def test_vwci_with_one_pass_and_zero_alpha_follows_baseline(blobs):
    baseline = _cfg(loss=LossConfig(kind="baseline", weight_decay=5e-4))
    vwci = _cfg(loss=LossConfig(kind="vwci", samples=1, alpha_override=0.0, weight_decay=5e-4))
    a, log_a = train(SPEC, blobs, baseline)
    b, log_b = train(SPEC, blobs, vwci)
    assert log_a.losses == log_b.losses
    for name, arr in a.arrays().items():
        assert np.array_equal(arr, b[name].data)


@pytest.mark.parametrize("loss", [
    LossConfig(kind="ci", beta=0.1),
    LossConfig(kind="entropy-ci", gamma=0.1),
    LossConfig(kind="vwci", samples=3),
    LossConfig(kind="vwci", samples=2, detach_alpha=False, grad_all_samples=False),
])
def test_every_objective_trains(blobs, loss):
    _, log = train(SPEC, blobs, _cfg(epochs=2, loss=loss))
    assert len(log) == 2
    assert all(np.isfinite(log.losses))


def test_separable_blobs_reach_high_train_accuracy():
    ds = gen_blobs(2, 100, 2, 10.0, 0.3, seed=2)
    ds = Standardizer.fit(ds).transform(ds)
    spec = ModelSpec(input_dim=2, num_classes=2, hidden=(16,), keep_prob=1.0)
    cfg = TrainConfig(epochs=50, batch_size=32, lr=0.05, milestones=(), seed=0)
    params, log = train(spec, ds, cfg)
    assert log.entries[-1].acc > 0.99
    assert (forward_deterministic(ds.x, params).data.argmax(axis=1) == ds.y).mean() > 0.99


def test_divergence_is_reported(blobs):
    cfg = _cfg(epochs=50, lr=1e6, milestones=(), loss=LossConfig(weight_decay=1.0))
    with pytest.raises(DivergenceError) as excinfo:
        train(SPEC, blobs, cfg)
    assert excinfo.value.epoch >= 0


def test_data_must_match_the_model(blobs):
    with pytest.raises(ShapeError):
        train(ModelSpec(input_dim=3, num_classes=3), blobs, _cfg())


def test_checkpoints_and_csv_log(tmp_path, blobs):
    params, log = train(SPEC, blobs, _cfg(epochs=4, checkpoint_every=2), checkpoint_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.glob("model-epoch*.json")) == [
        "model-epoch0002.json", "model-epoch0004.json"
    ]
    last = load_checkpoint(tmp_path / "model-epoch0004.json")
    assert np.array_equal(last["head.weight"].data, params["head.weight"].data)
    lines = log.write_csv(tmp_path / "trainlog.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,acc,lr,seconds"
    assert len(lines) == 5


def test_stochastic_prediction_without_noise_matches_deterministic(blobs):
    spec = ModelSpec(input_dim=2, num_classes=3, hidden=(8,), keep_prob=1.0)
    params = init_params(spec, RngStream(3))
    mc = predict_probs(params, blobs.x, StochasticConfig(samples=4), ids=blobs.ids)
    assert np.allclose(mc, predict_probs(params, blobs.x), rtol=0, atol=1e-12)
