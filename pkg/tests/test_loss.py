"""Objectives: hand values, reductions between them, gradients and the mixture KL diagnostic."""

import math

import numpy as np
import pytest

from calibforge.errors import ConfigError, ShapeError
from calibforge.loss import (
    LossConfig,
    LossKind,
    MixturePriorSpec,
    UniformTarget,
    alpha_tensor,
    approx_kl_mixture,
    ci_loss,
    cross_entropy,
    entropy,
    entropy_ci_loss,
    kl_uniform,
    l2_penalty,
    nll_rows,
    training_objective,
    vwci_loss,
)
from calibforge.model import ModelSpec, forward_stochastic, init_params
from calibforge.rng import RngStream
from calibforge.stochastic import normalized_variance
from calibforge.tensor import Tensor, backward

P = Tensor([[0.9, 0.1]])


def _random_probs(n=20, C=5, seed=0):
    z = RngStream(seed).normal((n, C), scale=1.5)
    p = np.exp(z - z.max(axis=1, keepdims=True))
    return Tensor(p / p.sum(axis=1, keepdims=True))


def test_cross_entropy_examples():
    assert cross_entropy(Tensor([[0.5, 0.5]]), [0]).item() == pytest.approx(math.log(2), abs=1e-12)
    assert cross_entropy(Tensor([[1.0, 0.0], [0.0, 1.0]]), [0, 1]).item() == pytest.approx(0.0, abs=1e-15)
    uniform = Tensor(np.full((3, 4), 0.25))
    assert cross_entropy(uniform, [0, 1, 3]).item() == pytest.approx(math.log(4), abs=1e-12)


def test_kl_uniform_examples():
    assert kl_uniform(P).data[0] == pytest.approx(0.51083, abs=1e-5)
    assert kl_uniform(Tensor(np.full((1, 3), 1 / 3))).data[0] == pytest.approx(0.0, abs=1e-12)
    assert np.all(kl_uniform(_random_probs()).data >= -1e-12)


def test_ci_examples():
    assert ci_loss(P, [0], beta=1.0).item() == pytest.approx(0.61619, abs=1e-5)
    uniform = Tensor(np.full((2, 3), 1 / 3))
    assert ci_loss(uniform, [0, 2], beta=4.0).item() == pytest.approx(math.log(3), abs=1e-12)


def test_ci_with_zero_beta_is_cross_entropy():
    p = _random_probs()
    y = np.arange(20) % 5
    assert ci_loss(p, y, beta=0.0).item() == cross_entropy(p, y).item()


def test_vwci_example():
    value = vwci_loss(P, [0], np.array([0.5]), samples=1).item()
    assert value == pytest.approx(0.30809, abs=1e-5)


def test_vwci_extremes():
    p = _random_probs(n=12)
    y = np.array([0, 1, 2, 3])
    per_sample = np.repeat(y, 3)
    zero = vwci_loss(p, y, np.zeros(4), samples=3).item()
    assert zero == cross_entropy(p, per_sample).item()
    one = vwci_loss(p, y, np.ones(4), samples=3).item()
    assert one == pytest.approx(kl_uniform(p).data.mean(), abs=1e-12)


def test_vwci_first_sample_gradient_keeps_the_value():
    p = _random_probs(n=12)
    y = np.array([0, 1, 2, 3])
    alphas = np.array([0.1, 0.5, 0.2, 0.9])
    full = vwci_loss(p, y, alphas, samples=3).item()
    first = vwci_loss(p, y, alphas, samples=3, grad_all_samples=False).item()
    assert first == full


def test_entropy_ci_example():
    assert entropy(P).data[0] == pytest.approx(0.32508, abs=1e-5)
    assert entropy_ci_loss(P, [0], gamma=1.0).item() == pytest.approx(-0.21972, abs=1e-5)
    p = _random_probs()
    y = np.arange(20) % 5
    assert entropy_ci_loss(p, y, gamma=0.0).item() == cross_entropy(p, y).item()


def test_ci_and_entropy_forms_differ_by_log_c():
    p = _random_probs(seed=3)
    y = np.arange(20) % 5
    for beta in (0.1, 1.0, 2.5):
        gap = ci_loss(p, y, beta, orientation="pred-to-uniform").item() - entropy_ci_loss(p, y, beta).item()
        assert gap == pytest.approx(beta * math.log(5), abs=1e-12)


def test_l2_penalty_examples():
    spec = ModelSpec(input_dim=1, num_classes=2)
    params = init_params(spec, RngStream(0))
    params.assign({"head.weight": np.array([[2.0, 0.0]]), "head.bias": np.array([5.0, 5.0])})
    assert l2_penalty(params, 0.5).item() == 2.0
    assert l2_penalty(params, 0.0).item() == 0.0
    assert l2_penalty(params, 1.0).item() == 2 * l2_penalty(params, 0.5).item()


def test_approx_kl_mixture():
    base = MixturePriorSpec(squared_norms=(4.0, 0.0), weights=(1.0, 0.0), sigma=1.0, dim=2)
    assert approx_kl_mixture(base) == pytest.approx(0.16212, abs=1e-5)

    bumped = MixturePriorSpec(squared_norms=(6.5, 0.0), weights=(0.3, 0.7), sigma=1.0, dim=2)
    low = MixturePriorSpec(squared_norms=(4.0, 0.0), weights=(0.3, 0.7), sigma=1.0, dim=2)
    assert approx_kl_mixture(bumped) - approx_kl_mixture(low) == pytest.approx(0.3 * 2.5 / 2, abs=1e-12)

    half = MixturePriorSpec(squared_norms=(4.0, 0.0), weights=(0.5, 0.5), sigma=1.0, dim=2)
    entropy_free = sum(0.5 * 0.5 * (sq + 2 - 0 - 2 * (1 + math.log(2 * math.pi))) for sq in (4.0, 0.0))
    assert approx_kl_mixture(half) == pytest.approx(entropy_free - 0.5 * math.log(2), abs=1e-12)


def test_domain_errors():
    with pytest.raises(ConfigError):
        ci_loss(P, [0], beta=-1.0)
    with pytest.raises(ConfigError):
        vwci_loss(P, [0], np.array([1.5]), samples=1)
    with pytest.raises(ShapeError):
        vwci_loss(P, [0], np.array([0.5]), samples=2)
    with pytest.raises(ConfigError):
        nll_rows(P, [2])
    with pytest.raises(ConfigError):
        l2_penalty(init_params(ModelSpec(input_dim=1, num_classes=2), RngStream(0)), -0.1)
    with pytest.raises(ConfigError):
        LossConfig(kind="focal")
    with pytest.raises(ConfigError):
        LossConfig(kind="vwci", samples=0)
    with pytest.raises(ConfigError):
        MixturePriorSpec(squared_norms=(1.0, 0.0), weights=(0.6, 0.6))
    with pytest.raises(ConfigError):
        UniformTarget(1)


def test_loss_config_passes_and_round_trip():
    assert LossConfig(kind="vwci", samples=4).passes == 4
    assert LossConfig(kind="ci", beta=0.1, samples=4).passes == 1
    cfg = LossConfig(kind="vwci", samples=3, alpha_override=0.0, detach_alpha=False)
    assert LossConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.kind is LossKind.VWCI


# --- gradients through a 2-16-8-4 dropout network ---------------------------


def _stochastic_probs(batch, params, batch_mask, samples=1):
    x, _ = batch
    mask = batch_mask(len(x) * samples)
    xs = np.repeat(x, samples, axis=0)
    return lambda: forward_stochastic(xs, params, mask)


def _leaves(params):
    return [t for _, t in params]


@pytest.mark.parametrize("name, loss", [
    ("baseline", lambda p, y: cross_entropy(p, y)),
    ("ci", lambda p, y: ci_loss(p, y, 0.1)),
    ("entropy-ci", lambda p, y: entropy_ci_loss(p, y, 0.5)),
])
def test_single_pass_gradients(name, loss, batch, mlp_params, batch_mask, grad_check):
    probs = _stochastic_probs(batch, mlp_params, batch_mask)
    y = batch[1]
    assert grad_check(lambda: loss(probs(), y), _leaves(mlp_params)) < 1e-4


def test_vwci_gradients_with_detached_alpha(batch, mlp_params, batch_mask, grad_check):
    probs = _stochastic_probs(batch, mlp_params, batch_mask, samples=3)
    y = batch[1]
    alphas = normalized_variance(probs().data.reshape(6, 3, 4))
    assert grad_check(lambda: vwci_loss(probs(), y, alphas, samples=3), _leaves(mlp_params)) < 1e-4


def test_vwci_gradients_through_alpha(batch, mlp_params, batch_mask, grad_check):
    probs = _stochastic_probs(batch, mlp_params, batch_mask, samples=3)
    y = batch[1]

    def loss():
        p = probs()
        return vwci_loss(p, y, alpha_tensor(p, 6, 3), samples=3)

    assert grad_check(loss, _leaves(mlp_params)) < 1e-4


def test_l2_penalty_gradients(mlp_params, grad_check):
    assert grad_check(lambda: l2_penalty(mlp_params, 0.3), _leaves(mlp_params)) < 1e-4


def test_alpha_tensor_matches_normalized_variance():
    p = _random_probs(n=12, C=4, seed=5)
    expected = normalized_variance(p.data.reshape(4, 3, 4))
    assert np.allclose(alpha_tensor(p, 4, 3).data, expected, rtol=0, atol=1e-12)
    assert np.allclose(alpha_tensor(p, 4, 3, mode="bc").data, 1.0 - expected, rtol=0, atol=1e-12)


def test_detached_objective_matches_constant_alpha_gradients(batch, mlp_params, batch_mask):
    probs = _stochastic_probs(batch, mlp_params, batch_mask, samples=3)
    y = batch[1]
    cfg = LossConfig(kind="vwci", samples=3)

    mlp_params.zero_grad()
    obj = training_objective(cfg, probs(), y, mlp_params)
    backward(obj.loss)
    from_objective = mlp_params.grads()

    mlp_params.zero_grad()
    backward(vwci_loss(probs(), y, obj.alphas, samples=3))
    for name, g in mlp_params.grads().items():
        assert np.array_equal(g, from_objective[name])


def test_training_objective_adds_weight_decay(batch, mlp_params, batch_mask):
    probs = _stochastic_probs(batch, mlp_params, batch_mask)
    y = batch[1]
    plain = training_objective(LossConfig(), probs(), y, mlp_params).loss.item()
    decayed = training_objective(LossConfig(weight_decay=1e-3), probs(), y, mlp_params).loss.item()
    assert decayed == pytest.approx(plain + l2_penalty(mlp_params, 1e-3).item(), abs=1e-12)


def test_alpha_override_is_reported(batch, mlp_params, batch_mask):
    probs = _stochastic_probs(batch, mlp_params, batch_mask, samples=2)
    obj = training_objective(LossConfig(kind="vwci", samples=2, alpha_override=0.25),
                             probs(), batch[1], mlp_params)
    assert np.array_equal(obj.alphas, np.full(6, 0.25))
