"""Shared fixtures: small models, hand-built records and a finite-difference gradient check."""

from typing import Callable, Sequence

import numpy as np
import pytest

from calibforge.calib import records_from_probs
from calibforge.model import ModelSpec, NoiseMask, init_params, sample_mask
from calibforge.rng import RngStream
from calibforge.tensor import Tensor, backward


def max_relative_error(loss_fn: Callable[[], Tensor], leaves: Sequence[Tensor],
                       h: float = 1e-5) -> float:
    """
    Largest relative gap between backward() gradients and central differences.

    ``loss_fn`` must rebuild the scalar loss from the current values of ``leaves``.
    """
    for t in leaves:
        t.requires_grad = True
        t.zero_grad()
    backward(loss_fn())
    analytic = [t.grad.copy() for t in leaves]

    worst = 0.0
    for t, grad in zip(leaves, analytic):
        flat = t.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = loss_fn().item()
            flat[k] = orig - h
            down = loss_fn().item()
            flat[k] = orig
            numeric = (up - down) / (2 * h)
            a = grad.reshape(-1)[k]
            worst = max(worst, abs(a - numeric) / max(abs(a) + abs(numeric), 1e-4))
    return worst


@pytest.fixture
def grad_check():
    return max_relative_error


@pytest.fixture
def mlp_spec():
    """The 2-16-8-4 dropout network used for gradient checks."""
    return ModelSpec(input_dim=2, num_classes=4, hidden=(16, 8), keep_prob=0.5)


@pytest.fixture
def mlp_params(mlp_spec):
    return init_params(mlp_spec, RngStream(11))


@pytest.fixture
def batch():
    """Six inputs in [-2, 2] with labels."""
    rng = RngStream(5)
    return rng.uniform((6, 2), -2.0, 2.0), np.array([0, 1, 2, 3, 1, 0])


@pytest.fixture
def batch_mask(mlp_spec):
    def make(rows: int) -> NoiseMask:
        return sample_mask(mlp_spec, RngStream(9).child("test-mask"), rows=rows)
    return make


@pytest.fixture
def four_records():
    """Confidences {0.95 right, 0.95 wrong, 0.55 right, 0.55 right} with C=2."""
    probs = np.array([[0.95, 0.05], [0.95, 0.05], [0.45, 0.55], [0.45, 0.55]])
    return records_from_probs(probs, [0, 1, 1, 1])


@pytest.fixture
def smoke_args(tmp_path):
    """CLI flags for a seconds-scale run writing into a temp directory."""
    return ["--preset", "smoke", "--seed", "1", "--out", str(tmp_path / "run")]
