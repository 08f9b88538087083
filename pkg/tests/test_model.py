"""Model spec validation, initialisation, noise masks, forward passes and checkpoints."""

import json

import numpy as np
import pytest

from calibforge.errors import ConfigError, DataFormatError, ShapeError
from calibforge.model import (
    ModelSpec,
    NoiseMask,
    concat_masks,
    forward_deterministic,
    forward_logits,
    forward_stochastic,
    init_params,
    load_checkpoint,
    sample_mask,
    save_checkpoint,
)
from calibforge.rng import RngStream


@pytest.mark.parametrize("kwargs", [
    dict(input_dim=0, num_classes=3),
    dict(input_dim=2, num_classes=1),
    dict(input_dim=2, num_classes=3, hidden=(0,)),
    dict(input_dim=2, num_classes=3, hidden=(4,), keep_prob=0.0),
    dict(input_dim=2, num_classes=3, hidden=(4,), keep_prob=1.5),
    dict(input_dim=2, num_classes=3, hidden=(4, 4), keep_prob=(0.5,)),
    dict(input_dim=2, num_classes=3, residual_blocks=-1),
    dict(input_dim=2, num_classes=3, survival_prob=0.0),
    dict(input_dim=2, num_classes=3, activation="tanh"),
])
def test_spec_rejects_invalid_settings(kwargs):
    with pytest.raises(ConfigError):
        ModelSpec(**kwargs)


def test_spec_broadcasts_keep_prob():
    spec = ModelSpec(input_dim=2, num_classes=3, hidden=(4, 5), keep_prob=0.7)
    assert spec.keep_prob == (0.7, 0.7)
    assert spec.mask_width == 9
    assert ModelSpec.from_dict(spec.to_dict()) == spec


def test_parameter_names_and_shapes():
    spec = ModelSpec(input_dim=3, num_classes=4, hidden=(8, 6), residual_blocks=1)
    params = init_params(spec, RngStream(0))
    assert params.names == [
        "hidden.0.weight", "hidden.0.bias",
        "hidden.1.weight", "hidden.1.bias",
        "block.0.fc1.weight", "block.0.fc1.bias",
        "block.0.fc2.weight", "block.0.fc2.bias",
        "head.weight", "head.bias",
    ]
    assert params["hidden.0.weight"].shape == (3, 8)
    assert params["block.0.fc1.weight"].shape == (6, 6)
    assert params["head.weight"].shape == (6, 4)
    assert len(params.weights()) == 5


def test_init_is_deterministic_and_bounded():
    spec = ModelSpec(input_dim=2, num_classes=4, hidden=(16, 8))
    a = init_params(spec, RngStream(3)).arrays()
    b = init_params(spec, RngStream(3)).arrays()
    c = init_params(spec, RngStream(4)).arrays()
    for name in a:
        assert np.array_equal(a[name], b[name])
    assert not np.array_equal(a["hidden.0.weight"], c["hidden.0.weight"])
    assert np.all(a["hidden.0.bias"] == 0.0)
    bound = np.sqrt(6.0 / (2 + 16))
    assert np.all(np.abs(a["hidden.0.weight"]) < bound)


def test_init_weights_are_centred():
    spec = ModelSpec(input_dim=100, num_classes=2, hidden=(100,))
    w = init_params(spec, RngStream(6))["hidden.0.weight"].data.reshape(-1)
    assert w.size >= 10_000
    bound = np.sqrt(6.0 / (100 + 100))
    sigma = bound / np.sqrt(3.0) / np.sqrt(w.size)
    assert abs(w.mean()) <= 3 * sigma


def test_adding_a_layer_keeps_other_initial_values():
    small = init_params(ModelSpec(input_dim=2, num_classes=3, hidden=(4,)), RngStream(8))
    deep = init_params(ModelSpec(input_dim=2, num_classes=3, hidden=(4,), residual_blocks=1),
                       RngStream(8))
    assert np.array_equal(small["hidden.0.weight"].data, deep["hidden.0.weight"].data)


def test_parameter_set_rejects_wrong_shapes():
    spec = ModelSpec(input_dim=2, num_classes=3)
    params = init_params(spec, RngStream(0))
    with pytest.raises(ShapeError):
        params.assign({"head.weight": np.zeros((3, 3)), "head.bias": np.zeros(3)})


def test_mask_rows_use_contiguous_stream_blocks(mlp_spec):
    one = sample_mask(mlp_spec, RngStream(5).child("m"), rows=1)
    three = sample_mask(mlp_spec, RngStream(5).child("m"), rows=3)
    assert three.rows == 3
    for site in range(len(mlp_spec.hidden)):
        assert np.array_equal(one.units[site][0], three.units[site][0])


def test_mask_keep_rate_is_close_to_keep_prob():
    spec = ModelSpec(input_dim=2, num_classes=3, hidden=(50,), keep_prob=0.3,
                     residual_blocks=2, survival_prob=0.9)
    mask = sample_mask(spec, RngStream(1), rows=2000)
    assert abs(mask.units[0].mean() - 0.3) < 0.01
    assert abs(mask.gates.mean() - 0.9) < 0.02


def test_mask_entries_must_be_binary():
    with pytest.raises(ConfigError):
        NoiseMask(units=(np.full((1, 3), 0.5),), gates=np.zeros((1, 0)))


def test_concat_masks_stacks_rows(mlp_spec):
    a = sample_mask(mlp_spec, RngStream(1), rows=2)
    b = sample_mask(mlp_spec, RngStream(2), rows=3)
    both = concat_masks([a, b])
    assert both.rows == 5
    assert np.array_equal(both.units[1][2:], b.units[1])


def test_full_mask_with_no_noise_matches_deterministic_pass():
    spec = ModelSpec(input_dim=2, num_classes=4, hidden=(8, 8), keep_prob=1.0,
                     residual_blocks=2, survival_prob=1.0)
    params = init_params(spec, RngStream(2))
    x = RngStream(3).uniform((7, 2), -2.0, 2.0)
    stochastic = forward_stochastic(x, params, NoiseMask.full(spec, rows=7)).data
    assert np.array_equal(stochastic, forward_deterministic(x, params).data)


def test_single_row_mask_broadcasts(mlp_spec, mlp_params, batch):
    x, _ = batch
    mask = sample_mask(mlp_spec, RngStream(4), rows=1)
    out = forward_stochastic(x, mlp_params, mask).data
    assert out.shape == (6, 4)
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-12)


def test_mask_row_count_must_match(mlp_spec, mlp_params, batch, batch_mask):
    x, _ = batch
    with pytest.raises(ShapeError):
        forward_stochastic(x, mlp_params, batch_mask(4))


def test_stochastic_pass_needs_a_mask(mlp_params, batch):
    with pytest.raises(ConfigError):
        forward_stochastic(batch[0], mlp_params, None)


def test_input_width_is_checked(mlp_params):
    with pytest.raises(ShapeError):
        forward_deterministic(np.zeros((3, 5)), mlp_params)


def test_dropped_blocks_ignore_their_parameters():
    spec = ModelSpec(input_dim=2, num_classes=3, hidden=(6,), keep_prob=1.0,
                     residual_blocks=1, survival_prob=0.5)
    params = init_params(spec, RngStream(6))
    x = RngStream(7).uniform((4, 2), -1.0, 1.0)
    mask = NoiseMask(units=(np.ones((4, 6)),), gates=np.zeros((4, 1)))
    before = forward_logits(x, params, mask).data
    arrays = params.arrays()
    arrays["block.0.fc1.weight"] = arrays["block.0.fc1.weight"] + 3.0
    arrays["block.0.fc2.bias"] = arrays["block.0.fc2.bias"] - 1.0
    params.assign(arrays)
    assert np.array_equal(forward_logits(x, params, mask).data, before)


def test_deterministic_pass_uses_survival_expectation():
    spec = ModelSpec(input_dim=2, num_classes=3, hidden=(5,), keep_prob=1.0,
                     residual_blocks=1, survival_prob=0.25)
    params = init_params(spec, RngStream(10))
    x = RngStream(11).uniform((3, 2), -1.0, 1.0)
    on = forward_logits(x, params, NoiseMask(units=(np.ones((3, 5)),), gates=np.ones((3, 1)))).data
    off = forward_logits(x, params, NoiseMask(units=(np.ones((3, 5)),), gates=np.zeros((3, 1)))).data
    expected = off + 0.25 * (on - off)
    assert np.allclose(forward_logits(x, params).data, expected, atol=1e-12)


def test_checkpoint_round_trip_is_bit_exact(tmp_path, mlp_params):
    path = save_checkpoint(tmp_path / "model.json", mlp_params, epoch=3)
    loaded = load_checkpoint(path)
    assert loaded.spec == mlp_params.spec
    for name, arr in mlp_params.arrays().items():
        assert np.array_equal(loaded[name].data, arr)
    assert json.loads(path.read_text())["metadata"] == {"epoch": 3}


def test_checkpoint_errors(tmp_path, mlp_params):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.json")

    garbage = tmp_path / "garbage.json"
    garbage.write_text("{not json")
    with pytest.raises(DataFormatError):
        load_checkpoint(garbage)

    path = save_checkpoint(tmp_path / "model.json", mlp_params)
    doc = json.loads(path.read_text())
    doc["format_version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(DataFormatError):
        load_checkpoint(path)
