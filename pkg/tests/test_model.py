import numpy as np
import pytest

from autopool.exceptions import InvalidInputError
from autopool.gradcheck import central_difference, rel_error
from autopool.model import (ModelParams, init_params, load_checkpoint, model_backward,
                            model_forward, save_checkpoint, sigmoid)


def test_zero_weights_give_half():
    params = init_params("linear", 4, 3, seed=0)
    for k in params.arrays:
        params.arrays[k][:] = 0.0
    out, _ = model_forward(params, np.random.default_rng(0).normal(size=(5, 4)))
    np.testing.assert_array_equal(out, 0.5)


def test_linear_matches_definition(rng):
    params = init_params("linear", 6, 2, seed=1)
    params.arrays["b0"][:] = [0.3, -0.2]
    x = rng.normal(size=(7, 6))
    out, _ = model_forward(params, x)
    expected = 1.0 / (1.0 + np.exp(-(x @ params.arrays["W0"] + params.arrays["b0"])))
    np.testing.assert_allclose(out, expected, rtol=1e-14)


def test_mlp_matches_definition(rng):
    params = init_params("mlp", 3, 2, seed=2, hidden=5)
    x = rng.normal(size=(4, 3))
    h = np.maximum(x @ params.arrays["W0"] + params.arrays["b0"], 0)
    expected = 1.0 / (1.0 + np.exp(-(h @ params.arrays["W1"] + params.arrays["b1"])))
    np.testing.assert_allclose(model_forward(params, x)[0], expected, rtol=1e-14)


@pytest.mark.parametrize("arch", ["linear", "mlp"])
def test_shapes_and_batch(arch, rng):
    params = init_params(arch, 5, 3, seed=0, hidden=4)
    x = rng.normal(size=(2, 6, 5))
    out, _ = model_forward(params, x)
    assert out.shape == (2, 6, 3)
    np.testing.assert_allclose(out[1], model_forward(params, x[1])[0], rtol=1e-15)
    assert np.all((out >= 0) & (out <= 1))


def test_bad_inputs(rng):
    params = init_params("linear", 5, 3, seed=0)
    with pytest.raises(InvalidInputError):
        model_forward(params, rng.normal(size=(4, 6)))
    with pytest.raises(InvalidInputError):
        model_forward(params, np.full((2, 5), np.nan))
    with pytest.raises(InvalidInputError):
        init_params("cnn", 5, 3, seed=0)
    with pytest.raises(InvalidInputError):
        init_params("mlp", 5, 3, seed=0, hidden=0)


def test_sigmoid_stable():
    z = np.array([-1000.0, -30.0, 0.0, 30.0, 1000.0])
    s = sigmoid(z)
    assert np.all(np.isfinite(s))
    assert s[2] == 0.5 and s[0] == 0.0 and s[-1] == 1.0
    np.testing.assert_allclose(s[1] + s[3], 1.0, rtol=1e-15)


@pytest.mark.parametrize("arch", ["linear", "mlp"])
def test_backward_matches_finite_difference(arch, rng):
    params = init_params(arch, 4, 2, seed=3, hidden=5)
    for k in params.arrays:
        params.arrays[k] += rng.normal(scale=0.1, size=params.arrays[k].shape)
    x = rng.normal(size=(2, 3, 4))
    up = rng.normal(size=(2, 3, 2))
    out, cache = model_forward(params, x)
    grads = model_backward(params, cache, up)
    def f():
        return float(np.sum(model_forward(params, x)[0] * up))

    for key, value in params.arrays.items():
        num = central_difference(f, value)
        assert grads[key].shape == value.shape
        assert rel_error(grads[key], num) <= 1e-6, key


def test_init_deterministic_and_scaled():
    a = init_params("mlp", 50, 10, seed=7, hidden=200)
    b = init_params("mlp", 50, 10, seed=7, hidden=200)
    for k in a.arrays:
        np.testing.assert_array_equal(a.arrays[k], b.arrays[k])
    assert not a.arrays["b0"].any() and not a.arrays["b1"].any()
    assert np.var(a.arrays["W0"]) == pytest.approx(2 / 50, rel=0.1)
    assert np.var(a.arrays["W1"]) == pytest.approx(1 / 200, rel=0.1)
    c = init_params("mlp", 50, 10, seed=8, hidden=200)
    assert not np.array_equal(a.arrays["W0"], c.arrays["W0"])


@pytest.mark.parametrize("arch", ["linear", "mlp"])
def test_checkpoint_round_trip_bit_identical(arch, tmp_path, rng):
    params = init_params(arch, 4, 3, seed=11, hidden=6)
    for k in params.arrays:
        params.arrays[k] = params.arrays[k] + rng.normal(size=params.arrays[k].shape) * 1e-3
    alpha = np.array([0.1 + 0.2, -1e-300, 3.2580965380214820])
    path = tmp_path / "ck.json"
    save_checkpoint(path, params, alpha, "cap", ["a", "b", "c"], {"epoch": 3})
    loaded, doc = load_checkpoint(path)
    assert loaded.architecture == arch and loaded.hidden == params.hidden
    for k in params.arrays:
        assert loaded.arrays[k].tobytes() == params.arrays[k].tobytes()
    assert np.array(doc["alpha"]).tobytes() == alpha.tobytes()
    assert doc["operator"] == "cap" and doc["class_names"] == ["a", "b", "c"]
    x = rng.normal(size=(5, 4))
    assert model_forward(loaded, x)[0].tobytes() == model_forward(params, x)[0].tobytes()


def test_load_rejects_foreign_json(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"format": "other"}')
    with pytest.raises(InvalidInputError):
        load_checkpoint(path)


def test_params_properties():
    p = init_params("mlp", 4, 3, seed=0, hidden=2)
    assert (p.n_layers, p.input_dim, p.num_classes) == (2, 4, 3)
    with pytest.raises(InvalidInputError):
        ModelParams("rnn", {})
