import numpy as np
import pytest

from ampnet.gradcheck import finite_difference_check, oracle_check, perturbed_model
from ampnet.kernels import make_rng
from ampnet.model import build_model
from ampnet.training import (
    AdamState,
    NonFiniteError,
    TrainConfig,
    adam_step,
    backward,
    fit,
    forward_tape,
    grad_A_oracle,
    init_only_batch,
    loss,
    reconstruct_batch,
)


# -- loss ----------------------------------------------------------------------


def test_loss_identical_zero():
    x = make_rng(0).random((3, 4, 4))
    assert loss(x, x) == 0.0


def test_loss_unit_difference():
    assert loss(np.zeros((1, 2, 2)), np.ones((1, 2, 2))) == 1.0


def test_loss_symmetric_nonnegative():
    rng = make_rng(1)
    x, y = rng.random((2, 2, 5, 5))
    assert loss(x, y) == loss(y, x) > 0


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        loss(np.zeros((1, 2, 2)), np.zeros((2, 2, 2)))


# -- backward ------------------------------------------------------------------


def test_backward_at_exact_minimum():
    model = build_model(K=2, n=4, ratio=1.0, variant="BM", zero_cnn=True)
    images = make_rng(2).random((2, 8, 8))
    value, grads = backward(model, images)
    assert value < 1e-28
    for name, g in grads.items():
        assert np.max(np.abs(g)) < 1e-13, name


def test_backward_matches_forward_output():
    model = build_model(K=2, n=8, ratio=0.25, variant="BM")
    images = make_rng(3).random((2, 16, 16))
    tape = forward_tape(model, images)
    assert np.max(np.abs(tape["output"] - reconstruct_batch(model, images))) < 1e-12


def test_gradient_names_and_shapes():
    model = build_model(K=2, n=8, ratio=0.25, variant="BM")
    _, grads = backward(model, make_rng(4).random((1, 16, 16)))
    params = model.parameters()
    assert list(grads) == list(params)
    for name in params:
        assert grads[name].shape == params[name].shape


@pytest.mark.parametrize("variant", ["plain", "BM"])
def test_finite_differences(variant):
    model = perturbed_model(K=2, n=8, ratio=0.25, variant=variant, seed=1)
    assert model.M == 16
    image = make_rng(5).random((1, 16, 16))
    errors = finite_difference_check(model, image, probes=1, seed=1)
    assert set(errors) == set(model.parameters())
    assert max(errors.values()) < 1e-4, errors


def test_finite_differences_padded_image():
    model = perturbed_model(K=1, n=4, ratio=0.5, variant="BM", seed=2)
    errors = finite_difference_check(model, make_rng(6).random((1, 7, 6)), probes=1)
    assert max(errors.values()) < 1e-4, errors


def test_alpha_scalar_derivative():
    model = perturbed_model(K=2, n=8, ratio=0.25, variant="plain", seed=3)
    images = make_rng(7).random((1, 16, 16))
    _, grads = backward(model, images)
    h = 1e-6
    for k in range(2):
        model.alphas[k] += h
        up = loss(images, reconstruct_batch(model, images))
        model.alphas[k] -= 2 * h
        down = loss(images, reconstruct_batch(model, images))
        model.alphas[k] += h
        fd = (up - down) / (2 * h)
        assert abs(fd - grads[f"alpha{k + 1}"][0]) < 1e-6 * abs(fd)


def test_backward_cache_budget_irrelevant():
    model = perturbed_model(K=2, n=8, ratio=0.25, variant="BM", seed=4)
    images = make_rng(8).random((2, 16, 16))
    _, full = backward(model, images)
    _, none = backward(model, images, tape=forward_tape(model, images, cache_bytes=0))
    for name in full:
        assert np.array_equal(full[name], none[name]), name


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_backward_names_non_finite_leaf():
    model = build_model(K=1, n=4, ratio=0.5, variant="plain")
    model.B[0, 0] = np.inf
    with pytest.raises(NonFiniteError, match="B|loss"):
        backward(model, np.ones((1, 4, 4)))


# -- closed-form A gradient ----------------------------------------------------


def test_oracle_zero_upstream():
    model = perturbed_model(K=2, n=4, ratio=0.5, variant="M")
    zeros = [np.zeros((16, 4))] * 3
    grad = grad_A_oracle(model, make_rng(9).random((1, 8, 8)), upstream=zeros)
    assert not grad.any()


@pytest.mark.parametrize("K,n,ratio", [(1, 4, 0.5), (2, 8, 0.25)])
def test_oracle_matches_backward(K, n, ratio):
    model = perturbed_model(K=K, n=n, ratio=ratio, variant="M", seed=K)
    assert model.M == (8 if n == 4 else 16)
    assert oracle_check(model, make_rng(10).random((2, 2 * n, 2 * n))) < 1e-8


def test_oracle_rejects_deblocker():
    with pytest.raises(ValueError, match="deblocking"):
        grad_A_oracle(build_model(K=1, n=4, variant="BM"), np.zeros((1, 4, 4)))


def test_oracle_requires_trainable_matrix():
    with pytest.raises(ValueError):
        oracle_check(build_model(K=1, n=4, variant="plain"), np.zeros((1, 4, 4)))


# -- adam ----------------------------------------------------------------------


def _scalar_params(value=1.0):
    return {"w": np.array([value])}


def test_adam_zero_gradient():
    params = _scalar_params()
    state = AdamState.for_params(params)
    adam_step(params, {"w": np.zeros(1)}, state, TrainConfig(learning_rate=0.1))
    assert params["w"][0] == 1.0
    assert state.t == 1 and not state.m["w"].any() and not state.v["w"].any()


@pytest.mark.parametrize("g", [3.0, -1e-3, 250.0])
def test_adam_first_step_magnitude(g):
    params = _scalar_params()
    adam_step(params, {"w": np.array([g])}, AdamState.for_params(params), TrainConfig(learning_rate=0.01))
    assert abs(abs(1.0 - params["w"][0]) - 0.01) < 1e-6
    assert np.sign(1.0 - params["w"][0]) == np.sign(g)


def test_adam_tiny_learning_rate():
    model = build_model(K=1, n=4, ratio=0.5, variant="BM")
    before = {k: v.copy() for k, v in model.parameters().items()}
    _, grads = backward(model, make_rng(11).random((1, 8, 8)))
    params = model.parameters()
    adam_step(params, grads, AdamState.for_params(params), TrainConfig(learning_rate=1e-12))
    for name, p in params.items():
        assert np.max(np.abs(p - before[name])) < 1e-9


def test_adam_rejects_shape_mismatch():
    params = _scalar_params()
    with pytest.raises(ValueError):
        adam_step(params, {"w": np.zeros(2)}, AdamState.for_params(params), TrainConfig())


def test_adam_deterministic():
    def run():
        params = {"w": np.array([1.0, -2.0])}
        state = AdamState.for_params(params)
        for t in range(5):
            adam_step(params, {"w": params["w"] * (t + 1)}, state, TrainConfig(learning_rate=0.1))
        return params["w"]

    assert np.array_equal(run(), run())


# -- fit -----------------------------------------------------------------------


def _tiny_sets(seed=0):
    rng = make_rng(seed)
    return rng.random((10, 8, 8)), rng.random((3, 8, 8))


def test_fit_zero_learning_rate_unchanged(tmp_path):
    model = build_model(K=1, n=4, ratio=0.5, variant="BM")
    before = {k: v.copy() for k, v in model.arrays().items()}
    train, val = _tiny_sets()
    log_path = tmp_path / "history.log"
    best, history = fit(model, train, val, TrainConfig(learning_rate=0.0, epochs=1, batch_size=4),
                        log_path=str(log_path))
    for name, p in model.arrays().items():
        assert np.array_equal(p, before[name])
    assert [r["epoch"] for r in history.records] == [0, 1]
    lines = log_path.read_text().splitlines()
    assert lines[0].startswith("epoch=0 train_loss=nan val_psnr=")
    assert lines[1].startswith("epoch=1 train_loss=")


def test_fit_reproducible():
    train, val = _tiny_sets(1)
    cfg = TrainConfig(learning_rate=1e-3, epochs=2, batch_size=3, seed=5)
    runs = [fit(build_model(K=1, n=4, ratio=0.5, variant="M", seed=5), train, val, cfg) for _ in range(2)]
    assert runs[0][1].records == runs[1][1].records
    for name, p in runs[0][0].arrays().items():
        assert np.array_equal(p, runs[1][0].arrays()[name])


def test_fit_improves_and_returns_best():
    train, val = _tiny_sets(2)
    model = build_model(K=1, n=4, ratio=0.5, variant="plain", seed=2)
    best, history = fit(model, train, val, TrainConfig(learning_rate=1e-3, epochs=5, batch_size=5))
    psnrs = history.column("val_psnr")
    assert max(psnrs[1:]) > psnrs[0]
    assert best.meta["val_psnr"] == max(psnrs)
    assert best.meta["epoch"] == int(np.argmax(psnrs))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_fit_reports_divergence():
    train, val = _tiny_sets(3)
    model = build_model(K=1, n=4, ratio=0.5, variant="plain")
    model.denoisers[0].weights[0][...] = np.inf
    with pytest.raises(NonFiniteError, match="epoch 1, batch 0"):
        fit(model, train, val, TrainConfig(epochs=1))


def test_fit_rejects_empty_sets():
    with pytest.raises(ValueError):
        fit(build_model(K=1, n=4), np.zeros((0, 8, 8)), np.zeros((1, 8, 8)), TrainConfig())


def test_init_only_batch_is_projection():
    model = build_model(K=1, n=4, ratio=1.0)
    x = make_rng(12).random((2, 8, 8))
    assert np.max(np.abs(init_only_batch(model, x) - x)) < 1e-12


@pytest.mark.parametrize("kwargs", [{"learning_rate": -1.0}, {"batch_size": 0}, {"epochs": -1}])
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)
