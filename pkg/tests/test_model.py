import math

import numpy as np
import pytest

from augloss import data, model
from augloss.losses import LossSpec
from augloss.model import TrainConfig


def test_zero_weights_give_uniform_posterior():
    params = [(np.zeros((12, 5)), np.zeros(5))]
    p = model.forward(params, np.random.default_rng(0).random((3, 2, 2, 3)))
    np.testing.assert_allclose(p, 0.2)
    assert model.forward(params, np.zeros((0, 2, 2, 3))).shape == (0, 5)


def test_forward_rejects_wrong_width():
    with pytest.raises(ValueError, match="expects 12"):
        model.forward([(np.zeros((12, 5)), np.zeros(5))], np.zeros((1, 5)))


def test_check_params_reports_layer():
    bad = [(np.zeros((4, 3)), np.zeros(3)), (np.zeros((2, 2)), np.zeros(2))]
    with pytest.raises(ValueError, match="layer 0"):
        model.check_params(bad)


def test_cosine_schedule():
    assert model.cosine_lr(0, 100) == 0.1
    assert model.cosine_lr(100, 100) == 1e-6
    assert model.cosine_lr(50, 100) == pytest.approx(1e-6 + 0.5 * (0.1 - 1e-6))
    lrs = [model.cosine_lr(e, 30) for e in range(31)]
    assert all(a > b for a, b in zip(lrs, lrs[1:]))
    with pytest.raises(ValueError):
        model.cosine_lr(31, 30)


def test_zero_lr_is_null_update():
    params = model.init_mlp([6, 4, 3], seed=1)
    opt = model.OptimizerState.zeros_like(params)
    views = np.random.default_rng(2).random((1, 5, 6))
    new, _, _ = model.train_step(params, opt, views, np.array([0, 1, 2, 0, 1]), LossSpec(), 0.0, TrainConfig())
    for (W, b), (W2, b2) in zip(params, new):
        assert np.array_equal(W, W2) and np.array_equal(b, b2)


def test_first_nesterov_step_closed_form():
    # softmax regression from zero: one Nesterov step moves by lr * (1 + mu) * grad
    rng = np.random.default_rng(3)
    x = rng.random((1, 1, 4))
    y = np.array([2])
    params = [(np.zeros((4, 3)), np.zeros(3))]
    cfg = TrainConfig(momentum=0.9, weight_decay=5e-4)
    new, opt, loss = model.train_step(params, model.OptimizerState.zeros_like(params), x, y, LossSpec("ce", lam=0),
                                      0.1, cfg)
    assert loss == pytest.approx(math.log(3), abs=1e-12)
    err = np.full(3, 1 / 3)
    err[2] -= 1
    np.testing.assert_allclose(new[0][0], -0.1 * 1.9 * np.outer(x[0, 0], err), atol=1e-15)
    np.testing.assert_allclose(new[0][1], -0.1 * 1.9 * err, atol=1e-15)
    assert opt.step == 1


def test_plain_momentum_first_step():
    x = np.ones((1, 1, 2))
    params = [(np.zeros((2, 2)), np.zeros(2))]
    cfg = TrainConfig(nesterov=False, weight_decay=0.0)
    new, _, _ = model.train_step(params, model.OptimizerState.zeros_like(params), x, np.array([0]),
                                 LossSpec("ce", lam=0), 1.0, cfg)
    np.testing.assert_allclose(new[0][1], [0.5, -0.5])


def test_weight_decay_skips_biases():
    params = [(np.ones((2, 2)), np.ones(2))]
    grads = [(np.zeros((2, 2)), np.zeros(2))]
    cfg = TrainConfig(momentum=0.0, weight_decay=0.1)
    new, _ = model.sgd_update(params, model.OptimizerState.zeros_like(params), grads, 1.0, cfg)
    np.testing.assert_allclose(new[0][0], 0.9)
    np.testing.assert_allclose(new[0][1], 1.0)


def test_step_descends():
    rng = np.random.default_rng(4)
    params = model.init_mlp([8, 16, 4], seed=0)
    views = rng.random((3, 10, 8))
    y = rng.integers(0, 4, 10)
    spec = LossSpec("alpha", alpha=2, lam=12)
    before, _ = model.objective_and_grads(params, views, y, spec)
    cfg = TrainConfig(momentum=0.0, weight_decay=0.0)
    new, _, _ = model.train_step(params, model.OptimizerState.zeros_like(params), views, y, spec, 1e-3, cfg)
    after, _ = model.objective_and_grads(new, views, y, spec)
    assert after < before


@pytest.mark.parametrize("spec", [LossSpec("ce", lam=12), LossSpec("focal", gamma=2, lam=12),
                                  LossSpec("nce_rce", lam=12), LossSpec("alpha", alpha=2, lam=12)])
def test_parameter_gradients_match_finite_differences(spec):
    rng = np.random.default_rng(6)
    params = model.init_mlp([5, 6, 4], seed=2)  # 64 parameters
    views = rng.normal(size=(3, 4, 5))
    y = rng.integers(0, 4, 4)
    _, grads = model.objective_and_grads(params, views, y, spec)
    h = 1e-5
    worst = 0.0
    for li in range(2):
        for pi in range(2):
            arr = params[li][pi]
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + h
                up, _ = model.objective_and_grads(params, views, y, spec)
                arr[idx] = orig - h
                down, _ = model.objective_and_grads(params, views, y, spec)
                arr[idx] = orig
                num = (up - down) / (2 * h)
                ana = grads[li][pi][idx]
                worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-8))
    assert worst < 1e-3


def test_horizontal_flip():
    x = np.arange(2 * 3 * 4 * 1, dtype=float).reshape(2, 3, 4, 1)
    assert np.array_equal(model.random_horizontal_flip(x, 1.0, 0), x[:, :, ::-1])
    assert np.array_equal(model.random_horizontal_flip(x, 0.0, 0), x)
    a = model.random_horizontal_flip(np.repeat(x, 50, axis=0), 0.5, 9)
    assert np.array_equal(a, model.random_horizontal_flip(np.repeat(x, 50, axis=0), 0.5, 9))


def test_standardizer_and_folding():
    rng = np.random.default_rng(8)
    imgs = rng.random((20, 3, 3, 3)) * [0.2, 0.5, 1.0]
    st = model.Standardizer.fit(imgs)
    z = st(imgs)
    np.testing.assert_allclose(z.mean(axis=(0, 1, 2)), 0, atol=1e-12)
    np.testing.assert_allclose(z.std(axis=(0, 1, 2)), 1, atol=1e-12)
    const = model.Standardizer.fit(np.full((4, 2, 2, 3), 0.3))
    assert np.all(np.isfinite(const(np.full((1, 2, 2, 3), 0.3))))
    params = model.init_mlp([27, 5, 3], seed=0)
    folded = st.fold_into(params, (3, 3, 3))
    np.testing.assert_allclose(model.forward(folded, imgs), model.forward(params, z), atol=1e-12)


def toy_set(n=200, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    imgs = np.where(y[:, None, None, None] == 1, 0.8, 0.2) + rng.normal(0, 0.05, (n, 4, 4, 3))
    return data.LabeledImageDataset(np.clip(imgs, 0, 1), y, 2)


def test_separable_toy_problem():
    ds = toy_set()
    cfg = TrainConfig(epochs=5, hidden=(16,), seed=1)
    params, hist = model.train(ds, cfg, LossSpec("ce"), val_set=toy_set(100, 1))
    assert 1 - model.error_rate(params, ds.images, ds.labels) >= 0.99
    assert len(hist.epoch) == 5 and hist.lr[0] == 0.1


def test_training_is_deterministic():
    ds = toy_set(64)
    cfg = TrainConfig(epochs=2, hidden=(8,), seed=3)
    a, _ = model.train(ds, cfg, LossSpec("alpha", alpha=2))
    b, _ = model.train(ds, cfg, LossSpec("alpha", alpha=2))
    assert model.checkpoint_bytes(a) == model.checkpoint_bytes(b)


def test_weight_decay_shrinks_norm():
    ds = toy_set(64)
    norms = []
    for wd in (0.0, 0.05):
        cfg = TrainConfig(epochs=3, hidden=(8,), seed=3, weight_decay=wd, standardize_inputs=False)
        p, _ = model.train(ds, cfg, LossSpec("ce"))
        norms.append(sum(np.sum(W ** 2) for W, _ in p))
    assert norms[1] < norms[0]


def test_history_csv(tmp_path):
    h = model.History([0, 1], [1.5, 1.0], [math.nan, 0.25], [0.1, 0.05])
    h.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,mean_loss,val_error,lr"
    assert lines[2] == "1,1,0.25,0.05"


def test_training_error_reports_step():
    params = [(np.full((2, 2), 1e308), np.zeros(2))]
    with pytest.raises(model.TrainingError, match="step 0"):
        model.train_step(params, model.OptimizerState.zeros_like(params), np.ones((1, 1, 2)), np.array([0]),
                         LossSpec(), 0.1, TrainConfig())


def test_checkpoint_round_trip(tmp_path):
    params = model.init_mlp([7, 5, 3], seed=4)
    model.save_checkpoint(tmp_path / "m.agls", params)
    raw = (tmp_path / "m.agls").read_bytes()
    assert raw[:4] == b"AGLS"
    back = model.load_checkpoint(tmp_path / "m.agls")
    assert model.checkpoint_bytes(back) == raw
    with pytest.raises(ValueError, match="truncated"):
        model.parse_checkpoint(raw[:-9])
    with pytest.raises(ValueError, match="magic"):
        model.parse_checkpoint(b"XXXX" + raw[4:])
