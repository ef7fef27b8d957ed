import math

import numpy as np
import pytest

from conftest import random_instance
from dualprox.checkpoint import load_checkpoint, save_checkpoint
from dualprox.completion import Regularizer
from dualprox.experiment import evaluate_run, run_training
from dualprox.loss_grad import s3l_loss
from dualprox.mlp import (
    AdamState,
    Head,
    Method,
    StaleCacheError,
    TrainConfig,
    TrainingDivergence,
    TrainingSet,
    backward,
    batch_step,
    forward,
    init_model,
    mu_schedule_step,
    softplus,
    train,
)


def tiny_model(head=Head.DUAL_Y, seed=0, input_dim=3, hidden=4, m=2, n=3):
    return init_model(input_dim, m, n, head, np.random.default_rng(seed), hidden_dim=hidden)


def loop_forward(model, x):
    """Unbatched reference: one sample at a time, explicit layer loop."""
    a = (x - model.feature_mean) / model.feature_std
    last = len(model.weights) - 1
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        h = np.array([sum(a[i] * W[i, j] for i in range(W.shape[0])) + b[j] for j in range(W.shape[1])])
        a = h if k == last else np.array([math.log1p(math.exp(v)) for v in h])
    return a


def toy_training_set(rng, samples=40, m=3, n=7):
    inst = random_instance(rng, m, n, feasible=True)
    feats = rng.normal(size=(samples, 2))
    x0 = inst.l + 0.5 * (inst.u - inst.l)
    b = inst.A @ x0 + 0.1 * feats @ rng.normal(size=(2, m))
    return TrainingSet(feats, inst.with_rhs(b))


# ---- forward


def test_softplus_is_nonnegative_and_stable():
    x = np.array([-800.0, -30.0, 0.0, 30.0, 800.0])
    s = softplus(x)
    assert np.all(s >= 0) and np.all(np.isfinite(s))
    assert s[2] == math.log(2.0) and s[-1] == 800.0


def test_zero_parameters_give_zero_y_and_ln2_heads():
    model = tiny_model(Head.DUAL_Y_ZL_ZU)
    for p in model.params():
        p[...] = 0.0
    out, _ = forward(model, np.ones((5, 3)))
    assert np.all(out.y == 0.0)
    assert np.all(out.zl == math.log(2.0)) and np.all(out.zu == math.log(2.0))


def test_single_sample_equals_batch_of_one(rng):
    model = init_model(6, 4, 5, Head.DUAL_Y_ZL, rng, hidden_dim=16)
    x = rng.normal(size=6)
    single, _ = forward(model, x)
    batch, _ = forward(model, x[None, :])
    assert single.y.shape == (4,) and single.zl.shape == (5,)
    np.testing.assert_array_equal(single.y, batch.y[0])
    np.testing.assert_array_equal(single.zl, batch.zl[0])


def test_batch_rows_match_individual_rows(rng):
    # BLAS may pick a different kernel for one row, so this is rounding-level.
    model = init_model(6, 4, 5, Head.DUAL_Y_ZL, rng, hidden_dim=16)
    X = rng.normal(size=(9, 6))
    full, _ = forward(model, X)
    for i in range(9):
        one, _ = forward(model, X[i])
        np.testing.assert_allclose(one.y, full.y[i], rtol=1e-13, atol=1e-13)
        np.testing.assert_allclose(one.zl, full.zl[i], rtol=1e-13, atol=1e-13)


def test_forward_matches_per_sample_loop(rng):
    model = init_model(5, 3, 2, Head.DUAL_Y, rng, hidden_dim=7, feature_mean=rng.normal(size=5), feature_std=rng.uniform(0.5, 2, 5))
    X = rng.normal(size=(6, 5))
    out, _ = forward(model, X)
    for i in range(6):
        np.testing.assert_allclose(out.y[i], loop_forward(model, X[i]), rtol=1e-12, atol=1e-12)


def test_forward_rejects_wrong_width():
    with pytest.raises(ValueError):
        forward(tiny_model(), np.ones((2, 4)))
    with pytest.raises(ValueError):
        forward(tiny_model(), np.ones((2, 3, 1)))


def test_parameter_shapes():
    model = init_model(10, 4, 6, Head.DUAL_Y_ZL_ZU, np.random.default_rng(0))
    assert [W.shape for W in model.weights] == [(10, 128), (128, 128), (128, 128), (128, 16)]
    assert all(np.all(b == 0) for b in model.biases)


# ---- backward


def scalar_objective(model, X, G, GL=None, GU=None):
    out, _ = forward(model, X)
    total = np.sum(G * out.y)
    if GL is not None:
        total += np.sum(GL * out.zl)
    if GU is not None:
        total += np.sum(GU * out.zu)
    return total / X.shape[0]


@pytest.mark.parametrize("head", list(Head))
def test_backward_matches_finite_differences(head):
    rng = np.random.default_rng(3)
    model = tiny_model(head, seed=1)
    X = rng.normal(size=(4, 3))
    G, GL, GU = rng.normal(size=(4, 2)), rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    use_l = head is not Head.DUAL_Y
    use_u = head is Head.DUAL_Y_ZL_ZU
    args = (G, GL if use_l else None, GU if use_u else None)
    _, cache = forward(model, X)
    grads = backward(model, cache, *args)
    h = 1e-6
    for p, g in zip(model.params(), grads):
        assert g.shape == p.shape
        for idx in np.ndindex(p.shape):
            keep = p[idx]
            p[idx] = keep + h
            fp = scalar_objective(model, X, *args)
            p[idx] = keep - h
            fm = scalar_objective(model, X, *args)
            p[idx] = keep
            fd = (fp - fm) / (2 * h)
            assert abs(fd - g[idx]) <= 1e-5 * max(abs(fd), 1e-3)


def test_backward_zero_and_linearity(rng):
    model = tiny_model(seed=2)
    X = rng.normal(size=(5, 3))
    G = rng.normal(size=(5, 2))
    _, cache = forward(model, X)
    assert all(np.all(g == 0) for g in backward(model, cache, np.zeros_like(G)))
    g1 = backward(model, cache, G)
    g2 = backward(model, cache, 2 * G)
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(b, 2 * a, rtol=1e-12, atol=1e-15)


def test_backward_detects_stale_cache(rng):
    model = tiny_model()
    _, cache = forward(model, rng.normal(size=(2, 3)))
    other = model.copy()
    with pytest.raises(StaleCacheError):
        backward(other, cache, np.zeros((2, 2)))


def test_end_to_end_gradient_through_completion():
    rng = np.random.default_rng(4)
    data = toy_training_set(rng, samples=1)
    model = init_model(2, 3, 7, Head.DUAL_Y, rng, hidden_dim=8)
    cfg = TrainConfig(method="s3l")
    for mu in (1e-2, 1.0):
        reg = Regularizer.from_mu(mu)
        _, grads = batch_step(model, data, cfg, mu, None)

        def neg_loss():
            out, _ = forward(model, data.features)
            return -float(np.mean(s3l_loss(data.family, out.y, reg).total))

        params = model.params()
        picks = [(k, tuple(rng.integers(0, s) for s in params[k].shape)) for k in rng.integers(0, len(params), 50)]
        for k, idx in picks:
            p = params[k]
            keep = p[idx]
            h = 1e-6 * (1 + abs(keep))
            p[idx] = keep + h
            fp = neg_loss()
            p[idx] = keep - h
            fm = neg_loss()
            p[idx] = keep
            fd = (fp - fm) / (2 * h)
            assert abs(fd - grads[k][idx]) <= 1e-4 * max(abs(fd), 1e-3)


# ---- optimizer and schedule


def test_adam_moments_match_parameter_shapes():
    model = tiny_model()
    opt = AdamState.for_model(model)
    assert [m.shape for m in opt.m] == [p.shape for p in model.params()]
    assert [v.shape for v in opt.v] == [p.shape for p in model.params()]


def test_adam_first_step_is_lr_times_sign():
    p = [np.array([1.0, -2.0, 3.0])]
    opt = AdamState(lr=0.1, m=[np.zeros(3)], v=[np.zeros(3)])
    opt.apply(p, [np.array([5.0, -0.5, 0.0])])
    np.testing.assert_allclose(p[0], [0.9, -1.9, 3.0], rtol=1e-7)


def test_mu_schedule_examples():
    assert mu_schedule_step(1.0, 0.99) == 0.99
    assert mu_schedule_step(0.0, 0.99) == 0.0
    mu = 1.0
    for _ in range(250):
        mu = mu_schedule_step(mu, 0.99)
    assert mu == pytest.approx(0.99**250, rel=1e-12)
    with pytest.raises(ValueError):
        mu_schedule_step(1.0, 0.0)
    with pytest.raises(ValueError):
        mu_schedule_step(-1.0, 0.5)


def test_config_invariants():
    assert TrainConfig(method="dll", mu0=5.0).mu0 == 0.0
    for bad in (dict(mu_decay=0.0), dict(mu_decay=1.5), dict(mu0=-1.0), dict(method="sgd")):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


# ---- training loop


def test_zero_learning_rate_leaves_model_unchanged(rng):
    data = toy_training_set(rng)
    model = init_model(2, 3, 7, Head.DUAL_Y, rng, hidden_dim=8)
    before = [p.copy() for p in model.params()]
    res = train(model, data, TrainConfig(method="s3l", epochs=1, learning_rate=0.0, batch_size=8))
    assert len(res.history) == 1
    for a, b in zip(before, model.params()):
        np.testing.assert_array_equal(a, b)


def test_recorded_mu_follows_schedule(rng):
    data = toy_training_set(rng)
    model = init_model(2, 3, 7, Head.DUAL_Y, rng, hidden_dim=8)
    hist = train(model, data, TrainConfig(method="s3l", epochs=30, batch_size=16)).history
    for k, rec in enumerate(hist):
        assert rec["mu"] == pytest.approx(0.99**k, rel=1e-12)


@pytest.mark.parametrize("method", [m.value for m in Method])
def test_training_is_deterministic(method):
    hists = []
    for _ in range(2):
        rng = np.random.default_rng(5)
        data = toy_training_set(rng)
        model = init_model(2, 3, 7, Method(method).head, rng, hidden_dim=8)
        hists.append((train(model, data, TrainConfig(method=method, epochs=4, batch_size=16)).history, model))
    assert hists[0][0] == hists[1][0]
    for a, b in zip(hists[0][1].params(), hists[1][1].params()):
        np.testing.assert_array_equal(a, b)


def test_dll_equals_s3l_with_zero_mu(rng):
    data = toy_training_set(rng)
    init = init_model(2, 3, 7, Head.DUAL_Y, rng, hidden_dim=8)
    a, b = init.copy(), init.copy()
    ha = train(a, data, TrainConfig(method="dll", epochs=5, batch_size=16)).history
    hb = train(b, data, TrainConfig(method="s3l", mu0=0.0, epochs=5, batch_size=16)).history
    assert ha == hb


def test_head_mismatch_rejected(rng):
    data = toy_training_set(rng)
    with pytest.raises(ValueError):
        train(init_model(2, 3, 7, Head.DUAL_Y, rng), data, TrainConfig(method="dc3", epochs=1))


def test_nonfinite_loss_aborts_with_diagnostic(rng):
    data = toy_training_set(rng)
    model = init_model(2, 3, 7, Head.DUAL_Y, rng, hidden_dim=8)
    model.biases[-1][:] = np.inf
    with pytest.raises(TrainingDivergence) as exc:
        train(model, data, TrainConfig(method="s3l", epochs=2, batch_size=16))
    assert exc.value.epoch == 0 and exc.value.batch == 0 and exc.value.mu == 1.0


def test_checkpoint_round_trip_is_bit_identical(tmp_path, rng):
    model = init_model(4, 3, 5, Head.DUAL_Y_ZL_ZU, rng, hidden_dim=6, y_scale=np.array([1.0, 2.0, 3.0]))
    cfg = TrainConfig(method="penalty", epochs=3, penalty_weight=5.0)
    save_checkpoint(tmp_path / "m.dpx", model, cfg)
    again, cfg2 = load_checkpoint(tmp_path / "m.dpx")
    assert cfg2 == cfg and again.head is model.head
    for a, b in zip(model.params(), again.params()):
        np.testing.assert_array_equal(a, b)
    X = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(forward(model, X)[0].zu, forward(again, X)[0].zu)
    save_checkpoint(tmp_path / "m2.dpx", again, cfg2)
    assert (tmp_path / "m.dpx").read_bytes() == (tmp_path / "m2.dpx").read_bytes()


def test_tiny_dcopf_training_reaches_two_percent(case3_dataset):
    cfg = TrainConfig(method="s3l", epochs=200)
    out = run_training(case3_dataset, cfg)
    hist = out.manifest["history"]
    assert len(hist) == 200
    assert hist[-1]["val_mean_gstar"] <= 2.0
    best = np.minimum.accumulate([r["val_mean_gstar"] for r in hist])
    assert np.all(np.diff(best) <= 0)
    rec = evaluate_run(out.model, cfg, case3_dataset, "val")
    assert rec.gstar_mean == pytest.approx(hist[-1]["val_mean_gstar"], rel=1e-12)
