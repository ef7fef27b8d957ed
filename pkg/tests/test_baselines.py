import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_instance
from dualprox.baselines import (
    dc3_backward,
    dc3_complete,
    dc3_correct,
    dc3_objective,
    penalty_grads,
    penalty_loss,
    squared_violation,
)
from dualprox.completion import complete_unregularized
from dualprox.lp_core import DualPoint, ParametricLpInstance, dual_objective


def two_var(c=(2.0, -2.0)):
    return ParametricLpInstance(np.eye(2), [0.5, 0.5], c, [0.0, 0.0], [1.0, 1.0])


def central(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        keep = x[idx]
        x[idx] = keep + h
        fp = f()
        x[idx] = keep - h
        fm = f()
        x[idx] = keep
        g[idx] = (fp - fm) / (2 * h)
    return g


# ---- penalty


def test_penalty_feasible_point_has_no_violation(rng):
    inst = random_instance(rng)
    y = rng.normal(size=inst.m)
    comp = complete_unregularized(inst, y)
    val = penalty_loss(inst, DualPoint(y, comp.zl, comp.zu), 1e8)
    assert val.violation <= 1e-7  # smoothing floor is eps = 1e-8 per coordinate
    assert val.total == pytest.approx(val.dual_obj, abs=1e8 * 1e-7)
    val0 = penalty_loss(inst, DualPoint(y, comp.zl, comp.zu), 0.0)
    assert val0.total == val0.dual_obj


def test_penalty_zero_point_example():
    val = penalty_loss(two_var(), DualPoint(np.zeros(2), np.zeros(2), np.zeros(2)), 1.0)
    assert val.violation == pytest.approx(2.0, abs=1e-12)
    assert val.dual_obj == 0.0 and val.total == pytest.approx(-2.0, abs=1e-12)


def test_penalty_rejects_negative_weight():
    with pytest.raises(ValueError):
        penalty_loss(two_var(), DualPoint(np.zeros(2), np.zeros(2), np.zeros(2)), -1.0)


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1e3))
def test_penalty_violation_nonnegative(seed, w):
    r = np.random.default_rng(seed)
    inst = random_instance(r)
    dp = DualPoint(r.normal(size=inst.m), r.normal(size=inst.n), r.normal(size=inst.n))
    assert penalty_loss(inst, dp, w).violation >= 0


def test_penalty_gradient_matches_finite_differences(rng):
    inst = random_instance(rng, 4, 6)
    y, zl, zu = rng.normal(size=4), rng.uniform(0.1, 2, 6), rng.uniform(0.1, 2, 6)
    w = 3.0
    gy, gzl, gzu = penalty_grads(inst, DualPoint(y, zl, zu), w)
    f = lambda: float(penalty_loss(inst, DualPoint(y, zl, zu), w).total)
    for g, x in ((gy, y), (gzl, zl), (gzu, zu)):
        fd = central(f, x)
        assert np.all(np.abs(fd - g) <= 1e-5 * np.maximum(np.abs(fd), 1e-3))


def test_penalty_gradient_is_linear_in_weight(rng):
    inst = random_instance(rng, 4, 6)
    dp = DualPoint(rng.normal(size=4), rng.normal(size=6), rng.normal(size=6))
    g0 = penalty_grads(inst, dp, 0.0)
    g1 = penalty_grads(inst, dp, 1.0)
    g7 = penalty_grads(inst, dp, 7.0)
    for a, b, c in zip(g0, g1, g7):
        np.testing.assert_allclose(c, a + 7.0 * (b - a), rtol=1e-12, atol=1e-12)


def test_penalty_batched_matches_single(rng):
    inst = random_instance(rng, 3, 5)
    Y, ZL, ZU = rng.normal(size=(4, 3)), rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    batch = penalty_loss(inst, DualPoint(Y, ZL, ZU), 2.0).total
    for i in range(4):
        assert batch[i] == pytest.approx(penalty_loss(inst, DualPoint(Y[i], ZL[i], ZU[i]), 2.0).total, rel=1e-13)


# ---- DC3 completion


def test_dc3_complete_examples():
    inst = two_var(c=(1.0, -1.0))
    np.testing.assert_array_equal(dc3_complete(inst, np.zeros(2), np.zeros(2)), [-1.0, 1.0])
    zl = np.maximum(inst.c, 0.0)
    np.testing.assert_array_equal(dc3_complete(inst, np.zeros(2), zl), np.maximum(-inst.c, 0.0))


def test_dc3_complete_satisfies_equality(rng):
    for _ in range(100):
        inst = random_instance(rng)
        y, zl = rng.normal(size=inst.m), rng.uniform(0, 2, inst.n)
        zu = dc3_complete(inst, y, zl)
        z = inst.c - y @ inst.A
        assert np.abs(zl - zu - z).max() <= 1e-12 * (1 + np.abs(z).max())


# ---- DC3 correction


def test_dc3_correct_keeps_feasible_input(rng):
    inst = random_instance(rng)
    y = rng.normal(size=inst.m)
    zl = complete_unregularized(inst, y).zl + 0.1
    y2, zl2, zu2, state = dc3_correct(inst, y, zl)
    np.testing.assert_array_equal(y2, y)
    np.testing.assert_array_equal(zl2, zl)
    assert state.steps == 10 and np.all(zu2 >= 0)


def test_dc3_correct_zero_steps_is_identity(rng):
    inst = random_instance(rng)
    y, zl = rng.normal(size=inst.m), rng.normal(size=inst.n)
    y2, zl2, zu2, state = dc3_correct(inst, y, zl, steps=0)
    np.testing.assert_array_equal(y2, y)
    np.testing.assert_array_equal(zl2, zl)
    np.testing.assert_array_equal(zu2, dc3_complete(inst, y, zl))
    assert state.steps == 0
    with pytest.raises(ValueError):
        dc3_correct(inst, y, zl, steps=-1)


def test_dc3_correct_decreases_violation_monotonically():
    inst = ParametricLpInstance([[1.0]], [0.5], [0.0], [0.0], [1.0])
    y, zl = np.array([-1.0]), np.array([0.0])
    assert dc3_complete(inst, y, zl)[0] == -1.0
    _, _, _, state = dc3_correct(inst, y, zl, steps=10)
    viol = [squared_violation(inst, a, b) for a, b in zip(state.ys, state.zls)]
    assert len(viol) == 11
    assert np.all(np.diff(viol) < 0)


def test_dc3_outputs_satisfy_equality(rng):
    for _ in range(50):
        inst = random_instance(rng)
        y, zl = 3 * rng.normal(size=(4, inst.m)), rng.normal(size=(4, inst.n))
        y2, zl2, zu2, state = dc3_correct(inst, y, zl, steps=10)
        assert state.steps <= 10
        res = y2 @ inst.A + zl2 - zu2 - inst.c
        assert np.abs(res).max() <= 1e-10 * (1 + np.abs(inst.c).max())


def test_dc3_backward_matches_finite_differences():
    rng = np.random.default_rng(8)
    inst = random_instance(rng, 3, 6)
    y0, zl0 = 2 * rng.normal(size=3), rng.normal(size=6)
    gy, gzl = rng.normal(size=3), rng.normal(size=6)

    def f():
        y, zl, _, _ = dc3_correct(inst, y0, zl0, steps=10, lr=0.05)
        return float(gy @ y + gzl @ zl)

    _, _, _, state = dc3_correct(inst, y0, zl0, steps=10, lr=0.05)
    ay, az = dc3_backward(inst, state, gy, gzl)
    for g, x in ((ay, y0), (az, zl0)):
        fd = central(f, x)
        assert np.all(np.abs(fd - g) <= 1e-5 * np.maximum(np.abs(fd), 1e-3))


def test_dc3_objective_gradient(rng):
    inst = random_instance(rng, 3, 6)
    y, zl = rng.normal(size=3), rng.normal(size=6)
    val, gy, gzl = dc3_objective(inst, y, zl, 2.5)
    zu = dc3_complete(inst, y, zl)
    assert val.dual_obj == pytest.approx(dual_objective(inst, DualPoint(y, zl, zu)), rel=1e-13)
    f = lambda: float(dc3_objective(inst, y, zl, 2.5)[0].total)
    for g, x in ((gy, y), (gzl, zl)):
        fd = central(f, x)
        assert np.all(np.abs(fd - g) <= 1e-5 * np.maximum(np.abs(fd), 1e-3))
