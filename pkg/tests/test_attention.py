import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multiview_rl.attention import AttentionGate, attend, attend_backward
from multiview_rl.numerics import DimensionError


def softmax_oracle(g, f):
    """Direct evaluation of exp(g_w f_w) / sum_l exp(g_l f_l) without max-subtraction."""
    e = [math.exp(gw * fw) for gw, fw in zip(g, f)]
    total = sum(e)
    return [v / total for v in e]


def fd(fn, x, h=1e-6):
    out = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        out.flat[i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return out


def test_single_worker():
    out = attend(AttentionGate([0.7]), [[1.0, -2.0, 3.0]], [5.0])
    assert out.weights.tolist() == [1.0]
    assert out.fused.tolist() == [1.0, -2.0, 3.0]


def test_zero_gate_is_uniform_mean():
    x = np.array([[1.0, 2.0], [3.0, -4.0], [5.0, 0.5]])
    out = attend(AttentionGate.constant(3, 0.0), x, [10.0, -3.0, 0.2])
    np.testing.assert_allclose(out.weights, [1 / 3] * 3, rtol=0, atol=1e-15)
    np.testing.assert_allclose(out.fused, x.mean(axis=0), rtol=0, atol=1e-15)


def test_two_to_one_example():
    out = attend(AttentionGate([1.0, 1.0]), [[1.0, 0.0], [0.0, 1.0]], [math.log(2.0), 0.0])
    np.testing.assert_allclose(out.weights, [2 / 3, 1 / 3], rtol=0, atol=1e-15)
    np.testing.assert_allclose(out.fused, [2 / 3, 1 / 3], rtol=0, atol=1e-15)


def test_matches_direct_softmax_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 6))
        g, f, x = rng.normal(size=n), rng.normal(size=n), rng.normal(size=(n, 3))
        p = softmax_oracle(g, f)
        out = attend(AttentionGate(g), x, f)
        np.testing.assert_allclose(out.weights, p, rtol=1e-13, atol=0)
        np.testing.assert_allclose(out.fused, sum(pw * xw for pw, xw in zip(p, x)), rtol=0, atol=1e-13)


def test_overflow_safe():
    out = attend(AttentionGate([1.0, 1.0]), [[1.0], [0.0]], [1000.0, 999.0])
    assert np.all(np.isfinite(out.weights))
    np.testing.assert_allclose(out.weights, [1 / (1 + math.exp(-1)), 1 / (1 + math.exp(1))], rtol=1e-14)


def test_batched_matches_single():
    rng = np.random.default_rng(2)
    gate = AttentionGate(rng.normal(size=3))
    x, f = rng.normal(size=(4, 3, 2)), rng.normal(size=(4, 3))
    out = attend(gate, x, f)
    for i in range(4):
        single = attend(gate, x[i], f[i])
        np.testing.assert_allclose(out.fused[i], single.fused, rtol=0, atol=1e-15)


@pytest.mark.parametrize("features,signals", [
    (np.zeros((0, 2)), np.zeros(0)),
    ([[1.0, 2.0]], [1.0, 2.0]),
    ([[1.0, np.nan]], [1.0]),
    ([[1.0, 2.0]], [np.inf]),
])
def test_rejects_bad_inputs(features, signals):
    with pytest.raises((ValueError, DimensionError)):
        gate = AttentionGate.constant(max(1, len(signals)), 1.0)
        attend(gate, features, signals)


def test_backward_zero_cotangent():
    rng = np.random.default_rng(3)
    grads = attend_backward(AttentionGate(rng.normal(size=3)), rng.normal(size=(3, 2)), rng.normal(size=3),
                            np.zeros(2))
    assert not grads.gate_grads.any() and not grads.feature_grads.any() and not grads.signal_grads.any()


def test_backward_single_worker():
    gy = np.array([0.3, -1.2])
    grads = attend_backward(AttentionGate([2.0]), [[1.0, 4.0]], [0.5], gy)
    assert grads.gate_grads.tolist() == [0.0]
    assert grads.signal_grads.tolist() == [0.0]
    np.testing.assert_array_equal(grads.feature_grads, [gy])


def test_backward_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(20):
        n, d = int(rng.integers(2, 5)), int(rng.integers(1, 4))
        g, x, f, gy = rng.normal(size=n), rng.normal(size=(n, d)), rng.normal(size=n), rng.normal(size=d)
        grads = attend_backward(AttentionGate(g), x, f, gy)
        loss = lambda gv, xv, fv: attend(AttentionGate(gv), xv, fv).fused @ gy
        for analytic, numeric in [
            (grads.gate_grads, fd(lambda v: loss(v, x, f), g)),
            (grads.feature_grads, fd(lambda v: loss(g, v, f), x)),
            (grads.signal_grads, fd(lambda v: loss(g, x, v), f)),
        ]:
            np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)


def test_batched_backward_sums_gate_grads():
    rng = np.random.default_rng(5)
    gate = AttentionGate(rng.normal(size=3))
    x, f, gy = rng.normal(size=(4, 3, 2)), rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
    grads = attend_backward(gate, x, f, gy)
    rows = [attend_backward(gate, x[i], f[i], gy[i]) for i in range(4)]
    np.testing.assert_allclose(grads.gate_grads, sum(r.gate_grads for r in rows), atol=1e-14)
    np.testing.assert_allclose(grads.feature_grads[2], rows[2].feature_grads, atol=1e-15)


finite = st.floats(-5, 5, allow_nan=False)


@st.composite
def instances(draw, min_workers=1):
    n = draw(st.integers(min_workers, 6))
    d = draw(st.integers(1, 4))
    g = draw(st.lists(finite, min_size=n, max_size=n))
    f = draw(st.lists(finite, min_size=n, max_size=n))
    x = draw(st.lists(st.lists(finite, min_size=d, max_size=d), min_size=n, max_size=n))
    return np.array(g), np.array(x), np.array(f)


@settings(max_examples=200, deadline=None)
@given(instances())
def test_weights_positive_and_normalized(inst):
    g, x, f = inst
    p = attend(AttentionGate(g), x, f).weights
    assert np.all(p > 0)
    assert abs(p.sum() - 1.0) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(instances(), st.floats(0.1, 3.0))
def test_logit_shift_invariance(inst, c):
    # with unit gates the logits are f, so adding c to f shifts every logit by c
    _, x, f = inst
    gate = AttentionGate(np.ones(len(f)))
    base = attend(gate, x, f).weights
    shifted = attend(gate, x, f + c).weights
    np.testing.assert_allclose(shifted, base, rtol=0, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(instances(min_workers=2), st.floats(0.01, 2.0), st.data())
def test_monotone_in_own_signal(inst, bump, data):
    g, x, f = inst
    # keep logit gaps small enough that no weight rounds to exactly 0 or 1
    g = np.clip(np.abs(g), 0.1, 2.0)
    w = data.draw(st.integers(0, len(f) - 1))
    before = attend(AttentionGate(g), x, f).weights
    f2 = f.copy()
    f2[w] += bump
    after = attend(AttentionGate(g), x, f2).weights
    assert after[w] > before[w]
    others = np.arange(len(f)) != w
    assert np.all(after[others] < before[others])


@settings(max_examples=200, deadline=None)
@given(instances())
def test_fused_in_convex_hull(inst):
    g, x, f = inst
    fused = attend(AttentionGate(g), x, f).fused
    assert np.all(fused >= x.min(axis=0) - 1e-12)
    assert np.all(fused <= x.max(axis=0) + 1e-12)
