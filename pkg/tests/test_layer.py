import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import fsum, layer_gradcheck, layer_with_applicability
from nconv import gradcheck
from nconv.classic import Basis, Neighborhood, nc_solve, normalized_average_map
from nconv.layer import (ConfSignal, NConvLayer, NonNegFn, gamma_eval, gamma_grad,
                         nconv_backward, nconv_forward)
from nconv.tensor import correlate2d


def test_softplus_values():
    assert gamma_eval(NonNegFn("softplus", 1.0), 0.0) == pytest.approx(math.log(2), abs=1e-15)
    assert gamma_eval(NonNegFn("softplus", 10.0), 0.0) == pytest.approx(math.log(2) / 10, abs=1e-15)
    mpmath.mp.dps = 50
    for x in (50.0, 29.9, 30.1, -40.0, 3.0):
        ref = float(mpmath.log(1 + mpmath.exp(mpmath.mpf(x))))
        assert gamma_eval(NonNegFn("softplus", 1.0), x) == pytest.approx(ref, rel=1e-14, abs=1e-300)
    assert abs(gamma_eval(NonNegFn("softplus", 1.0), 50.0) - 50.0) < 1e-12


def test_softplus_no_overflow():
    with np.errstate(all="raise"):
        v = gamma_eval(NonNegFn("softplus", 10.0), np.array([-1e4, 0.0, 1e4]))
    assert np.all(np.isfinite(v)) and v[2] == 1e4


@pytest.mark.parametrize("kind,beta", [("softplus", 1.0), ("softplus", 10.0), ("exp", 1.0),
                                       ("sigmoid", 1.0), ("identity", 1.0)])
def test_gamma_grad_matches_central_difference(kind, beta):
    fn = NonNegFn(kind, beta)
    x = np.linspace(-3, 3, 25)
    h = 1e-6
    num = (gamma_eval(fn, x + h) - gamma_eval(fn, x - h)) / (2 * h)
    np.testing.assert_allclose(gamma_grad(fn, x), num, rtol=1e-7, atol=1e-9)


@pytest.mark.parametrize("kind", ["softplus", "exp", "sigmoid"])
def test_gamma_strictly_positive(kind):
    x = np.linspace(-20, 20, 101)
    assert np.all(gamma_eval(NonNegFn(kind, 10.0), x) > 0)


def test_nonneg_fn_validation():
    with pytest.raises(ValueError):
        NonNegFn("relu")
    with pytest.raises(ValueError):
        NonNegFn("softplus", 0.0)


def test_layer_validation():
    with pytest.raises(ValueError):
        NConvLayer(np.zeros((1, 1, 2, 3)), np.zeros(1))
    with pytest.raises(ValueError):
        NConvLayer(np.zeros((1, 1, 3, 3)), np.zeros(2))
    with pytest.raises(ValueError):
        NConvLayer(np.zeros((1, 1, 3, 3)), np.zeros(1), eps=0.0)


def test_forward_hand_sums():
    layer = layer_with_applicability([[[[1.0, 2.0, 1.0]]]])
    out, _ = nconv_forward(layer, ConfSignal([[2.0, 4.0, 6.0]], [[1.0, 0.0, 1.0]]))
    assert out.z[0, 0, 1] == pytest.approx(4.0, abs=1e-7)
    assert out.c[0, 0, 1] == pytest.approx(0.5, abs=1e-8)
    out, _ = nconv_forward(layer, ConfSignal([[2.0, 4.0, 6.0]], [[1.0, 1.0, 1.0]]))
    assert out.z[0, 0, 1] == pytest.approx(4.0, abs=1e-7)
    assert out.c[0, 0, 1] == pytest.approx(1.0, abs=1e-8)
    # confidence is not clamped: full confidence overshoots 1 by eps / sum(A)
    assert out.c[0, 0, 1] > 1.0


def test_forward_zero_confidence_gives_bias():
    layer = layer_with_applicability([[[[1.0, 2.0, 1.0]]]], bias=0.7, eps=1e-8)
    out, _ = nconv_forward(layer, ConfSignal(np.random.default_rng(0).normal(size=(1, 4, 3)), np.zeros((1, 4, 3))))
    np.testing.assert_array_equal(out.z, 0.7)
    np.testing.assert_allclose(out.c, 1e-8 / 4.0, rtol=1e-12)
    assert out.c[0, 0, 0] == pytest.approx(2.5e-9)


def test_layer_init_unit_sum():
    for kind in ("softplus", "identity", "exp"):
        layer = NConvLayer.init(3, 2, 5, gamma=NonNegFn(kind, 10.0), rng=0)
        np.testing.assert_allclose(layer.applicability().sum(axis=(1, 2, 3)), 1.0, rtol=1e-9)


def test_backward_two_point_example():
    # the plain central difference at h=1e-6 on one random 1x5x5 instance
    rep = layer_gradcheck(0, h=1e-6, order=2)
    assert rep.passed, str(rep)


def test_backward_finite_differences():
    for seed in range(20):
        rep = layer_gradcheck(seed)
        assert rep.passed, str(rep)


def test_backward_multichannel_and_beta10():
    rep = layer_gradcheck(7, in_ch=3, out_ch=2, size=6, k=5, beta=10.0)
    # beta=10 makes some raw weights sit in the flat tail; check the absolute error too
    assert rep.tensors["z"].max_rel < 1e-6 and rep.tensors["c"].max_rel < 1e-6
    for t in rep.tensors.values():
        assert t.max_abs < 1e-8


def test_backward_maxpool_confidence_mode():
    rep = layer_gradcheck(3, in_ch=2, out_ch=2, kind="identity", conf_mode="maxpool")
    assert rep.passed, str(rep)


def test_zero_upstream_gradient_gives_zero():
    r = np.random.default_rng(1)
    layer = NConvLayer.init(2, 3, 3, rng=r)
    _, cache = nconv_forward(layer, ConfSignal(r.normal(size=(2, 5, 5)), r.uniform(size=(2, 5, 5))))
    zero = np.zeros((3, 5, 5))
    for g in nconv_backward(layer, cache, zero, zero):
        assert not np.any(g)


def test_backward_shape_mismatch():
    layer = NConvLayer.init(1, 1, 3, rng=0)
    _, cache = nconv_forward(layer, ConfSignal(np.ones((1, 4, 4)), np.ones((1, 4, 4))))
    with pytest.raises(ValueError):
        nconv_backward(layer, cache, np.zeros((1, 3, 4)), np.zeros((1, 4, 4)))


def test_full_confidence_input_gradient_is_normalized_filter():
    """With c = 1 the data path is correlation with A / sum(A); compare the
    layer's input gradient to central differences of that plain filter."""
    r = np.random.default_rng(4)
    layer = NConvLayer.init(1, 1, 3, gamma=NonNegFn("softplus", 1.0), rng=r)
    layer = NConvLayer(layer.weight, np.zeros(1), layer.gamma, 1e-8)
    A = layer.applicability()[0, 0]
    z = r.normal(size=(1, 6, 6))
    c = np.ones_like(z)
    g = r.normal(size=(1, 6, 6))
    _, cache = nconv_forward(layer, ConfSignal(z, c))
    grad_z = nconv_backward(layer, cache, g, np.zeros_like(g))[0]

    # interior pixels only see in-bounds samples; restrict the functional to them
    inner = np.zeros_like(g)
    inner[:, 1:-1, 1:-1] = g[:, 1:-1, 1:-1]
    grad_z_inner = nconv_backward(layer, cache, inner, np.zeros_like(g))[0]

    def plain(p):
        return fsum(inner[0] * correlate2d(p["z"][0], A / A.sum())), {"z": grad_z_inner}

    rep = gradcheck.check(plain, {"z": z.copy()})
    assert rep.passed, str(rep)
    assert grad_z.shape == z.shape


def test_constant_confidence_reduction():
    r = np.random.default_rng(2)
    layer = NConvLayer.init(1, 1, 5, gamma=NonNegFn("softplus", 1.0), rng=r)
    A = layer.applicability()[0, 0]
    z = r.normal(size=(1, 9, 9))
    out, _ = nconv_forward(layer, ConfSignal(z, np.ones_like(z)), eps=0.0)
    ref = correlate2d(z[0], A / A.sum())
    assert np.max(np.abs(out.z[0, 2:-2, 2:-2] - ref[2:-2, 2:-2])) < 1e-12


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.integers(-20, 20))
def test_confidence_scale_invariance_power_of_two(seed, k):
    s = 2.0**k
    r = np.random.default_rng(seed)
    layer = NConvLayer.init(2, 2, 3, gamma=NonNegFn("softplus", 1.0), rng=r)
    layer.bias[...] = r.normal(size=2)
    z, c = r.normal(size=(2, 5, 5)), r.uniform(0.1, 1, size=(2, 5, 5))
    a, _ = nconv_forward(layer, ConfSignal(z, c), eps=0.0)
    b, _ = nconv_forward(layer, ConfSignal(z, s * c), eps=0.0)
    assert np.array_equal(a.z, b.z)
    assert np.array_equal(s * a.c, b.c)


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_confidence_scale_invariance_any_factor(seed, s):
    r = np.random.default_rng(seed)
    layer = NConvLayer.init(1, 1, 3, gamma=NonNegFn("softplus", 1.0), rng=r)
    z, c = r.normal(size=(1, 5, 5)), r.uniform(0.1, 1, size=(1, 5, 5))
    a, _ = nconv_forward(layer, ConfSignal(z, c), eps=0.0)
    b, _ = nconv_forward(layer, ConfSignal(z, s * c), eps=0.0)
    np.testing.assert_allclose(a.z, b.z, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(s * a.c, b.c, rtol=1e-12)


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_output_confidence_monotone(seed):
    r = np.random.default_rng(seed)
    layer = NConvLayer.init(2, 2, 3, rng=r)
    z = r.normal(size=(2, 5, 5))
    c = r.uniform(0, 1, size=(2, 5, 5))
    bumped = c + r.uniform(0, 0.5, size=c.shape) * (r.random(c.shape) < 0.3)
    a, _ = nconv_forward(layer, ConfSignal(z, c))
    b, _ = nconv_forward(layer, ConfSignal(z, bumped))
    assert np.all(b.c >= a.c)


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1))
def test_convex_combination_bound(seed):
    r = np.random.default_rng(seed)
    layer = NConvLayer.init(1, 1, 3, gamma=NonNegFn("softplus", 10.0), rng=r)
    z = r.normal(size=(1, 3, 3)) * 10
    c = r.uniform(0, 1, size=(1, 3, 3)) * (r.random((1, 3, 3)) < 0.6)
    c[0, 1, 1] = 1.0
    out, _ = nconv_forward(layer, ConfSignal(z, c), eps=0.0)
    A = layer.applicability()[0, 0]
    used = z[0][(c[0] * A) > 0]
    v = out.z[0, 1, 1]
    assert used.min() - 1e-12 <= v <= used.max() + 1e-12


def test_matches_classic_oracle():
    r = np.random.default_rng(3)
    layer = NConvLayer.init(1, 1, 5, gamma=NonNegFn("softplus", 1.0), rng=r)
    A = layer.applicability()[0, 0]
    F = r.normal(size=(10, 10))
    C = r.uniform(0, 1, size=(10, 10)) * (r.random((10, 10)) < 0.3)
    out, _ = nconv_forward(layer, ConfSignal(F, C), eps=0.0)
    R, denom, valid = normalized_average_map(F, C, A)
    assert np.max(np.abs(out.z[0][valid] - R[valid])) < 1e-12
    np.testing.assert_allclose(out.c[0], denom / A.sum(), rtol=1e-12, atol=1e-15)
    Fp, Cp = np.pad(F, 2), np.pad(C, 2)
    basis = Basis.constant(25)
    for i, j in np.argwhere(valid)[:20]:
        r_hat = nc_solve(basis, Neighborhood(Fp[i:i + 5, j:j + 5], Cp[i:i + 5, j:j + 5], A))
        assert abs(r_hat[0] - out.z[0, i, j]) < 1e-12


def test_multichannel_joint_normalization():
    r = np.random.default_rng(5)
    layer = NConvLayer.init(2, 1, 3, gamma=NonNegFn("softplus", 1.0), rng=r)
    A = layer.applicability()[0]
    z, c = r.normal(size=(2, 4, 4)), r.uniform(size=(2, 4, 4))
    out, _ = nconv_forward(layer, ConfSignal(z, c), eps=0.0)
    num = sum(correlate2d(z[i] * c[i], A[i]) for i in range(2))
    den = sum(correlate2d(c[i], A[i]) for i in range(2))
    np.testing.assert_allclose(out.z[0], num / den, rtol=1e-12)
    np.testing.assert_allclose(out.c[0], den / A.sum(), rtol=1e-12)


def test_maxpool_confidence_mode_forward():
    layer = NConvLayer(np.ones((1, 1, 3, 3)), np.zeros(1), NonNegFn("identity"), 1e-8, "maxpool")
    c = np.zeros((1, 5, 5))
    c[0, 2, 2] = 0.7
    out, _ = nconv_forward(layer, ConfSignal(np.ones((1, 5, 5)), c))
    expect = np.zeros((5, 5))
    expect[1:4, 1:4] = 0.7
    np.testing.assert_array_equal(out.c[0], expect)


def test_channel_mismatch():
    layer = NConvLayer.init(2, 1, 3, rng=0)
    with pytest.raises(ValueError):
        nconv_forward(layer, ConfSignal(np.ones((1, 3, 3)), np.ones((1, 3, 3))))
