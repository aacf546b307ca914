import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from nconv import gradcheck
from nconv.losses import (ZeroVariance, conf_error_pearson, confidence_loss, depth_metrics,
                          equalize, huber, huber_grad, pearson)


def test_huber_examples():
    assert huber(3.0, 3.0) == 0.0
    assert huber(0.5, 0.0) == pytest.approx(0.125)
    assert huber(-2.0, 0.0) == pytest.approx(1.5)
    assert huber(5.0, 1.0, delta=2.0) == pytest.approx(6.0)


def test_huber_smooth_at_delta():
    for delta in (0.5, 1.0, 3.0):
        lo, hi = delta * (1 - 1e-12), delta * (1 + 1e-12)
        assert huber(lo, 0.0, delta) == pytest.approx(huber(hi, 0.0, delta), abs=1e-10)
        assert huber_grad(lo, 0.0, delta) == pytest.approx(delta, rel=1e-9)
        assert huber_grad(hi, 0.0, delta) == pytest.approx(delta)
        assert huber_grad(-hi, 0.0, delta) == pytest.approx(-delta)


def _single(E, C, p):
    # a 1-pixel L2 error of sqrt(E) gives any requested E exactly enough
    rep, _, _ = confidence_loss([[math.sqrt(E)]], [[C]], [[0.0]], epoch=p, mode="l2conf")
    return rep


@pytest.mark.parametrize("E,C,p,expect", [(0.0, 1.0, 1, -1.0), (1.0, 1.0, 1, 1.0), (0.5, 0.5, 2, 0.375)])
def test_confidence_loss_examples(E, C, p, expect):
    rep = _single(E, C, p)
    assert rep.total == pytest.approx(expect, abs=1e-12)
    assert rep.total == pytest.approx(rep.data_term - rep.conf_term, abs=1e-12)


def test_huber_mode_drops_conf_term():
    r = np.random.default_rng(0)
    Z, C, T = r.normal(size=(3, 4, 4))
    rep, gZ, gC = confidence_loss(Z, C, T, mode="huber", epoch=3)
    assert rep.conf_term == 0.0 and rep.total == rep.data_term
    assert not np.any(gC)
    np.testing.assert_allclose(gZ, huber_grad(Z, T) / 16)


def test_loss_is_mean_over_valid():
    Z = np.array([[1.0, 100.0]])
    T = np.array([[0.0, 0.0]])
    valid = np.array([[True, False]])
    rep, gZ, gC = confidence_loss(Z, np.ones_like(Z), T, valid, mode="huber")
    assert rep.data_term == pytest.approx(0.5)
    assert gZ[0, 1] == 0.0


def test_confidence_gradient_sign():
    Z = np.array([[0.0, 0.5, 1.5, 3.0]])
    T = np.zeros_like(Z)
    _, _, gC = confidence_loss(Z, np.full_like(Z, 0.5), T, epoch=2)
    E = huber(Z, T)
    assert np.all((gC < 0) == (E < 1))


def test_decay_with_epoch():
    r = np.random.default_rng(1)
    Z, T = r.normal(size=(2, 5, 5))
    C = r.uniform(size=(5, 5))
    data = confidence_loss(Z, C, T, mode="huber")[0].total
    gaps = [abs(confidence_loss(Z, C, T, epoch=p)[0].total - data) for p in (1, 10, 100, 10**6)]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-6


@pytest.mark.parametrize("mode", ["conf", "l2conf", "huber"])
def test_loss_gradients(mode):
    r = np.random.default_rng(2)
    T = r.normal(size=(4, 4)) * 2
    valid = r.random((4, 4)) < 0.7
    params = {"Z": r.normal(size=(4, 4)) * 2, "C": r.uniform(size=(4, 4))}

    def fn(p):
        rep, gZ, gC = confidence_loss(p["Z"], p["C"], T, valid, epoch=3, mode=mode)
        return rep.total, {"Z": gZ, "C": gC}

    rep = gradcheck.check(fn, params)
    assert rep.passed, str(rep)


def test_loss_errors():
    with pytest.raises(ValueError):
        confidence_loss([[1.0]], [[1.0]], [[1.0]], epoch=0)
    with pytest.raises(ValueError):
        confidence_loss([[1.0]], [[1.0, 1.0]], [[1.0]])
    with pytest.raises(ValueError):
        confidence_loss([[1.0]], [[1.0]], [[1.0]], valid=[[False]])
    with pytest.raises(ValueError):
        confidence_loss([[1.0]], [[1.0]], [[1.0]], mode="l1")


def test_metrics_examples():
    T = np.full((2, 2), 10.0)
    assert depth_metrics(T, T).csv() == "0,0,0,0,4"
    m = depth_metrics(T + 2.0, T)
    assert m.mae == pytest.approx(2.0) and m.rmse == pytest.approx(2.0)
    m = depth_metrics(np.array([11.0, 13.0]), np.array([10.0, 10.0]))
    assert m.mae == pytest.approx(2.0) and m.rmse == pytest.approx(math.sqrt(5))
    m = depth_metrics(np.array([20.0]), np.array([10.0]))
    assert m.imae == pytest.approx(50.0) and m.irmse == pytest.approx(50.0)
    # data units in millimetres
    m = depth_metrics(np.array([20000.0]), np.array([10000.0]), depth_unit_scale=1e-3)
    assert m.imae == pytest.approx(50.0)


def test_metrics_errors():
    with pytest.raises(ValueError):
        depth_metrics(np.ones(3), np.ones(3), np.zeros(3, bool))
    with pytest.raises(ValueError):
        depth_metrics(np.ones(3), np.array([1.0, 0.0, 1.0]))


@settings(max_examples=100)
@given(hnp.arrays(np.float64, st.integers(1, 50), elements=st.floats(0.1, 100)),
       hnp.arrays(np.float64, st.integers(1, 50), elements=st.floats(-50, 50)))
def test_rmse_at_least_mae(t, e):
    n = min(t.size, e.size)
    m = depth_metrics(t[:n] + e[:n], t[:n])
    assert m.rmse >= m.mae * (1 - 1e-12) and m.mae >= 0
    assert m.irmse >= m.imae * (1 - 1e-12)


def test_equalize_midranks():
    np.testing.assert_allclose(equalize([3.0, 1.0, 2.0]), [1.0, 0.0, 0.5])
    np.testing.assert_allclose(equalize([1.0, 1.0, 2.0]), [0.25, 0.25, 1.0])


def test_pearson_cases():
    err = np.linspace(0.1, 5, 50)
    assert conf_error_pearson(err, np.exp(-err)) == pytest.approx(1.0)
    assert conf_error_pearson(err, 1.0 / (1.0 + err ** 2)) == pytest.approx(1.0)
    assert conf_error_pearson(err, err) == pytest.approx(-1.0)
    assert pearson(equalize(err), equalize(-err)) == pytest.approx(-1.0)
    with pytest.raises(ZeroVariance):
        conf_error_pearson(err, np.full(50, 0.3))
    with pytest.raises(ZeroVariance):
        conf_error_pearson(np.zeros(50), err)
    with pytest.raises(ValueError):
        conf_error_pearson(err, err[:-1])


def test_pearson_independent():
    r = np.random.default_rng(3)
    err = r.exponential(size=10000)
    conf = r.permutation(r.uniform(size=10000))
    assert abs(conf_error_pearson(err, conf)) < 0.05


def test_pearson_zero_confidence_is_least_confident():
    rho = conf_error_pearson([0.1, 0.2, 5.0], [0.9, 0.8, 0.0])
    assert rho == pytest.approx(1.0)
