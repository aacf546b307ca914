"""Shared builders for layer and network tests."""

import math

import numpy as np

from nconv import gradcheck
from nconv.layer import ConfSignal, NConvLayer, NonNegFn, nconv_backward, nconv_forward


def inverse_softplus(a, beta=1.0):
    return np.log(np.expm1(beta * np.asarray(a, dtype=float))) / beta


def layer_with_applicability(A, bias=0.0, beta=1.0, eps=1e-8):
    A = np.asarray(A, dtype=float)
    W = inverse_softplus(A, beta)
    return NConvLayer(W, np.full(A.shape[0], bias), NonNegFn("softplus", beta), eps)


def fsum(*arrays):
    return math.fsum(np.concatenate([np.ravel(a) for a in arrays]))


def layer_gradcheck(seed, in_ch=1, out_ch=1, size=5, k=3, beta=1.0, eps=1e-8, kind="softplus",
                    conf_mode="propagate", h=1e-4, tol=gradcheck.TOL_SINGLE_OP, order=4):
    """Finite-difference check of every layer gradient on a random instance.

    Defaults to the five-point stencil: at h=1e-6 the two-point rounding
    floor (~1e-10 absolute) is already 1e-6 of gradient entries near 1e-4.
    """
    r = np.random.default_rng(seed)
    params = {
        "W": r.normal(size=(out_ch, in_ch, k, k)),
        "b": r.normal(size=out_ch),
        "z": r.normal(size=(in_ch, size, size)),
        "c": r.uniform(0.0, 1.0, size=(in_ch, size, size)),
    }
    gz = r.normal(size=(out_ch, size, size))
    gc = r.normal(size=(out_ch, size, size))
    gamma = NonNegFn(kind, beta)

    def fn(p):
        layer = NConvLayer(p["W"], p["b"], gamma, eps, conf_mode)
        out, cache = nconv_forward(layer, ConfSignal(p["z"], p["c"]))
        gi, gci, gW, gb = nconv_backward(layer, cache, gz, gc)
        return fsum(gz * out.z, gc * out.c), {"W": gW, "b": gb, "z": gi, "c": gci}

    return gradcheck.check(fn, params, h=h, tol=tol, order=order)
