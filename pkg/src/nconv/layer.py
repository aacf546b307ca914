"""Trainable normalized-convolution layer.

The effective applicability is ``A = gamma(W)`` for a non-negativity function
``gamma``. For input data ``z`` and confidence ``c`` (shape ``[ch, H, W]``)::

    N = sum_i corr(z_i * c_i, A[o, i])        D = sum_i corr(c_i, A[o, i])
    out.z = N / (D + eps) + b                 out.c = (D + eps) / sum(A[o])

Both outputs are differentiable and :func:`nconv_backward` propagates through
the data and the confidence paths.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _backend

SOFTPLUS_LINEAR_CUTOFF = 30.0
IDENTITY_SUM_GUARD = 1e-12


@dataclass(frozen=True)
class NonNegFn:
    """Map from raw weights to applicability values.

    ``kind`` is one of ``softplus``, ``exp``, ``sigmoid`` or ``identity``.
    Only ``identity`` can produce negative values; it exists for the
    unconstrained ablation.
    """

    kind: str = "softplus"
    beta: float = 10.0

    def __post_init__(self):
        if self.kind not in ("softplus", "exp", "sigmoid", "identity"):
            raise ValueError(f"unknown non-negativity function {self.kind!r}")
        if self.kind == "softplus" and not self.beta > 0:
            raise ValueError("softplus beta must be positive")

    def __call__(self, x):
        return gamma_eval(self, x)

    def grad(self, x):
        return gamma_grad(self, x)


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(under="ignore"):
        e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def gamma_eval(fn, x):
    x = np.asarray(x, dtype=np.float64)
    if fn.kind == "softplus":
        bx = fn.beta * x
        with np.errstate(over="ignore", under="ignore"):
            small = np.log1p(np.exp(np.minimum(bx, SOFTPLUS_LINEAR_CUTOFF))) / fn.beta
            large = x + np.exp(-np.maximum(bx, SOFTPLUS_LINEAR_CUTOFF)) / fn.beta
        return np.where(bx > SOFTPLUS_LINEAR_CUTOFF, large, small)
    if fn.kind == "exp":
        return np.exp(x)
    if fn.kind == "sigmoid":
        return _sigmoid(x)
    return x.copy()


def gamma_grad(fn, x):
    """Elementwise derivative of :func:`gamma_eval`."""
    x = np.asarray(x, dtype=np.float64)
    if fn.kind == "softplus":
        return _sigmoid(fn.beta * x)
    if fn.kind == "exp":
        return np.exp(x)
    if fn.kind == "sigmoid":
        s = _sigmoid(x)
        return s * (1.0 - s)
    return np.ones_like(x)


@dataclass
class NConvLayer:
    weight: np.ndarray  # raw weights [out_ch, in_ch, kh, kw]
    bias: np.ndarray  # [out_ch]
    gamma: NonNegFn = field(default_factory=NonNegFn)
    eps: float = 1e-8
    # "propagate": confidence from the normalization denominator;
    # "maxpool": max of input confidence over the window (unconstrained ablation)
    conf_mode: str = "propagate"

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 4:
            raise ValueError(f"weight must be [out, in, kh, kw], got {self.weight.shape}")
        kh, kw = self.weight.shape[2:]
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"kernel extents must be odd, got {kh}x{kw}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError("bias needs one entry per output channel")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.conf_mode not in ("propagate", "maxpool"):
            raise ValueError(f"unknown confidence mode {self.conf_mode!r}")

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def kernel_size(self):
        return self.weight.shape[2:]

    @property
    def n_params(self):
        return self.weight.size + self.bias.size

    def applicability(self):
        return gamma_eval(self.gamma, self.weight)

    @classmethod
    def init(cls, in_ch, out_ch, kh, kw=None, gamma=None, eps=1e-8, rng=None, conf_mode="propagate"):
        """Random layer: raw weights ~ U[-1, 1], shifted per output channel so
        that the applicability of each output channel sums to about one."""
        kw = kh if kw is None else kw
        gamma = gamma or NonNegFn()
        rng = np.random.default_rng(rng)
        w = rng.uniform(-1.0, 1.0, size=(out_ch, in_ch, kh, kw))
        for o in range(out_ch):
            w[o] += _unit_sum_shift(gamma, w[o])
        return cls(w, np.zeros(out_ch), gamma, eps, conf_mode)


def _unit_sum_shift(gamma, w):
    if gamma.kind == "identity":
        return (1.0 - w.sum()) / w.size
    lo, hi = -1.0, 1.0
    while gamma_eval(gamma, w + lo).sum() > 1.0:
        lo *= 2.0
    while gamma_eval(gamma, w + hi).sum() < 1.0:
        hi *= 2.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if gamma_eval(gamma, w + mid).sum() < 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class ConfSignal:
    z: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.z = np.ascontiguousarray(self.z, dtype=np.float64)
        self.c = np.ascontiguousarray(self.c, dtype=np.float64)
        if self.z.ndim == 2:
            self.z = self.z[None]
        if self.c.ndim == 2:
            self.c = self.c[None]
        if self.z.shape != self.c.shape:
            raise ValueError(f"data {self.z.shape} and confidence {self.c.shape} differ in shape")

    @property
    def shape(self):
        return self.z.shape


@dataclass
class ForwardCache:
    z: np.ndarray
    c: np.ndarray
    A: np.ndarray
    N: np.ndarray
    D: np.ndarray
    S: np.ndarray  # per-output-channel applicability sums (guarded)
    eps: float
    pool_idx: np.ndarray = None  # window argmax, only in maxpool mode


def _kernel_sum(layer, A):
    s = A.sum(axis=(1, 2, 3))
    if layer.gamma.kind == "identity":
        s = np.where(np.abs(s) < IDENTITY_SUM_GUARD, np.copysign(IDENTITY_SUM_GUARD, s), s)
    return s


def _window_max(c, kh, kw):
    """Max of ``c`` over every input channel and a same-size window; returns
    the values and the flat argmax into ``c`` (first occurrence wins)."""
    ch, H, W = c.shape
    ph, pw = kh // 2, kw // 2
    cp = np.pad(c, ((0, 0), (ph, ph), (pw, pw)), constant_values=-np.inf)
    win = np.lib.stride_tricks.sliding_window_view(cp, (kh, kw), axis=(1, 2))
    win = win.transpose(1, 2, 0, 3, 4).reshape(H, W, ch * kh * kw)
    j = np.argmax(win, axis=2)
    i, rem = np.divmod(j, kh * kw)
    m, n = np.divmod(rem, kw)
    yy = np.arange(H)[:, None] + m - ph
    xx = np.arange(W)[None, :] + n - pw
    idx = (i * H + yy) * W + xx
    return c.reshape(-1)[idx], idx


def nconv_forward(layer, sig, eps=None):
    """Forward pass; returns ``(ConfSignal, ForwardCache)``.

    ``eps`` overrides ``layer.eps``; ``eps=0`` gives the exact quotient used
    when comparing against :mod:`nconv.classic` (undefined pixels become NaN).
    """
    eps = layer.eps if eps is None else float(eps)
    z, c = sig.z, sig.c
    if z.shape[0] != layer.in_channels:
        raise ValueError(f"layer expects {layer.in_channels} channels, got {z.shape[0]}")
    A = layer.applicability()
    N = _backend.correlate(z * c, A)
    D = _backend.correlate(c, A)
    S = _kernel_sum(layer, A)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_z = N / (D + eps) + layer.bias[:, None, None]
    pool_idx = None
    if layer.conf_mode == "propagate":
        out_c = (D + eps) / S[:, None, None]
    else:
        kh, kw = layer.kernel_size
        cmax, pool_idx = _window_max(c, kh, kw)
        out_c = np.broadcast_to(cmax, out_z.shape).copy()
    cache = ForwardCache(z, c, A, N, D, S, eps, pool_idx)
    return ConfSignal(out_z, out_c), cache


def nconv_backward(layer, cache, grad_z, grad_c):
    """Gradients ``(grad_in_z, grad_in_c, grad_W, grad_b)`` given upstream
    gradients with respect to ``out.z`` and ``out.c``."""
    grad_z = np.asarray(grad_z, dtype=np.float64)
    grad_c = np.asarray(grad_c, dtype=np.float64)
    if grad_z.shape != cache.N.shape or grad_c.shape != cache.N.shape:
        raise ValueError(f"upstream gradients must have shape {cache.N.shape}")
    kh, kw = cache.A.shape[2:]
    den = cache.D + cache.eps
    g_num = grad_z / den
    g_den = -grad_z * cache.N / den**2
    zc = cache.z * cache.c
    g_A = np.zeros_like(cache.A)
    if layer.conf_mode == "propagate":
        S = cache.S[:, None, None]
        g_den = g_den + grad_c / S
        # out.c = (D + eps) / S with S = sum(A[o]); every A[o] entry shares dS
        g_S = -(grad_c * den).sum(axis=(1, 2)) / cache.S**2
        g_A += g_S[:, None, None, None]
    g_A += _backend.weight_grad(zc, g_num, kh, kw)
    g_A += _backend.weight_grad(cache.c, g_den, kh, kw)
    g_zc = _backend.input_grad(g_num, cache.A)
    grad_in_z = g_zc * cache.c
    grad_in_c = g_zc * cache.z + _backend.input_grad(g_den, cache.A)
    if layer.conf_mode == "maxpool":
        np.add.at(grad_in_c.reshape(-1), cache.pool_idx.ravel(),
                  np.broadcast_to(grad_c.sum(axis=0), cache.pool_idx.shape).ravel())
    grad_W = g_A * gamma_grad(layer.gamma, layer.weight)
    grad_b = grad_z.sum(axis=(1, 2))
    return grad_in_z, grad_in_c, grad_W, grad_b
