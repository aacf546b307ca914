"""Normalized convolution as weighted least squares over an explicit basis.

This is the exact reference path: no epsilon is injected anywhere, and pixels
or neighborhoods without enough confident samples are reported instead of
patched. The trainable layer in :mod:`nconv.layer` is checked against it.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from .tensor import correlate2d

SINGULAR_RTOL = 1e-12


class SingularGrammian(ArithmeticError):
    """Too few confident samples to determine the basis coefficients."""


class DegenerateBasis(ValueError):
    pass


@dataclass(frozen=True)
class Basis:
    """``n x m`` matrix whose columns are basis functions on the neighborhood."""

    values: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.values, dtype=np.float64)
        if b.ndim == 1:
            b = b[:, None]
        n, m = b.shape
        if not n >= m >= 1:
            raise DegenerateBasis(f"need n >= m >= 1, got n={n}, m={m}")
        if np.linalg.matrix_rank(b.T @ b) < m:
            raise DegenerateBasis("basis columns are linearly dependent")
        object.__setattr__(self, "values", b)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def m(self):
        return self.values.shape[1]

    @property
    def naive(self):
        return self.m == 1 and bool(np.all(self.values == 1.0))

    @classmethod
    def constant(cls, n):
        return cls(np.ones((n, 1)))

    @classmethod
    def polynomial(cls, coords, degree):
        """Monomials ``1, x, ..., x**degree`` sampled at ``coords``."""
        x = np.asarray(coords, dtype=np.float64)
        return cls(np.stack([x**d for d in range(degree + 1)], axis=1))


@dataclass(frozen=True)
class Neighborhood:
    f: np.ndarray
    c: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        f, c, a = (np.asarray(v, dtype=np.float64).ravel() for v in (self.f, self.c, self.a))
        if not f.shape == c.shape == a.shape:
            raise ValueError("f, c and a must have the same length")
        if np.any(c < 0) or np.any(a < 0):
            raise ValueError("confidence and applicability must be non-negative")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "a", a)


def grammians(basis, nb):
    """Return ``(G, G0)``: basis Grammians under partial and full confidence."""
    b = basis.values
    g = b.T @ ((nb.a * nb.c)[:, None] * b)
    g0 = b.T @ (nb.a[:, None] * b)
    return g, g0


def _factor(g):
    scale = np.max(np.abs(np.diag(g))) if g.size else 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(g, check_finite=True)
    if scale <= 0 or np.min(np.abs(np.diag(lu))) < SINGULAR_RTOL * scale:
        raise SingularGrammian(f"Grammian is singular (pivots {np.diag(lu)}, scale {scale:g})")
    return lu, piv


def nc_solve(basis, nb):
    """Coefficients ``r = G^-1 B^T D_a D_c f`` of the local signal model."""
    if basis.n != nb.f.size:
        raise ValueError(f"basis has {basis.n} samples, neighborhood has {nb.f.size}")
    g, _ = grammians(basis, nb)
    rhs = basis.values.T @ (nb.a * nb.c * nb.f)
    return lu_solve(_factor(g), rhs)


def normalized_average_map(F, C, a):
    """Naive-basis normalized convolution over a whole map.

    Returns ``(R, denom, valid)`` where ``R = (a * (F C)) / (a * C)`` on
    pixels with ``denom > 0`` and NaN elsewhere; ``valid`` marks the former.
    """
    F = np.asarray(F, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if F.shape != C.shape:
        raise ValueError(f"data {F.shape} and confidence {C.shape} differ in shape")
    if np.any(a < 0):
        raise ValueError("applicability must be non-negative")
    num = correlate2d(F * C, a)
    denom = correlate2d(C, a)
    valid = denom > 0
    R = np.full(F.shape, np.nan)
    R[valid] = num[valid] / denom[valid]
    return R, denom, valid


def gaussian_applicability(size, sigma):
    r = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-0.5 * (r / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def confidence_westelius(G, G0):
    """``(det G / det G0) ** (1/m)``."""
    G = np.atleast_2d(np.asarray(G, dtype=np.float64))
    G0 = np.atleast_2d(np.asarray(G0, dtype=np.float64))
    m = G.shape[0]
    d0 = np.linalg.det(G0)
    if d0 <= 0:
        raise DegenerateBasis(f"det G0 = {d0:g} is not positive")
    ratio = np.linalg.det(G) / d0
    # det G >= 0 for a Grammian; clip roundoff below zero
    return max(ratio, 0.0) ** (1.0 / m)


def spectral_norm(M, iters=50, rtol=1e-12):
    """Largest singular value by power iteration on ``M^T M``."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    mtm = M.T @ M
    v = np.ones(mtm.shape[0]) / np.sqrt(mtm.shape[0])
    # a deterministic start orthogonal to the dominant vector would stall
    v = v + 1e-3 * np.arange(1, v.size + 1)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = mtm @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        new = float(v @ mtm @ v)
        if abs(new - lam) <= rtol * abs(new):
            lam = new
            break
        lam = new
    return float(np.sqrt(max(lam, 0.0)))


def confidence_karlholm(G, G0):
    """``1 / (||G^-1||_2 ||G0||_2)`` with the spectral norm."""
    G = np.atleast_2d(np.asarray(G, dtype=np.float64))
    G0 = np.atleast_2d(np.asarray(G0, dtype=np.float64))
    lu = _factor(G)
    ginv = lu_solve(lu, np.eye(G.shape[0]))
    return 1.0 / (spectral_norm(ginv) * spectral_norm(G0))
