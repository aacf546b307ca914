"""Training losses, depth-completion metrics and confidence/error correlation."""

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


class ZeroVariance(ValueError):
    pass


@dataclass
class LossReport:
    data_term: float
    conf_term: float
    total: float
    epoch: int


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    imae: float
    irmse: float
    n: int

    def csv(self):
        return f"{self.mae:.6g},{self.rmse:.6g},{self.imae:.6g},{self.irmse:.6g},{self.n}"


def huber(z, t, delta=1.0):
    """Elementwise Huber penalty: quadratic below ``delta``, linear above."""
    d = np.abs(np.asarray(z, dtype=np.float64) - t)
    return np.where(d < delta, 0.5 * d * d, delta * d - 0.5 * delta * delta)


def huber_grad(z, t, delta=1.0):
    """Derivative of :func:`huber` with respect to ``z``."""
    d = np.asarray(z, dtype=np.float64) - t
    return np.clip(d, -delta, delta)


def confidence_loss(Z, C, T, valid=None, epoch=1, mode="conf", delta=1.0):
    """Per-pixel loss ``E - (C - E C) / epoch`` averaged over valid pixels.

    ``mode`` selects the data error ``E``: ``conf`` (Huber plus the confidence
    term), ``huber`` (Huber only) or ``l2conf`` (squared error plus the
    confidence term). Returns the :class:`LossReport` and the gradients with
    respect to ``Z`` and ``C``.
    """
    if epoch < 1:
        raise ValueError(f"epoch must be >= 1, got {epoch}")
    Z = np.asarray(Z, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    if not Z.shape == C.shape == T.shape:
        raise ValueError(f"shape mismatch: Z {Z.shape}, C {C.shape}, T {T.shape}")
    valid = np.ones(Z.shape, bool) if valid is None else np.asarray(valid, bool)
    n = int(valid.sum())
    if n == 0:
        raise ValueError("no valid ground-truth pixels")
    w = valid / n
    if mode in ("conf", "huber"):
        E = huber(Z, T, delta)
        dE = huber_grad(Z, T, delta)
    elif mode == "l2conf":
        E = (Z - T) ** 2
        dE = 2.0 * (Z - T)
    else:
        raise ValueError(f"unknown loss mode {mode!r}")
    E = np.where(valid, E, 0.0)
    data = float(np.sum(w * E))
    if mode == "huber":
        return LossReport(data, 0.0, data, epoch), w * dE, np.zeros_like(C)
    conf_px = (C - E * C) / epoch
    conf = float(np.sum(w * conf_px))
    gZ = w * dE * (1.0 + C / epoch)
    gC = -w * (1.0 - E) / epoch
    return LossReport(data, conf, data - conf, epoch), gZ, gC


def depth_metrics(Z, T, valid=None, depth_unit_scale=1.0):
    """MAE and RMSE in data units; iMAE and iRMSE on inverse depth in 1/km.

    ``depth_unit_scale`` converts data units to meters.
    """
    Z = np.asarray(Z, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    valid = np.ones(T.shape, bool) if valid is None else np.asarray(valid, bool)
    if not valid.any():
        raise ValueError("no valid pixels to evaluate")
    z, t = Z[valid], T[valid]
    if np.any(t <= 0):
        raise ValueError("ground-truth depth must be positive on valid pixels")
    err = z - t
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    # non-positive predictions have no inverse; floor them at 1 mm
    inv_z = 1000.0 / np.maximum(z * depth_unit_scale, 1e-3)
    inv_t = 1000.0 / (t * depth_unit_scale)
    ierr = inv_z - inv_t
    return MetricsReport(mae, rmse, float(np.mean(np.abs(ierr))), float(np.sqrt(np.mean(ierr * ierr))), int(z.size))


def equalize(x):
    """Histogram equalization: midrank transform onto [0, 1]."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 2:
        return np.zeros_like(x)
    return (rankdata(x, method="average") - 1.0) / (x.size - 1.0)


def pearson(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(np.mean(dx * dx)), np.sqrt(np.mean(dy * dy))
    if sx == 0 or sy == 0:
        raise ZeroVariance("correlation undefined for a constant series")
    return float(np.mean(dx * dy) / (sx * sy))


def conf_error_pearson(errors, confidences):
    """Pearson correlation of equalized ``|error|`` and equalized ``-log(conf)``.

    Positive values mean low confidence goes with high error.
    """
    e = np.abs(np.asarray(errors, dtype=np.float64).ravel())
    c = np.asarray(confidences, dtype=np.float64).ravel()
    if e.size != c.size:
        raise ValueError("errors and confidences differ in length")
    if np.ptp(e) == 0 or np.ptp(c) == 0:
        raise ZeroVariance("correlation undefined for a constant series")
    with np.errstate(divide="ignore"):
        nlc = -np.log(np.maximum(c, 0.0))
    return pearson(equalize(e), equalize(nlc))
