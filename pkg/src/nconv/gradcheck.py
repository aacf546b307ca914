"""Central finite-difference verification of analytic gradients."""

from dataclasses import dataclass, field

import numpy as np

REL_FLOOR = 1e-12
TOL_SINGLE_OP = 1e-6
TOL_END_TO_END = 1e-4


class NonFiniteValue(ArithmeticError):
    pass


@dataclass
class TensorReport:
    max_rel: float
    max_abs: float
    worst_index: tuple


@dataclass
class GradReport:
    tol: float
    tensors: dict = field(default_factory=dict)

    @property
    def max_rel(self):
        return max((t.max_rel for t in self.tensors.values()), default=0.0)

    @property
    def passed(self):
        return self.max_rel < self.tol

    def __str__(self):
        width = max([len(k) for k in self.tensors] + [6])
        lines = [f"{'tensor':<{width}}  {'max_rel':>10}  {'max_abs':>10}  worst"]
        for name, t in self.tensors.items():
            lines.append(f"{name:<{width}}  {t.max_rel:10.3e}  {t.max_abs:10.3e}  {t.worst_index}")
        lines.append(f"{'PASS' if self.passed else 'FAIL'} (tol {self.tol:g}, max rel {self.max_rel:.3e})")
        return "\n".join(lines)


def numeric_grad(fn, params, name, h=1e-6, order=2):
    """Central-difference gradient of ``fn(params)[0]`` w.r.t. ``params[name]``.

    The step for coordinate ``i`` is ``h * max(1, |x_i|)``, snapped so that
    ``x_i + step`` is exact. ``order=4`` uses the five-point stencil, whose
    smaller truncation error allows a larger ``h`` and so less rounding noise.
    ``params[name]`` is perturbed in place and restored afterwards.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    x = params[name]
    flat = x.reshape(-1)
    out = np.zeros(x.size)
    offsets = (1, -1) if order == 2 else (1, -1, 2, -2)
    for i in range(x.size):
        orig = flat[i]
        step = (orig + h * max(1.0, abs(orig))) - orig
        f, at = {}, {}
        for k in offsets:
            flat[i] = at[k] = orig + k * step
            f[k] = float(fn(params)[0])
        flat[i] = orig
        if not all(np.isfinite(v) for v in f.values()):
            raise NonFiniteValue(f"non-finite value perturbing {name}{np.unravel_index(i, x.shape)}")
        if order == 2:
            # divide by the points actually taken after rounding
            out[i] = (f[1] - f[-1]) / (at[1] - at[-1])
        else:
            out[i] = (8.0 * (f[1] - f[-1]) - (f[2] - f[-2])) / (12.0 * step)
    return out.reshape(x.shape)


def compare(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(a - n)
    rel = diff / np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)
    if rel.size == 0:
        return TensorReport(0.0, 0.0, ())
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape)
    return TensorReport(float(rel.max()), float(diff.max()), tuple(int(i) for i in worst))


def check(fn, params, h=1e-6, tol=TOL_SINGLE_OP, names=None, order=2, value_fn=None):
    """Compare the analytic gradients returned by ``fn`` to central differences.

    ``fn(params)`` must return ``(value, grads)`` where ``grads`` maps every
    checked name in ``params`` to an array of the same shape. ``value_fn``,
    if given, returns the value alone and is used for the perturbed
    evaluations.
    """
    value, grads = fn(params)
    if not np.isfinite(value):
        raise NonFiniteValue("function value is not finite at the base point")
    probe = fn if value_fn is None else (lambda p: (value_fn(p), None))
    report = GradReport(tol)
    for name in names or list(params):
        report.tensors[name] = compare(grads[name], numeric_grad(probe, params, name, h, order))
    return report
