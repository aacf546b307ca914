"""Unguided multi-scale normalized-convolution network.

Pipeline for ``scales = S``::

    scale 0:   input layer -> stage stack                      -> f0
    scale s:   conf max-pool(f_{s-1}) / 4 -> stage stack       -> f_s
    fusion:    y = f_{S-1};  for s = S-2..0:  y = fuse_s([f_s, up(y)])
    output:    1x1 merge layer(y)

The stage stack is shared across scales unless ``share_weights`` is off.
"""

import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from .layer import ConfSignal, NConvLayer, NonNegFn, nconv_backward, nconv_forward
from .tensor import read_nct, write_nct


class SpecError(ValueError):
    pass


@dataclass
class NetSpec:
    scales: int = 3
    channels: int = 2
    in_kernel: int = 5
    stage_kernel: int = 5
    stage_layers: int = 2
    fuse_kernel: int = 3
    epsilon: float = 1e-8
    gamma_kind: str = "softplus"
    beta: float = 10.0
    share_weights: bool = True
    # "propagate" or "maxpool"; empty selects maxpool only for identity gamma
    conf_mode: str = ""

    def __post_init__(self):
        if self.scales < 1:
            raise SpecError("scales must be >= 1")
        if self.channels < 1 or self.stage_layers < 0:
            raise SpecError("channels must be >= 1 and stage_layers >= 0")
        for k in (self.in_kernel, self.stage_kernel, self.fuse_kernel):
            if k < 1 or k % 2 == 0:
                raise SpecError(f"kernel sizes must be odd, got {k}")
        if not self.epsilon > 0:
            raise SpecError("epsilon must be positive")
        try:
            NonNegFn(self.gamma_kind, self.beta)
        except ValueError as e:
            raise SpecError(str(e)) from None
        if self.conf_mode not in ("", "propagate", "maxpool"):
            raise SpecError(f"unknown conf_mode {self.conf_mode!r}")

    @property
    def gamma(self):
        return NonNegFn(self.gamma_kind, self.beta)

    @property
    def layer_conf_mode(self):
        if self.conf_mode:
            return self.conf_mode
        return "maxpool" if self.gamma_kind == "identity" else "propagate"

    def layer_shapes(self):
        """Ordered ``name -> (in_ch, out_ch, k)`` for every distinct layer."""
        C = self.channels
        shapes = {"input": (1, C, self.in_kernel)}
        for s in range(1 if self.share_weights else self.scales):
            for j in range(self.stage_layers):
                shapes[self.stage_name(j, s)] = (C, C, self.stage_kernel)
        for s in range(self.scales - 1):
            shapes[f"fuse{s}"] = (2 * C, C, self.fuse_kernel)
        shapes["merge"] = (C, 1, 1)
        return shapes

    def stage_name(self, j, scale):
        return f"stage{j}" if self.share_weights else f"stage{j}_s{scale}"

    def check_input(self, shape):
        H, W = shape[-2:]
        div = 2 ** (self.scales - 1)
        if H % div or W % div:
            raise SpecError(f"input {H}x{W} is not divisible by {div} for {self.scales} scales")

    def dumps(self):
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in asdict(self).items())

    @classmethod
    def loads(cls, text):
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SpecError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise SpecError(f"line {lineno}: unknown key {key!r}")
            kw[key] = _parse(types[key], val, key)
        return cls(**kw)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.loads(fh.read())


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _parse(typ, val, key):
    name = typ if isinstance(typ, str) else typ.__name__
    try:
        if name == "bool":
            if val.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(val)
            return val.lower() in ("true", "1", "yes")
        if name == "int":
            return int(val)
        if name == "float":
            return float(val)
        return val
    except ValueError:
        raise SpecError(f"bad value for {key}: {val!r}") from None


class NetState(dict):
    """Mapping of layer name to :class:`NConvLayer`."""

    @property
    def n_params(self):
        return sum(layer.n_params for layer in self.values())

    def params(self):
        """Flat ``name.weight`` / ``name.bias`` views of every parameter."""
        out = {}
        for name, layer in self.items():
            out[f"{name}.weight"] = layer.weight
            out[f"{name}.bias"] = layer.bias
        return out

    def copy(self):
        return NetState(
            (n, NConvLayer(l.weight.copy(), l.bias.copy(), l.gamma, l.eps, l.conf_mode))
            for n, l in self.items()
        )


def build_state(spec, rng=None):
    rng = np.random.default_rng(rng)
    state = NetState()
    for name, (cin, cout, k) in spec.layer_shapes().items():
        state[name] = NConvLayer.init(cin, cout, k, gamma=spec.gamma, eps=spec.epsilon,
                                      rng=rng, conf_mode=spec.layer_conf_mode)
    return state


def count_params(spec):
    return sum(cin * cout * k * k + cout for cin, cout, k in spec.layer_shapes().values())


def check_state(spec, state):
    shapes = spec.layer_shapes()
    if set(shapes) != set(state):
        raise SpecError(f"state layers {sorted(state)} do not match spec layers {sorted(shapes)}")
    for name, (cin, cout, k) in shapes.items():
        if state[name].weight.shape != (cout, cin, k, k):
            raise SpecError(f"layer {name}: weight {state[name].weight.shape}, spec wants {(cout, cin, k, k)}")


# -- resampling ---------------------------------------------------------------

def conf_maxpool_down(sig, stride=2):
    """Pick, per channel and ``stride x stride`` block, the most confident pixel.

    Returns the pooled signal (confidence *not* rescaled) and the flat index
    of every selected pixel within its channel plane. Ties go to the first
    pixel in row-major block order.
    """
    ch, H, W = sig.shape
    if H % stride or W % stride:
        raise SpecError(f"{H}x{W} is not divisible by stride {stride}")
    h, w = H // stride, W // stride
    blocks = sig.c.reshape(ch, h, stride, w, stride).transpose(0, 1, 3, 2, 4).reshape(ch, h, w, -1)
    j = np.argmax(blocks, axis=3)
    dy, dx = np.divmod(j, stride)
    rows = np.arange(h)[:, None] * stride + dy
    cols = np.arange(w)[None, :] * stride + dx
    idx = rows * W + cols
    zf = sig.z.reshape(ch, -1)
    cf = sig.c.reshape(ch, -1)
    out = ConfSignal(np.take_along_axis(zf, idx.reshape(ch, -1), 1).reshape(ch, h, w),
                     np.take_along_axis(cf, idx.reshape(ch, -1), 1).reshape(ch, h, w))
    return out, idx


def jacobian_rescale(c, stride=2):
    """Divide confidences by the area Jacobian ``stride**2`` of downsampling."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return np.asarray(c, dtype=np.float64) / float(stride * stride)


def upsample_nearest(t, factor=2):
    return np.repeat(np.repeat(t, factor, axis=-2), factor, axis=-1)


def _upsample_adjoint(g, factor=2):
    ch, H, W = g.shape
    return g.reshape(ch, H // factor, factor, W // factor, factor).sum(axis=(2, 4))


def upsample_concat_fuse(coarse, fine, fuse_layer):
    out, _ = _fuse(coarse, fine, fuse_layer)
    return out


def _fuse(coarse, fine, layer):
    if (coarse.shape[1] * 2, coarse.shape[2] * 2) != fine.shape[1:]:
        raise SpecError(f"coarse {coarse.shape} does not upsample onto fine {fine.shape}")
    cat = ConfSignal(np.concatenate([fine.z, upsample_nearest(coarse.z)]),
                     np.concatenate([fine.c, upsample_nearest(coarse.c)]))
    return nconv_forward(layer, cat)


# -- forward / backward -------------------------------------------------------

def unguided_forward(spec, state, sig, tape=None):
    """Dense prediction and confidence for a single-channel sparse input.

    When ``tape`` is a list, the operations needed by
    :func:`unguided_backward` are appended to it.
    """
    if not isinstance(sig, ConfSignal):
        sig = ConfSignal(*sig)
    if sig.shape[0] != 1:
        raise SpecError(f"expected a single-channel input, got {sig.shape[0]} channels")
    spec.check_input(sig.shape)
    rec = tape.append if tape is not None else (lambda op: None)

    def layer(name, x):
        out, cache = nconv_forward(state[name], x)
        rec(("layer", name, cache))
        return out

    feats = []
    x = layer("input", sig)
    for s in range(spec.scales):
        if s > 0:
            x, idx = conf_maxpool_down(feats[-1])
            x = ConfSignal(x.z, jacobian_rescale(x.c))
            rec(("pool", idx, feats[-1].shape, s - 1))
        for j in range(spec.stage_layers):
            x = layer(spec.stage_name(j, s), x)
        feats.append(x)
    y = feats[-1]
    for s in range(spec.scales - 2, -1, -1):
        y, cache = _fuse(y, feats[s], state[f"fuse{s}"])
        rec(("fuse", f"fuse{s}", cache, feats[s].shape[0]))
    return layer("merge", y)


def unguided_backward(spec, state, tape, grad_z, grad_c):
    """Parameter gradients (``name.weight`` / ``name.bias``) and the input
    gradients (``input.z`` / ``input.c``) from a recorded forward tape."""
    grads = {k: np.zeros_like(v) for k, v in state.params().items()}
    gz = np.asarray(grad_z, dtype=np.float64)
    gc = np.asarray(grad_c, dtype=np.float64)
    skip = {}  # scale -> gradient of that scale's features from its fusion
    for op in reversed(tape):
        kind = op[0]
        if kind in ("layer", "fuse"):
            name, cache = op[1], op[2]
            gz, gc, gw, gb = nconv_backward(state[name], cache, gz, gc)
            grads[f"{name}.weight"] += gw
            grads[f"{name}.bias"] += gb
            if kind == "fuse":
                n_fine = op[3]
                skip[int(name[4:])] = (gz[:n_fine], gc[:n_fine])
                gz = _upsample_adjoint(gz[n_fine:])
                gc = _upsample_adjoint(gc[n_fine:])
        elif kind == "pool":
            _, idx, fine_shape, fine_scale = op
            ch = fine_shape[0]
            fz, fc = skip.pop(fine_scale)
            fz, fc = fz.copy(), fc.copy()
            flat = idx.reshape(ch, -1)
            # indices are unique per channel, so plain fancy-index accumulation is safe
            rows = np.arange(ch)[:, None]
            fz.reshape(ch, -1)[rows, flat] += gz.reshape(ch, -1)
            fc.reshape(ch, -1)[rows, flat] += jacobian_rescale(gc).reshape(ch, -1)
            gz, gc = fz, fc
        else:  # pragma: no cover
            raise AssertionError(kind)
    grads["input.z"] = gz
    grads["input.c"] = gc
    return grads
