"""ADAM and the epoch-driven training loop."""

import csv
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .layer import ConfSignal
from .losses import LossReport, confidence_loss, depth_metrics
from .net import NetSpec, NetState, build_state, check_state, unguided_backward, unguided_forward
from .tensor import read_nct, write_nct

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "data_term", "conf_term", "total", "mean_max_conf", "std_max_conf",
              "val_mae", "val_rmse")


class TrainingDiverged(ArithmeticError):
    pass


class Adam:
    """ADAM with bias-corrected moments. Updates parameter arrays in place."""

    def __init__(self, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        if not lr > 0:
            raise ValueError("learning rate must be positive")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"{name}: gradient {g.shape} does not match parameter {p.shape}")
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 0.01
    seed: int = 0
    loss: str = "conf"  # conf | huber | l2conf
    batch_size: int = 4
    delta: float = 1.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.loss not in ("conf", "huber", "l2conf"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class EpochLog:
    epoch: int
    data_term: float
    conf_term: float
    total: float
    mean_max_conf: float
    std_max_conf: float
    val_mae: float
    val_rmse: float

    def row(self):
        return [getattr(self, f) for f in LOG_FIELDS]


@dataclass
class TrainResult:
    spec: NetSpec
    state: NetState
    log: list = field(default_factory=list)
    optimizer: Adam = None


def ablation_spec(spec):
    """Unconstrained variant: identity weights, max-pooled confidence."""
    return replace(spec, gamma_kind="identity", conf_mode="maxpool")


def predict(spec, state, scene):
    return unguided_forward(spec, state, ConfSignal(scene.sparse, scene.conf))


def evaluate(spec, state, scenes):
    """Mean/std of the per-image max output confidence and pooled MAE/RMSE."""
    maxes, preds, gts, masks = [], [], [], []
    for sc in scenes:
        out = predict(spec, state, sc)
        maxes.append(float(out.c.max()))
        preds.append(out.z[0])
        gts.append(sc.gt)
        masks.append(sc.mask)
    m = depth_metrics(np.stack(preds), np.stack(gts), np.stack(masks))
    return float(np.mean(maxes)), float(np.std(maxes)), m


def _check_finite(value, name, it, arr=None):
    if np.isfinite(value):
        return
    where = ""
    if arr is not None:
        bad = np.argwhere(~np.isfinite(arr))
        if bad.size:
            where = f", first non-finite pixel {tuple(int(i) for i in bad[0])}"
    raise TrainingDiverged(f"non-finite {name} at iteration {it}{where}")


def train(spec, cfg, dataset, val_set=None, state=None, on_epoch=None):
    """Train the unguided network; returns a :class:`TrainResult`.

    ``val_set`` defaults to the training set for the per-epoch statistics.
    Deterministic for a fixed ``cfg.seed``.
    """
    if not dataset:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    if state is None:
        state = build_state(spec, rng)
    check_state(spec, state)
    val_set = dataset if val_set is None else val_set
    opt = Adam(cfg.lr)
    params = state.params()
    result = TrainResult(spec, state, [], opt)
    it = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(dataset))
        sums = np.zeros(3)
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            grads = {k: np.zeros_like(v) for k, v in params.items()}
            bsum = np.zeros(3)
            for i in batch:
                sc = dataset[i]
                tape = []
                out = unguided_forward(spec, state, ConfSignal(sc.sparse, sc.conf), tape)
                rep, gZ, gC = confidence_loss(out.z[0], out.c[0], sc.gt, sc.mask, epoch,
                                              cfg.loss, cfg.delta)
                _check_finite(rep.total, "loss", it, out.z)
                g = unguided_backward(spec, state, tape, gZ[None] / len(batch), gC[None] / len(batch))
                for k in grads:
                    grads[k] += g[k]
                bsum += (rep.data_term, rep.conf_term, rep.total)
            for k, g in grads.items():
                _check_finite(float(np.sum(g)), f"gradient of {k}", it)
            opt.step(params, grads)
            sums += bsum / len(batch)
            n_batches += 1
            it += 1
        if spec.gamma_kind != "identity":
            for name, layer in state.items():
                if not np.all(layer.applicability() > 0):
                    raise AssertionError(f"applicability of {name} lost positivity in epoch {epoch}")
        mean_c, std_c, metrics = evaluate(spec, state, val_set)
        data, conf, total = sums / n_batches
        row = EpochLog(epoch, data, conf, total, mean_c, std_c, metrics.mae, metrics.rmse)
        result.log.append(row)
        log.info("epoch %d  data %.4f  conf %.4f  total %.4f  maxconf %.4f  val_mae %.4f",
                 epoch, data, conf, total, mean_c, metrics.mae)
        if on_epoch is not None:
            on_epoch(row)
    return result


def write_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_FIELDS)
        for r in rows:
            w.writerow([r.epoch] + [repr(float(v)) for v in r.row()[1:]])


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(path, spec, state):
    """Directory with ``spec.cfg``, ``layers.cfg`` and one NCT1 file per tensor."""
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "spec.cfg"), "w") as fh:
        fh.write(spec.dumps())
    lines = []
    for name, layer in state.items():
        write_nct(os.path.join(path, f"{name}.weight.nct"), layer.weight)
        write_nct(os.path.join(path, f"{name}.bias.nct"), layer.bias)
        o, i, kh, kw = layer.weight.shape
        lines.append(f"[{name}]\nshape = {o} {i} {kh} {kw}\ngamma = {layer.gamma.kind}\n"
                     f"beta = {layer.gamma.beta!r}\nepsilon = {layer.eps!r}\nconf_mode = {layer.conf_mode}\n")
    with open(os.path.join(path, "layers.cfg"), "w") as fh:
        fh.write("\n".join(lines))


def load_checkpoint(path):
    spec = NetSpec.load(os.path.join(path, "spec.cfg"))
    state = build_state(spec, 0)
    for name, layer in state.items():
        w = read_nct(os.path.join(path, f"{name}.weight.nct"))
        b = read_nct(os.path.join(path, f"{name}.bias.nct"))
        if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
            raise ValueError(f"checkpoint layer {name}: weight {w.shape} does not match spec {layer.weight.shape}")
        layer.weight[...] = w
        layer.bias[...] = b
    return spec, state
