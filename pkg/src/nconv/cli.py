"""Command-line interface: ``nconv {synth,train,infer,eval,gradcheck,dump-filters}``.

Results go to stdout and diagnostics to stderr. Exit status is 0 on success,
1 for usage errors and 2 for runtime failures.
"""

import argparse
import logging
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import data, gradcheck
from .layer import ConfSignal
from .losses import confidence_loss, depth_metrics
from .net import NetSpec, SpecError, build_state, check_state, unguided_backward, unguided_forward
from .tensor import write_nct
from .train import (TrainConfig, ablation_spec, load_checkpoint, save_checkpoint, train,
                    write_log)

log = logging.getLogger("nconv")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _hw(text):
    parts = text.lower().replace("x", " ").split()
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size {text!r}") from None
    if len(vals) == 1:
        vals *= 2
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"bad size {text!r}")
    return tuple(vals)


def build_parser():
    p = _Parser(prog="nconv", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic sparse-depth dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=20)
    s.add_argument("--hw", type=_hw, default=(64, 64))
    s.add_argument("--density", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("train", help="train the unguided network")
    s.add_argument("--data", required=True)
    s.add_argument("--spec")
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=30)
    s.add_argument("--lr", type=float, default=0.01)
    s.add_argument("--loss", choices=("conf", "huber", "l2conf"), default="conf")
    s.add_argument("--gamma", choices=("softplus", "identity"))
    s.add_argument("--beta", type=float)
    s.add_argument("--batch-size", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("infer", help="densify one sparse depth map")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--conf", required=True)
    s.add_argument("--out-depth", required=True)
    s.add_argument("--out-conf", required=True)

    s = sub.add_parser("eval", help="print mae,rmse,imae,irmse,n")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--mask")

    s = sub.add_parser("gradcheck", help="finite-difference check of the full network loss")
    s.add_argument("--spec")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=gradcheck.TOL_END_TO_END)

    s = sub.add_parser("dump-filters", help="export learned applicabilities")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True)
    return p


def _need_file(path, flag):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{flag} {path}: no such file")


def _load_spec(path):
    if path is None:
        return NetSpec()
    _need_file(path, "--spec")
    return NetSpec.load(path)


def cmd_synth(a):
    h, w = a.hw
    scenes = data.synth_dataset(a.n, h, w, a.density, a.seed)
    for i, sc in enumerate(scenes):
        data.save_scene(a.out, i, sc)
    log.info("wrote %d scenes to %s", len(scenes), a.out)


def cmd_train(a):
    if not os.path.isdir(a.data):
        raise FileNotFoundError(f"--data {a.data}: no such directory")
    spec = _load_spec(a.spec)
    if a.beta is not None:
        spec = replace(spec, beta=a.beta)
    if a.gamma == "identity":
        spec = ablation_spec(spec)
    elif a.gamma == "softplus":
        spec = replace(spec, gamma_kind="softplus", conf_mode="")
    scenes = data.load_dataset(a.data)
    cfg = TrainConfig(a.epochs, a.lr, a.seed, a.loss, a.batch_size)
    res = train(spec, cfg, scenes)
    save_checkpoint(a.out, spec, res.state)
    write_log(os.path.join(a.out, "train_log.csv"), res.log)
    log.info("checkpoint written to %s", a.out)


def cmd_infer(a):
    for path, flag in ((a.inp, "--in"), (a.conf, "--conf")):
        _need_file(path, flag)
    if not os.path.isdir(a.ckpt):
        raise FileNotFoundError(f"--ckpt {a.ckpt}: no such directory")
    spec, state = load_checkpoint(a.ckpt)
    sparse = data.read_pgm16(a.inp)
    conf = data.read_pgm16(a.conf, data.CONF_SCALE)
    if sparse.shape != conf.shape:
        raise SpecError(f"--conf {a.conf}: shape {conf.shape} differs from --in {sparse.shape}")
    out = unguided_forward(spec, state, ConfSignal(sparse, conf))
    max_depth = data.MAXVAL * data.DEPTH_SCALE
    data.write_pgm16(a.out_depth, np.clip(out.z[0], 0.0, max_depth))
    # confidence can exceed 1 by eps / sum(A); the file format stores [0, 1]
    data.write_pgm16(a.out_conf, np.clip(out.c[0], 0.0, 1.0), data.CONF_SCALE)


def cmd_eval(a):
    _need_file(a.pred, "--pred")
    _need_file(a.gt, "--gt")
    pred = data.read_pgm16(a.pred)
    gt = data.read_pgm16(a.gt)
    if pred.shape != gt.shape:
        raise SpecError(f"--pred {a.pred}: shape {pred.shape} differs from --gt {gt.shape}")
    if a.mask:
        _need_file(a.mask, "--mask")
        mask = data.read_pgm16(a.mask, 1.0) > 0
    else:
        mask = gt > 0
    print(depth_metrics(pred, gt, mask).csv())


E2E_STEP = 1e-4


def network_gradcheck(spec, seed, tol=gradcheck.TOL_END_TO_END, h=E2E_STEP, size=None):
    """Finite-difference check of the confidence loss of a random network.

    Uses the five-point stencil: the loss passes through many quotients, so
    the two-point rounding floor would swamp the smallest true gradients.
    """
    rng = np.random.default_rng(seed)
    state = build_state(spec, rng)
    # keep beta*w of order one: deeper in the SoftPlus tail the true gradient
    # falls below what central differences can resolve
    wscale = 1.0 / spec.beta if spec.gamma_kind == "softplus" else 1.0
    for layer in state.values():
        layer.weight[...] = rng.normal(size=layer.weight.shape) * wscale
        layer.bias[...] = rng.normal(size=layer.bias.shape)
    n = size or max(8, 2 ** (spec.scales - 1) * 2)
    z = rng.uniform(1.0, 5.0, size=(1, n, n))
    c = rng.uniform(0.0, 1.0, size=(1, n, n))
    target = rng.uniform(1.0, 5.0, size=(n, n))
    epoch = int(rng.integers(1, 5))

    def fn(params):
        tape = []
        out = unguided_forward(spec, state, ConfSignal(z, c), tape)
        rep, gz, gc = confidence_loss(out.z[0], out.c[0], target, epoch=epoch)
        return rep.total, unguided_backward(spec, state, tape, gz[None], gc[None])

    def value(params):
        out = unguided_forward(spec, state, ConfSignal(z, c))
        return confidence_loss(out.z[0], out.c[0], target, epoch=epoch)[0].total

    return gradcheck.check(fn, state.params(), h=h, tol=tol, order=4, value_fn=value)


def cmd_gradcheck(a):
    spec = _load_spec(a.spec)
    rep = network_gradcheck(spec, a.seed, a.tol)
    print(rep)
    return 0 if rep.passed else 2


def _tile(A):
    o, i, kh, kw = A.shape
    img = np.zeros((o * (kh + 1) - 1, i * (kw + 1) - 1))
    for r in range(o):
        for s in range(i):
            img[r * (kh + 1):r * (kh + 1) + kh, s * (kw + 1):s * (kw + 1) + kw] = A[r, s]
    return img


def cmd_dump_filters(a):
    if not os.path.isdir(a.ckpt):
        raise FileNotFoundError(f"--ckpt {a.ckpt}: no such directory")
    spec, state = load_checkpoint(a.ckpt)
    os.makedirs(a.out, exist_ok=True)
    for name, layer in state.items():
        A = layer.applicability()
        write_nct(os.path.join(a.out, f"{name}.nct"), A)
        img = _tile(A)
        lo, hi = img.min(), img.max()
        norm = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
        data.write_pgm16(os.path.join(a.out, f"{name}.pgm"), norm, data.CONF_SCALE)
        print(f"{name}: {A.shape[0]}x{A.shape[1]}x{A.shape[2]}x{A.shape[3]}  sum {A.sum():.4g}  "
              f"min {A.min():.4g}  max {A.max():.4g}")


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "dump-filters": cmd_dump_filters,
}


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"nconv: usage error: {e}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args) or 0
    except (OSError, ValueError, ArithmeticError) as e:
        print(f"nconv {args.command}: error: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
