"""Compare the compiled and numpy correlation kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--quick]

Times each kernel on layer-shaped problems, then one forward/backward pass of
the default network on a 64x64 scene, once per available backend. Results
are checked to agree before any timing is reported.
"""

import argparse
import timeit

import numpy as np

from nconv import _backend, _pykernels
from nconv.data import make_scene
from nconv.layer import ConfSignal
from nconv.losses import confidence_loss
from nconv.net import NetSpec, build_state, unguided_backward, unguided_forward

try:
    from nconv import _ckernels
except ImportError:  # extension not built
    _ckernels = None

# (in_ch, out_ch, H, W, k)
SHAPES = [
    (1, 2, 64, 64, 5),
    (2, 2, 64, 64, 5),
    (4, 2, 64, 64, 3),
    (2, 2, 256, 256, 5),
    (8, 8, 128, 128, 5),
]


def _best(fn, repeat):
    n, _ = timeit.Timer(fn).autorange()
    return min(timeit.repeat(fn, number=n, repeat=repeat)) / n


def bench_kernels(backends, repeat):
    r = np.random.default_rng(0)
    print(f"{'shape':<26}{'kernel':<13}" + "".join(f"{b.NAME:>12}" for b in backends) + "   speedup")
    for cin, cout, H, W, k in SHAPES:
        x = r.normal(size=(cin, H, W))
        w = r.normal(size=(cout, cin, k, k))
        g = r.normal(size=(cout, H, W))
        cases = {
            "correlate": lambda m: m.correlate(x, w),
            "weight_grad": lambda m: m.weight_grad(x, g, k, k),
            "input_grad": lambda m: m.input_grad(g, w),
        }
        for name, call in cases.items():
            ref = call(backends[0])
            for b in backends[1:]:
                np.testing.assert_allclose(call(b), ref, rtol=1e-10, atol=1e-10)
            times = [_best(lambda b=b: call(b), repeat) for b in backends]
            label = f"{cin}->{cout} {H}x{W} k{k}"
            speed = f"{times[0] / times[-1]:8.1f}x" if len(times) > 1 else ""
            print(f"{label:<26}{name:<13}" + "".join(f"{t * 1e3:10.3f}ms" for t in times) + speed)


def bench_network(backends, repeat):
    spec = NetSpec()
    state = build_state(spec, 0)
    sc = make_scene(0)
    sig = ConfSignal(sc.sparse, sc.conf)

    def step():
        tape = []
        out = unguided_forward(spec, state, sig, tape)
        _, gz, gc = confidence_loss(out.z[0], out.c[0], sc.gt, epoch=1)
        unguided_backward(spec, state, tape, gz[None], gc[None])

    times = []
    for b in backends:
        _backend.kernels = b
        times.append(_best(step, repeat))
    print()
    print("default network, 64x64 forward+backward: "
          + ", ".join(f"{b.NAME} {t * 1e3:.2f} ms" for b, t in zip(backends, times)))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--quick", action="store_true", help="skip the two largest shapes")
    a = p.parse_args()
    if a.quick:
        del SHAPES[3:]
    backends = [_pykernels] + ([_ckernels] if _ckernels is not None else [])
    if _ckernels is None:
        print("compiled extension not built; timing the numpy backend only")
    saved = _backend.kernels
    try:
        bench_kernels(backends, a.repeat)
        bench_network(backends, a.repeat)
    finally:
        _backend.kernels = saved


if __name__ == "__main__":
    main()
