"""Synthetic sparse-depth scenes, sparsification and 16-bit PGM I/O."""

import os
import re
from dataclasses import dataclass

import numpy as np

DEPTH_SCALE = 1.0 / 256.0  # meters per PGM count
CONF_SCALE = 1.0 / 65535.0
MAXVAL = 65535
SCENE_KINDS = ("planes", "steps", "sinusoid")


class PGMError(ValueError):
    pass


@dataclass
class Scene:
    gt: np.ndarray  # dense depth [H, W], meters
    sparse: np.ndarray
    conf: np.ndarray  # binary
    valid: np.ndarray = None  # ground-truth validity; None means all valid

    @property
    def mask(self):
        return np.ones(self.gt.shape, bool) if self.valid is None else self.valid


def synth_scene(seed, H=64, W=64, kind="planes"):
    """Piecewise-smooth depth map in [1, 80] m.

    ``planes``: a slanted background plane with 2-4 fronto-parallel and
    slanted rectangles in front of it. ``steps``: a slanted ramp cut into
    vertical bands with depth jumps. ``sinusoid``: a smooth surface without
    edges (gradient below 1 m/px).
    """
    if H < 16 or W < 16:
        raise ValueError("scenes must be at least 16x16")
    if kind not in SCENE_KINDS:
        raise ValueError(f"unknown scene kind {kind!r}; choose from {SCENE_KINDS}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    yn, xn = yy / (H - 1), xx / (W - 1)
    if kind == "sinusoid":
        base = rng.uniform(15.0, 40.0)
        amp = rng.uniform(3.0, 8.0)
        fy, fx = rng.uniform(0.5, 2.0, size=2)
        py, px = rng.uniform(0, 2 * np.pi, size=2)
        d = base + amp * np.sin(2 * np.pi * fy * yn + py) * np.cos(2 * np.pi * fx * xn + px)
        # keep the steepest slope under 1 m/px on small maps
        g = np.max(np.abs(np.gradient(d)))
        if g >= 0.9:
            d = base + (d - base) * 0.9 / g
    elif kind == "planes":
        # background stays >= 35 m and objects <= ~28 m: every object edge jumps >= 5 m
        d = rng.uniform(45.0, 70.0) + rng.uniform(-5, 5) * yn + rng.uniform(-5, 5) * xn
        for _ in range(rng.integers(2, 5)):
            h = rng.integers(H // 6, H // 2)
            w = rng.integers(W // 6, W // 2)
            y0 = rng.integers(0, H - h)
            x0 = rng.integers(0, W - w)
            near = rng.uniform(5.0, 25.0)
            tilt = rng.uniform(-0.1, 0.1, size=2)
            patch = near + tilt[0] * (yy - y0) + tilt[1] * (xx - x0)
            sel = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
            d = np.where(sel, np.minimum(d, patch), d)
    else:
        d = rng.uniform(20.0, 40.0) + rng.uniform(5, 20) * yn
        cuts = np.sort(rng.choice(np.arange(4, W - 4), size=rng.integers(2, 5), replace=False))
        level = 0.0
        for x0 in cuts:
            jump = rng.uniform(5.0, 12.0) * (1 if level <= 0 else -1)
            level += jump
            d = d + np.where(xx >= x0, jump, 0.0)
    return np.clip(d, 1.0, 80.0)


def sparsify(dense, density=0.05, seed=None):
    """Keep each pixel with probability ``density``; returns ``(sparse, conf)``."""
    if not 0 < density <= 1:
        raise ValueError("density must be in (0, 1]")
    rng = np.random.default_rng(seed)
    dense = np.asarray(dense, dtype=np.float64)
    conf = (rng.random(dense.shape) < density).astype(np.float64)
    return dense * conf, conf


def make_scene(seed, H=64, W=64, kind="planes", density=0.05):
    gt = synth_scene(seed, H, W, kind)
    sparse, conf = sparsify(gt, density, seed=(seed, 1))
    return Scene(gt, sparse, conf)


def synth_dataset(n, H=64, W=64, density=0.05, seed=0, kinds=SCENE_KINDS):
    """``n`` scenes cycling through ``kinds``; scene ``i`` is seeded by ``(seed, i)``."""
    return [make_scene(int(np.random.SeedSequence([seed, i]).generate_state(1)[0]), H, W,
                       kinds[i % len(kinds)], density) for i in range(n)]


# -- PGM ----------------------------------------------------------------------

def write_pgm16(path, t, scale=DEPTH_SCALE):
    """Write ``t / scale`` as a binary 16-bit PGM; values must round into [0, 65535]."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 2:
        raise ValueError("PGM images are 2-D")
    counts = np.rint(t / scale)
    if not np.all(np.isfinite(counts)) or counts.min() < 0 or counts.max() > MAXVAL:
        lo, hi = np.nanmin(counts), np.nanmax(counts)
        raise PGMError(f"values out of range for scale {scale:g}: counts span [{lo:g}, {hi:g}]")
    H, W = t.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{W} {H}\n{MAXVAL}\n".encode("ascii"))
        fh.write(counts.astype(">u2").tobytes())


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_pgm16(path, scale=DEPTH_SCALE):
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(blob, pos)
        if not m:
            raise PGMError(f"{path}: truncated header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise PGMError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        W, H, maxval = (int(v) for v in tokens[1:])
    except ValueError:
        raise PGMError(f"{path}: malformed header {tokens[1:]!r}") from None
    if W <= 0 or H <= 0 or not 0 < maxval <= MAXVAL:
        raise PGMError(f"{path}: bad dimensions or maxval ({W}x{H}, {maxval})")
    pos += 1  # single whitespace byte after maxval
    dtype = ">u2" if maxval > 255 else "u1"
    need = W * H * np.dtype(dtype).itemsize
    if len(blob) - pos < need:
        raise PGMError(f"{path}: expected {need} bytes of pixel data, found {len(blob) - pos}")
    counts = np.frombuffer(blob, dtype=dtype, count=W * H, offset=pos)
    return counts.astype(np.float64).reshape(H, W) * scale


def save_scene(root, index, scene):
    d = os.path.join(root, f"scene_{index:04d}")
    os.makedirs(d, exist_ok=True)
    gt = np.where(scene.mask, scene.gt, 0.0)
    write_pgm16(os.path.join(d, "gt.pgm"), gt)
    write_pgm16(os.path.join(d, "sparse.pgm"), scene.sparse)
    write_pgm16(os.path.join(d, "conf.pgm"), scene.conf, CONF_SCALE)


def load_scene(path):
    gt = read_pgm16(os.path.join(path, "gt.pgm"))
    sparse = read_pgm16(os.path.join(path, "sparse.pgm"))
    conf = read_pgm16(os.path.join(path, "conf.pgm"), CONF_SCALE)
    return Scene(gt, sparse, conf, gt > 0)


def load_dataset(root):
    names = sorted(n for n in os.listdir(root) if re.fullmatch(r"scene_\d{4}", n))
    if not names:
        raise FileNotFoundError(f"no scene_NNNN directories under {root}")
    return [load_scene(os.path.join(root, n)) for n in names]
