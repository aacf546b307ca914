"""Dense float64 arrays and the small set of kernels built on them.

Tensors are plain C-contiguous ``numpy.ndarray`` objects of dtype float64.
This module adds padding, same-size 2-D correlation and the ``NCT1`` binary
container used for checkpoints and filter dumps.
"""

import struct

import numpy as np

from . import _backend

MAGIC = b"NCT1"


class TensorFormatError(ValueError):
    pass


def as_tensor(data, shape=None):
    t = np.ascontiguousarray(data, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != t.size:
            raise ValueError(f"shape {shape} does not match {t.size} values")
        t = t.reshape(shape)
    return t


def pad(t, margins, mode="zero"):
    """Pad every axis of ``t`` by ``margins[axis] = (before, after)``.

    ``mode`` is ``"zero"`` or ``"replicate"`` (copy the nearest edge value).
    """
    t = np.asarray(t, dtype=np.float64)
    margins = [tuple(int(v) for v in m) for m in margins]
    if len(margins) != t.ndim:
        raise ValueError(f"need {t.ndim} margin pairs, got {len(margins)}")
    if any(v < 0 for m in margins for v in m):
        raise ValueError("margins must be non-negative")
    if mode == "zero":
        return np.pad(t, margins, mode="constant")
    if mode == "replicate":
        return np.pad(t, margins, mode="edge")
    raise ValueError(f"unknown padding mode {mode!r}")


def crop(t, margins):
    """Inverse of :func:`pad` for the same margins."""
    sl = tuple(slice(b, t.shape[ax] - a) for ax, (b, a) in enumerate(margins))
    return np.ascontiguousarray(t[sl])


def correlate2d(t, k, padding="zero"):
    """Same-size 2-D correlation ``out[i,j] = sum_{m,n} t_pad[i+m, j+n] k[m,n]``."""
    t = np.asarray(t, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if t.ndim != 2 or k.ndim != 2:
        raise ValueError("correlate2d expects 2-D arrays")
    kh, kw = k.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel extents must be odd, got {k.shape}")
    if padding == "zero":
        return _backend.correlate(t[None], k[None, None])[0]
    ph, pw = kh // 2, kw // 2
    tp = pad(t, [(ph, ph), (pw, pw)], padding)
    # the backend zero-pads internally; run on the explicitly padded map and crop
    full = _backend.correlate(tp[None], k[None, None])[0]
    return np.ascontiguousarray(full[ph:ph + t.shape[0], pw:pw + t.shape[1]])


def write_nct(path, t):
    t = np.asarray(t, dtype="<f8", order="C")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", t.ndim))
        fh.write(struct.pack(f"<{t.ndim}Q", *t.shape))
        fh.write(t.tobytes(order="C"))


def read_nct(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 8:
        raise TensorFormatError(f"{path}: truncated header")
    (rank,) = struct.unpack_from("<I", blob, 4)
    off = 8 + 8 * rank
    if len(blob) < off:
        raise TensorFormatError(f"{path}: truncated extents")
    shape = struct.unpack_from(f"<{rank}Q", blob, 8)
    count = int(np.prod(shape)) if rank else 1
    if len(blob) != off + 8 * count:
        raise TensorFormatError(f"{path}: expected {count} values, found {(len(blob) - off) / 8:g}")
    data = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
    return data.astype(np.float64).reshape(shape)
