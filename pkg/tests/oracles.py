"""Independent reference implementations used by the tests."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from vqct import tensor as T
from vqct.tensor import Tensor

EPS = 1e-5


def numeric_grad(f, arrays: list[np.ndarray], which: int, eps: float = EPS) -> np.ndarray:
    """Central differences of scalar ``f(*arrays)`` with respect to ``arrays[which]``."""
    x = arrays[which]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f(*arrays)
        x[i] = old - eps
        lo = f(*arrays)
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def gradcheck(op, arrays: list[np.ndarray], rng: np.random.Generator,
              eps: float = EPS) -> float:
    """Worst relative error between autodiff and finite differences.

    The op output is contracted with a fixed random weight so every output
    element contributes to the scalar being differentiated.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out_shape = op(*[Tensor(a) for a in arrays]).shape
    weight = rng.normal(size=out_shape)

    def scalar(*arrs):
        return float(np.sum(op(*[Tensor(a) for a in arrs]).data * weight))

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    T.sum(T.mul(op(*leaves), Tensor(weight))).backward()
    worst = 0.0
    for i, leaf in enumerate(leaves):
        num = numeric_grad(scalar, arrays, i, eps)
        ana = np.zeros_like(num) if leaf.grad is None else leaf.grad
        denom = max(np.max(np.abs(num)), np.max(np.abs(ana)), 1e-8)
        worst = max(worst, float(np.max(np.abs(ana - num)) / denom))
    return worst


def conv2d_loops(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Six nested loops, no vectorization."""
    b, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.zeros((b, c, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((b, o, ho, wo))
    for n in range(b):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ic in range(c):
                        for di in range(k):
                            for dj in range(k):
                                acc += xp[n, ic, i * stride + di, j * stride + dj] * w[oc, ic, di, dj]
                    out[n, oc, i, j] = acc
    return out


def nearest_scan(z: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Exhaustive scan on direct differences; ``argmin`` keeps the first (lowest) index on ties."""
    diff = z[:, None, :] - codebook[None, :, :]
    return np.argmin((diff * diff).sum(axis=-1), axis=1)


def nearest_scan_loops(z: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Same as :func:`nearest_scan` with explicit loops and a strict ``<``."""
    out = np.empty(len(z), dtype=np.int64)
    for n, v in enumerate(z):
        best, best_d = 0, np.inf
        for k, e in enumerate(codebook):
            d = float(np.sum((v - e) ** 2))
            if d < best_d:
                best, best_d = k, d
        out[n] = best
    return out


def _away_from_zero(rng, shape, gap=1e-2):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-300) * gap + x, x)


def _conv_case(stride, padding):
    def make(rng):
        b, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
        k = int(rng.choice([1, 2, 3]))
        h, w = int(rng.integers(k, 7)), int(rng.integers(k, 7))
        return [rng.normal(size=(b, c, h, w)), rng.normal(size=(o, c, k, k))]
    return lambda x, w: T.conv2d(x, w, stride, padding), make


def _gather_case():
    holder = {}

    def make(rng):
        k = int(rng.integers(2, 6))
        holder["idx"] = rng.integers(0, k, size=int(rng.integers(1, 9)))
        return [rng.normal(size=(k, int(rng.integers(1, 4))))]
    return (lambda t: T.gather_rows(t, holder["idx"])), make


def _spmm_case():
    holder = {}

    def make(rng):
        n, m = int(rng.integers(2, 6)), int(rng.integers(2, 6))
        a = rng.normal(size=(n, m)) * (rng.random((n, m)) < 0.6)
        holder["a"] = sp.csr_matrix(a)
        return [rng.normal(size=(m, int(rng.integers(1, 4))))]
    return (lambda h: T.spmm(holder["a"], h)), make


def _pair(rng, shape):
    return [rng.normal(size=shape), rng.normal(size=shape)]


def _rand_shape(rng, ndim=2):
    return tuple(int(v) for v in rng.integers(1, 5, size=ndim))


def op_cases():
    """``(name, op, make_inputs)`` for every differentiable primitive."""
    cases = [
        ("add", T.add, lambda r: _pair(r, _rand_shape(r, 3))),
        ("add_scalar", lambda a: T.add(a, 1.7), lambda r: [r.normal(size=_rand_shape(r))]),
        ("sub", T.sub, lambda r: _pair(r, _rand_shape(r, 3))),
        ("mul", T.mul, lambda r: _pair(r, _rand_shape(r, 3))),
        ("scale", lambda a: T.scale(a, -0.37), lambda r: [r.normal(size=_rand_shape(r))]),
        ("matmul", T.matmul, lambda r: (lambda n, k, m: [r.normal(size=(n, k)),
                                                         r.normal(size=(k, m))])(
            *(int(v) for v in r.integers(1, 6, size=3)))),
        ("add_bias", T.add_bias, lambda r: (lambda s: [r.normal(size=s),
                                                       r.normal(size=s[1])])(_rand_shape(r, 4))),
        ("relu", T.relu, lambda r: [_away_from_zero(r, _rand_shape(r, 3))]),
        ("sum", T.sum, lambda r: [r.normal(size=_rand_shape(r, 3))]),
        ("mean", T.mean, lambda r: [r.normal(size=_rand_shape(r, 3))]),
        ("mse", T.mse, lambda r: _pair(r, _rand_shape(r, 3))),
        ("reshape", lambda a: T.reshape(a, (-1,)), lambda r: [r.normal(size=_rand_shape(r, 3))]),
        ("permute", lambda a: T.permute(a, (2, 0, 3, 1)),
         lambda r: [r.normal(size=_rand_shape(r, 4))]),
        ("channel_split", lambda a: T.mul(*T.channel_split(a)),
         lambda r: [r.normal(size=(int(r.integers(1, 3)), 2 * int(r.integers(1, 3)), 2, 3))]),
        ("channel_concat", T.channel_concat,
         lambda r: [r.normal(size=(2, int(r.integers(1, 4)), 3, 2)),
                    r.normal(size=(2, int(r.integers(1, 4)), 3, 2))]),
        ("upsample_nearest2x", T.upsample_nearest2x, lambda r: [r.normal(size=_rand_shape(r, 4))]),
        ("slice_rows", lambda a: T.slice_rows(a, 1, 3), lambda r: [r.normal(size=(4, 3))]),
        ("gather_rows", *_gather_case()),
        ("spmm", *_spmm_case()),
        ("conv2d_s1_p0", *_conv_case(1, 0)),
        ("conv2d_s1_p1", *_conv_case(1, 1)),
        ("conv2d_s2_p1", *_conv_case(2, 1)),
    ]
    return cases
