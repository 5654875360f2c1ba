"""Shared test oracles: brute-force convolution and finite differences."""

import numpy as np


def conv4d_loop_oracle(x, weights, bias, padding):
    """Six-deep explicit-loop 4D cross-correlation; the reference for GEMM paths."""
    n, ci, S, T, Y, X = x.shape
    co = weights.shape[0]
    a1, a2, k1, k2 = weights.shape[2:]
    pa1, pa2, ps1, ps2 = padding
    xp = np.pad(x, ((0, 0), (0, 0), (pa1, pa1), (pa2, pa2), (ps1, ps1), (ps2, ps2)))
    So, To = xp.shape[2] - a1 + 1, xp.shape[3] - a2 + 1
    Yo, Xo = xp.shape[4] - k1 + 1, xp.shape[5] - k2 + 1
    out = np.zeros((n, co, So, To, Yo, Xo))
    for b in range(n):
        for j in range(co):
            for s in range(So):
                for t in range(To):
                    for y in range(Yo):
                        for xx in range(Xo):
                            acc = bias[j]
                            for i in range(ci):
                                for u in range(a1):
                                    for v in range(a2):
                                        for m in range(k1):
                                            for p in range(k2):
                                                acc += (weights[j, i, u, v, m, p]
                                                        * xp[b, i, s + u, t + v, y + m, xx + p])
                            out[b, j, s, t, y, xx] = acc
    return out


def central_difference(loss_fn, arr, h=1e-6):
    """Central finite differences of a scalar loss w.r.t. every array element."""
    fd = np.zeros_like(arr, dtype=np.float64)
    it = np.nditer(arr, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + h
        lp = loss_fn()
        arr[idx] = orig - h
        lm = loss_fn()
        arr[idx] = orig
        fd[idx] = (lp - lm) / (2 * h)
        it.iternext()
    return fd


def rel_error(got, want):
    """Max-norm relative error with a floor that tolerates all-zero references."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    scale = max(np.max(np.abs(want)), 1e-12)
    return float(np.max(np.abs(got - want)) / scale)


def grad_close(got, fd, rtol=1e-4, atol=1e-6):
    """Gradient comparison robust to analytically-zero entries.

    Central differences carry ~1e-10 * |loss| of roundoff noise, so
    parameters whose true gradient is exactly zero (e.g. a bias feeding a
    train-mode normalization) need an absolute floor on top of the
    relative tolerance.
    """
    got = np.asarray(got, dtype=np.float64)
    fd = np.asarray(fd, dtype=np.float64)
    return float(np.max(np.abs(got - fd))) <= atol + rtol * float(np.max(np.abs(fd)))
