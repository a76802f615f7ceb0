"""Hot memory-bound kernels, numba-jitted when numba is available.

Pure-numpy fallbacks keep the package importable without numba; results
are bitwise identical either way (copies, fixed-order adds and elementwise
maps only — no cross-thread reductions).
"""

from __future__ import annotations

import os

import numpy as np

os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False


if HAVE_NUMBA:

    @njit(cache=True, parallel=True, fastmath=False)
    def _im2col_jit(p, cols, kh, kw, h, w):
        n = p.shape[0]
        c = p.shape[3]
        k = kh * kw
        for ni in prange(n):
            for i in range(h):
                for j in range(w):
                    row = (ni * h + i) * w + j
                    for u in range(kh):
                        for v in range(kw):
                            base = (u * kw + v) * c
                            for ci in range(c):
                                cols[row, base + ci] = p[ni, i + u, j + v, ci]

    @njit(cache=True, parallel=True, fastmath=False)
    def _col2im_jit(dcols, dp, kh, kw, h, w):
        n = dp.shape[0]
        c = dp.shape[3]
        for ni in prange(n):
            for i in range(h):
                for j in range(w):
                    row = (ni * h + i) * w + j
                    for u in range(kh):
                        for v in range(kw):
                            base = (u * kw + v) * c
                            for ci in range(c):
                                dp[ni, i + u, j + v, ci] += dcols[row, base + ci]

    @njit(cache=True, parallel=True, fastmath=False)
    def _leaky_fwd_jit(x, slope, out):
        for i in prange(x.size):
            v = x[i]
            out[i] = v if v > 0 else v * slope

    @njit(cache=True, parallel=True, fastmath=False)
    def _leaky_bwd_jit(dy, x, slope, out):
        for i in prange(x.size):
            out[i] = dy[i] if x[i] > 0 else dy[i] * slope

    @njit(cache=True, parallel=True, fastmath=False)
    def _pool_fwd_jit(x, m):
        n, h2, w2, c = m.shape
        for ni in prange(n):
            for i in range(h2):
                for j in range(w2):
                    for ci in range(c):
                        a = x[ni, 2 * i, 2 * j, ci]
                        b = x[ni, 2 * i, 2 * j + 1, ci]
                        d = x[ni, 2 * i + 1, 2 * j, ci]
                        e = x[ni, 2 * i + 1, 2 * j + 1, ci]
                        best = a
                        if b > best:
                            best = b
                        if d > best:
                            best = d
                        if e > best:
                            best = e
                        m[ni, i, j, ci] = best

    @njit(cache=True, parallel=True, fastmath=False)
    def _pool_bwd_jit(dy, x, m, dx):
        n, h2, w2, c = m.shape
        for ni in prange(n):
            for i in range(h2):
                for j in range(w2):
                    for ci in range(c):
                        top = m[ni, i, j, ci]
                        cnt = 0
                        for u in range(2):
                            for v in range(2):
                                if x[ni, 2 * i + u, 2 * j + v, ci] == top:
                                    cnt += 1
                        share = dy[ni, i, j, ci] / cnt
                        for u in range(2):
                            for v in range(2):
                                if x[ni, 2 * i + u, 2 * j + v, ci] == top:
                                    dx[ni, 2 * i + u, 2 * j + v, ci] = share
                                else:
                                    dx[ni, 2 * i + u, 2 * j + v, ci] = 0.0


def im2col_fill(p: np.ndarray, cols: np.ndarray, kh: int, kw: int, h: int, w: int) -> None:
    """cols (N*h*w, kh*kw*C) <- patches of the padded input p."""
    if HAVE_NUMBA:
        _im2col_jit(p, cols, kh, kw, h, w)
        return
    n, _, _, c = p.shape
    view = cols.reshape(n, h, w, kh, kw, c)
    for u in range(kh):
        for v in range(kw):
            view[:, :, :, u, v, :] = p[:, u : u + h, v : v + w, :]


def col2im_add(dcols: np.ndarray, dp: np.ndarray, kh: int, kw: int, h: int, w: int) -> None:
    """dp (padded) += scattered dcols (N*h*w, kh*kw*C); dp must be zeroed."""
    if HAVE_NUMBA:
        _col2im_jit(dcols, dp, kh, kw, h, w)
        return
    n, _, _, c = dp.shape
    view = dcols.reshape(n, h, w, kh, kw, c)
    for u in range(kh):
        for v in range(kw):
            dp[:, u : u + h, v : v + w, :] += view[:, :, :, u, v, :]


def _out_buffer(shape, dtype, scratch, key):
    if scratch is None:
        return np.empty(shape, dtype)
    return scratch.get(key, shape, dtype)


def leaky_forward(x: np.ndarray, slope: float, scratch=None, key: str = "") -> np.ndarray:
    if HAVE_NUMBA and x.flags.c_contiguous:
        out = _out_buffer(x.shape, x.dtype, scratch, key)
        _leaky_fwd_jit(x.reshape(-1), x.dtype.type(slope), out.reshape(-1))
        return out
    y = x * slope
    np.maximum(x, y, out=y)
    return y


def leaky_backward(dy: np.ndarray, x: np.ndarray, slope: float,
                   scratch=None, key: str = "") -> np.ndarray:
    if HAVE_NUMBA and x.flags.c_contiguous and dy.flags.c_contiguous:
        out = _out_buffer(x.shape, x.dtype, scratch, key)
        _leaky_bwd_jit(dy.reshape(-1), x.reshape(-1), x.dtype.type(slope),
                       out.reshape(-1))
        return out
    dx = dy * slope
    np.copyto(dx, dy, where=x > 0)
    return dx


def pool_forward(x: np.ndarray, scratch=None, key: str = "") -> np.ndarray:
    n, h, w, c = x.shape
    if HAVE_NUMBA and x.flags.c_contiguous:
        m = _out_buffer((n, h // 2, w // 2, c), x.dtype, scratch, key)
        _pool_fwd_jit(x, m)
        return m
    m = np.maximum(x[:, ::2, ::2, :], x[:, ::2, 1::2, :])
    np.maximum(m, x[:, 1::2, ::2, :], out=m)
    np.maximum(m, x[:, 1::2, 1::2, :], out=m)
    return m


def pool_backward(dy: np.ndarray, x: np.ndarray, m: np.ndarray,
                  scratch=None, key: str = "") -> np.ndarray:
    if HAVE_NUMBA and x.flags.c_contiguous:
        dx = _out_buffer(x.shape, x.dtype, scratch, key)
        _pool_bwd_jit(np.ascontiguousarray(dy), x, m, dx)
        return dx
    quadrants = ((0, 0), (0, 1), (1, 0), (1, 1))
    masks = [x[:, u::2, v::2, :] == m for u, v in quadrants]
    count = masks[0].astype(dy.dtype)
    for q in masks[1:]:
        count += q
    share = dy / count
    dx = np.empty_like(x)
    for (u, v), q in zip(quadrants, masks):
        dx[:, u::2, v::2, :] = share * q
    return dx
