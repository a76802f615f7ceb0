"""Neural-network building blocks on plain numpy arrays.

Everything works on NHWC batches and is written forward/backward in
matched pairs. Convolutions are same-padded (zeros), stride 1, computed as
one GEMM per kernel tap so no im2col buffer is materialized. All ops are
deterministic for a fixed thread count; training dtype is float32, the
gradient-check tests run the same code in float64.
"""

from __future__ import annotations

import numpy as np

from . import _kernels


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    # N(0, 1/fan_in) as in the He scheme variant we target; biases are zeroed
    # by the callers.
    return (rng.standard_normal(shape) * np.sqrt(1.0 / fan_in)).astype(dtype)


class ScratchPool:
    """Reusable buffers for large training intermediates.

    Fresh multi-MB allocations fault in zero pages every batch, which
    dominates runtime on slow VMs; nets therefore own one pool and route
    their im2col/col2im buffers through it. Pooled arrays never escape a
    forward/backward pair: a cache is only valid until the next cached
    forward pass on the same net.
    """

    __slots__ = ("_bufs",)

    def __init__(self):
        self._bufs: dict[str, np.ndarray] = {}

    def get(self, key: str, shape: tuple, dtype) -> np.ndarray:
        buf = self._bufs.get(key)
        if buf is None or buf.shape != shape or buf.dtype != dtype:
            buf = np.empty(shape, dtype)
            self._bufs[key] = buf
        return buf


def _padded(x: np.ndarray, ph: int, pw: int, scratch: ScratchPool | None, key: str):
    n, h, w, c = x.shape
    if scratch is None:
        return np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    p = scratch.get(key, (n, h + 2 * ph, w + 2 * pw, c), x.dtype)
    p[:, :ph, :, :] = 0
    p[:, h + ph :, :, :] = 0
    p[:, ph : h + ph, :pw, :] = 0
    p[:, ph : h + ph, w + pw :, :] = 0
    p[:, ph : h + ph, pw : w + pw, :] = x
    return p


def im2col(x: np.ndarray, kh: int, kw: int,
           scratch: ScratchPool | None = None, key: str = "") -> np.ndarray:
    """Patch matrix (N*H*W, kh*kw*C) for same-padded stride-1 convolution."""
    n, h, w, c = x.shape
    if kh == 1 and kw == 1:
        return np.ascontiguousarray(x).reshape(n * h * w, c)
    p = _padded(x, kh // 2, kw // 2, scratch, key + ":pad")
    shape = (n * h * w, kh * kw * c)
    cols = np.empty(shape, x.dtype) if scratch is None else scratch.get(key + ":cols", shape, x.dtype)
    _kernels.im2col_fill(p, cols, kh, kw, h, w)
    return cols


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   want_cols: bool = False,
                   scratch: ScratchPool | None = None, key: str = ""):
    """x (N,H,W,Cin) * w (kh,kw,Cin,Cout) + b, same zero padding, stride 1.

    With want_cols=True also returns the im2col matrix so the backward pass
    can reuse it (one GEMM each way instead of nine).
    """
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = x.shape
    cols = im2col(x, kh, kw, scratch, key)
    wmat = w.reshape(kh * kw * cin, cout)
    if scratch is None:
        y = cols @ wmat
    else:
        y = scratch.get(key + ":y", (cols.shape[0], cout), x.dtype)
        np.matmul(cols, wmat, out=y)
    y += b
    y = y.reshape(n, h, wd, cout)
    return (y, cols) if want_cols else y


def conv2d_backward(dy: np.ndarray, cols: np.ndarray, w: np.ndarray, x_shape,
                    want_dx: bool = True, want_dw: bool = True,
                    scratch: ScratchPool | None = None, key: str = ""):
    """Gradients for conv2d_forward given its cached im2col matrix.

    Returns (dx, dw, db); dx or dw is None when not requested (the frozen
    embedder inside generator training only needs dx).
    """
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = x_shape
    dy2 = dy.reshape(-1, cout)
    db = dy2.sum(axis=0)
    dw = None
    if want_dw:
        dw = (cols.T @ dy2).reshape(kh, kw, cin, cout)
    if not want_dx:
        return None, dw, db
    wmat_t = np.ascontiguousarray(w.reshape(kh * kw * cin, cout).T)
    if kh == 1 and kw == 1:
        return (dy2 @ wmat_t).reshape(x_shape), dw, db
    if scratch is None:
        dcols = dy2 @ wmat_t
    else:
        dcols = scratch.get(key + ":dcols", (dy2.shape[0], kh * kw * cin), dy.dtype)
        np.matmul(dy2, wmat_t, out=dcols)
    ph, pw = kh // 2, kw // 2
    pshape = (n, h + 2 * ph, wd + 2 * pw, cin)
    if scratch is None:
        dp = np.zeros(pshape, dtype=dy.dtype)
    else:
        dp = scratch.get(key + ":dpad", pshape, dy.dtype)
        dp.fill(0)
    _kernels.col2im_add(dcols, dp, kh, kw, h, wd)
    dx = dp[:, ph : ph + h, pw : pw + wd, :]
    return dx, dw, db


def maxpool2_forward(x: np.ndarray, scratch: "ScratchPool | None" = None,
                     key: str = ""):
    """2x2 max pooling, stride 2; H and W must be even.

    Returns (y, x) so the backward pass can rebuild the winner masks; ties
    split the gradient equally (a valid subgradient, and deterministic).
    """
    return _kernels.pool_forward(x, scratch, key), x


def maxpool2_backward(dy: np.ndarray, x: np.ndarray, m: np.ndarray,
                      scratch: "ScratchPool | None" = None, key: str = "") -> np.ndarray:
    return _kernels.pool_backward(dy, x, m, scratch, key)


def leaky_relu_forward(x: np.ndarray, slope: float,
                       scratch: "ScratchPool | None" = None, key: str = "") -> np.ndarray:
    return _kernels.leaky_forward(x, slope, scratch, key)


def leaky_relu_backward(dy: np.ndarray, x: np.ndarray, slope: float,
                        scratch: "ScratchPool | None" = None, key: str = "") -> np.ndarray:
    return _kernels.leaky_backward(dy, x, slope, scratch, key)


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def dense_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray):
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def l2_normalize_forward(x: np.ndarray, eps: float) -> np.ndarray:
    """Row-wise x / sqrt(|x|^2 + eps)."""
    s = (x * x).sum(axis=1, keepdims=True) + np.asarray(eps, x.dtype)
    return x / np.sqrt(s)


def l2_normalize_backward(dy: np.ndarray, x: np.ndarray, eps: float) -> np.ndarray:
    s = (x * x).sum(axis=1, keepdims=True) + np.asarray(eps, x.dtype)
    r = 1.0 / np.sqrt(s)
    proj = (x * dy).sum(axis=1, keepdims=True)
    return r * dy - (r**3) * proj * x


def upsample2_forward(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbor 2x upsampling."""
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample2_backward(dy: np.ndarray) -> np.ndarray:
    n, h, w, c = dy.shape
    return dy.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


def sigmoid_forward(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid exp overflow
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dy * y * (1.0 - y)


class Adam:
    """Adaptive-moment optimizer over a named parameter dict."""

    def __init__(self, params: dict[str, np.ndarray], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name in self.params:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            self.params[name] -= np.asarray(self.lr, m.dtype) * update.astype(m.dtype)
