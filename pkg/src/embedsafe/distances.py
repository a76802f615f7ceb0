"""Image and embedding distances with analytic gradients.

Five image distances are provided: L1 and L2 (per-pixel means), global
DSSIM, an edge-weighted Sobel distance, and a convex L1/Sobel combination.
Every distance comes with the exact gradient with respect to the predicted
image, which is what the generator trainer backpropagates.

Images may be (H, W) or (H, W, C); batch helpers take (N, H, W, C). All
per-pixel distances are normalized by W*H*C so different image sizes and
the combination weights stay on one scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError

# Sobel stencils, applied as cross-correlation (no kernel flip).
SOBEL_KX = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_KY = np.array([[1, 2, 1], [0, 0, 0], [-1, -2, -1]], dtype=np.float64)

DISTANCE_KINDS = ("l1", "l2", "dssim", "sobel", "combined")

# Standard SSIM stabilizers for dynamic range 1: (0.01)^2 and (0.03)^2.
DEFAULT_KAPPA1 = 1e-4
DEFAULT_KAPPA2 = 9e-4


@dataclass(frozen=True)
class ImageDistanceKind:
    """Selects one of the image distances plus its parameters."""

    kind: str = "l2"
    omega: float = 0.5  # combined only: weight of L1 vs Sobel
    kappa1: float = DEFAULT_KAPPA1  # dssim stabilizers
    kappa2: float = DEFAULT_KAPPA2

    def __post_init__(self):
        if self.kind not in DISTANCE_KINDS:
            raise ParameterError(f"unknown distance kind {self.kind!r}")
        if not 0.0 <= self.omega <= 1.0:
            raise ParameterError(f"omega must be in [0, 1], got {self.omega}")
        if self.kappa1 <= 0 or self.kappa2 <= 0:
            raise ParameterError("kappa1 and kappa2 must be > 0")


def _as_batch(img) -> np.ndarray:
    a = np.asarray(img)
    if a.ndim == 2:
        a = a[:, :, np.newaxis]
    if a.ndim != 3:
        raise DimensionError(f"expected (H, W) or (H, W, C) image, got shape {a.shape}")
    return a[np.newaxis]


def _check_pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p, t = _as_batch(pred), _as_batch(truth)
    if p.shape != t.shape:
        raise DimensionError(f"shape mismatch: pred {p.shape[1:]} vs truth {t.shape[1:]}")
    return p, t


# ---------------------------------------------------------------------------
# batch cores: (N, H, W, C) -> (N,) values or (N, H, W, C) gradients
# ---------------------------------------------------------------------------

def batch_l1(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    return np.abs(pred - truth).mean(axis=(1, 2, 3))


def batch_l2(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    d = pred - truth
    return (d * d).mean(axis=(1, 2, 3))


def _ssim_terms(pred, truth, kappa1, kappa2):
    ax = (1, 2, 3)
    mu_x = pred.mean(axis=ax, keepdims=True)
    mu_y = truth.mean(axis=ax, keepdims=True)
    xc = pred - mu_x
    yc = truth - mu_y
    var_x = (xc * xc).mean(axis=ax, keepdims=True)
    var_y = (yc * yc).mean(axis=ax, keepdims=True)
    cov = (xc * yc).mean(axis=ax, keepdims=True)
    a1 = 2.0 * mu_x * mu_y + kappa1
    a2 = 2.0 * cov + kappa2
    b1 = mu_x * mu_x + mu_y * mu_y + kappa1
    b2 = var_x + var_y + kappa2
    return mu_x, mu_y, xc, yc, a1, a2, b1, b2


def batch_dssim(pred, truth, kappa1=DEFAULT_KAPPA1, kappa2=DEFAULT_KAPPA2) -> np.ndarray:
    _, _, _, _, a1, a2, b1, b2 = _ssim_terms(pred, truth, kappa1, kappa2)
    ssim = (a1 * a2) / (b1 * b2)
    return ((1.0 - ssim) / 2.0).reshape(pred.shape[0])


def batch_sobel_mask(images: np.ndarray) -> np.ndarray:
    """Per-pixel gradient magnitude sqrt(gx^2 + gy^2), channels independent.

    Cross-correlation with edge-replicate padding. Taps are combined as
    paired differences so a constant image cancels exactly to a zero mask
    (no accumulation-order residue).
    """
    n, h, w, c = images.shape
    padded = np.pad(images, ((0, 0), (1, 1), (1, 1), (0, 0)), mode="edge")

    def win(u, v):
        return padded[:, u : u + h, v : v + w, :]

    gx = (win(0, 2) - win(0, 0)) + 2.0 * (win(1, 2) - win(1, 0)) + (win(2, 2) - win(2, 0))
    gy = (win(0, 0) - win(2, 0)) + 2.0 * (win(0, 1) - win(2, 1)) + (win(0, 2) - win(2, 2))
    return np.sqrt(gx * gx + gy * gy)


def batch_sobel(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    mask = batch_sobel_mask(truth)
    return (mask * np.abs(pred - truth)).mean(axis=(1, 2, 3))


def batch_combined(pred, truth, omega: float) -> np.ndarray:
    return omega * batch_l1(pred, truth) + (1.0 - omega) * batch_sobel(pred, truth)


def batch_image_distance(kind: ImageDistanceKind, pred, truth) -> np.ndarray:
    if kind.kind == "l1":
        return batch_l1(pred, truth)
    if kind.kind == "l2":
        return batch_l2(pred, truth)
    if kind.kind == "dssim":
        return batch_dssim(pred, truth, kind.kappa1, kind.kappa2)
    if kind.kind == "sobel":
        return batch_sobel(pred, truth)
    return batch_combined(pred, truth, kind.omega)


def batch_distance_gradient(kind: ImageDistanceKind, pred, truth) -> np.ndarray:
    """d(distance)/d(pred), one grid per batch item."""
    m = float(np.prod(pred.shape[1:]))
    if kind.kind == "l1":
        return np.sign(pred - truth) / m
    if kind.kind == "l2":
        return 2.0 * (pred - truth) / m
    if kind.kind == "sobel":
        return batch_sobel_mask(truth) * np.sign(pred - truth) / m
    if kind.kind == "combined":
        g_l1 = np.sign(pred - truth) / m
        g_sb = batch_sobel_mask(truth) * np.sign(pred - truth) / m
        return kind.omega * g_l1 + (1.0 - kind.omega) * g_sb
    # dssim: differentiate SSIM = a1*a2 / (b1*b2) through the global stats
    mu_x, mu_y, xc, yc, a1, a2, b1, b2 = _ssim_terms(pred, truth, kind.kappa1, kind.kappa2)
    ssim = (a1 * a2) / (b1 * b2)
    d_num = (2.0 * mu_y / m) * a2 + a1 * (2.0 * yc / m)
    d_den = (2.0 * mu_x / m) / b1 + (2.0 * xc / m) / b2
    d_ssim = d_num / (b1 * b2) - ssim * d_den
    return -0.5 * d_ssim


# ---------------------------------------------------------------------------
# single-image API
# ---------------------------------------------------------------------------

def l1_distance(pred, truth) -> float:
    """Mean absolute difference: sum |pred - truth| / (W*H*C)."""
    p, t = _check_pair(pred, truth)
    return float(batch_l1(p, t)[0])


def l2_distance(pred, truth) -> float:
    """Mean squared difference: sum (pred - truth)^2 / (W*H*C)."""
    p, t = _check_pair(pred, truth)
    return float(batch_l2(p, t)[0])


def dssim_distance(pred, truth, kappa1: float = DEFAULT_KAPPA1,
                   kappa2: float = DEFAULT_KAPPA2) -> float:
    """(1 - SSIM)/2 with global per-image means/variances/covariance."""
    if kappa1 <= 0 or kappa2 <= 0:
        raise ParameterError("kappa1 and kappa2 must be > 0")
    p, t = _check_pair(pred, truth)
    return float(batch_dssim(p, t, kappa1, kappa2)[0])


def sobel_mask(image) -> np.ndarray:
    """Edge map of one image, same shape as the input."""
    a = np.asarray(image)
    out = batch_sobel_mask(_as_batch(a))[0]
    return out[:, :, 0] if a.ndim == 2 else out


def sobel_distance(pred, truth) -> float:
    """Edge-weighted L1: sum S(truth) * |pred - truth| / (W*H*C).

    The mask comes from `truth` only, so this distance is intentionally
    asymmetric, and any pred scores 0 against a constant truth.
    """
    p, t = _check_pair(pred, truth)
    return float(batch_sobel(p, t)[0])


def combined_distance(pred, truth, omega: float = 0.5) -> float:
    """omega * l1_distance + (1 - omega) * sobel_distance."""
    if not 0.0 <= omega <= 1.0:
        raise ParameterError(f"omega must be in [0, 1], got {omega}")
    p, t = _check_pair(pred, truth)
    return float(batch_combined(p, t, omega)[0])


def image_distance(kind: ImageDistanceKind, pred, truth) -> float:
    p, t = _check_pair(pred, truth)
    return float(batch_image_distance(kind, p, t)[0])


def distance_gradient(kind: ImageDistanceKind, pred, truth) -> np.ndarray:
    """Partial derivatives of the selected distance w.r.t. every pred pixel.

    L1-style terms use subgradient 0 at exact ties, so pred == truth is a
    stationary point for every kind.
    """
    a = np.asarray(pred)
    p, t = _check_pair(pred, truth)
    g = batch_distance_gradient(kind, p, t)[0]
    return g[:, :, 0] if a.ndim == 2 else g


def embedding_distance(u, v) -> float:
    """Squared L2 distance; equals 2 - 2<u, v> on unit vectors, range [0, 4]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionError(f"embedding shapes differ: {u.shape} vs {v.shape}")
    d = u - v
    return float(d @ d)
