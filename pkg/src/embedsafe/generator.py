"""Distortion generator G and the composite trainer loop against a frozen F.

The generator is a small U-Net: per encoder level conv3x3 -> LeakyReLU ->
maxpool2, a conv bottleneck, then per decoder level nearest-upsample ->
skip concat -> conv3x3 -> LeakyReLU, finished by a 1x1 conv + sigmoid so
outputs stay in (0, 1). Training minimizes

    (1 - pi_emb) * (-d_img(G(X), X)) + pi_emb * ReLU(d_emb(F(G(X)), F(X)) - alpha)

with gradient steps on G only; F's weights are never touched.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import layers
from .distances import (
    ImageDistanceKind,
    batch_distance_gradient,
    batch_image_distance,
)
from .embedding import EmbeddingNet
from .errors import (
    ConfigError,
    DimensionError,
    EmbedSafeError,
    ParameterError,
    TrainingDivergedError,
    ValidationError,
)
from .mnist_data import Dataset


@dataclass(frozen=True)
class UNetArch:
    input_hw: tuple[int, int] = (28, 28)
    input_channels: int = 1
    channels: tuple[int, ...] = (32, 64)  # encoder levels, shallow to deep
    bottleneck: int = 128
    leaky_slope: float = 0.01

    def __post_init__(self):
        h, w = self.input_hw
        k = 2 ** len(self.channels)
        if h % k or w % k:
            raise ConfigError(f"input {h}x{w} not divisible by 2^{len(self.channels)} pooling")


def unet_param_shapes(arch: UNetArch) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    cin = arch.input_channels
    for i, cout in enumerate(arch.channels):
        shapes[f"enc{i}_w"] = (3, 3, cin, cout)
        shapes[f"enc{i}_b"] = (cout,)
        cin = cout
    shapes["bott_w"] = (3, 3, cin, arch.bottleneck)
    shapes["bott_b"] = (arch.bottleneck,)
    above = arch.bottleneck
    for i in reversed(range(len(arch.channels))):
        cout = arch.channels[i]
        shapes[f"dec{i}_w"] = (3, 3, above + cout, cout)
        shapes[f"dec{i}_b"] = (cout,)
        above = cout
    shapes["head_w"] = (1, 1, above, arch.input_channels)
    shapes["head_b"] = (arch.input_channels,)
    return shapes


class GeneratorNet:
    """U-Net image-to-image network with explicit backward pass."""

    kind = "generator"

    def __init__(self, arch: UNetArch, params: dict[str, np.ndarray]):
        self.arch = arch
        self.params = params
        self._scratch = layers.ScratchPool()

    @classmethod
    def init(cls, seed: int, arch: UNetArch = UNetArch(), dtype=np.float32) -> "GeneratorNet":
        rng = np.random.default_rng(seed)
        params: dict[str, np.ndarray] = {}
        for name, shape in unet_param_shapes(arch).items():
            if name.endswith("_b"):
                params[name] = np.zeros(shape, dtype)
            else:
                kh, kw, cin, _ = shape
                params[name] = layers.he_normal(rng, shape, kh * kw * cin, dtype)
        return cls(arch, params)

    @property
    def dtype(self):
        return self.params["bott_w"].dtype

    def forward(self, x: np.ndarray, want_cache: bool = False):
        p = self.params
        slope = self.arch.leaky_slope
        depth = len(self.arch.channels)
        cache: dict = {"enc_cols": [], "enc_in_shape": [], "enc_pre": [],
                       "enc_act": [], "enc_pooled": []}

        def conv(name: str, a: np.ndarray, cols_key: str | None = None,
                 shape_key: str | None = None):
            if not want_cache:
                return layers.conv2d_forward(a, p[f"{name}_w"], p[f"{name}_b"],
                                             scratch=self._scratch, key=name)
            pre, cols = layers.conv2d_forward(a, p[f"{name}_w"], p[f"{name}_b"],
                                              want_cols=True,
                                              scratch=self._scratch, key=f"{name}:t")
            if cols_key is None:
                cache[f"{name}_cols"] = cols
                cache[f"{name}_in_shape"] = a.shape
            else:
                cache[cols_key].append(cols)
                cache[shape_key].append(a.shape)
            return pre

        sfx = ":t" if want_cache else ""
        a = np.asarray(x, dtype=self.dtype)
        skips = []
        for i in range(depth):
            pre = conv(f"enc{i}", a, "enc_cols", "enc_in_shape")
            act = layers.leaky_relu_forward(pre, slope, self._scratch, f"eact{i}{sfx}")
            pooled, _ = layers.maxpool2_forward(act, self._scratch, f"epool{i}{sfx}")
            skips.append(act)
            if want_cache:
                cache["enc_pre"].append(pre)
                cache["enc_act"].append(act)
                cache["enc_pooled"].append(pooled)
            a = pooled
        bott_pre = conv("bott", a)
        h = layers.leaky_relu_forward(bott_pre, slope, self._scratch, f"bact{sfx}")
        if want_cache:
            cache["bott_pre"] = bott_pre
        dec_cols: list = [None] * depth
        dec_in_shape: list = [None] * depth
        dec_pre: list = [None] * depth
        for i in reversed(range(depth)):
            nb, hh, ww, cup = h.shape
            cskip = skips[i].shape[3]
            cat = self._scratch.get(f"cat{i}{sfx}", (nb, hh * 2, ww * 2, cup + cskip),
                                    h.dtype)
            for u in (0, 1):
                for v in (0, 1):
                    cat[:, u::2, v::2, :cup] = h
            cat[:, :, :, cup:] = skips[i]
            if want_cache:
                pre, cols = layers.conv2d_forward(cat, p[f"dec{i}_w"], p[f"dec{i}_b"],
                                                  want_cols=True,
                                                  scratch=self._scratch, key=f"dec{i}:t")
                dec_cols[i] = cols
                dec_in_shape[i] = cat.shape
                dec_pre[i] = pre
            else:
                pre = layers.conv2d_forward(cat, p[f"dec{i}_w"], p[f"dec{i}_b"],
                                            scratch=self._scratch, key=f"dec{i}")
            h = layers.leaky_relu_forward(pre, slope, self._scratch, f"dact{i}{sfx}")
        head_pre = conv("head", h)
        y = layers.sigmoid_forward(head_pre)
        if not want_cache:
            return y
        cache.update(dec_cols=dec_cols, dec_in_shape=dec_in_shape, dec_pre=dec_pre,
                     out=y)
        return y, cache

    def backward(self, cache: dict, dy: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients for d(loss)/d(output image) = dy."""
        p = self.params
        slope = self.arch.leaky_slope
        depth = len(self.arch.channels)
        grads: dict[str, np.ndarray] = {}
        dhead_pre = layers.sigmoid_backward(dy, cache["out"])
        da, grads["head_w"], grads["head_b"] = layers.conv2d_backward(
            dhead_pre, cache["head_cols"], p["head_w"], cache["head_in_shape"],
            scratch=self._scratch, key="head:b",
        )
        skip_grads: list = [None] * depth
        for i in range(depth):  # shallow decoder level was applied last
            dpre = layers.leaky_relu_backward(da, cache["dec_pre"][i], slope,
                                              self._scratch, f"bdact{i}")
            dcat, grads[f"dec{i}_w"], grads[f"dec{i}_b"] = layers.conv2d_backward(
                dpre, cache["dec_cols"][i], p[f"dec{i}_w"], cache["dec_in_shape"][i],
                scratch=self._scratch, key=f"dec{i}:b",
            )
            c_above = self.arch.bottleneck if i == depth - 1 else self.arch.channels[i + 1]
            skip_grads[i] = dcat[..., c_above:]
            da = layers.upsample2_backward(dcat[..., :c_above])
        dbott_pre = layers.leaky_relu_backward(da, cache["bott_pre"], slope,
                                               self._scratch, "bdbact")
        dp, grads["bott_w"], grads["bott_b"] = layers.conv2d_backward(
            dbott_pre, cache["bott_cols"], p["bott_w"], cache["bott_in_shape"],
            scratch=self._scratch, key="bott:b",
        )
        for i in reversed(range(depth)):
            dact = layers.maxpool2_backward(dp, cache["enc_act"][i], cache["enc_pooled"][i],
                                            self._scratch, f"bdpool{i}")
            dact += skip_grads[i]
            dpre = layers.leaky_relu_backward(dact, cache["enc_pre"][i], slope,
                                              self._scratch, f"bdeact{i}")
            dp, grads[f"enc{i}_w"], grads[f"enc{i}_b"] = layers.conv2d_backward(
                dpre, cache["enc_cols"][i], p[f"enc{i}_w"], cache["enc_in_shape"][i],
                want_dx=(i > 0),
                scratch=self._scratch, key=f"enc{i}:b",
            )
        return grads

    def _check_images(self, images: np.ndarray) -> np.ndarray:
        x = np.asarray(images)
        expect = (*self.arch.input_hw, self.arch.input_channels)
        if x.shape[1:] != expect:
            raise DimensionError(f"expected images of shape {expect}, got {x.shape[1:]}")
        return x

    def distort_batch(self, images: np.ndarray, chunk: int = 256) -> np.ndarray:
        """Apply G to (N, H, W, C) images; output clamped into open (0, 1)."""
        x = self._check_images(images)
        outs = [self.forward(x[i : i + chunk]) for i in range(0, x.shape[0], chunk)]
        y = np.concatenate(outs, axis=0) if len(outs) > 1 else outs[0]
        tiny = np.finfo(y.dtype).eps
        return np.clip(y, tiny, 1.0 - tiny)

    def distort(self, image: np.ndarray) -> np.ndarray:
        img = np.asarray(image)
        if img.ndim == 2:
            img = img[:, :, np.newaxis]
        return self.distort_batch(img[np.newaxis])[0]


class IdentityGenerator:
    """Test double / control: distortion that returns its input unchanged."""

    kind = "identity"

    def __init__(self, arch: UNetArch = UNetArch()):
        self.arch = arch
        self.params: dict[str, np.ndarray] = {}

    def distort_batch(self, images: np.ndarray, chunk: int = 256) -> np.ndarray:
        return np.asarray(images).copy()

    def distort(self, image: np.ndarray) -> np.ndarray:
        img = np.asarray(image)
        if img.ndim == 2:
            img = img[:, :, np.newaxis]
        return img.copy()


def distort(gen, image: np.ndarray) -> np.ndarray:
    return gen.distort(image)


@dataclass
class GeneratorTrainConfig:
    alpha: float = 0.3
    pi_emb: float = 0.9
    distance: ImageDistanceKind = field(default_factory=lambda: ImageDistanceKind("l2"))
    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if not 0.0 <= self.pi_emb <= 1.0:
            raise ConfigError(f"pi_emb must be in [0, 1], got {self.pi_emb}")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("learning_rate > 0, batch_size >= 1, epochs >= 0 required")


def combine_components(d_img: float, d_emb: float, pi_emb: float, alpha: float):
    """(total, l_img, l_emb) from the two measured distances."""
    l_img = -d_img
    l_emb = max(0.0, d_emb - alpha)
    return (1.0 - pi_emb) * l_img + pi_emb * l_emb, l_img, l_emb


def trainer_loss(image: np.ndarray, gen: GeneratorNet, emb: EmbeddingNet,
                 config: GeneratorTrainConfig):
    """Composite loss for one image; returns (total, l_img, l_emb)."""
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[:, :, np.newaxis]
    x = img[np.newaxis]
    y = gen.forward(x)
    d_img = float(batch_image_distance(config.distance, y, x)[0])
    fx = emb.forward(x)
    fy = emb.forward(y)
    d_emb = float(((fy - fx) ** 2).sum())
    return combine_components(d_img, d_emb, config.pi_emb, config.alpha)


def trainer_output_gradient(y: np.ndarray, x: np.ndarray, emb: EmbeddingNet,
                            config: GeneratorTrainConfig) -> np.ndarray:
    """d(mean trainer loss)/d(generated pixels) for a batch.

    This is the quantity fed into the U-Net backward pass: the analytic
    image-distance gradient plus the embedding hinge pushed back through
    the frozen embedder.
    """
    b = y.shape[0]
    fx = emb.forward(x)
    fy, fcache = emb.forward(y, want_cache=True)
    diff = fy - fx
    d_emb = (diff * diff).sum(axis=1)
    active = (d_emb - config.alpha) > 0
    dy = (-(1.0 - config.pi_emb) / b) * batch_distance_gradient(config.distance, y, x)
    coeff = (config.pi_emb / b) * active.astype(diff.dtype)
    demb = 2.0 * diff * coeff[:, np.newaxis]
    dy = dy.astype(y.dtype) + emb.input_gradient(fcache, demb)
    return dy


def _params_digest(params: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in params:
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name]).tobytes())
    return h.hexdigest()


@dataclass
class GeneratorEpochStats:
    total: float
    l_img: float
    l_emb: float


def train_generator(dataset: Dataset, emb: EmbeddingNet, config: GeneratorTrainConfig,
                    arch: UNetArch = UNetArch()):
    """Adam-train G against the frozen embedder.

    Returns (gen, per-epoch GeneratorEpochStats). The embedder is read-only
    throughout; a digest check enforces that. NaN/Inf batch losses abort
    with a diagnosis, and a vanishing-distortion plateau emits a warning.
    """
    if len(dataset) == 0:
        raise ConfigError("generator training needs a nonempty dataset")
    for name, value in emb.params.items():
        if not np.all(np.isfinite(value)):
            raise ValidationError(f"embedding parameter {name} contains NaN/Inf")
    emb_digest = _params_digest(emb.params)
    gen = GeneratorNet.init(config.seed, arch)
    trace: list[GeneratorEpochStats] = []
    if config.epochs == 0:
        return gen, trace
    rng = np.random.default_rng(config.seed)
    opt = layers.Adam(gen.params, config.learning_rate)
    imgs = dataset.images
    n = imgs.shape[0]
    # frozen embedder: target embeddings F(X) never change, compute them once
    fx_all = np.concatenate([emb.forward(imgs[i : i + 512]) for i in range(0, n, 512)])
    plateau = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, config.batch_size):
            sel = order[start : start + config.batch_size]
            x = imgs[sel]
            b = x.shape[0]
            y, gcache = gen.forward(x, want_cache=True)
            d_img = batch_image_distance(config.distance, y, x)
            fx = fx_all[sel]
            fy, fcache = emb.forward(y, want_cache=True)
            diff = fy - fx
            d_emb = (diff * diff).sum(axis=1)
            l_img = -d_img
            l_emb = np.maximum(d_emb - config.alpha, 0.0)
            total = (1.0 - config.pi_emb) * l_img + config.pi_emb * l_emb
            if not np.all(np.isfinite(total)):
                raise TrainingDivergedError(
                    "NaN/Inf generator loss: exploding gradients; lower the "
                    "learning rate or rebalance pi_emb/alpha"
                )
            sums += (total.sum(), l_img.sum(), l_emb.sum())
            dy = (-(1.0 - config.pi_emb) / b) * batch_distance_gradient(config.distance, y, x)
            coeff = (config.pi_emb / b) * ((d_emb - config.alpha) > 0).astype(diff.dtype)
            dy = dy.astype(y.dtype) + emb.input_gradient(fcache, 2.0 * diff * coeff[:, np.newaxis])
            opt.step(gen.backward(gcache, dy))
        stats = GeneratorEpochStats(*(sums / n))
        trace.append(stats)
        plateau = plateau + 1 if (abs(stats.l_img) < 0.05 and stats.l_emb < 1e-6) else 0
        if plateau == 3:
            warnings.warn(
                "distortion stalled (|l_img| < 0.05 with l_emb ~ 0 for 3 epochs): "
                "likely identity/gamma-shift collapse; rebalance pi_emb and alpha",
                RuntimeWarning,
            )
    if _params_digest(emb.params) != emb_digest:
        raise ValidationError("embedding parameters changed during generator training")
    return gen, trace


@dataclass
class MarginSweepEntry:
    alpha: float
    mean_d_img: float
    mean_d_emb: float
    samples: np.ndarray | None  # a few distorted held-out images
    error: str | None = None


def margin_sweep(dataset: Dataset, emb: EmbeddingNet, alphas, base: GeneratorTrainConfig,
                 arch: UNetArch = UNetArch(), heldout_fraction: float = 0.1,
                 sample_count: int = 3) -> list[MarginSweepEntry]:
    """Retrain G from scratch per alpha (shared seed) and score held-out data.

    Per entry: mean image distance (base config's kind) and mean embedding
    drift between F(G(X)) and F(X) on a seeded held-out slice. Failures are
    recorded on their row and the sweep continues.
    """
    alphas = list(alphas)
    if not alphas:
        raise ParameterError("alphas must be nonempty")
    if any(a < 0 for a in alphas):
        raise ParameterError("every alpha must be >= 0")
    rng = np.random.default_rng(base.seed)
    order = rng.permutation(len(dataset))
    n_held = max(1, int(round(heldout_fraction * len(dataset))))
    held = dataset.images[np.sort(order[:n_held])]
    train = Dataset(
        images=dataset.images[np.sort(order[n_held:])],
        labels=dataset.labels[np.sort(order[n_held:])],
        split=dataset.split,
        seed=base.seed,
    )
    f_held = emb.forward(held)
    entries: list[MarginSweepEntry] = []
    for alpha in alphas:
        cfg = replace(base, alpha=float(alpha))
        try:
            gen, _ = train_generator(train, emb, cfg, arch)
            distorted = gen.distort_batch(held)
            d_img = float(batch_image_distance(cfg.distance, distorted, held).mean())
            drift = emb.forward(distorted) - f_held
            d_emb = float((drift * drift).sum(axis=1).mean())
            entries.append(MarginSweepEntry(float(alpha), d_img, d_emb,
                                            distorted[:sample_count].copy()))
        except EmbedSafeError as exc:
            entries.append(MarginSweepEntry(float(alpha), float("nan"), float("nan"),
                                            None, error=str(exc)))
    return entries
