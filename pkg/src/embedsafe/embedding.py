"""Embedding network F: image -> unit hypersphere, plus its triplet trainer.

Architecture (default): conv3x3x32 -> LeakyReLU(0.01) -> maxpool2 ->
conv3x3x64 -> LeakyReLU -> maxpool2 -> flatten -> dense 128 -> LeakyReLU
-> dense 10 -> L2 normalize with epsilon 1e-8. Channel counts, the hidden
width and the embedding dimension are configurable so the gradient-check
tests can run tiny double-precision variants of the same code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from .errors import ConfigError, DimensionError, ValidationError
from .mnist_data import Dataset, sample_triplet_indices


@dataclass(frozen=True)
class EmbedderArch:
    input_hw: tuple[int, int] = (28, 28)
    input_channels: int = 1
    channels: tuple[int, ...] = (32, 64)  # one 2x2 maxpool after each conv
    hidden: int = 128
    embed_dim: int = 10
    leaky_slope: float = 0.01
    norm_epsilon: float = 1e-8

    def __post_init__(self):
        h, w = self.input_hw
        k = 2 ** len(self.channels)
        if h % k or w % k:
            raise ConfigError(f"input {h}x{w} not divisible by 2^{len(self.channels)} pooling")

    @property
    def flat_dim(self) -> int:
        h, w = self.input_hw
        k = 2 ** len(self.channels)
        c = self.channels[-1] if self.channels else self.input_channels
        return (h // k) * (w // k) * c


def embedder_param_shapes(arch: EmbedderArch) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    cin = arch.input_channels
    for i, cout in enumerate(arch.channels):
        shapes[f"conv{i}_w"] = (3, 3, cin, cout)
        shapes[f"conv{i}_b"] = (cout,)
        cin = cout
    shapes["fc0_w"] = (arch.flat_dim, arch.hidden)
    shapes["fc0_b"] = (arch.hidden,)
    shapes["fc1_w"] = (arch.hidden, arch.embed_dim)
    shapes["fc1_b"] = (arch.embed_dim,)
    return shapes


class EmbeddingNet:
    """Convolutional embedder with hand-written forward/backward passes."""

    kind = "embedder"

    def __init__(self, arch: EmbedderArch, params: dict[str, np.ndarray]):
        self.arch = arch
        self.params = params
        self._scratch = layers.ScratchPool()

    @classmethod
    def init(cls, seed: int, arch: EmbedderArch = EmbedderArch(),
             dtype=np.float32) -> "EmbeddingNet":
        """He-initialized net; normal(0, 1/fan_in) weights, zero biases."""
        rng = np.random.default_rng(seed)
        params: dict[str, np.ndarray] = {}
        cin = arch.input_channels
        for i, cout in enumerate(arch.channels):
            params[f"conv{i}_w"] = layers.he_normal(rng, (3, 3, cin, cout), 9 * cin, dtype)
            params[f"conv{i}_b"] = np.zeros(cout, dtype)
            cin = cout
        params["fc0_w"] = layers.he_normal(rng, (arch.flat_dim, arch.hidden),
                                           arch.flat_dim, dtype)
        params["fc0_b"] = np.zeros(arch.hidden, dtype)
        params["fc1_w"] = layers.he_normal(rng, (arch.hidden, arch.embed_dim),
                                           arch.hidden, dtype)
        params["fc1_b"] = np.zeros(arch.embed_dim, dtype)
        return cls(arch, params)

    @property
    def dtype(self):
        return self.params["fc0_w"].dtype

    def forward(self, x: np.ndarray, want_cache: bool = False):
        """x (N, H, W, C) -> unit embeddings (N, m).

        Pooling runs on the conv pre-activations and LeakyReLU on the
        pooled grid; the activation is strictly increasing, so this equals
        activate-then-pool while touching a quarter of the data.
        """
        p = self.params
        slope = self.arch.leaky_slope
        cache: dict = {"conv_cols": [], "conv_in_shape": [], "conv_pre": [],
                       "pooled_pre": []}
        a = np.asarray(x, dtype=self.dtype)
        for i in range(len(self.arch.channels)):
            if want_cache:
                pre, cols = layers.conv2d_forward(a, p[f"conv{i}_w"], p[f"conv{i}_b"],
                                                  want_cols=True,
                                                  scratch=self._scratch, key=f"conv{i}:t")
                cache["conv_cols"].append(cols)
                cache["conv_in_shape"].append(a.shape)
            else:
                pre = layers.conv2d_forward(a, p[f"conv{i}_w"], p[f"conv{i}_b"],
                                            scratch=self._scratch, key=f"conv{i}")
            sfx = ":t" if want_cache else ""
            pooled, _ = layers.maxpool2_forward(pre, self._scratch, f"pool{i}{sfx}")
            if want_cache:
                cache["conv_pre"].append(pre)
                cache["pooled_pre"].append(pooled)
            a = layers.leaky_relu_forward(pooled, slope, self._scratch, f"act{i}{sfx}")
        flat = a.reshape(a.shape[0], -1)
        pre0 = layers.dense_forward(flat, p["fc0_w"], p["fc0_b"])
        h0 = layers.leaky_relu_forward(pre0, slope)
        pre1 = layers.dense_forward(h0, p["fc1_w"], p["fc1_b"])
        emb = layers.l2_normalize_forward(pre1, self.arch.norm_epsilon)
        if not want_cache:
            return emb
        cache.update(pool_out_shape=a.shape, flat=flat, pre0=pre0, h0=h0, pre1=pre1)
        return emb, cache

    def backward(self, cache: dict, demb: np.ndarray, want_input_grad: bool = False,
                 want_param_grads: bool = True):
        """Backpropagate d(loss)/d(embeddings); returns (grads, dx)."""
        p = self.params
        slope = self.arch.leaky_slope
        grads: dict[str, np.ndarray] = {}
        dpre1 = layers.l2_normalize_backward(demb, cache["pre1"], self.arch.norm_epsilon)
        dh0, dw, db = layers.dense_backward(dpre1, cache["h0"], p["fc1_w"])
        grads["fc1_w"], grads["fc1_b"] = dw, db
        dpre0 = layers.leaky_relu_backward(dh0, cache["pre0"], slope)
        dflat, grads["fc0_w"], grads["fc0_b"] = layers.dense_backward(dpre0, cache["flat"], p["fc0_w"])
        da = dflat.reshape(cache["pool_out_shape"])
        depth = len(self.arch.channels)
        for i in reversed(range(depth)):
            dpooled = layers.leaky_relu_backward(da, cache["pooled_pre"][i], slope,
                                                 self._scratch, f"dact{i}")
            dpre = layers.maxpool2_backward(dpooled, cache["conv_pre"][i],
                                            cache["pooled_pre"][i],
                                            self._scratch, f"dpool{i}")
            da, dw, db = layers.conv2d_backward(
                dpre, cache["conv_cols"][i], p[f"conv{i}_w"], cache["conv_in_shape"][i],
                want_dx=(i > 0 or want_input_grad), want_dw=want_param_grads,
                scratch=self._scratch, key=f"conv{i}:b",
            )
            if want_param_grads:
                grads[f"conv{i}_w"], grads[f"conv{i}_b"] = dw, db
        return (grads if want_param_grads else None), (da if want_input_grad else None)

    def input_gradient(self, cache: dict, demb: np.ndarray) -> np.ndarray:
        """d(loss)/d(input pixels) only; weight gradients are skipped."""
        _, dx = self.backward(cache, demb, want_input_grad=True, want_param_grads=False)
        return dx

    def _check_images(self, images: np.ndarray) -> np.ndarray:
        x = np.asarray(images)
        expect = (*self.arch.input_hw, self.arch.input_channels)
        if x.shape[1:] != expect:
            raise DimensionError(f"expected images of shape {expect}, got {x.shape[1:]}")
        if x.size and (x.min() < 0.0 or x.max() > 1.0):
            raise ValidationError("image intensities must lie in [0, 1]")
        return x

    def embed_batch(self, images: np.ndarray) -> np.ndarray:
        """Validated forward pass over (N, H, W, C) images."""
        return self.forward(self._check_images(images))

    def embed(self, image: np.ndarray) -> np.ndarray:
        """One image -> one unit vector in R^m."""
        img = np.asarray(image)
        if img.ndim == 2:
            img = img[:, :, np.newaxis]
        return self.embed_batch(img[np.newaxis])[0]


def init_embedding(seed: int, arch: EmbedderArch = EmbedderArch()) -> EmbeddingNet:
    return EmbeddingNet.init(seed, arch)


def triplet_loss(a, p, n, margin: float) -> float:
    """ReLU(d(a,p) - d(a,n) + margin) with d the squared L2 distance."""
    if margin <= 0:
        raise ConfigError(f"margin must be > 0, got {margin}")
    a = np.asarray(a, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    if not (a.shape == p.shape == n.shape):
        raise DimensionError("triplet embeddings must share one dimension")
    d_ap = float(((a - p) ** 2).sum())
    d_an = float(((a - n) ** 2).sum())
    return max(0.0, d_ap - d_an + margin)


def triplet_batch_loss(net: EmbeddingNet, xa: np.ndarray, xp: np.ndarray,
                       xn: np.ndarray, margin: float, want_grads: bool = False):
    """Mean triplet loss over a batch; optionally its parameter gradients.

    One stacked forward pass serves all three towers (shared weights), so
    the gradient reduction order is fixed and runs are repeatable.
    """
    b = xa.shape[0]
    x = np.concatenate([xa, xp, xn], axis=0)
    if not want_grads:
        emb = net.forward(x)
    else:
        emb, cache = net.forward(x, want_cache=True)
    ea, ep, en = emb[:b], emb[b : 2 * b], emb[2 * b :]
    d_ap = ((ea - ep) ** 2).sum(axis=1)
    d_an = ((ea - en) ** 2).sum(axis=1)
    hinge = d_ap - d_an + margin
    losses = np.maximum(hinge, 0.0)
    loss = float(losses.mean())
    if not want_grads:
        return loss
    coeff = ((hinge > 0).astype(emb.dtype) / b)[:, np.newaxis]
    demb = np.concatenate(
        [2.0 * (en - ep) * coeff, -2.0 * (ea - ep) * coeff, 2.0 * (ea - en) * coeff],
        axis=0,
    ).astype(emb.dtype)
    grads, _ = net.backward(cache, demb)
    return loss, grads


@dataclass
class TripletTrainConfig:
    margin: float = 0.2
    learning_rate: float = 5e-5
    batch_size: int = 64
    epochs: int = 10
    triplets_per_epoch: int = 30000
    seed: int = 0

    def __post_init__(self):
        if self.margin <= 0:
            raise ConfigError(f"margin must be > 0, got {self.margin}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0 or self.triplets_per_epoch < 1:
            raise ConfigError("epochs must be >= 0 and triplets_per_epoch >= 1")


def train_embedding(dataset: Dataset, config: TripletTrainConfig,
                    arch: EmbedderArch = EmbedderArch()):
    """Adam-train the embedder on freshly sampled triplets each epoch.

    Returns (net, per-epoch mean triplet loss). Deterministic for a fixed
    (dataset, config); epochs=0 returns the untouched He initialization.
    """
    if len(dataset) == 0 or dataset.classes.size < 2:
        raise ConfigError("training needs a nonempty dataset with >= 2 classes")
    net = EmbeddingNet.init(config.seed, arch)
    trace: list[float] = []
    if config.epochs == 0:
        return net, trace
    rng = np.random.default_rng(config.seed)
    opt = layers.Adam(net.params, config.learning_rate)
    imgs = dataset.images
    for _ in range(config.epochs):
        idx = sample_triplet_indices(dataset, config.triplets_per_epoch, rng)
        epoch_sum = 0.0
        for start in range(0, idx.shape[0], config.batch_size):
            batch = idx[start : start + config.batch_size]
            loss, grads = triplet_batch_loss(
                net, imgs[batch[:, 0]], imgs[batch[:, 1]], imgs[batch[:, 2]],
                config.margin, want_grads=True,
            )
            epoch_sum += loss * batch.shape[0]
            opt.step(grads)
        trace.append(epoch_sum / idx.shape[0])
    return net, trace
