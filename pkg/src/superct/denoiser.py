"""Reference supervised denoiser: a small residual CNN with hand-rolled
forward/backward passes.

Four 3x3 convolution layers (channel widths 1-16-16-16-1) with
rectifiers in between and a global skip, out = x + net(x).  Gradients
are computed by explicit backpropagation through im2col convolutions,
so training is bit-reproducible and every weight gradient can be
checked against finite differences.  The network operates on images
normalized to HU/1000 so activations sit at O(1) regardless of the
attenuation scale.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import Image

CHANNELS = (1, 16, 16, 16, 1)
KERNEL = 3


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    lr_start: float = 1e-3
    lr_end: float = 1e-4
    optimizer: str = "adam"  # "adam" | "sgd" (SGD uses `momentum`)
    momentum: float = 0.99
    init_std: float = np.sqrt(0.005)
    crop: int = 32  # random square crop per step; 0 trains on full images
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not (self.lr_start > 0 and self.lr_end > 0):
            raise ValueError("learning rates must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")

    def lr_at(self, epoch: int) -> float:
        if self.epochs == 1:
            return self.lr_start
        frac = epoch / (self.epochs - 1)
        return 10.0 ** (
            np.log10(self.lr_start) + frac * (np.log10(self.lr_end) - np.log10(self.lr_start))
        )


class SupervisedModule(abc.ABC):
    """Image-to-image module trained on (input, reference) pairs."""

    @abc.abstractmethod
    def apply(self, image: Image) -> Image: ...

    @classmethod
    @abc.abstractmethod
    def train(cls, pairs, cfg: TrainConfig) -> "SupervisedModule": ...

    @abc.abstractmethod
    def weight_tensors(self) -> list[np.ndarray]: ...


def init_weights(seed: int = 0, init_std: float = np.sqrt(0.005)) -> list[np.ndarray]:
    """Zero-mean Gaussian kernels, zero biases: [W1, b1, W2, b2, ...]."""
    rng = np.random.default_rng(seed)
    weights = []
    for cin, cout in zip(CHANNELS[:-1], CHANNELS[1:]):
        weights.append(rng.normal(0.0, init_std, size=(cout, cin, KERNEL, KERNEL)))
        weights.append(np.zeros(cout))
    return weights


def _im2col(x: np.ndarray) -> np.ndarray:
    """(C, H, W) -> (C*9, H*W) with zero padding of one pixel."""
    c, h, w = x.shape
    padded = np.zeros((c, h + 2, w + 2))
    padded[:, 1:-1, 1:-1] = x
    win = np.lib.stride_tricks.sliding_window_view(padded, (KERNEL, KERNEL), axis=(1, 2))
    # win: (C, H, W, 3, 3) -> (C, 3, 3, H, W)
    return win.transpose(0, 3, 4, 1, 2).reshape(c * KERNEL * KERNEL, h * w)


def _col2im(cols: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    """Adjoint of :func:`_im2col` (scatter-add into the padded grid)."""
    c, h, w = shape
    cols = cols.reshape(c, KERNEL, KERNEL, h, w)
    padded = np.zeros((c, h + 2, w + 2))
    for di in range(KERNEL):
        for dj in range(KERNEL):
            padded[:, di : di + h, dj : dj + w] += cols[:, di, dj]
    return padded[:, 1:-1, 1:-1]


def _forward(weights: Sequence[np.ndarray], x: np.ndarray, rectify: bool = True):
    """Residual forward pass on a (H, W) array; returns (out, cache)."""
    h, w = x.shape
    act = x[None]
    cache = []
    n_layers = len(weights) // 2
    for li in range(n_layers):
        W = weights[2 * li]
        b = weights[2 * li + 1]
        cols = _im2col(act)
        z = (W.reshape(W.shape[0], -1) @ cols) + b[:, None]
        z = z.reshape(W.shape[0], h, w)
        if rectify and li < n_layers - 1:
            mask = z > 0
            out = z * mask
        else:
            mask = None
            out = z
        cache.append((cols, mask, act.shape))
        act = out
    return x + act[0], cache


def _backward(weights, cache, dout: np.ndarray) -> list[np.ndarray]:
    """Gradients of every kernel and bias given dLoss/dOutput."""
    grads = [None] * len(weights)
    d = dout[None]
    n_layers = len(weights) // 2
    for li in range(n_layers - 1, -1, -1):
        cols, mask, in_shape = cache[li]
        if mask is not None:
            d = d * mask
        W = weights[2 * li]
        dflat = d.reshape(d.shape[0], -1)
        grads[2 * li] = (dflat @ cols.T).reshape(W.shape)
        grads[2 * li + 1] = dflat.sum(axis=1)
        if li > 0:
            dcols = W.reshape(W.shape[0], -1).T @ dflat
            d = _col2im(dcols, in_shape)
    return grads


def loss_and_grads(weights, x: np.ndarray, ref: np.ndarray, rectify: bool = True):
    """Mean-squared-error loss and its gradient w.r.t. every weight."""
    out, cache = _forward(weights, x, rectify)
    diff = out - ref
    loss = float(np.mean(diff * diff))
    dout = (2.0 / diff.size) * diff
    return loss, _backward(weights, cache, dout)


def denoiser_forward(weights, values: np.ndarray, rectify: bool = True) -> np.ndarray:
    """Residual network output for a raw (already normalized) array."""
    out, _ = _forward(weights, np.asarray(values, dtype=np.float64), rectify)
    return out


class ConvDenoiser(SupervisedModule):
    """Trained residual denoiser over HU/1000-normalized images."""

    def __init__(self, weights: list[np.ndarray], mu_water: Optional[float] = None):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        if len(self.weights) != 2 * (len(CHANNELS) - 1):
            raise ValueError("expected kernel+bias per layer")
        for w in self.weights:
            if not np.all(np.isfinite(w)):
                raise ValueError("weights must be finite")
        self.mu_water = mu_water

    def _normalize(self, image: Image) -> np.ndarray:
        return image.to_hu() / 1000.0

    def apply(self, image: Image) -> Image:
        z = self._normalize(image)
        out = denoiser_forward(self.weights, z)
        mu = image.mu_water * (1.0 + out)
        return Image(values=mu, mu_water=image.mu_water)

    def weight_tensors(self) -> list[np.ndarray]:
        return self.weights

    @classmethod
    def train(cls, pairs, cfg: TrainConfig) -> "ConvDenoiser":
        """Batch-size-1 training with per-epoch logarithmic lr decay.

        ``pairs`` is a sequence of (input Image, reference Image).  The
        default optimizer is ADAM; plain SGD with momentum is available
        via ``cfg.optimizer = "sgd"`` but trains this architecture far
        more slowly.
        """
        if len(pairs) < 1:
            raise ValueError("need at least one training pair")
        data = []
        for inp, ref in pairs:
            if (inp.rows, inp.cols) != (ref.rows, ref.cols):
                raise ValueError("pair dimensions disagree")
            data.append((inp.to_hu() / 1000.0, ref.to_hu() / 1000.0))

        rng = np.random.default_rng(cfg.seed)
        weights = init_weights(seed=cfg.seed, init_std=cfg.init_std)
        slot1 = [np.zeros_like(w) for w in weights]  # velocity / 1st moment
        slot2 = [np.zeros_like(w) for w in weights]  # 2nd moment (adam)
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        step = 0

        for epoch in range(cfg.epochs):
            lr = cfg.lr_at(epoch)
            order = rng.permutation(len(data))
            for idx in order:
                x, ref = data[idx]
                if cfg.crop and x.shape[0] > cfg.crop and x.shape[1] > cfg.crop:
                    r0 = rng.integers(0, x.shape[0] - cfg.crop + 1)
                    c0 = rng.integers(0, x.shape[1] - cfg.crop + 1)
                    xs = x[r0 : r0 + cfg.crop, c0 : c0 + cfg.crop]
                    rs = ref[r0 : r0 + cfg.crop, c0 : c0 + cfg.crop]
                else:
                    xs, rs = x, ref
                loss, grads = loss_and_grads(weights, xs, rs)
                if not np.isfinite(loss):
                    raise FloatingPointError(
                        f"non-finite training loss at epoch {epoch}"
                    )
                step += 1
                if cfg.optimizer == "adam":
                    for i, g in enumerate(grads):
                        slot1[i] = beta1 * slot1[i] + (1 - beta1) * g
                        slot2[i] = beta2 * slot2[i] + (1 - beta2) * g * g
                        mh = slot1[i] / (1 - beta1**step)
                        vh = slot2[i] / (1 - beta2**step)
                        weights[i] = weights[i] - lr * mh / (np.sqrt(vh) + eps)
                else:
                    for i, g in enumerate(grads):
                        slot1[i] = cfg.momentum * slot1[i] - lr * g
                        weights[i] = weights[i] + slot1[i]
        return cls(weights, mu_water=pairs[0][1].mu_water)

    def training_loss(self, pairs) -> float:
        """Mean per-pair MSE in normalized units (for monitoring)."""
        total = 0.0
        for inp, ref in pairs:
            out = denoiser_forward(self.weights, self._normalize(inp))
            total += float(np.mean((out - self._normalize(ref)) ** 2))
        return total / len(pairs)
