"""Discriminative residual-dense convolutional autoencoder branch.

Inputs are ``[B, F, N]``: F scaled features per electrode laid out as
channels, N electrodes as the convolution axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Affine, Conv
from .tensor import Tensor

GROWTH = 16
DENSE_LAYERS = 3
DENSE_KERNEL = 3
LATENT = 64
HEAD_HIDDEN = 64


@dataclass
class DenseBlockParams:
    layers: list[Conv]

    @property
    def in_channels(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.in_channels + sum(layer.weight.shape[0] for layer in self.layers)

    @classmethod
    def create(cls, rng, n_features: int, growth: int = GROWTH, n_layers: int = DENSE_LAYERS,
               kernel: int = DENSE_KERNEL, dtype=np.float32) -> "DenseBlockParams":
        layers = []
        cin = n_features
        for _ in range(n_layers):
            layers.append(Conv.kaiming(rng, (growth, cin, kernel), cin * kernel, growth, dtype))
            cin += growth
        return cls(layers)


@dataclass
class EncoderParams:
    bottleneck: Conv  # [latent, dense_out, 1]

    @classmethod
    def create(cls, rng, n_in: int, latent: int = LATENT, dtype=np.float32) -> "EncoderParams":
        return cls(Conv.kaiming(rng, (latent, n_in, 1), n_in, latent, dtype))


@dataclass
class DecoderParams:
    deconv: Conv  # transposed kernel [latent, F, 1]

    @classmethod
    def create(cls, rng, latent: int, n_features: int, dtype=np.float32) -> "DecoderParams":
        return cls(Conv.kaiming(rng, (latent, n_features, 1), latent, n_features, dtype))


@dataclass
class AEClassifierHead:
    hidden: Affine
    out: Affine

    @classmethod
    def create(cls, rng, latent: int, n_classes: int, hidden: int = HEAD_HIDDEN, dtype=np.float32):
        return cls(Affine.xavier(rng, latent, hidden, dtype), Affine.xavier(rng, hidden, n_classes, dtype))


@dataclass
class DRDCAEParams:
    dense: DenseBlockParams
    encoder: EncoderParams
    decoder: DecoderParams
    head: AEClassifierHead

    @classmethod
    def create(cls, rng, n_features: int, n_classes: int, dtype=np.float32) -> "DRDCAEParams":
        dense = DenseBlockParams.create(rng, n_features, dtype=dtype)
        return cls(
            dense,
            EncoderParams.create(rng, dense.out_channels, dtype=dtype),
            DecoderParams.create(rng, LATENT, n_features, dtype=dtype),
            AEClassifierHead.create(rng, LATENT, n_classes, dtype=dtype),
        )


def dense_block_forward(x: Tensor, p: DenseBlockParams) -> Tensor:
    """Each layer sees the concatenation of the input and all earlier outputs."""
    if x.ndim != 3 or x.shape[1] != p.in_channels:
        raise ValueError(f"dense block expects [B, {p.in_channels}, N], got {x.shape}")
    maps = [x]
    for layer in p.layers:
        inp = maps[0] if len(maps) == 1 else T.concat(maps, axis=1)
        pad = (layer.weight.shape[2] - 1) // 2
        maps.append(T.relu(T.conv1d(inp, layer.weight, layer.bias, padding=pad)))
    return T.concat(maps, axis=1)


def encode(x66: Tensor, p: EncoderParams) -> Tensor:
    k = p.bottleneck.weight
    if x66.ndim != 3 or x66.shape[1] != k.shape[1]:
        raise ValueError(f"encoder expects [B, {k.shape[1]}, N], got {x66.shape}")
    return T.relu(T.conv1d(x66, k, p.bottleneck.bias, padding=0))


def decode(z: Tensor, p: DecoderParams) -> Tensor:
    k = p.deconv.weight
    if z.ndim != 3 or z.shape[1] != k.shape[0]:
        raise ValueError(f"decoder expects [B, {k.shape[0]}, N], got {z.shape}")
    return T.sigmoid(T.conv_transpose1d(z, k, p.deconv.bias))


def ae_classify(z: Tensor, head: AEClassifierHead) -> Tensor:
    pooled = T.mean(z, axis=2)
    hidden = T.relu(T.linear(pooled, head.hidden.weight, head.hidden.bias))
    return T.linear(hidden, head.out.weight, head.out.bias)


def drdcae_forward(x: Tensor, p: DRDCAEParams) -> tuple[Tensor, Tensor, Tensor]:
    """Returns ``(latent, reconstruction, logits)``."""
    z = encode(dense_block_forward(x, p.dense), p.encoder)
    return z, decode(z, p.decoder), ae_classify(z, p.head)


def drdcae_loss(x: Tensor, x_hat: Tensor, logits: Tensor, labels, lam: float) -> Tensor:
    """Mean squared reconstruction error plus ``lam`` times cross-entropy."""
    if x.shape != x_hat.shape:
        raise ValueError(f"reconstruction shape {x_hat.shape} != input shape {x.shape}")
    rec = T.mse(x_hat, x)
    if lam == 0:
        return rec
    return T.add(rec, T.mul(T.cross_entropy(logits, labels), lam))
