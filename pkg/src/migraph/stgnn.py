"""Spatio-temporal graph branch over a learnable electrode adjacency.

Node features are ``[B, N, D]`` with N electrodes. The recurrence scans the
node axis in the dataset's fixed channel order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .layers import Affine, ones, xavier_uniform, zeros
from .tensor import BatchNormState, Tensor

GC_HIDDEN = 32
LSTM_HIDDEN = 32
ATTN_HIDDEN = 64
HEAD_HIDDEN = 64


@dataclass
class LearnableAdjacency:
    """Raw trainable matrix ``A`` plus the fixed no-self-loop mask."""

    A: Tensor
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        c = self.A.shape[0]
        if self.A.ndim != 2 or self.A.shape != (c, c):
            raise ValueError(f"adjacency must be square, got {self.A.shape}")
        if c < 2:
            raise ValueError("adjacency needs at least 2 nodes")
        if self.mask is None:
            self.mask = 1.0 - np.eye(c)

    @classmethod
    def from_matrix(cls, a: np.ndarray, dtype=np.float32) -> "LearnableAdjacency":
        return cls(Tensor(np.asarray(a, dtype=dtype).copy(), requires_grad=True))

    @property
    def n_nodes(self) -> int:
        return self.A.shape[0]


def normalize_adjacency(adj: LearnableAdjacency) -> Tensor:
    """Row softmax of ``A`` over off-diagonal entries; the diagonal is exactly 0."""
    if adj.n_nodes < 2:
        raise ValueError("adjacency normalization needs at least 2 nodes")
    return T.rowwise_softmax(adj.A, adj.mask)


@dataclass
class GraphConvLayer:
    weight: Tensor  # [Din, Dout]
    bias: Tensor
    bn_gamma: Tensor
    bn_beta: Tensor
    bn: BatchNormState
    residual: bool

    @classmethod
    def create(cls, rng, d_in: int, d_out: int, residual: bool | None = None, dtype=np.float32):
        if residual is None:
            residual = d_in == d_out
        if residual and d_in != d_out:
            raise ValueError(f"residual graph conv needs d_in == d_out, got {d_in} -> {d_out}")
        return cls(
            xavier_uniform(rng, (d_in, d_out), d_in, d_out, dtype),
            zeros(d_out, dtype),
            ones(d_out, dtype),
            zeros(d_out, dtype),
            BatchNormState(d_out, dtype=dtype),
            residual,
        )


def graph_conv(H: Tensor, a_norm: Tensor, layer: GraphConvLayer, train: bool) -> Tensor:
    """``ReLU(BN(A_norm @ H @ W + b [+ H]))`` with batch-norm over B*N rows."""
    if H.ndim != 3 or H.shape[1] != a_norm.shape[0]:
        raise ValueError(f"graph_conv: {H.shape[1] if H.ndim == 3 else H.shape} nodes vs adjacency {a_norm.shape}")
    if H.shape[2] != layer.weight.shape[0]:
        raise ValueError(f"graph_conv: feature dim {H.shape[2]} vs weight {layer.weight.shape}")
    b, n, _ = H.shape
    d_out = layer.weight.shape[1]
    mixed = T.matmul(a_norm, H)
    out = T.linear(mixed, layer.weight, layer.bias)
    if layer.residual:
        out = T.add(out, H)
    flat = T.reshape(out, (b * n, d_out))
    normed = T.batchnorm1d(flat, layer.bn_gamma, layer.bn_beta, layer.bn, train=train)
    return T.relu(T.reshape(normed, (b, n, d_out)))


@dataclass
class LstmParams:
    w_ih: Tensor  # [I, 4H]
    w_hh: Tensor  # [H, 4H]
    bias: Tensor  # [4H]

    @classmethod
    def create(cls, rng, n_in: int, hidden: int, dtype=np.float32) -> "LstmParams":
        return cls(
            xavier_uniform(rng, (n_in, 4 * hidden), n_in, 4 * hidden, dtype),
            xavier_uniform(rng, (hidden, 4 * hidden), hidden, 4 * hidden, dtype),
            zeros(4 * hidden, dtype),
        )

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[0]


@dataclass
class BiLstmParams:
    forward: LstmParams
    backward: LstmParams

    @classmethod
    def create(cls, rng, n_in: int = GC_HIDDEN, hidden: int = LSTM_HIDDEN, dtype=np.float32):
        return cls(LstmParams.create(rng, n_in, hidden, dtype), LstmParams.create(rng, n_in, hidden, dtype))


def _scan(steps, p: LstmParams, dtype) -> list[Tensor]:
    b = steps[0].shape[0]
    h = T.Tensor(np.zeros((b, p.hidden), dtype=dtype))
    c = T.Tensor(np.zeros((b, p.hidden), dtype=dtype))
    outs = []
    for x_t in steps:
        h, c = T.lstm_cell(x_t, h, c, p.w_ih, p.w_hh, p.bias)
        outs.append(h)
    return outs


def bilstm_forward(H: Tensor, p: BiLstmParams) -> Tensor:
    """Forward scan over nodes 0..N-1 and backward over N-1..0, concatenated per node."""
    if H.ndim != 3 or H.shape[2] != p.forward.w_ih.shape[0]:
        raise ValueError(f"bilstm expects [B, N, {p.forward.w_ih.shape[0]}], got {H.shape}")
    steps = T.unstack(H, axis=1)
    fwd = _scan(steps, p.forward, H.dtype)
    bwd = _scan(steps[::-1], p.backward, H.dtype)[::-1]
    return T.concat([T.stack(fwd, axis=1), T.stack(bwd, axis=1)], axis=2)


@dataclass
class AttentionPool:
    w1: Affine  # [2H, attn]
    w2: Affine  # [attn, 1]

    @classmethod
    def create(cls, rng, d: int = 2 * LSTM_HIDDEN, hidden: int = ATTN_HIDDEN, dtype=np.float32):
        return cls(Affine.xavier(rng, d, hidden, dtype), Affine.xavier(rng, hidden, 1, dtype))


def attention_pool(Hseq: Tensor, p: AttentionPool) -> tuple[Tensor, Tensor]:
    """Returns ``(pooled[B, D], alpha[B, N])``; alpha is a softmax over nodes."""
    if Hseq.ndim != 3 or Hseq.shape[2] != p.w1.weight.shape[0]:
        raise ValueError(f"attention expects [B, N, {p.w1.weight.shape[0]}], got {Hseq.shape}")
    b, n, d = Hseq.shape
    u = T.relu(T.linear(Hseq, p.w1.weight, p.w1.bias))
    scores = T.reshape(T.linear(u, p.w2.weight, p.w2.bias), (b, n))
    alpha = T.softmax(scores, axis=1)
    pooled = T.matmul(T.reshape(alpha, (b, 1, n)), Hseq)
    return T.reshape(pooled, (b, d)), alpha


@dataclass
class StgnnHead:
    hidden: Affine
    out: Affine

    @classmethod
    def create(cls, rng, d: int, n_classes: int, hidden: int = HEAD_HIDDEN, dtype=np.float32):
        return cls(Affine.xavier(rng, d, hidden, dtype), Affine.xavier(rng, hidden, n_classes, dtype))


@dataclass
class STGNNParams:
    gc1: GraphConvLayer
    gc2: GraphConvLayer
    lstm: BiLstmParams
    attn: AttentionPool
    head: StgnnHead
    input_proj: Affine | None = None  # only when fed the autoencoder latent

    @classmethod
    def create(cls, rng, n_features: int, n_classes: int, residual: bool = True,
               latent_dim: int | None = None, dtype=np.float32) -> "STGNNParams":
        proj = Affine.xavier(rng, latent_dim, n_features, dtype) if latent_dim else None
        return cls(
            GraphConvLayer.create(rng, n_features, GC_HIDDEN, residual=False, dtype=dtype),
            GraphConvLayer.create(rng, GC_HIDDEN, GC_HIDDEN, residual=residual, dtype=dtype),
            BiLstmParams.create(rng, GC_HIDDEN, LSTM_HIDDEN, dtype),
            AttentionPool.create(rng, 2 * LSTM_HIDDEN, ATTN_HIDDEN, dtype),
            StgnnHead.create(rng, 2 * LSTM_HIDDEN, n_classes, dtype=dtype),
            proj,
        )


def stgnn_forward(
    x: Tensor,
    p: STGNNParams,
    adj: LearnableAdjacency,
    train: bool = False,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor, Tensor]:
    """Returns ``(logits, alpha, normalized_adjacency)`` for ``x[B, N, D]``."""
    if x.ndim != 3 or x.shape[1] != adj.n_nodes:
        raise ValueError(f"stgnn expects [B, {adj.n_nodes}, D], got {x.shape}")
    a_norm = normalize_adjacency(adj)
    if p.input_proj is not None:
        x = T.linear(x, p.input_proj.weight, p.input_proj.bias)
    h = graph_conv(x, a_norm, p.gc1, train)
    h = T.dropout(h, dropout, rng, train)
    h = graph_conv(h, a_norm, p.gc2, train)
    seq = bilstm_forward(h, p.lstm)
    pooled, alpha = attention_pool(seq, p.attn)
    hidden = T.relu(T.linear(pooled, p.head.hidden.weight, p.head.hidden.bias))
    return T.linear(hidden, p.head.out.weight, p.head.out.bias), alpha, a_norm
