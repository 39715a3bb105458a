"""Finite-difference checks for every registered operation and model layer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .drdcae import ae_classify, decode, dense_block_forward, encode
from .layers import cast, named_tensors
from .model import ModelDims, forward, init_params
from .stgnn import attention_pool, bilstm_forward, graph_conv, normalize_adjacency
from .tensor import REGISTRY, BatchNormState, Tensor
from .training import LossWeights, outputs_loss

THRESHOLD = 1e-4
ZERO_TOLERANCE = 1e-10  # absolute bound on gradients that are zero by symmetry
TINY_NODES = 4
TINY_BATCH = 2


@dataclass
class CheckResult:
    kind: str  # "op" or "layer"
    name: str
    max_rel_error: float
    checked: int = 0
    skipped_kinks: int = 0

    @property
    def passed(self) -> bool:
        bound = ZERO_TOLERANCE if self.kind == "zero" else THRESHOLD
        return bool(self.max_rel_error < bound)


def _weighted(out: Tensor, rng) -> Tensor:
    # a random projection makes every output entry matter to the scalar
    return T.sum_(T.mul(out, rng.normal(size=out.shape)))


def _op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[..., Tensor], list[np.ndarray]]]:
    """One scalar-valued closure builder and its inputs per registered op."""
    r = lambda *s: rng.normal(size=s)  # noqa: E731
    w = {k: rng.normal(size=s) for k, s in {
        "o23": (2, 3), "o32": (3, 2), "o234": (2, 3, 4), "o43": (4, 3), "o2": (2,),
        "o243": (2, 4, 3), "o235": (2, 3, 5), "o225": (2, 2, 5), "o24": (2, 4), "o2x3x3": (2, 3, 3), "o33": (3, 3),
    }.items()}
    dot = lambda t, key: T.sum_(T.mul(t, w[key]))  # noqa: E731
    labels = np.array([0, 2, 1, 3])
    mask = 1.0 - np.eye(3)
    lstm_h = 3

    def lstm(x, h, c, wih, whh, b):
        h1, c1 = T.lstm_cell(x, h, c, wih, whh, b)
        return T.add(dot(h1, "o23"), dot(c1, "o23"))

    def unstack(x):
        a, b = T.unstack(x, axis=1)
        return T.add(dot(a, "o23"), T.mul(dot(b, "o23"), 2.0))

    def dropout(x):
        return dot(T.dropout(x, 0.4, np.random.default_rng(7), True), "o23")

    def batchnorm(x, g, b):
        state = BatchNormState(3, dtype=np.float64)
        return dot(T.batchnorm1d(x, g, b, state, train=True), "o43")

    return {
        "add": (lambda a, b: dot(T.add(a, b), "o23"), [r(2, 3), r(1, 3)]),
        "sub": (lambda a, b: dot(T.sub(a, b), "o23"), [r(2, 3), r(2, 1)]),
        "mul": (lambda a, b: dot(T.mul(a, b), "o23"), [r(2, 3), r(3)]),
        "matmul": (lambda a, b: dot(T.matmul(a, b), "o2x3x3"), [r(2, 3, 4), r(4, 3)]),
        "reshape": (lambda a: dot(T.reshape(a, (3, 2)), "o32"), [r(2, 3)]),
        "transpose": (lambda a: dot(T.transpose(a, (0, 2, 1)), "o243"), [r(2, 3, 4)]),
        "sum": (lambda a: dot(T.sum_(a, axis=1), "o2"), [r(2, 3)]),
        "mean": (lambda a: dot(T.mean(a, axis=0), "o32"), [r(4, 3, 2)]),
        "concat": (lambda a, b: dot(T.concat([a, b], axis=1), "o235"), [r(2, 2, 5), r(2, 1, 5)]),
        "stack": (lambda a, b: dot(T.stack([a, b], axis=1), "o225"), [r(2, 5), r(2, 5)]),
        "unstack": (unstack, [r(2, 2, 3)]),
        "relu": (lambda a: dot(T.relu(a), "o23"), [r(2, 3) + np.sign(r(2, 3)) * 0.1]),
        "sigmoid": (lambda a: dot(T.sigmoid(a), "o23"), [r(2, 3)]),
        "tanh": (lambda a: dot(T.tanh(a), "o23"), [r(2, 3)]),
        "softmax": (lambda a: dot(T.softmax(a, axis=-1), "o234"), [r(2, 3, 4)]),
        "rowwise_softmax": (lambda a: dot(T.rowwise_softmax(a, mask), "o33"), [r(3, 3)]),
        "cross_entropy": (lambda a: T.cross_entropy(a, labels), [r(4, 4)]),
        "mse": (lambda a, b: T.mse(a, b), [r(2, 3), r(2, 3)]),
        "dropout": (dropout, [r(2, 3)]),
        "conv1d": (lambda x, k, b: _weighted(T.conv1d(x, k, b, padding=1), np.random.default_rng(1)),
                   [r(2, 3, 5), r(4, 3, 3), r(4)]),
        "conv_transpose1d": (lambda z, k, b: _weighted(T.conv_transpose1d(z, k, b), np.random.default_rng(2)),
                             [r(2, 4, 5), r(4, 3, 1), r(3)]),
        "batchnorm1d": (batchnorm, [r(4, 3), r(3), r(3)]),
        "lstm_cell": (lstm, [r(2, 4), r(2, lstm_h), r(2, lstm_h), r(4, 4 * lstm_h), r(lstm_h, 4 * lstm_h),
                             r(4 * lstm_h)]),
    }


def check_ops(seed: int = 0, h: float = 1e-5) -> list[CheckResult]:
    """One result per registered op, in registry order."""
    cases = _op_cases(np.random.default_rng(seed))
    missing = set(REGISTRY) - set(cases)
    if missing:
        raise RuntimeError(f"no gradcheck case for ops: {sorted(missing)}")
    results = []
    for name in REGISTRY:
        fn, arrays = cases[name]
        tensors = [Tensor(a.astype(np.float64)) for a in arrays]
        res = T.gradcheck(lambda: fn(*tensors), tensors, h=h)
        results.append(CheckResult("op", name, res.max_rel_error, res.checked, res.skipped_kinks))
    return results


def tiny_model(seed: int = 0):
    dims = ModelDims(n_nodes=TINY_NODES)
    rng = np.random.default_rng(seed)
    adj = rng.uniform(-1, 1, size=(TINY_NODES, TINY_NODES))
    params = init_params(seed, dims, adjacency_init=(adj + adj.T) / 2, dtype=np.float64)
    cast(params, np.float64)
    x = rng.normal(0.0, 2.0, size=(TINY_BATCH, TINY_NODES, dims.n_features))
    labels = np.arange(TINY_BATCH) % dims.n_classes
    return params, x, labels


def check_layers(seed: int = 0, h: float = 1e-4, max_entries: int | None = 24) -> list[CheckResult]:
    """Per-layer checks on the tiny double-precision model, then the full loss."""
    params, x, labels = tiny_model(seed)
    rng = np.random.default_rng(seed + 1)
    ae, st = params.ae, params.st
    x_ae = Tensor(np.transpose(x, (0, 2, 1)).copy())
    with T.no_grad():
        y66 = dense_block_forward(x_ae, ae.dense)
        z = encode(y66, ae.encoder)
        a_norm = normalize_adjacency(params.adjacency)
        h1 = graph_conv(Tensor(x), a_norm, st.gc1, False)
        h2 = graph_conv(h1, a_norm, st.gc2, False)
        seq = bilstm_forward(h2, st.lstm)
        pooled, _ = attention_pool(seq, st.attn)

    def proj(out):
        return _weighted(out, np.random.default_rng(seed + 2))

    def head(t, p):
        return T.linear(T.relu(T.linear(t, p.hidden.weight, p.hidden.bias)), p.out.weight, p.out.bias)

    z_in = Tensor(z.data.copy())
    y_in = Tensor(y66.data.copy())
    h1_in = Tensor(h1.data.copy())
    h2_in = Tensor(h2.data.copy())
    # distinct node vectors keep the attention gradients well above rounding noise
    seq_in = Tensor(rng.normal(size=seq.shape))
    pooled_in = Tensor(pooled.data.copy())
    x_in = Tensor(x.copy())
    a_fixed = Tensor(a_norm.data.copy())
    w = LossWeights()
    score_bias = st.attn.w2.bias
    cases: list[tuple[str, Callable[[], Tensor], list[Tensor]]] = [
        ("dense_block", lambda: proj(dense_block_forward(x_ae, ae.dense)),
         [x_ae] + [t for _, t in named_tensors(ae.dense)]),
        ("encoder", lambda: proj(encode(y_in, ae.encoder)), [y_in] + [t for _, t in named_tensors(ae.encoder)]),
        ("decoder", lambda: proj(decode(z_in, ae.decoder)), [z_in] + [t for _, t in named_tensors(ae.decoder)]),
        ("ae_head", lambda: proj(ae_classify(z_in, ae.head)), [z_in] + [t for _, t in named_tensors(ae.head)]),
        ("adjacency", lambda: proj(graph_conv(x_in, normalize_adjacency(params.adjacency), st.gc1, False)),
         [params.adjacency.A]),
        ("gc1", lambda: proj(graph_conv(x_in, a_fixed, st.gc1, False)),
         [x_in] + [t for _, t in named_tensors(st.gc1)]),
        ("gc2", lambda: proj(graph_conv(h1_in, a_fixed, st.gc2, False)),
         [h1_in] + [t for _, t in named_tensors(st.gc2)]),
        ("bilstm", lambda: proj(bilstm_forward(h2_in, st.lstm)), [h2_in] + [t for _, t in named_tensors(st.lstm)]),
        ("attention", lambda: proj(attention_pool(seq_in, st.attn)[0]),
         [seq_in] + [t for _, t in named_tensors(st.attn) if t is not score_bias]),
        ("st_head", lambda: proj(head(pooled_in, st.head)), [pooled_in] + [t for _, t in named_tensors(st.head)]),
        ("composite_loss", lambda: outputs_loss(forward(params, x_in, train=False), labels, w),
         [t for _, t in params.named() if t is not score_bias]),
    ]
    # Softmax over nodes is shift invariant, so the score bias has an exactly
    # zero gradient, and so does the hidden bias of any unit whose ReLU is on
    # (or off) at every node of every sample. Central differences there only
    # measure rounding noise; those entries are checked to be exactly zero.
    flat_units = {
        "attention": _constant_units(seq_in.data, st.attn),
        "composite_loss": _constant_units(seq.data, st.attn),
    }
    results = []
    for name, fn, tensors in cases:
        entries = None
        if name in flat_units:
            live = np.flatnonzero(~flat_units[name])
            entries = [live if t is st.attn.w1.bias else None for t in tensors]
        res = T.gradcheck(fn, tensors, h=h, max_entries=max_entries, rng=rng, skip_kinks=True, entries=entries)
        results.append(CheckResult("layer", name, res.max_rel_error, res.checked, res.skipped_kinks))
    for name, fn, _ in cases:
        if name in flat_units:
            grads = _analytic(fn, [score_bias, st.attn.w1.bias])
            residual = max(np.abs(grads[0]).max(), np.abs(grads[1][flat_units[name]]).max(initial=0.0))
            results.append(CheckResult("zero", f"{name}_shift_bias", float(residual)))
    return results


def _constant_units(seq: np.ndarray, attn) -> np.ndarray:
    """Hidden units whose ReLU pattern is the same at all nodes, per sample."""
    pre = seq @ attn.w1.weight.data + attn.w1.bias.data  # [B, N, H]
    on = pre > 0
    return (on.all(axis=1) | ~on.any(axis=1)).all(axis=0)


def _analytic(f: Callable[[], Tensor], params: list[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.requires_grad = True
        p.grad = None
    with T.Tape() as tape:
        loss = f()
    tape.backward(loss)
    return [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]


def run_all(seed: int = 0) -> list[CheckResult]:
    return check_ops(seed) + check_layers(seed)


def format_report(results: list[CheckResult]) -> str:
    lines = [f"{'kind':<6} {'name':<18} {'max_rel_error':>14}  status  (threshold {THRESHOLD:g})"]
    for r in results:
        lines.append(f"{r.kind:<6} {r.name:<18} {r.max_rel_error:>14.3e}  {'pass' if r.passed else 'FAIL'}")
    return "\n".join(lines)
