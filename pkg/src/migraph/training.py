"""Joint loss, Adam, the early-stopped training loop, evaluation and ablations."""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import tensor as T
from .data import FeatureTensor
from .layers import load_state_dict, state_dict
from .metrics import Metrics, compute_metrics
from .model import VARIANTS, ModelDims, ModelParams, Outputs, forward, init_params, parameter_totals
from .stgnn import normalize_adjacency
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    lam: float = 0.3
    gamma: float = 1.0

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    lr_ae: float = 1e-3
    batch_ae: int = 32
    lr_st: float = 2e-4
    batch_st: int = 16
    lam: float = 0.3
    gamma: float = 1.0
    max_epochs: int = 100
    patience: int = 10
    dropout: float = 0.3
    seed: int = 42
    stgnn_input: str = "features"

    def __post_init__(self):
        if self.lr_ae <= 0 or self.lr_st <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_ae < 2 or self.batch_st < 2:
            raise ValueError("batch sizes must be at least 2 (batch-norm needs batch statistics)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be positive")
        if self.stgnn_input not in ("features", "latent"):
            raise ValueError(f"stgnn_input must be 'features' or 'latent', got {self.stgnn_input!r}")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lam, self.gamma)


# optimizer


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update in place. Entries with no gradient are skipped."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype, copy=False)


class Adam:
    """Adam over parameter groups, each with its own learning rate."""

    def __init__(self, groups: list[tuple[list[Tensor], float]]):
        self.groups = [(params, lr, AdamState.for_params(params)) for params, lr in groups if params]

    def zero_grad(self) -> None:
        for params, _, _ in self.groups:
            for p in params:
                p.grad = None

    def step(self) -> None:
        for params, lr, state in self.groups:
            adam_step(params, [p.grad for p in params], state, lr)


# losses


def total_loss(x_ae, x_hat, ae_logits, st_logits, labels, w: LossWeights) -> Tensor:
    """Reconstruction MSE + lam * CE(autoencoder head) + gamma * CE(graph head).

    Terms whose inputs are ``None`` (the autoencoder-free variant) or whose
    weight is zero are omitted.
    """
    terms = []
    if x_hat is not None:
        terms.append(T.mse(x_hat, x_ae))
    if ae_logits is not None and w.lam > 0:
        terms.append(T.mul(T.cross_entropy(ae_logits, labels), w.lam))
    if w.gamma > 0:
        terms.append(T.mul(T.cross_entropy(st_logits, labels), w.gamma))
    if not terms:
        return T.mul(T.cross_entropy(st_logits, labels), 0.0)
    loss = terms[0]
    for term in terms[1:]:
        loss = T.add(loss, term)
    return loss


def outputs_loss(out: Outputs, labels, w: LossWeights) -> Tensor:
    return total_loss(out.x_ae, out.x_hat, out.ae_logits, out.st_logits, labels, w)


# training loop


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float

    def tsv(self) -> str:
        return f"{self.epoch}\t{self.train_loss:.6f}\t{self.val_loss:.6f}\t{self.val_accuracy:.6f}"


@dataclass
class TrainResult:
    params: ModelParams
    log: list[EpochLog]
    a_before: np.ndarray | None
    a_after: np.ndarray | None
    best_epoch: int
    best_val_loss: float

    def log_tsv(self) -> str:
        header = "epoch\ttrain_loss\tval_loss\tval_accuracy"
        return "\n".join([header] + [row.tsv() for row in self.log]) + "\n"


def predict_scores(params: ModelParams, x: np.ndarray, batch: int = 256) -> np.ndarray:
    """Softmax class probabilities from the graph-branch logits, eval mode."""
    out = []
    for start in range(0, len(x), batch):
        logits = forward(params, x[start : start + batch], train=False).st_logits.data
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        out.append(e / e.sum(axis=1, keepdims=True))
    return np.concatenate(out, axis=0)


def validation_loss(params: ModelParams, ft: FeatureTensor, w: LossWeights, batch: int = 256) -> tuple[float, float]:
    """Size-weighted mean loss and accuracy in eval mode."""
    total, correct = 0.0, 0
    for start in range(0, len(ft), batch):
        xb = ft.x[start : start + batch]
        yb = ft.labels[start : start + batch]
        out = forward(params, xb, train=False)
        total += float(outputs_loss(out, yb, w).data) * len(yb)
        correct += int((out.st_logits.data.argmax(axis=1) == yb).sum())
    return total / len(ft), correct / len(ft)


def _batches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    out = [order[i : i + size] for i in range(0, n, size)]
    if len(out) > 1 and len(out[-1]) < 2:
        # a singleton tail cannot be batch-normalized
        out[-2] = np.concatenate([out[-2], out[-1]])
        out.pop()
    return out


def _normalized_adjacency(params: ModelParams) -> np.ndarray | None:
    if params.adjacency is None:
        return None
    with T.no_grad():
        return normalize_adjacency(params.adjacency).data.astype(np.float64)


def train(
    train_ft: FeatureTensor,
    val_ft: FeatureTensor,
    config: TrainConfig,
    dims: ModelDims,
    adjacency_init: np.ndarray | None = None,
    on_epoch: Callable[[int, ModelParams, EpochLog], None] | None = None,
    params: ModelParams | None = None,
) -> TrainResult:
    """Mini-batch Adam with early stopping on validation loss.

    Autoencoder tensors step at ``lr_ae``; graph-branch tensors and the
    adjacency at ``lr_st``. Every step uses batches of ``batch_st``.
    Returns the parameters of the best validation epoch.
    """
    if len(train_ft) == 0 or len(val_ft) == 0:
        raise ValueError("train and validation partitions must be non-empty")
    if config.batch_st > len(train_ft):
        raise ValueError(f"batch size {config.batch_st} exceeds the {len(train_ft)} training windows")
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_params(config.seed, dims, adjacency_init)
    ae_group, st_group = params.groups()
    opt = Adam([(ae_group, config.lr_ae), (st_group, config.lr_st)])
    w = config.weights
    if not dims.uses_autoencoder:
        w = replace(w, lam=0.0)
    a_before = _normalized_adjacency(params)
    x_train = train_ft.x.astype(np.float32)
    y_train = train_ft.labels

    history: list[EpochLog] = []
    best_loss = np.inf
    best_state = state_dict(params)
    best_epoch = 0
    wait = 0
    for epoch in range(1, config.max_epochs + 1):
        running, seen = 0.0, 0
        for idx in _batches(len(y_train), config.batch_st, rng):
            opt.zero_grad()
            with T.Tape() as tape:
                out = forward(params, x_train[idx], train=True, dropout=config.dropout, rng=rng)
                loss = outputs_loss(out, y_train[idx], w)
            tape.backward(loss)
            opt.step()
            running += float(loss.data) * len(idx)
            seen += len(idx)
        val_loss, val_acc = validation_loss(params, val_ft, w)
        row = EpochLog(epoch, running / seen, val_loss, val_acc)
        history.append(row)
        log.info("epoch %d train %.4f val %.4f acc %.3f", epoch, row.train_loss, val_loss, val_acc)
        if on_epoch is not None:
            on_epoch(epoch, params, row)
        if val_loss < best_loss:
            best_loss, best_epoch, wait = val_loss, epoch, 0
            best_state = state_dict(params)
        else:
            wait += 1
            if wait >= config.patience:
                break
    load_state_dict(params, best_state)
    return TrainResult(params, history, a_before, _normalized_adjacency(params), best_epoch, float(best_loss))


def inference_latency(params: ModelParams, x: np.ndarray, repeats: int = 50) -> float:
    """Mean wall-clock seconds for one single-window eval-mode forward pass."""
    if len(x) == 0 or repeats < 1:
        raise ValueError("need at least one window and one repeat")
    x = x.astype(np.float32)
    forward(params, x[:1], train=False)  # warm-up
    start = time.perf_counter()
    for i in range(repeats):
        forward(params, x[i % len(x)][None], train=False)
    return (time.perf_counter() - start) / repeats


def evaluate(params: ModelParams, test_ft: FeatureTensor) -> Metrics:
    if len(test_ft) == 0:
        raise ValueError("test partition is empty")
    return compute_metrics(test_ft.labels, predict_scores(params, test_ft.x.astype(np.float32)))


# ablation


def split_hash(*parts: FeatureTensor) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(np.ascontiguousarray(p.trial_index, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(p.labels, dtype=np.int64).tobytes())
    return h.hexdigest()[:16]


@dataclass
class AblationRow:
    variant: str
    description: str
    metrics: Metrics
    params_without_adjacency: int
    params_with_adjacency: int
    best_epoch: int
    split_hash: str = field(default="")


def run_ablation(
    train_ft: FeatureTensor,
    val_ft: FeatureTensor,
    test_ft: FeatureTensor,
    config: TrainConfig,
    n_nodes: int,
    n_classes: int,
    adjacency_init: np.ndarray | None = None,
    variants: str = "ABCD",
) -> list[AblationRow]:
    """Train and score each variant on identical data and seeds."""
    digest = split_hash(train_ft, val_ft, test_ft)
    rows = []
    for v in variants:
        dims = ModelDims(n_nodes, train_ft.x.shape[2], n_classes, config.stgnn_input, v)
        cfg = replace(config, lam=0.0) if v == "C" else config
        result = train(train_ft, val_ft, cfg, dims, adjacency_init)
        totals = parameter_totals(result.params)
        rows.append(
            AblationRow(v, VARIANTS[v], evaluate(result.params, test_ft), totals["total_without_adjacency"],
                        totals["total_with_adjacency"], result.best_epoch, digest)
        )
        log.info("variant %s accuracy %.4f", v, rows[-1].metrics.accuracy)
    return rows


# interpretability


def top_k_edge_deltas(a_before: np.ndarray, a_after: np.ndarray, k: int = 10) -> list[tuple[int, int, float]]:
    """Largest changes of the symmetrized normalized adjacency, upper triangle only.

    Sorted by absolute change, descending; ties by ``(i, j)``.
    """
    a_before = np.asarray(a_before, dtype=float)
    a_after = np.asarray(a_after, dtype=float)
    if a_before.shape != a_after.shape or a_before.ndim != 2 or a_before.shape[0] != a_before.shape[1]:
        raise ValueError(f"adjacency shapes differ or are not square: {a_before.shape} vs {a_after.shape}")
    c = a_before.shape[0]
    n_pairs = c * (c - 1) // 2
    if not 0 <= k <= n_pairs:
        raise ValueError(f"k={k} exceeds the {n_pairs} channel pairs")
    sym_b = (a_before + a_before.T) / 2
    sym_a = (a_after + a_after.T) / 2
    ii, jj = np.triu_indices(c, k=1)
    delta = sym_a[ii, jj] - sym_b[ii, jj]
    order = np.lexsort((jj, ii, -np.abs(delta)))[:k]
    return [(int(ii[o]), int(jj[o]), float(delta[o])) for o in order]
