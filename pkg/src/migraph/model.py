"""Full two-branch model, its ablation variants and parameter bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .drdcae import LATENT, DRDCAEParams, drdcae_forward
from .layers import Affine, count, named_tensors
from .stgnn import LearnableAdjacency, STGNNParams, stgnn_forward
from .tensor import Tensor

VARIANTS = {
    "A": "full model",
    "B": "graph branch replaced by a two-layer fully connected network",
    "C": "autoencoder removed, scaled features fed to the graph branch",
    "D": "residual connections removed from the graph layers",
}


@dataclass(frozen=True)
class ModelDims:
    n_nodes: int = 22
    n_features: int = 18
    n_classes: int = 4
    stgnn_input: str = "features"  # or "latent"
    variant: str = "A"

    def __post_init__(self):
        if self.stgnn_input not in ("features", "latent"):
            raise ValueError(f"stgnn_input must be 'features' or 'latent', got {self.stgnn_input!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.n_nodes < 2:
            raise ValueError("need at least 2 nodes")

    @property
    def uses_autoencoder(self) -> bool:
        return self.variant != "C"

    @property
    def uses_graph(self) -> bool:
        return self.variant != "B"


@dataclass
class MlpParams:
    """Variant B replacement for the graph branch."""

    hidden: Affine
    out: Affine


@dataclass
class ModelParams:
    dims: ModelDims
    ae: DRDCAEParams | None
    st: STGNNParams | None
    mlp: MlpParams | None
    adjacency: LearnableAdjacency | None

    def groups(self) -> tuple[list[Tensor], list[Tensor]]:
        """(autoencoder tensors, graph-branch tensors incl. adjacency)."""
        ae = [t for _, t in named_tensors(self.ae)] if self.ae is not None else []
        st = [t for _, t in named_tensors(self.st)] if self.st is not None else []
        st += [t for _, t in named_tensors(self.mlp)] if self.mlp is not None else []
        if self.adjacency is not None:
            st.append(self.adjacency.A)
        return ae, st

    def named(self):
        yield from named_tensors(self.ae, "ae")
        yield from named_tensors(self.st, "st")
        yield from named_tensors(self.mlp, "mlp")
        if self.adjacency is not None:
            yield "adjacency.A", self.adjacency.A


def init_params(seed: int, dims: ModelDims, adjacency_init: np.ndarray | None = None,
                dtype=np.float32) -> ModelParams:
    """Kaiming-normal conv kernels, Xavier-uniform matrices, zero biases.

    The raw adjacency starts at ``adjacency_init`` (a Pearson matrix in
    practice) or at zeros when none is given.
    """
    rng = np.random.default_rng(seed)
    ae = DRDCAEParams.create(rng, dims.n_features, dims.n_classes, dtype) if dims.uses_autoencoder else None
    st = mlp = adj = None
    latent = LATENT if dims.stgnn_input == "latent" and dims.uses_autoencoder else None
    in_dim = latent or dims.n_features
    if dims.uses_graph:
        st = STGNNParams.create(rng, dims.n_features, dims.n_classes, residual=dims.variant != "D",
                                latent_dim=latent, dtype=dtype)
        a0 = np.zeros((dims.n_nodes, dims.n_nodes)) if adjacency_init is None else adjacency_init
        if np.shape(a0) != (dims.n_nodes, dims.n_nodes):
            raise ValueError(f"adjacency init {np.shape(a0)} does not match {dims.n_nodes} nodes")
        adj = LearnableAdjacency.from_matrix(a0, dtype)
    else:
        mlp = MlpParams(Affine.xavier(rng, dims.n_nodes * in_dim, 64, dtype), Affine.xavier(rng, 64, dims.n_classes, dtype))
    return ModelParams(dims, ae, st, mlp, adj)


@dataclass
class Outputs:
    x_ae: Tensor | None  # autoencoder input [B, F, N]
    x_hat: Tensor | None
    ae_logits: Tensor | None
    st_logits: Tensor
    alpha: Tensor | None
    a_norm: Tensor | None


def forward(params: ModelParams, x: np.ndarray | Tensor, train: bool = False, dropout: float = 0.0,
            rng: np.random.Generator | None = None) -> Outputs:
    """Run both branches on features ``x[B, N, F]``."""
    x = T.as_tensor(x)
    d = params.dims
    if x.ndim != 3 or x.shape[1] != d.n_nodes or x.shape[2] != d.n_features:
        raise ValueError(f"model expects [B, {d.n_nodes}, {d.n_features}], got {x.shape}")
    x_ae = x_hat = ae_logits = None
    st_in = x
    if params.ae is not None:
        x_ae = T.transpose(x, (0, 2, 1))
        z, x_hat, ae_logits = drdcae_forward(x_ae, params.ae)
        if d.stgnn_input == "latent":
            st_in = T.transpose(z, (0, 2, 1))
    if params.st is not None:
        logits, alpha, a_norm = stgnn_forward(st_in, params.st, params.adjacency, train, dropout, rng)
        return Outputs(x_ae, x_hat, ae_logits, logits, alpha, a_norm)
    b = st_in.shape[0]
    flat = T.reshape(st_in, (b, -1))
    hidden = T.relu(T.linear(flat, params.mlp.hidden.weight, params.mlp.hidden.bias))
    hidden = T.dropout(hidden, dropout, rng, train)
    return Outputs(x_ae, x_hat, ae_logits, T.linear(hidden, params.mlp.out.weight, params.mlp.out.bias), None, None)


def layer_counts(params: ModelParams) -> dict[str, int]:
    """Trainable parameter counts per reported layer (adjacency listed separately)."""
    out: dict[str, int] = {}
    if params.ae is not None:
        ae = params.ae
        out["ae.dense_block"] = count(ae.dense)
        out["ae.conv1d"] = count(ae.encoder)
        out["ae.ct1d"] = count(ae.decoder)
        out["ae.linear_hidden"] = count(ae.head.hidden)
        out["ae.linear_out"] = count(ae.head.out)
    if params.st is not None:
        st = params.st
        if st.input_proj is not None:
            out["st.input_proj"] = count(st.input_proj)
        out["st.gc1"] = count(st.gc1)
        out["st.gc2"] = count(st.gc2)
        out["st.bilstm"] = count(st.lstm)
        out["st.attention"] = count(st.attn)
        out["st.linear_hidden"] = count(st.head.hidden)
        out["st.linear_out"] = count(st.head.out)
    if params.mlp is not None:
        out["mlp.hidden"] = count(params.mlp.hidden)
        out["mlp.out"] = count(params.mlp.out)
    if params.adjacency is not None:
        out["adjacency"] = params.adjacency.A.size
    return out


def parameter_totals(params: ModelParams) -> dict[str, int]:
    counts = layer_counts(params)
    ae = sum(v for k, v in counts.items() if k.startswith("ae."))
    graph = sum(v for k, v in counts.items() if k.startswith(("st.", "mlp.")))
    adj = counts.get("adjacency", 0)
    return {"ae": ae, "graph": graph, "adjacency": adj,
            "total_without_adjacency": ae + graph, "total_with_adjacency": ae + graph + adj}


def analytic_counts(n_features: int = 18, n_classes: int = 4, n_nodes: int = 22) -> dict[str, int]:
    """Closed-form layer sizes of the default configuration."""
    g, k = 16, 3
    dense = sum((n_features + i * g) * g * k + g for i in range(3))
    dense_out = n_features + 3 * g
    h, lstm_h = 32, 32
    return {
        "ae.dense_block": dense,
        "ae.conv1d": dense_out * 64 + 64,
        "ae.ct1d": 64 * n_features + n_features,
        "ae.linear_hidden": 64 * 64 + 64,
        "ae.linear_out": 64 * n_classes + n_classes,
        "st.gc1": n_features * h + h + 2 * h,
        "st.gc2": h * h + h + 2 * h,
        "st.bilstm": 2 * 4 * ((h + lstm_h) * lstm_h + lstm_h),
        "st.attention": (2 * lstm_h) * 64 + 64 + 64 + 1,
        "st.linear_hidden": 2 * lstm_h * 64 + 64,
        "st.linear_out": 64 * n_classes + n_classes,
        "adjacency": n_nodes * n_nodes,
    }
