"""Edge-affinity network: 5 graph-convolution layers feeding a 3-layer MLP,
trained full-batch with hand-derived reverse-mode gradients.

Each graph convolution aggregates the mean over a node's closed
neighbourhood (itself plus its graph neighbours) and applies an affine
map with ReLU; the fifth layer omits the ReLU.  An edge's affinity is
``sigmoid(MLP([h_u, h_v, w_sam]))`` symmetrized over the two node
orders, so it cannot depend on edge direction.

Loss = mean binary cross-entropy over pseudo-labeled edges (scores
clamped to [1e-7, 1 - 1e-7] inside the logs) plus a consistency term
over the unlabeled edges, ``mean |w_sam - 0.5| * |s - w_sam|``: the
further an oracle weight sits from ambiguity, the more the prediction
is pulled toward it.

Parameter file ``.gnn``: magic ``GNN1``, then for each of the eight
layers (five convolutions, then the MLP) ``u32 rows, u32 cols,
rows*cols x f32 weights row-major, rows x f32 bias``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .model import FEATURE_DIM, SuperpointGraph, ValidationError
from .rng import TAG_GNN_INIT, derive_rng

GNN_MAGIC = b"GNN1"

HIDDEN_DIM = 128
GCN_DIMS = [(HIDDEN_DIM, FEATURE_DIM)] + [(HIDDEN_DIM, HIDDEN_DIM)] * 4
MLP_DIMS = [(HIDDEN_DIM, 2 * HIDDEN_DIM + 1), (HIDDEN_DIM, HIDDEN_DIM), (1, HIDDEN_DIM)]

CLAMP_LO = 1e-7
CLAMP_HI = 1.0 - 1e-7


class TrainDivergedError(RuntimeError):
    def __init__(self, epoch: int, loss: float) -> None:
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")


@dataclass
class GnnParameters:
    """Weights (out, in) and biases (out,) for 5 GCN + 3 MLP layers."""

    gcn_weights: list[np.ndarray]
    gcn_biases: list[np.ndarray]
    mlp_weights: list[np.ndarray]
    mlp_biases: list[np.ndarray]

    def validate(self) -> "GnnParameters":
        if len(self.gcn_weights) != 5 or len(self.mlp_weights) != 3:
            raise ValidationError("expected 5 GCN layers and 3 MLP layers")
        for i, (W, b, dims) in enumerate(zip(self.gcn_weights, self.gcn_biases, GCN_DIMS)):
            if W.shape != dims or b.shape != (dims[0],):
                raise ValidationError(f"GCN layer {i}: shape {W.shape}, expected {dims}")
        for i, (W, b, dims) in enumerate(zip(self.mlp_weights, self.mlp_biases, MLP_DIMS)):
            if W.shape != dims or b.shape != (dims[0],):
                raise ValidationError(f"MLP layer {i}: shape {W.shape}, expected {dims}")
        for W in self.gcn_weights + self.mlp_weights:
            if not np.all(np.isfinite(W)):
                raise ValidationError("non-finite parameter values")
        return self

    def tensors(self) -> list[np.ndarray]:
        """All parameter arrays in a fixed order (paired with gradients)."""
        out = []
        for W, b in zip(self.gcn_weights, self.gcn_biases):
            out += [W, b]
        for W, b in zip(self.mlp_weights, self.mlp_biases):
            out += [W, b]
        return out

    def copy(self) -> "GnnParameters":
        return GnnParameters(
            [W.copy() for W in self.gcn_weights],
            [b.copy() for b in self.gcn_biases],
            [W.copy() for W in self.mlp_weights],
            [b.copy() for b in self.mlp_biases],
        )


def init_parameters(seed: int = 0) -> GnnParameters:
    """Glorot-uniform weights, zero biases, deterministic in the seed."""
    rng = derive_rng(seed, TAG_GNN_INIT)

    def glorot(out_dim: int, in_dim: int) -> np.ndarray:
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        return rng.uniform(-limit, limit, size=(out_dim, in_dim))

    gcn_w = [glorot(o, i) for o, i in GCN_DIMS]
    gcn_b = [np.zeros(o) for o, _ in GCN_DIMS]
    mlp_w = [glorot(o, i) for o, i in MLP_DIMS]
    mlp_b = [np.zeros(o) for o, _ in MLP_DIMS]
    return GnnParameters(gcn_w, gcn_b, mlp_w, mlp_b).validate()


def save_params(params: GnnParameters, path: str | Path) -> None:
    with open(path, "wb") as f:
        f.write(GNN_MAGIC)
        for W, b in zip(
            params.gcn_weights + params.mlp_weights, params.gcn_biases + params.mlp_biases
        ):
            rows, cols = W.shape
            f.write(struct.pack("<II", rows, cols))
            f.write(W.astype("<f4").tobytes())
            f.write(b.astype("<f4").tobytes())


def load_params(path: str | Path) -> GnnParameters:
    buf = Path(path).read_bytes()
    if buf[:4] != GNN_MAGIC:
        raise ValidationError(f"{path}: bad parameter file magic {buf[:4]!r}")
    pos = 4
    weights, biases = [], []
    for _ in range(8):
        if pos + 8 > len(buf):
            raise ValidationError(f"{path}: truncated parameter file")
        rows, cols = struct.unpack_from("<II", buf, pos)
        pos += 8
        need = 4 * rows * cols + 4 * rows
        if pos + need > len(buf):
            raise ValidationError(f"{path}: truncated parameter file")
        W = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=pos).reshape(rows, cols)
        pos += 4 * rows * cols
        b = np.frombuffer(buf, dtype="<f4", count=rows, offset=pos)
        pos += 4 * rows
        weights.append(W.astype(np.float64))
        biases.append(b.astype(np.float64))
    if pos != len(buf):
        raise ValidationError(f"{path}: trailing bytes in parameter file")
    return GnnParameters(weights[:5], biases[:5], weights[5:], biases[5:])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    zero_edge_weight: bool = False  # ablation: hide w_sam from the MLP input

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        return self


@dataclass
class GnnGraphData:
    """Dense/sparse arrays extracted from a SuperpointGraph for training."""

    features: np.ndarray  # (n, d) float64
    a_hat: sparse.csr_matrix  # (n, n) row-normalized closed-neighbourhood mean
    edge_index: np.ndarray  # (m, 2) node-row indices
    w_sam: np.ndarray  # (m,) float64
    labels: np.ndarray  # (m,) float64, nan where unlabeled

    @property
    def labeled_mask(self) -> np.ndarray:
        return ~np.isnan(self.labels)


def build_gnn_data(graph: SuperpointGraph) -> GnnGraphData:
    index = graph.node_index()
    n = graph.num_nodes
    feats = []
    for node in graph.nodes:
        if node.feature is None:
            raise ValidationError(f"node {node.sp_id} has no feature")
        feats.append(np.asarray(node.feature, dtype=np.float64))
    features = np.stack(feats) if feats else np.zeros((0, FEATURE_DIM))

    rows, cols = [], []
    for e in graph.edges:
        iu, iv = index[e.u], index[e.v]
        rows += [iu, iv]
        cols += [iv, iu]
    rows += list(range(n))
    cols += list(range(n))
    data = np.ones(len(rows), dtype=np.float64)
    a = sparse.csr_matrix((data, (rows, cols)), shape=(n, n))
    inv_deg = 1.0 / np.asarray(a.sum(axis=1)).reshape(-1)
    a_hat = sparse.diags(inv_deg) @ a

    edge_index = np.zeros((graph.num_edges, 2), dtype=np.int64)
    w_sam = np.zeros(graph.num_edges, dtype=np.float64)
    labels = np.full(graph.num_edges, np.nan, dtype=np.float64)
    for i, e in enumerate(graph.edges):
        if e.w_sam is None:
            raise ValidationError(f"edge ({e.u}, {e.v}) has no w_sam")
        edge_index[i] = (index[e.u], index[e.v])
        w_sam[i] = e.w_sam
        if e.pseudo_label is not None:
            labels[i] = float(e.pseudo_label)
    return GnnGraphData(features, a_hat.tocsr(), edge_index, w_sam, labels)


@dataclass
class _ForwardCache:
    aggregated: list[np.ndarray] = field(default_factory=list)  # A_hat @ H_{l-1}
    pre_act: list[np.ndarray] = field(default_factory=list)  # Z_l
    embeddings: np.ndarray | None = None
    mlp_input: np.ndarray | None = None
    mlp_pre: list[np.ndarray] = field(default_factory=list)
    mlp_act: list[np.ndarray] = field(default_factory=list)
    directed: np.ndarray | None = None  # sigmoid outputs, (2m,)
    scores: np.ndarray | None = None  # symmetrized, (m,)


def gcn_forward(
    data: GnnGraphData, params: GnnParameters, cache: _ForwardCache | None = None
) -> np.ndarray:
    """Per-node embeddings; ReLU on every layer except the last."""
    h = data.features
    last = len(params.gcn_weights) - 1
    for layer, (W, b) in enumerate(zip(params.gcn_weights, params.gcn_biases)):
        m = data.a_hat @ h
        z = m @ W.T + b
        h = z if layer == last else np.maximum(z, 0.0)
        if cache is not None:
            cache.aggregated.append(m)
            cache.pre_act.append(z)
    if cache is not None:
        cache.embeddings = h
    return h


def _mlp_input(
    data: GnnGraphData, embeddings: np.ndarray, zero_edge_weight: bool
) -> np.ndarray:
    """Directed MLP inputs, shape (2m, 2d+1): (u,v) rows then (v,u) rows."""
    hu = embeddings[data.edge_index[:, 0]]
    hv = embeddings[data.edge_index[:, 1]]
    w = np.zeros_like(data.w_sam) if zero_edge_weight else data.w_sam
    fwd = np.concatenate([hu, hv, w[:, None]], axis=1)
    rev = np.concatenate([hv, hu, w[:, None]], axis=1)
    return np.concatenate([fwd, rev], axis=0)


def edge_scores(
    data: GnnGraphData,
    params: GnnParameters,
    zero_edge_weight: bool = False,
    cache: _ForwardCache | None = None,
) -> np.ndarray:
    """Symmetrized edge affinities s = (f(u,v) + f(v,u)) / 2 in (0, 1)."""
    embeddings = gcn_forward(data, params, cache)
    x = _mlp_input(data, embeddings, zero_edge_weight)
    act = x
    pre_list, act_list = [], []
    last = len(params.mlp_weights) - 1
    for layer, (W, b) in enumerate(zip(params.mlp_weights, params.mlp_biases)):
        z = act @ W.T + b
        act = z if layer == last else np.maximum(z, 0.0)
        pre_list.append(z)
        act_list.append(act)
    logits = act[:, 0]
    f = 1.0 / (1.0 + np.exp(-logits))
    m = data.edge_index.shape[0]
    s = 0.5 * (f[:m] + f[m:])
    if cache is not None:
        cache.mlp_input = x
        cache.mlp_pre = pre_list
        cache.mlp_act = act_list
        cache.directed = f
        cache.scores = s
    return s


def edge_affinity(
    data: GnnGraphData, params: GnnParameters, edge_pos: int, zero_edge_weight: bool = False
) -> float:
    """Affinity of one edge (by position in the edge list)."""
    return float(edge_scores(data, params, zero_edge_weight)[edge_pos])


def loss_value(
    s: np.ndarray, data: GnnGraphData
) -> tuple[float, np.ndarray]:
    """Total loss and dL/ds.

    BCE is averaged over labeled edges with s clamped inside the logs;
    the consistency term |w - 0.5| * |s - w| is averaged over unlabeled
    edges.  Either set may be empty (contributing zero), but not both.
    """
    labeled = data.labeled_mask
    unlabeled = ~labeled
    n_lab = int(labeled.sum())
    n_unlab = int(unlabeled.sum())
    if n_lab == 0 and n_unlab == 0:
        raise ValidationError("graph has no labeled and no unlabeled edges")

    grad = np.zeros_like(s)
    loss = 0.0
    if n_lab:
        y = data.labels[labeled]
        sc = np.clip(s[labeled], CLAMP_LO, CLAMP_HI)
        loss += float(-np.mean(y * np.log(sc) + (1.0 - y) * np.log(1.0 - sc)))
        active = (s[labeled] > CLAMP_LO) & (s[labeled] < CLAMP_HI)
        g = -(y / sc - (1.0 - y) / (1.0 - sc)) / n_lab
        grad[labeled] = np.where(active, g, 0.0)
    if n_unlab:
        w = data.w_sam[unlabeled]
        diff = s[unlabeled] - w
        loss += float(np.mean(np.abs(w - 0.5) * np.abs(diff)))
        grad[unlabeled] = np.abs(w - 0.5) * np.sign(diff) / n_unlab
    return loss, grad


def loss_and_gradients(
    data: GnnGraphData, params: GnnParameters, zero_edge_weight: bool = False
) -> tuple[float, list[np.ndarray], np.ndarray]:
    """Loss, gradients (ordered like params.tensors()), and edge scores."""
    cache = _ForwardCache()
    s = edge_scores(data, params, zero_edge_weight, cache)
    loss, ds = loss_value(s, data)

    m = data.edge_index.shape[0]
    df = np.concatenate([ds, ds]) * 0.5  # d s / d f = 1/2 per direction
    dz = df * cache.directed * (1.0 - cache.directed)  # sigmoid'

    mlp_grads_w: list[np.ndarray] = [None] * 3  # type: ignore[list-item]
    mlp_grads_b: list[np.ndarray] = [None] * 3  # type: ignore[list-item]
    delta = dz[:, None]  # gradient on the current layer's pre-activation
    for layer in (2, 1, 0):
        inputs = cache.mlp_act[layer - 1] if layer > 0 else cache.mlp_input
        mlp_grads_w[layer] = delta.T @ inputs
        mlp_grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            d_act = delta @ params.mlp_weights[layer]
            delta = d_act * (cache.mlp_pre[layer - 1] > 0.0)
    dx = delta @ params.mlp_weights[0]  # gradient on the MLP input rows

    d = cache.embeddings.shape[1]
    dh = np.zeros_like(cache.embeddings)
    iu, iv = data.edge_index[:, 0], data.edge_index[:, 1]
    np.add.at(dh, iu, dx[:m, :d])
    np.add.at(dh, iv, dx[:m, d : 2 * d])
    np.add.at(dh, iv, dx[m:, :d])
    np.add.at(dh, iu, dx[m:, d : 2 * d])

    gcn_grads_w: list[np.ndarray] = [None] * 5  # type: ignore[list-item]
    gcn_grads_b: list[np.ndarray] = [None] * 5  # type: ignore[list-item]
    grad_h = dh
    for layer in (4, 3, 2, 1, 0):
        dz_l = grad_h if layer == 4 else grad_h * (cache.pre_act[layer] > 0.0)
        gcn_grads_w[layer] = dz_l.T @ cache.aggregated[layer]
        gcn_grads_b[layer] = dz_l.sum(axis=0)
        if layer > 0:
            grad_h = data.a_hat.T @ (dz_l @ params.gcn_weights[layer])

    grads: list[np.ndarray] = []
    for gw, gb in zip(gcn_grads_w, gcn_grads_b):
        grads += [gw, gb]
    for gw, gb in zip(mlp_grads_w, mlp_grads_b):
        grads += [gw, gb]
    return loss, grads, s


@dataclass
class TrainResult:
    params: GnnParameters
    losses: list[float]


def train(
    graph: SuperpointGraph, config: TrainConfig = TrainConfig()
) -> TrainResult:
    """Full-batch adaptive-moment gradient descent; deterministic in the seed."""
    config.validate()
    data = build_gnn_data(graph)
    params = init_parameters(config.seed)
    tensors = params.tensors()
    m_state = [np.zeros_like(t) for t in tensors]
    v_state = [np.zeros_like(t) for t in tensors]
    losses: list[float] = []
    for epoch in range(config.epochs):
        loss, grads, _ = loss_and_gradients(data, params, config.zero_edge_weight)
        if not np.isfinite(loss):
            raise TrainDivergedError(epoch, loss)
        losses.append(loss)
        t = epoch + 1
        for i, (tensor, grad) in enumerate(zip(tensors, grads)):
            m_state[i] = config.beta1 * m_state[i] + (1.0 - config.beta1) * grad
            v_state[i] = config.beta2 * v_state[i] + (1.0 - config.beta2) * grad * grad
            m_hat = m_state[i] / (1.0 - config.beta1**t)
            v_hat = v_state[i] / (1.0 - config.beta2**t)
            tensor -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
    return TrainResult(params=params, losses=losses)


def apply_affinities(
    graph: SuperpointGraph, params: GnnParameters, zero_edge_weight: bool = False
) -> SuperpointGraph:
    """Writes symmetrized affinities into edge.affinity (float32-rounded)."""
    if graph.num_edges == 0:
        return graph
    data = build_gnn_data(graph)
    s = edge_scores(data, params, zero_edge_weight)
    for e, val in zip(graph.edges, s):
        e.affinity = float(np.float32(val))
    return graph
