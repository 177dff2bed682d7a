"""Dense graph convolutional classifier trained by full-batch gradient descent.

Each layer is ``A_hat H W + b`` with ``A_hat = D^-1/2 (A + I) D^-1/2``; hidden
layers apply ReLU. Gradients are written out by hand (no autodiff).
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import entr, log_softmax, softmax

from .errors import InvalidArgument, NumericalFailure
from .graph import Graph

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "graphgda-gcn"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 8
    layers: int = 2
    learning_rate: float = 5e-2
    epochs: int = 1000
    seed: int = 0
    weight_init_scale: float = 1.0

    def __post_init__(self):
        if self.hidden < 1 or self.layers < 1 or self.epochs < 0:
            raise InvalidArgument("hidden and layers must be >= 1, epochs >= 0")
        if not self.learning_rate > 0 or not self.weight_init_scale > 0:
            raise InvalidArgument("learning rate and init scale must be positive")

    @classmethod
    def heavy(cls, **kw) -> "TrainConfig":
        """Three layers of width 16."""
        return cls(hidden=16, layers=3, **kw)


@dataclass(frozen=True)
class GCNModel:
    """Weights ``W[l]`` (fan_in x fan_out) and biases ``b[l]`` per layer."""

    weights: tuple
    biases: tuple
    loss_history: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        W = tuple(np.array(w, dtype=float) for w in self.weights)
        b = tuple(np.array(v, dtype=float).reshape(-1) for v in self.biases)
        if len(W) != len(b) or not W:
            raise InvalidArgument("need one bias per weight matrix")
        for i, (w, v) in enumerate(zip(W, b)):
            if w.ndim != 2 or v.shape != (w.shape[1],):
                raise InvalidArgument(f"layer {i}: weight {w.shape} and bias {v.shape} disagree")
            if i and W[i - 1].shape[1] != w.shape[0]:
                raise InvalidArgument(f"layer {i}: input width {w.shape[0]} != {W[i - 1].shape[1]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(v))):
                raise InvalidArgument("model parameters must be finite")
            w.setflags(write=False)
            v.setflags(write=False)
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", b)

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    # two-layer names
    @property
    def W1(self):
        return self.weights[0]

    @property
    def b1(self):
        return self.biases[0]

    @property
    def W2(self):
        return self.weights[1]

    @property
    def b2(self):
        return self.biases[1]


def init_model(in_dim: int, num_classes: int, cfg: TrainConfig) -> GCNModel:
    """Uniform ``[-s, s]`` weights with ``s = scale * sqrt(6 / (fan_in + fan_out))``, zero biases."""
    rng = np.random.default_rng(cfg.seed)
    dims = [in_dim] + [cfg.hidden] * (cfg.layers - 1) + [num_classes]
    Ws, bs = [], []
    for fi, fo in zip(dims[:-1], dims[1:]):
        s = cfg.weight_init_scale * np.sqrt(6.0 / (fi + fo))
        Ws.append(rng.uniform(-s, s, size=(fi, fo)))
        bs.append(np.zeros(fo))
    return GCNModel(tuple(Ws), tuple(bs))


def normalize_adjacency(graph) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the degrees of ``A + I``."""
    A = graph.adjacency if isinstance(graph, Graph) else np.asarray(graph, float)
    if np.any(A < 0):
        raise InvalidArgument("adjacency entries must be nonnegative")
    At = A + np.eye(A.shape[0])
    s = 1.0 / np.sqrt(At.sum(1))
    out = At * s[:, None] * s[None, :]
    return (out + out.T) / 2.0


def _check_compat(model: GCNModel, graph: Graph):
    if graph.d != model.in_dim:
        raise InvalidArgument(f"model expects {model.in_dim} features, graph has {graph.d}")


def _forward(model: GCNModel, A_hat, AX):
    """Logits plus the cached activations backprop needs.

    ``AX`` is ``A_hat X`` for the first layer, computed once per graph.
    """
    acts = []          # input to each layer after propagation: A_hat H
    pre = []           # pre-activations of hidden layers
    agg = AX
    L = model.num_layers
    for l in range(L):
        acts.append(agg)
        Z = agg @ model.weights[l] + model.biases[l]
        if l == L - 1:
            return Z, acts, pre
        pre.append(Z)
        agg = A_hat @ np.maximum(Z, 0.0)


def forward(model: GCNModel, graph: Graph, A_hat=None) -> np.ndarray:
    """Logits ``A_hat ReLU(A_hat X W1 + b1) W2 + b2`` (``n x C``)."""
    _check_compat(model, graph)
    A_hat = normalize_adjacency(graph) if A_hat is None else A_hat
    logits, _, _ = _forward(model, A_hat, A_hat @ graph.features)
    return logits


def _loss_and_grads(model: GCNModel, A_hat, AX, labels, weights, need_grad=True):
    logits, acts, pre = _forward(model, A_hat, AX)
    total = weights.sum()
    logp = log_softmax(logits, axis=1)
    n = logits.shape[0]
    loss = -float(np.sum(weights * logp[np.arange(n), labels])) / total
    if not need_grad:
        return loss, None
    dZ = np.exp(logp)
    dZ[np.arange(n), labels] -= 1.0
    dZ *= (weights / total)[:, None]
    L = model.num_layers
    gW = [None] * L
    gb = [None] * L
    for l in range(L - 1, -1, -1):
        gW[l] = acts[l].T @ dZ
        gb[l] = dZ.sum(0)
        if l:
            dH = A_hat.T @ (dZ @ model.weights[l].T)
            dZ = dH * (pre[l - 1] > 0)
    return loss, (gW, gb)


def loss_and_gradients(model: GCNModel, graph: Graph, labels, sample_weights=None):
    """Weighted cross-entropy ``sum_i w_i CE_i / sum_i w_i`` and its parameter gradients.

    Returns ``(loss, (dW list, db list))``.
    """
    _check_compat(model, graph)
    labels, w = _check_targets(model, graph, labels, sample_weights)
    if w.sum() <= 0:
        raise InvalidArgument("sample weights sum to zero")
    A_hat = normalize_adjacency(graph)
    return _loss_and_grads(model, A_hat, A_hat @ graph.features, labels, w)


def _check_targets(model, graph, labels, sample_weights):
    y = np.asarray(labels)
    if y.shape != (graph.n,):
        raise InvalidArgument(f"need {graph.n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise InvalidArgument("labels must be integers")
    if np.any(y < 0) or np.any(y >= model.num_classes):
        raise InvalidArgument(f"labels must lie in 0..{model.num_classes - 1}")
    w = np.ones(graph.n) if sample_weights is None else np.asarray(sample_weights, float)
    if w.shape != (graph.n,) or np.any(w < 0) or np.any(w > 1) or not np.all(np.isfinite(w)):
        raise InvalidArgument("sample weights must be a length-n vector in [0, 1]")
    return y.astype(np.int64), w


def train(graph: Graph, labels, sample_weights=None, cfg: TrainConfig | None = None,
          init: GCNModel | None = None, num_classes: Optional[int] = None) -> GCNModel:
    """Full-batch gradient descent on the confidence-weighted cross-entropy.

    Parameters
    ----------
    graph : Graph
        Training graph (its own labels are ignored).
    labels : (n,) int array
        Targets, ground truth or pseudo-labels.
    sample_weights : (n,) array in [0, 1], optional
        Per-node weights; all zero leaves the starting model unchanged.
    cfg : TrainConfig
    init : GCNModel, optional
        Warm start; otherwise a seeded fresh model.
    num_classes : int, optional
        Class count for a fresh model; defaults to ``max(labels) + 1`` (at least 2).
    """
    cfg = cfg or TrainConfig()
    if init is None:
        C = num_classes if num_classes is not None else max(2, int(np.max(labels)) + 1)
        init = init_model(graph.d, C, cfg)
    model = init
    _check_compat(model, graph)
    y, w = _check_targets(model, graph, labels, sample_weights)
    if w.sum() <= 0:
        return model
    A_hat = normalize_adjacency(graph)
    AX = A_hat @ graph.features
    Ws = [W.copy() for W in model.weights]
    bs = [b.copy() for b in model.biases]
    history = []
    cur = GCNModel(tuple(Ws), tuple(bs))
    # overflow shows up as a non-finite loss, which is checked every step
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            loss, (gW, gb) = _loss_and_grads(cur, A_hat, AX, y, w)
            if not np.isfinite(loss):
                raise NumericalFailure(f"training loss became {loss} at epoch {epoch}")
            history.append(loss)
            for l in range(len(Ws)):
                Ws[l] -= cfg.learning_rate * gW[l]
                bs[l] -= cfg.learning_rate * gb[l]
            cur = _unchecked(Ws, bs)
        final, _ = _loss_and_grads(cur, A_hat, AX, y, w, need_grad=False)
    if not np.isfinite(final):
        raise NumericalFailure("training loss is not finite after the last step")
    history.append(final)
    return GCNModel(tuple(Ws), tuple(bs), tuple(history))


def _unchecked(Ws, bs) -> GCNModel:
    # the training loop rebuilds the model every step; skip validation there
    m = object.__new__(GCNModel)
    object.__setattr__(m, "weights", tuple(Ws))
    object.__setattr__(m, "biases", tuple(bs))
    object.__setattr__(m, "loss_history", ())
    return m


def predict(model: GCNModel, graph: Graph, A_hat=None):
    """Hard labels (argmax, lowest index on ties) and row-wise softmax probabilities."""
    logits = forward(model, graph, A_hat)
    probs = softmax(logits, axis=1)
    return np.argmax(probs, axis=1), probs


def entropy_confidence(probs) -> np.ndarray:
    """Min-max normalized complement of the prediction entropy.

    ``conf_i = (max_j H_j - H_i) / (max_j H_j - min_j H_j)`` with natural-log
    entropies over the rows given. If all entropies are equal every node gets 1.
    """
    P = np.asarray(probs, float)
    if P.ndim != 2:
        raise InvalidArgument("probabilities must be an n x C matrix")
    H = entr(P).sum(1)
    hi, lo = H.max(), H.min()
    if hi - lo <= 0:
        return np.ones(P.shape[0])
    conf = (hi - H) / (hi - lo)
    conf[H == lo] = 1.0
    conf[H == hi] = 0.0
    return np.clip(conf, 0.0, 1.0)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def model_to_dict(model: GCNModel, cfg: TrainConfig | None = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(cfg) if cfg is not None else None,
        "layers": [
            {"W_shape": list(W.shape), "W": W.ravel().tolist(), "b": b.tolist()}
            for W, b in zip(model.weights, model.biases)
        ],
    }


def model_from_dict(data: dict) -> GCNModel:
    if data.get("format") != CHECKPOINT_FORMAT:
        raise InvalidArgument("not a GCN checkpoint")
    if data.get("version") != CHECKPOINT_VERSION:
        raise InvalidArgument(f"unsupported checkpoint version {data.get('version')}")
    Ws, bs = [], []
    for layer in data["layers"]:
        Ws.append(np.asarray(layer["W"], float).reshape(layer["W_shape"]))
        bs.append(np.asarray(layer["b"], float))
    return GCNModel(tuple(Ws), tuple(bs))


def save_model(model: GCNModel, path, cfg: TrainConfig | None = None) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, cfg), fh)
    return path


def load_model(path) -> GCNModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
