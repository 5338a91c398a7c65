"""Two graph-convolution layers followed by a fully connected class head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .graph_data import GraphDataset, Split
from .optim import ParamCollection, adam_step, glorot
from .rng import substream


@dataclass(frozen=True)
class ClassifierShape:
    in_dim: int
    class_count: int
    hidden1: int = 64
    hidden2: int = 64


def init_classifier(shape: ClassifierShape, rng: np.random.Generator) -> ParamCollection:
    p = ParamCollection()
    p.add("W1", glorot(rng, shape.in_dim, shape.hidden1))
    p.add("b1", np.zeros((1, shape.hidden1)))
    p.add("W2", glorot(rng, shape.hidden1, shape.hidden2))
    p.add("b2", np.zeros((1, shape.hidden2)))
    p.add("W_head", glorot(rng, shape.hidden2, shape.class_count))
    p.add("b_head", np.zeros((1, shape.class_count)))
    return p


def classifier_forward(params: ParamCollection, features, adjacency: sp.spmatrix,
                       dropout_masks: tuple[np.ndarray, np.ndarray] | None = None):
    """Return ``(logits, hidden)`` for every node.

    hidden = Â·relu(Â·X·W1 + b1)·W2 + b2 with no activation on the second layer
    output; logits = hidden·W_head + b_head.
    """
    x = ad.const(features)
    if dropout_masks is not None:
        x = ad.dropout(x, dropout_masks[0])
    z1 = ad.relu(ad.add_bias(ad.sparse_matmul(adjacency, ad.matmul(x, params["W1"])), params["b1"]))
    if dropout_masks is not None:
        z1 = ad.dropout(z1, dropout_masks[1])
    hidden = ad.add_bias(ad.sparse_matmul(adjacency, ad.matmul(z1, params["W2"])), params["b2"])
    logits = ad.add_bias(ad.matmul(hidden, params["W_head"]), params["b_head"])
    return logits, hidden


def task_loss(logits: ad.Var, labels, idx) -> ad.Var:
    idx = np.asarray(idx)
    if idx.size == 0:
        raise ValueError("task loss needs at least one labelled node")
    return ad.loss_cce(ad.take_rows(logits, idx), np.asarray(labels)[idx])


def dropout_masks(rng: np.random.Generator, n: int, in_dim: int, hidden1: int,
                  rate: float) -> tuple[np.ndarray, np.ndarray] | None:
    if rate <= 0:
        return None
    keep = 1.0 - rate
    return ((rng.random((n, in_dim)) < keep) / keep,
            (rng.random((n, hidden1)) < keep) / keep)


def predict_proba(params: ParamCollection, dataset: GraphDataset) -> np.ndarray:
    logits, _ = classifier_forward(params, dataset.features, dataset.adjacency)
    return ad.softmax_rows(logits).value


def train_gcn_baseline(dataset: GraphDataset, split: Split, seed: int, hidden=(64, 64),
                       lr: float = 1e-3, weight_decay: float = 1e-5, patience: int = 50,
                       max_epochs: int = 1000, dropout: float = 0.0):
    """Plain classifier training with validation early stopping.

    Standalone reference for the unregularised model: it shares only the
    initialiser, forward pass and optimiser with the adversarial trainer, so
    the two can be compared run for run.  Returns ``(best_state, best_epoch,
    val_history)``.
    """
    shape = ClassifierShape(dataset.feature_dim, dataset.class_count, *hidden)
    params = init_classifier(shape, substream(seed, "init_classifier"))
    drop_rng = substream(seed, "dropout")
    best_state, best_epoch, best_val = params.state_dict(), 0, np.inf
    history = []
    for epoch in range(1, max_epochs + 1):
        masks = dropout_masks(drop_rng, dataset.node_count, shape.in_dim, shape.hidden1, dropout)
        logits, _ = classifier_forward(params, dataset.features, dataset.adjacency, masks)
        loss = task_loss(logits, dataset.labels, split.train_idx)
        params.zero_grad()
        ad.backward(loss)
        adam_step(params, lr=lr, weight_decay=weight_decay)
        logits, _ = classifier_forward(params, dataset.features, dataset.adjacency)
        val = float(task_loss(logits, dataset.labels, split.val_idx).value)
        history.append((float(loss.value), val))
        if val < best_val:
            best_val, best_epoch, best_state = val, epoch, params.state_dict()
        elif epoch - best_epoch >= patience:
            break
    return best_state, best_epoch, history
