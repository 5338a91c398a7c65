"""Estimate P(A | Y) by counting and draw label-conditional dummy attributes."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class ConditionalTable:
    probs: np.ndarray       # K x 2, probs[y, a] = P(A=a | Y=y)
    marginal_a: np.ndarray  # length 2, P(A=a)
    counts: np.ndarray      # K x 2 joint counts
    smoothing: float = 1.0

    @property
    def class_count(self) -> int:
        return self.probs.shape[0]

    def to_json(self) -> str:
        return json.dumps({
            "counts": self.counts.tolist(),
            "probs": self.probs.tolist(),
            "marginal_a": self.marginal_a.tolist(),
            "smoothing": self.smoothing,
        }, indent=2)


def fit_conditional(labels, sensitive, class_count: int | None = None,
                    smoothing: float = 1.0) -> ConditionalTable:
    """Count-based P(A=a | Y=y) with a Laplace pseudo-count per cell.

    With ``smoothing=0`` this is exactly P(A=a|Y=y) = count(y,a) / count(y),
    which is what the Bayes-rule route P(Y|A)P(A) / sum_a' P(Y|A=a')P(A=a')
    collapses to when every factor is itself a count ratio.
    """
    labels = np.asarray(labels, dtype=np.int64)
    sensitive = np.asarray(sensitive, dtype=np.int64)
    if labels.size == 0:
        raise SamplerError("cannot fit the sampler on an empty training set")
    if labels.shape != sensitive.shape:
        raise SamplerError("labels and sensitive attributes must align")
    if not np.isin(sensitive, (0, 1)).all():
        raise SamplerError("sensitive attribute must be binary 0/1")
    k = int(labels.max()) + 1 if class_count is None else int(class_count)
    if labels.min() < 0 or labels.max() >= k:
        raise SamplerError(f"labels must lie in 0..{k - 1}")
    if smoothing < 0:
        raise SamplerError("smoothing must be non-negative")

    counts = np.zeros((k, 2), dtype=np.int64)
    np.add.at(counts, (labels, sensitive), 1)
    per_class = counts.sum(axis=1)
    if smoothing == 0 and (per_class == 0).any():
        empty = np.flatnonzero(per_class == 0).tolist()
        raise SamplerError(f"classes {empty} have no training nodes; use smoothing > 0")
    probs = (counts + smoothing) / (per_class[:, None] + 2.0 * smoothing)
    marginal = counts.sum(axis=0) / counts.sum()
    return ConditionalTable(probs=probs, marginal_a=marginal, counts=counts,
                            smoothing=float(smoothing))


def bayes_conditional(counts: np.ndarray) -> np.ndarray:
    """P(A|Y) evaluated literally through Bayes' rule from a K x 2 count table."""
    counts = np.asarray(counts, dtype=np.float64)
    p_a = counts.sum(axis=0) / counts.sum()
    p_y_given_a = counts / counts.sum(axis=0, keepdims=True)
    joint = p_y_given_a * p_a[None, :]
    return joint / joint.sum(axis=1, keepdims=True)


def sample_dummies(table: ConditionalTable, labels, rng: np.random.Generator) -> np.ndarray:
    """One independent draw of Ã_i ~ P(A | Y=labels_i) per entry."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= table.class_count):
        raise SamplerError(f"labels must lie in 0..{table.class_count - 1}")
    p1 = table.probs[labels, 1]
    return (rng.random(labels.shape) < p1).astype(np.int64)


def sample_marginal(table: ConditionalTable, size: int, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(size) < table.marginal_a[1]).astype(np.int64)
