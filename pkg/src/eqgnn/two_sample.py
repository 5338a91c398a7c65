"""Paired two-sample tests on synthetic Gaussian pairs.

Four learned tests are compared: an unpaired t-test and a paired t-test on
a learned linear projection, a classifier two-sample test (C2ST), and the
permutation test, where a classifier guesses whether each concatenated pair
was swapped.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import autodiff as ad
from .optim import ParamCollection, adam_step, glorot
from .rng import substream

SHIFT_EPS = 0.1
ROTATION_THETA = np.pi / 2
# keeps the learned t² finite when the projected variance vanishes
_TINY_VAR = 1e-12
# Width of the hidden layer of the C2ST and swap classifiers; 0 gives a plain
# logistic model.  A logistic swap detector cannot beat chance on rotated
# pairs: its loss is convex and symmetric, so the optimum is w = 0.
CLASSIFIER_HIDDEN = 16


@dataclass(frozen=True)
class PairedSample:
    x1: np.ndarray
    x2: np.ndarray

    def __post_init__(self):
        if self.x1.shape != self.x2.shape or self.x1.ndim != 2 or self.x1.shape[1] < 1:
            raise ValueError(f"paired groups need equal N x d shapes, got {self.x1.shape} and {self.x2.shape}")

    @property
    def n(self) -> int:
        return self.x1.shape[0]

    @property
    def dim(self) -> int:
        return self.x1.shape[1]

    def take(self, idx) -> "PairedSample":
        return PairedSample(self.x1[idx], self.x2[idx])

    def swapped(self) -> "PairedSample":
        return PairedSample(self.x2, self.x1)


@dataclass
class TwoSampleResult:
    t_statistic: float
    p_value: float
    n_test: int
    test_accuracy: float | None = None
    zero_variance: bool = False


def gen_shift(n: int, seed: int, eps: float = SHIFT_EPS, dim: int = 2) -> PairedSample:
    x1 = np.random.default_rng(seed).standard_normal((n, dim))
    x2 = x1.copy()
    x2[:, 0] += eps
    return PairedSample(x1, x2)


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    if theta == np.pi / 2:
        c, s = 0.0, 1.0
    return np.array([[c, -s], [s, c]])


def gen_rotation(n: int, seed: int, theta: float = ROTATION_THETA) -> PairedSample:
    x1 = np.random.default_rng(seed).standard_normal((n, 2))
    return PairedSample(x1, x1 @ rotation_matrix(theta).T)


def gen_independent(n: int, seed: int, dim: int = 2) -> PairedSample:
    """Null data: X2 is an independent copy of X1's distribution."""
    rng = np.random.default_rng(seed)
    return PairedSample(rng.standard_normal((n, dim)), rng.standard_normal((n, dim)))


def gen_identical(n: int, seed: int, dim: int = 2) -> PairedSample:
    x1 = np.random.default_rng(seed).standard_normal((n, dim))
    return PairedSample(x1, x1.copy())


def train_test_split(sample: PairedSample, split_ratio: float, rng: np.random.Generator):
    if not 0 < split_ratio < 1:
        raise ValueError("split_ratio must lie strictly between 0 and 1")
    perm = rng.permutation(sample.n)
    n_train = int(round(sample.n * split_ratio))
    if n_train < 2 or sample.n - n_train < 2:
        raise ValueError("both halves of the split need at least two pairs")
    return sample.take(perm[:n_train]), sample.take(perm[n_train:])


def p_value_from_accuracy(accuracy: float, n_test: int) -> float:
    """P(acc >= accuracy) under the chance-level null N(1/2, 1/(4 n_test))."""
    z = (accuracy - 0.5) * 2.0 * np.sqrt(n_test)
    return float(stats.norm.sf(z))


# ---------------------------------------------- swap and group classifiers

def init_linear(in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True) -> ParamCollection:
    p = ParamCollection()
    p.add("w", glorot(rng, in_dim, out_dim))
    if bias:
        p.add("b", np.zeros((1, out_dim)))
    return p


def init_classifier(in_dim: int, hidden: int, rng: np.random.Generator) -> ParamCollection:
    """Linear (``hidden=0``) or one-hidden-layer rectifier network, sigmoid output."""
    if hidden <= 0:
        return init_linear(in_dim, 1, rng)
    p = ParamCollection()
    p.add("W_in", glorot(rng, in_dim, hidden))
    p.add("b_in", np.zeros((1, hidden)))
    p.add("w", glorot(rng, hidden, 1))
    p.add("b", np.zeros((1, 1)))
    return p


def classifier_prob(params: ParamCollection, x) -> ad.Var:
    """Group/swap probability from a classifier built by :func:`init_classifier`."""
    if "W_in" in params.params:
        x = ad.relu(ad.add_bias(ad.matmul(x, params["W_in"]), params["b_in"]))
    return ad.sigmoid(ad.add_bias(ad.matmul(x, params["w"]), params["b"]))


def permute_pairs(x1: np.ndarray, x2: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """Rows ``[x1 | x2]`` where bit 0, ``[x2 | x1]`` where bit 1; width 2d."""
    keep = (bits == 0)[:, None]
    return np.concatenate([np.where(keep, x1, x2), np.where(keep, x2, x1)], axis=1)


def permutation_loss(params: ParamCollection, x1, x2, bits) -> ad.Var:
    return ad.loss_bce(classifier_prob(params, permute_pairs(x1, x2, bits)), bits)


def run_permutation_test(sample: PairedSample, split_ratio: float = 0.5, epochs: int = 200,
                         seed: int = 0, lr: float = 0.05,
                         hidden: int = CLASSIFIER_HIDDEN) -> TwoSampleResult:
    """Train a swap detector on fresh bits each epoch; score held-out accuracy."""
    rng = substream(seed, "permutation")
    train, test = train_test_split(sample, split_ratio, rng)
    params = init_classifier(2 * sample.dim, hidden, rng)
    for _ in range(epochs):
        bits = rng.integers(0, 2, size=train.n)
        loss = permutation_loss(params, train.x1, train.x2, bits)
        params.zero_grad()
        ad.backward(loss)
        adam_step(params, lr=lr)
    bits = rng.integers(0, 2, size=test.n)
    prob = classifier_prob(params, permute_pairs(test.x1, test.x2, bits)).value.ravel()
    acc = float(np.mean((prob > 0.5) == (bits == 1)))
    return TwoSampleResult(acc, p_value_from_accuracy(acc, test.n), test.n, acc)


def c2st_loss(params: ParamCollection, x, y) -> ad.Var:
    return ad.loss_bce(classifier_prob(params, x), y)


def run_c2st(sample: PairedSample, split_ratio: float = 0.5, epochs: int = 200,
             seed: int = 0, lr: float = 0.05, hidden: int = CLASSIFIER_HIDDEN) -> TwoSampleResult:
    """Classifier predicting group membership of single samples."""
    rng = substream(seed, "c2st")
    train, test = train_test_split(sample, split_ratio, rng)
    x = np.concatenate([train.x1, train.x2])
    y = np.concatenate([np.zeros(train.n), np.ones(train.n)])
    params = init_classifier(sample.dim, hidden, rng)
    for _ in range(epochs):
        loss = c2st_loss(params, x, y)
        params.zero_grad()
        ad.backward(loss)
        adam_step(params, lr=lr)
    xt = np.concatenate([test.x1, test.x2])
    yt = np.concatenate([np.zeros(test.n), np.ones(test.n)])
    prob = classifier_prob(params, xt).value.ravel()
    acc = float(np.mean((prob > 0.5) == (yt == 1)))
    return TwoSampleResult(acc, p_value_from_accuracy(acc, yt.size), yt.size, acc)


# -------------------------------------------------- learned t-statistics

def _mean_var(z: ad.Var) -> tuple[ad.Var, ad.Var]:
    n = z.shape[0]
    m = ad.mean_all(z)
    var = ad.sum_all(ad.square(z - m)) / float(n - 1)
    return m, var


def unpaired_t_squared(params: ParamCollection, x1, x2) -> ad.Var:
    """Squared Welch statistic of the projected groups (sample variances)."""
    m1, v1 = _mean_var(ad.matmul(x1, params["w"]))
    m2, v2 = _mean_var(ad.matmul(x2, params["w"]))
    n1, n2 = x1.shape[0], x2.shape[0]
    return ad.square(m1 - m2) / (v1 / float(n1) + v2 / float(n2) + _TINY_VAR)


def paired_t_squared(params: ParamCollection, x1, x2) -> ad.Var:
    """Squared paired statistic of the projected per-pair differences."""
    d = ad.matmul(np.asarray(x1) - np.asarray(x2), params["w"])
    m, v = _mean_var(d)
    return ad.square(m) / (v / float(d.shape[0]) + _TINY_VAR)


def _fit_projection(objective, train: PairedSample, epochs: int, rng, lr: float) -> ParamCollection:
    # a bias would cancel in both statistics, so the projection has none
    params = init_linear(train.dim, 1, rng, bias=False)
    for _ in range(epochs):
        loss = -objective(params, train.x1, train.x2)
        params.zero_grad()
        ad.backward(loss)
        adam_step(params, lr=lr)
    return params


def welch_t(z1: np.ndarray, z2: np.ndarray) -> tuple[float, float, bool]:
    """Two-sided Welch test; returns ``(t, p, zero_variance)``."""
    n1, n2 = z1.size, z2.size
    v1, v2 = z1.var(ddof=1), z2.var(ddof=1)
    se2 = v1 / n1 + v2 / n2
    diff = z1.mean() - z2.mean()
    scale = max(np.abs(z1).max(), np.abs(z2).max(), 1e-300)
    if np.sqrt(se2) <= 1e-12 * scale:
        return _degenerate(diff, scale)
    t = diff / np.sqrt(se2)
    df = se2 ** 2 / ((v1 / n1) ** 2 / (n1 - 1) + (v2 / n2) ** 2 / (n2 - 1))
    return float(t), float(2.0 * stats.t.sf(abs(t), df)), False


def paired_t(d: np.ndarray) -> tuple[float, float, bool]:
    """Two-sided paired test on differences; returns ``(t, p, zero_variance)``."""
    n = d.size
    sd = d.std(ddof=1)
    scale = max(np.abs(d).max(), 1e-300)
    if sd <= 1e-12 * scale or scale == 1e-300:
        return _degenerate(d.mean(), scale)
    t = d.mean() / (sd / np.sqrt(n))
    return float(t), float(2.0 * stats.t.sf(abs(t), n - 1)), False


def _degenerate(mean: float, scale: float) -> tuple[float, float, bool]:
    # no spread: either no difference at all, or a perfectly consistent one
    if abs(mean) <= 1e-12 * scale or scale == 1e-300:
        return 0.0, 1.0, True
    return float(np.sign(mean) * np.inf), 0.0, True


def run_ttest_adapted(sample: PairedSample, epochs: int = 200, seed: int = 0,
                      split_ratio: float = 0.5, lr: float = 0.05) -> TwoSampleResult:
    """Learn a projection maximising the unpaired t² on train; Welch test on held-out pairs."""
    rng = substream(seed, "ttest")
    train, test = train_test_split(sample, split_ratio, rng)
    params = _fit_projection(unpaired_t_squared, train, epochs, rng, lr)
    w = params["w"].value
    t, p, flat = welch_t((test.x1 @ w).ravel(), (test.x2 @ w).ravel())
    return TwoSampleResult(t, p, test.n, zero_variance=flat)


def run_paired_ttest_adapted(sample: PairedSample, epochs: int = 200, seed: int = 0,
                             split_ratio: float = 0.5, lr: float = 0.05) -> TwoSampleResult:
    """Learn a projection maximising the paired t² on train; paired test on held-out pairs."""
    rng = substream(seed, "paired_ttest")
    train, test = train_test_split(sample, split_ratio, rng)
    params = _fit_projection(paired_t_squared, train, epochs, rng, lr)
    w = params["w"].value
    t, p, flat = paired_t(((test.x1 - test.x2) @ w).ravel())
    return TwoSampleResult(t, p, test.n, zero_variance=flat)


TESTS = {
    "T-test": run_ttest_adapted,
    "Paired T-test": run_paired_ttest_adapted,
    "C2ST": run_c2st,
    "Permutation": run_permutation_test,
}
DATASETS = {"Shift": gen_shift, "Rotation": gen_rotation}


def p_value_table(n_pairs: int = 20000, runs: int = 5, seed: int = 0, epochs: int = 200,
                  split_ratio: float = 0.5, generators=None) -> dict[str, dict[str, float]]:
    """Mean p-value per (test, dataset) over ``runs`` independently seeded draws.

    ``n_pairs`` counts train and test together; the default gives 10,000 of each.
    """
    generators = generators or DATASETS
    table: dict[str, dict[str, float]] = {name: {} for name in TESTS}
    for ds_name, gen in generators.items():
        for name, test in TESTS.items():
            ps = []
            for r in range(runs):
                sample = gen(n_pairs, seed + 1000 * r)
                res = test(sample, split_ratio=split_ratio, epochs=epochs, seed=seed + r)
                ps.append(res.p_value)
            table[name][ds_name] = float(np.mean(ps))
    return table
