"""Randomised finite-difference checks over every differentiable component."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import discriminator as disc
from . import two_sample as ts
from .classifier import ClassifierShape, classifier_forward, init_classifier, task_loss
from .gradcheck import GradReport, check_gradients
from .graph_data import normalize_adjacency
from .optim import ParamCollection


@dataclass
class SuiteResult:
    trials: int = 0
    failures: int = 0
    worst: float = 0.0
    kinks: int = 0
    failed_params: list[str] = field(default_factory=list)

    def absorb(self, report: GradReport) -> None:
        self.trials += 1
        self.worst = max(self.worst, report.worst)
        self.kinks += sum(report.skipped_kinks.values())
        if not report.ok:
            self.failures += 1
            self.failed_params.extend(report.failing)


def random_graph(rng: np.random.Generator, n: int):
    m = int(rng.integers(0, 2 * n + 1))
    edges = rng.integers(0, n, size=(m, 2))
    return normalize_adjacency(edges[edges[:, 0] != edges[:, 1]], n)


def _classifier_case(rng, max_nodes):
    n = int(rng.integers(3, max_nodes + 1))
    k = int(rng.integers(2, 5))
    shape = ClassifierShape(int(rng.integers(1, 6)), k, int(rng.integers(2, 7)), int(rng.integers(2, 7)))
    params = init_classifier(shape, rng)
    x = rng.normal(size=(n, shape.in_dim))
    adj = random_graph(rng, n)
    y = rng.integers(0, k, size=n)
    idx = np.sort(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False))

    def loss():
        logits, _ = classifier_forward(params, x, adj)
        return task_loss(logits, y, idx)

    return [(loss, params)]


def _adversary_case(variant: str):
    def build(rng, max_nodes):
        n = int(rng.integers(3, max_nodes + 1))
        k = int(rng.integers(2, 4))
        d_h = int(rng.integers(1, 5))
        adj = random_graph(rng, n)
        upstream = ParamCollection()
        upstream.add("logits", rng.normal(size=(n, k)))
        upstream.add("hidden", rng.normal(size=(n, d_h)))
        dparams = disc.init_discriminator(disc.input_width(variant, k, d_h), rng, int(rng.integers(2, 6)))
        y = rng.integers(0, k, size=n)
        idx = np.sort(rng.choice(n, size=int(rng.integers(2, n + 1)), replace=False))
        y_block = disc.label_block(y, k, idx)
        a = rng.integers(0, 2, size=n)
        a_dummy = rng.integers(0, 2, size=n)
        bits = rng.integers(0, 2, size=n)
        every = ParamCollection(params={**{f"D.{k_}": v for k_, v in dparams},
                                        **{f"F.{k_}": v for k_, v in upstream}})

        def losses():
            y_prob = ad.softmax_rows(upstream["logits"])
            return disc.adversary_losses(variant, dparams, adj, y_block, a, a_dummy, y_prob,
                                         upstream["hidden"], bits, idx)

        return [(lambda: losses()[0], every), (lambda: losses()[1], every)]

    return build


def _cov_case(rng, max_nodes):
    n = int(rng.integers(3, max_nodes + 1))
    k = int(rng.integers(2, 5))
    p = ParamCollection()
    p.add("logits", rng.normal(size=(n, k)))
    a = rng.integers(0, 2, size=n)
    a_dummy = rng.integers(0, 2, size=n)
    idx = np.sort(rng.choice(n, size=int(rng.integers(2, n + 1)), replace=False))
    return [(lambda: disc.cov_loss(ad.softmax_rows(p["logits"]), a, a_dummy, idx), p)]


def _pairs(rng, max_nodes, min_dim=1):
    n = int(rng.integers(4, max_nodes + 1))
    d = int(rng.integers(min_dim, 4))
    x1 = rng.normal(size=(n, d))
    x2 = x1 @ rng.normal(size=(d, d)) + rng.normal(scale=0.5, size=(n, d))
    return n, d, x1, x2


def _permutation_case(rng, max_nodes):
    n, d, x1, x2 = _pairs(rng, max_nodes)
    params = ts.init_classifier(2 * d, int(rng.integers(0, 5)), rng)
    bits = rng.integers(0, 2, size=n)
    return [(lambda: ts.permutation_loss(params, x1, x2, bits), params)]


def _c2st_case(rng, max_nodes):
    n, d, x1, x2 = _pairs(rng, max_nodes)
    params = ts.init_classifier(d, int(rng.integers(0, 5)), rng)
    x = np.concatenate([x1, x2])
    y = np.concatenate([np.zeros(n), np.ones(n)])
    return [(lambda: ts.c2st_loss(params, x, y), params)]


def _ttest_case(rng, max_nodes):
    # t is invariant to the scale of w, so in one dimension its gradient is
    # identically zero and the check would only compare rounding noise
    _, d, x1, x2 = _pairs(rng, max_nodes, min_dim=2)
    params = ts.init_linear(d, 1, rng, bias=False)
    return [(lambda: ts.unpaired_t_squared(params, x1, x2), params)]


def _paired_ttest_case(rng, max_nodes):
    _, d, x1, x2 = _pairs(rng, max_nodes, min_dim=2)
    params = ts.init_linear(d, 1, rng, bias=False)
    return [(lambda: ts.paired_t_squared(params, x1, x2), params)]


COMPONENTS: dict[str, Callable] = {
    "classifier": _classifier_case,
    **{f"adversary.{v}": _adversary_case(v) for v in disc.VARIANTS},
    "covariance": _cov_case,
    "two_sample.permutation": _permutation_case,
    "two_sample.c2st": _c2st_case,
    "two_sample.ttest": _ttest_case,
    "two_sample.paired_ttest": _paired_ttest_case,
}


def run_suite(trials: int = 100, seed: int = 0, tolerance: float = 1e-4, max_nodes: int = 20,
              components=None) -> dict[str, SuiteResult]:
    names = components or list(COMPONENTS)
    out = {}
    for i, name in enumerate(names):
        rng = np.random.default_rng([seed, i])
        res = SuiteResult()
        for _ in range(trials):
            for loss_fn, params in COMPONENTS[name](rng, max_nodes):
                res.absorb(check_gradients(loss_fn, params, tolerance=tolerance))
        out[name] = res
    return out
