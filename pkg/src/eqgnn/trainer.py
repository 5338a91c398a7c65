"""Alternating classifier/adversary training with validation model selection."""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import product

import numpy as np

from . import autodiff as ad
from .classifier import (ClassifierShape, classifier_forward, dropout_masks, init_classifier,
                         task_loss)
from .discriminator import (USES_DUMMY, VARIANTS, adversary_losses, cov_loss, draw_bits,
                            init_discriminator, input_width, label_block)
from .graph_data import GraphDataset, Split, make_split, standardize_features
from .metrics import MetricsReport, average_reports, evaluate
from .optim import ParamCollection, adam_step
from .rng import deterministic, substream
from .sampler import ConditionalTable, fit_conditional, sample_dummies, sample_marginal

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.1
    gamma: float = 50.0
    lr: float = 1e-3
    weight_decay: float = 1e-5
    patience: int = 50
    max_epochs: int = 1000
    seed: int = 0
    loss_variant: str = "permutation"
    hidden: tuple[int, int] = (64, 64)
    disc_hidden: int = 64
    smoothing: float = 1.0
    dropout: float = 0.0
    standardize: bool = True
    deterministic: bool = True

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("lambda and gamma must be non-negative")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.loss_variant not in VARIANTS:
            raise ValueError(f"unknown loss variant {self.loss_variant!r}; choose from {VARIANTS}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout rate must lie in [0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    task_loss: float
    adv_loss: float
    cov_loss: float
    disc_loss: float
    val_loss: float


@dataclass
class TrainResult:
    best_state: dict[str, np.ndarray]
    best_epoch: int
    history: list[EpochRecord]
    test_metrics: MetricsReport
    config: TrainConfig
    sampler: ConditionalTable | None = None
    disc_state: dict[str, np.ndarray] = field(default_factory=dict)

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "L_task", "L_adv", "L_cov", "L_disc", "val_loss"])
        for r in self.history:
            w.writerow([r.epoch, repr(r.task_loss), repr(r.adv_loss), repr(r.cov_loss),
                        repr(r.disc_loss), repr(r.val_loss)])
        return buf.getvalue()


def _dummies(table, labels, visible_idx, n, rng) -> np.ndarray:
    """Ã from P(A|Y) on label-visible nodes, from P(A) elsewhere."""
    out = sample_marginal(table, n, rng)
    visible_idx = np.asarray(visible_idx)
    out[visible_idx] = sample_dummies(table, np.asarray(labels)[visible_idx], rng)
    return out


def _finite(*vals):
    for v in vals:
        if not np.isfinite(v):
            raise DivergenceError("a loss became non-finite; lower the learning rate or lambda")


def train(dataset: GraphDataset, split: Split, config: TrainConfig) -> TrainResult:
    """Fit the classifier (and adversary when ``lam > 0``) on a prepared dataset.

    Each epoch: forward F, draw Ã and permutation bits, step F on
    ``L_task + lam * (L_adv_F + gamma * L_cov)``, recompute F's outputs and
    step D on ``L_adv_D``.  The objective is then evaluated on validation
    nodes with the current D; the epoch with the lowest value wins.
    """
    with deterministic(config.deterministic):
        return _train(dataset, split, config)


def _train(dataset: GraphDataset, split: Split, config: TrainConfig) -> TrainResult:
    cfg = config
    x, adj, labels, attr = dataset.features, dataset.adjacency, dataset.labels, dataset.sensitive
    n, k = dataset.node_count, dataset.class_count
    train_idx, val_idx = split.train_idx, split.val_idx
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise ValueError("training needs non-empty train and validation sets")

    shape = ClassifierShape(dataset.feature_dim, k, *cfg.hidden)
    fparams = init_classifier(shape, substream(cfg.seed, "init_classifier"))
    drop_rng = substream(cfg.seed, "dropout")

    adversarial = cfg.lam > 0
    variant = cfg.loss_variant
    gamma = cfg.gamma if variant in USES_DUMMY else 0.0
    table = fit_conditional(labels[train_idx], attr[train_idx], k, cfg.smoothing)
    dparams: ParamCollection | None = None
    if adversarial:
        width = input_width(variant, k, cfg.hidden[1])
        dparams = init_discriminator(width, substream(cfg.seed, "init_discriminator"), cfg.disc_hidden)
        dummy_rng = substream(cfg.seed, "dummies")
        bit_rng = substream(cfg.seed, "bits")
        y_train = label_block(labels, k, train_idx)
        # validation draws are fixed for the whole run so that epochs compare
        # like with like
        visible = np.union1d(train_idx, val_idx)
        y_val = label_block(labels, k, visible)
        vrng = substream(cfg.seed, "validation")
        val_dummy = _dummies(table, labels, visible, n, vrng)
        val_bits = draw_bits(vrng, n)

    best_val, best_epoch = np.inf, 0
    best_state = fparams.state_dict()
    best_disc: dict[str, np.ndarray] = {}
    history: list[EpochRecord] = []

    for epoch in range(1, cfg.max_epochs + 1):
        masks = dropout_masks(drop_rng, n, shape.in_dim, shape.hidden1, cfg.dropout)
        logits, hidden = classifier_forward(fparams, x, adj, masks)
        l_task = task_loss(logits, labels, train_idx)
        adv_f = cov = disc = 0.0
        if adversarial:
            y_prob = ad.softmax_rows(logits)
            a_dummy = _dummies(table, labels, train_idx, n, dummy_rng)
            bits = draw_bits(bit_rng, n)
            _, l_adv_f = adversary_losses(variant, dparams, adj, y_train, attr, a_dummy,
                                          y_prob, hidden, bits, train_idx)
            objective = l_adv_f
            if gamma > 0:
                l_cov = cov_loss(y_prob, attr, a_dummy, train_idx)
                objective = objective + gamma * l_cov
                cov = float(l_cov.value)
            total = l_task + cfg.lam * objective
            adv_f = float(l_adv_f.value)
        else:
            total = l_task
        fparams.zero_grad()
        ad.backward(total)
        adam_step(fparams, lr=cfg.lr, weight_decay=cfg.weight_decay)

        if adversarial:
            logits2, hidden2 = classifier_forward(fparams, x, adj, masks)
            y_prob2 = ad.detach(ad.softmax_rows(logits2))
            l_adv_d, _ = adversary_losses(variant, dparams, adj, y_train, attr, a_dummy,
                                          y_prob2, ad.detach(hidden2), bits, train_idx)
            dparams.zero_grad()
            ad.backward(l_adv_d)
            adam_step(dparams, lr=cfg.lr, weight_decay=cfg.weight_decay)
            disc = float(l_adv_d.value)

        # validation objective, D frozen, no dropout
        logits_v, hidden_v = classifier_forward(fparams, x, adj)
        val = float(task_loss(logits_v, labels, val_idx).value)
        if adversarial:
            yp_v = ad.softmax_rows(logits_v)
            _, vf = adversary_losses(variant, dparams, adj, y_val, attr, val_dummy,
                                     yp_v, hidden_v, val_bits, val_idx)
            vobj = float(vf.value)
            if gamma > 0:
                vobj += gamma * float(cov_loss(yp_v, attr, val_dummy, val_idx).value)
            val += cfg.lam * vobj

        record = EpochRecord(epoch, float(l_task.value), adv_f, cov, disc, val)
        _finite(record.task_loss, record.adv_loss, record.cov_loss, record.disc_loss, val)
        history.append(record)
        if val < best_val:
            best_val, best_epoch = val, epoch
            best_state = fparams.state_dict()
            if dparams is not None:
                best_disc = dparams.state_dict()
        elif epoch - best_epoch >= cfg.patience:
            break

    fparams.load_state_dict(best_state)
    logits, _ = classifier_forward(fparams, x, adj)
    pred = np.argmax(logits.value, axis=1)
    test = split.test_idx
    report = evaluate(pred[test], labels[test], attr[test], k)
    log.debug("seed %d: best epoch %d of %d, val %.4f", cfg.seed, best_epoch, len(history), best_val)
    return TrainResult(best_state, best_epoch, history, report, cfg, table, best_disc)


def prepare(dataset: GraphDataset, seed: int, standardize: bool = True,
            ratios=(0.5, 0.25, 0.25)) -> tuple[GraphDataset, Split]:
    split = make_split(dataset, seed, ratios)
    return standardize_features(dataset, split, standardize), split


def run_seed(dataset: GraphDataset, config: TrainConfig, ratios=(0.5, 0.25, 0.25)) -> TrainResult:
    """Split with ``config.seed``, standardise, train."""
    prepared, split = prepare(dataset, config.seed, config.standardize, ratios)
    return train(prepared, split, config)


def _run_job(args):
    dataset, config, ratios = args
    return run_seed(dataset, config, ratios)


def run_many(dataset: GraphDataset, configs: list[TrainConfig], workers: int = 1,
             ratios=(0.5, 0.25, 0.25)) -> list[TrainResult]:
    """``run_seed`` for every config, in order; ``workers > 1`` uses processes."""
    jobs = [(dataset, c, ratios) for c in configs]
    if workers <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def grid_search(dataset: GraphDataset, seeds, lam_grid, gamma_grid, config: TrainConfig,
                workers: int = 1, ratios=(0.5, 0.25, 0.25)) -> list[dict]:
    """Train every (lambda, gamma, seed) cell and average metrics per (lambda, gamma)."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("grid search needs at least one seed")
    configs = [replace(config, lam=float(lam), gamma=float(gam), seed=int(s))
               for lam, gam in product(lam_grid, gamma_grid) for s in seeds]
    results = run_many(dataset, configs, workers, ratios)
    rows = []
    for lam, gam in product(lam_grid, gamma_grid):
        reports = [r.test_metrics for r in results
                   if r.config.lam == float(lam) and r.config.gamma == float(gam)]
        summary = average_reports(reports)
        row = {"lambda": float(lam), "gamma": float(gam), "runs": len(reports)}
        for key, (mean, se) in summary.items():
            row[key] = mean
            row[f"{key}_se"] = se
        rows.append(row)
    return rows


def config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["hidden"] = list(config.hidden)
    return d
