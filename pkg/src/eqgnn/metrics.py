"""Group fairness gaps and classification scores."""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class MetricsReport:
    delta_eo: float
    delta_sp: float
    acc: float
    f1_macro: float
    f1_micro: float
    per_class_eo: list[float]
    per_class_sp: list[float]
    counts: list[list[list[int]]]  # counts[y][ŷ][a]

    def table_row(self) -> list[float]:
        """ΔEO, ΔSP, ACC, F1-macro, F1-micro in percent."""
        return [100.0 * v for v in (self.delta_eo, self.delta_sp, self.acc,
                                    self.f1_macro, self.f1_micro)]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


TABLE_HEADER = ("delta_eo", "delta_sp", "acc", "f1_macro", "f1_micro")


def _k(pred, truth=None, class_count=None) -> int:
    if class_count is not None:
        return int(class_count)
    top = int(np.max(pred)) if len(pred) else 0
    if truth is not None and len(truth):
        top = max(top, int(np.max(truth)))
    return top + 1


def delta_eo(pred, truth, sensitive, class_count: int | None = None):
    """Per-class |P(Ŷ=y | Y=y, A=0) − P(Ŷ=y | Y=y, A=1)| and their max.

    A class with an empty (y, a) cell has no defined gap; it is reported as
    NaN, warned about, and ignored by the max.
    """
    pred, truth, sensitive = (np.asarray(v, dtype=np.int64) for v in (pred, truth, sensitive))
    k = _k(pred, truth, class_count)
    gaps = np.full(k, np.nan)
    for y in range(k):
        rates = []
        for a in (0, 1):
            cell = (truth == y) & (sensitive == a)
            if not cell.any():
                break
            rates.append(np.mean(pred[cell] == y))
        if len(rates) == 2:
            gaps[y] = abs(rates[0] - rates[1])
        elif (truth == y).any():
            warnings.warn(f"class {y} lacks members in one sensitive group; excluded from ΔEO",
                          stacklevel=2)
    valid = gaps[~np.isnan(gaps)]
    return gaps, float(valid.max()) if valid.size else 0.0


def delta_sp(pred, sensitive, class_count: int | None = None):
    """Per-class |P(Ŷ=y | A=0) − P(Ŷ=y | A=1)| and their max."""
    pred, sensitive = np.asarray(pred, dtype=np.int64), np.asarray(sensitive, dtype=np.int64)
    g0, g1 = sensitive == 0, sensitive == 1
    if not g0.any() or not g1.any():
        raise ValueError("ΔSP needs members of both sensitive groups")
    k = _k(pred, None, class_count)
    gaps = np.array([abs(np.mean(pred[g0] == y) - np.mean(pred[g1] == y)) for y in range(k)])
    return gaps, float(gaps.max())


def performance(pred, truth, class_count: int | None = None) -> tuple[float, float, float]:
    """Accuracy, macro-F1 and micro-F1 (zero-division counts as 0)."""
    pred, truth = np.asarray(pred, dtype=np.int64), np.asarray(truth, dtype=np.int64)
    if pred.size == 0:
        return 0.0, 0.0, 0.0
    k = _k(pred, truth, class_count)
    tp = np.array([np.sum((pred == c) & (truth == c)) for c in range(k)], dtype=np.float64)
    fp = np.array([np.sum((pred == c) & (truth != c)) for c in range(k)], dtype=np.float64)
    fn = np.array([np.sum((pred != c) & (truth == c)) for c in range(k)], dtype=np.float64)
    denom = 2 * tp + fp + fn
    f1 = np.divide(2 * tp, denom, out=np.zeros(k), where=denom > 0)
    micro_denom = 2 * tp.sum() + fp.sum() + fn.sum()
    micro = 2 * tp.sum() / micro_denom if micro_denom > 0 else 0.0
    acc = float(np.mean(pred == truth))
    return acc, float(f1.mean()), float(micro)


def evaluate(pred, truth, sensitive, class_count: int | None = None) -> MetricsReport:
    pred, truth, sensitive = (np.asarray(v, dtype=np.int64) for v in (pred, truth, sensitive))
    k = _k(pred, truth, class_count)
    eo, eo_max = delta_eo(pred, truth, sensitive, k)
    sp_gaps, sp_max = delta_sp(pred, sensitive, k)
    acc, f1_macro, f1_micro = performance(pred, truth, k)
    counts = np.zeros((k, k, 2), dtype=np.int64)
    np.add.at(counts, (truth, pred, sensitive), 1)
    return MetricsReport(
        delta_eo=eo_max, delta_sp=sp_max, acc=acc, f1_macro=f1_macro, f1_micro=f1_micro,
        per_class_eo=[None if np.isnan(g) else float(g) for g in eo],
        per_class_sp=[float(g) for g in sp_gaps],
        counts=counts.tolist(),
    )


def average_reports(reports: list[MetricsReport]) -> dict[str, tuple[float, float]]:
    """Mean and standard error of each headline metric across runs."""
    out = {}
    for key in TABLE_HEADER:
        vals = np.array([getattr(r, key) for r in reports], dtype=np.float64)
        se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
        out[key] = (float(vals.mean()), se)
    return out
