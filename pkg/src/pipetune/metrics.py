"""Ranking and selection metrics for configuration-selection experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .space import Configuration


@dataclass(frozen=True)
class MetricReport:
    """Per-split outcome of one selection method."""

    dataset_id: str
    method: str
    final_score: float
    regret: float
    evaluations_used: int
    recall_at: dict[int, int] = field(default_factory=dict)
    ndcg_at: dict[int, float] = field(default_factory=dict)
    pairwise_accuracy: Optional[float] = None
    spearman: Optional[float] = None
    negative_regret: bool = False

    def as_row(self) -> dict:
        row = {
            "dataset_id": self.dataset_id,
            "method": self.method,
            "final_score": self.final_score,
            "regret": self.regret,
            "evaluations_used": self.evaluations_used,
            "pairwise_accuracy": self.pairwise_accuracy,
            "spearman": self.spearman,
            "negative_regret": int(self.negative_regret),
        }
        for k in sorted(self.recall_at):
            row[f"recall@{k}"] = self.recall_at[k]
        for k in sorted(self.ndcg_at):
            row[f"ndcg@{k}"] = self.ndcg_at[k]
        return row


def regret(y_opt: float, y_chosen: float) -> float:
    """Gap to the reference-pool optimum. Negative values signal a stale pool."""
    return y_opt - y_chosen


def recall_at_k(ranked: Sequence[Configuration], c_opt: Configuration, k: int) -> int:
    """1 if the pool optimum appears within the first k ranked configurations."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if c_opt not in ranked:
        raise ValueError("c_opt is not in the ranked pool")
    return int(c_opt in list(ranked)[:k])


def _minmax(values: np.ndarray) -> np.ndarray:
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.ones_like(values)
    return (values - lo) / (hi - lo)


def ndcg_at_k(predicted_scores, true_scores, k: int) -> float:
    """Top-weighted ranking quality with linear gains on min-max relevance.

    Relevance is the min-max normalization of the true scores; the discount
    is 1/log2(rank + 1). All-constant true scores return 1.0 by convention.
    """
    pred = np.asarray(predicted_scores, dtype=np.float64)
    true = np.asarray(true_scores, dtype=np.float64)
    if len(pred) != len(true) or len(pred) == 0:
        raise ValueError("score vectors must be non-empty and equal length")
    if k < 1:
        raise ValueError("k must be >= 1")
    if true.max() == true.min():
        return 1.0
    rel = _minmax(true)
    k = min(k, len(pred))
    discounts = 1.0 / np.log2(np.arange(1, k + 1) + 1.0)
    order = np.argsort(-pred, kind="stable")
    dcg = float((rel[order[:k]] * discounts).sum())
    ideal = np.sort(rel)[::-1]
    idcg = float((ideal[:k] * discounts).sum())
    return dcg / idcg


def pairwise_accuracy(predicted_scores, true_scores) -> Optional[float]:
    """Fraction of pairs with distinct true scores ordered correctly.

    Predicted ties count half. Returns None when every true pair is tied.
    """
    pred = np.asarray(predicted_scores, dtype=np.float64)
    true = np.asarray(true_scores, dtype=np.float64)
    if len(pred) != len(true) or len(pred) < 2:
        raise ValueError("need two aligned scores at least")
    dp = pred[:, None] - pred[None, :]
    dt = true[:, None] - true[None, :]
    upper = np.triu(np.ones_like(dp, dtype=bool), k=1)
    informative = upper & (dt != 0)
    total = int(informative.sum())
    if total == 0:
        return None
    agree = (np.sign(dp) == np.sign(dt)) & informative
    tied = (dp == 0) & informative
    return float((agree.sum() + 0.5 * tied.sum()) / total)


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(predicted_scores, true_scores) -> Optional[float]:
    """Rank correlation with average ranks for ties; None if either side is constant."""
    pred = np.asarray(predicted_scores, dtype=np.float64)
    true = np.asarray(true_scores, dtype=np.float64)
    if len(pred) != len(true) or len(pred) < 2:
        raise ValueError("need two aligned scores at least")
    rp, rt = _midranks(pred), _midranks(true)
    sp, st = rp.std(), rt.std()
    if sp == 0 or st == 0:
        return None
    cov = ((rp - rp.mean()) * (rt - rt.mean())).mean()
    return float(cov / (sp * st))


def mean_of(values: Sequence[Optional[float]]) -> Optional[float]:
    """Mean over the defined entries; None when all are absent."""
    present = [v for v in values if v is not None and not math.isnan(v)]
    if not present:
        return None
    return float(np.mean(present))
