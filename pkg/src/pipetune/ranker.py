"""Dataset-conditioned ranking surrogate over historical run groups.

An ensemble of pairwise boosted-tree rankers is trained on within-dataset
preference pairs with features [config encoding ; dataset meta features].
Scoring a candidate pool returns raw ensemble-mean scores together with
pool-standardized scores (zero mean, unit population variance).
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .corpus import DatasetGroup, RunRecord
from .features import FeatureVector, config_features, dataset_features, filter_features
from .gbt import Ensemble, ensemble_from_dict, ensemble_to_dict, fit_ranker_ensemble
from .metrics import ndcg_at_k
from .space import ConfigSpace, Configuration, encode_many, encoded_feature_names

_SERIAL_VERSION = 1


def record_hash(record: RunRecord, space: ConfigSpace) -> str:
    """Stable identity hash of a training record, used by leakage audits."""
    payload = f"{record.dataset_id}|{space.ordinal(record.config)}|{record.final_score!r}"
    return hashlib.sha256(payload.encode()).hexdigest()


@dataclass(frozen=True)
class ScoredCandidates:
    """A candidate pool with raw and pool-standardized surrogate scores."""

    configs: tuple[Configuration, ...]
    raw_scores: np.ndarray
    standardized_scores: np.ndarray

    def __len__(self) -> int:
        return len(self.configs)


def standardize_pool(raw: np.ndarray) -> np.ndarray:
    """Z-normalize over the pool; constant pools map to all zeros."""
    raw = np.asarray(raw, dtype=np.float64)
    if len(raw) < 2:
        return np.zeros_like(raw)
    std = raw.std()
    if std == 0:
        return np.zeros_like(raw)
    return (raw - raw.mean()) / std


def _group_feature_rows(
    groups: Sequence[DatasetGroup], space: ConfigSpace
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str], dict[str, slice]]:
    """Stack [config ; meta] rows, targets, ranking-group labels and row slices."""
    names = list(encoded_feature_names(space))
    meta_width = None
    rows, targets, labels = [], [], []
    slices: dict[str, slice] = {}
    offset = 0
    for group in groups:
        meta = dataset_features(group)
        if meta_width is None:
            meta_width = len(meta.values)
            names = names + list(meta.names)
        elif len(meta.values) != meta_width:
            raise ValueError("groups carry meta features of different lengths")
        cfg = encode_many([r.config for r in group.records], space)
        block = np.hstack([cfg, np.tile(meta.values, (len(group.records), 1))])
        rows.append(block)
        targets.extend(r.final_score for r in group.records)
        labels.extend(
            r.tags.get("ranking_group", group.dataset_id) for r in group.records
        )
        slices[group.dataset_id] = slice(offset, offset + len(group.records))
        offset += len(group.records)
    X = np.vstack(rows)
    return X, np.asarray(targets), np.asarray(labels), names, slices


class OfflineRanker(BaseEstimator):
    """Pairwise boosted-tree ensemble scoring configurations for a dataset."""

    def __init__(
        self,
        members: int = 3,
        rounds: int = 200,
        depth: int = 4,
        learning_rate: float = 0.1,
        min_leaf: int = 5,
        pair_mode: str = "sample",
        pairs_per_row: int = 64,
        apply_filter: bool = False,
        max_bins: int = 256,
        seed: int = 0,
    ):
        self.members = members
        self.rounds = rounds
        self.depth = depth
        self.learning_rate = learning_rate
        self.min_leaf = min_leaf
        self.pair_mode = pair_mode
        self.pairs_per_row = pairs_per_row
        self.apply_filter = apply_filter
        self.max_bins = max_bins
        self.seed = seed

    def fit(self, groups: Sequence[DatasetGroup], space: ConfigSpace):
        X, y, labels, names, slices = _group_feature_rows(groups, space)
        self.filter_report_ = None
        keep = list(range(len(names)))
        if self.apply_filter:
            matrices = {did: X[sl] for did, sl in slices.items()}
            report = filter_features(matrices, names)
            self.filter_report_ = report
            keep = [i for i, n in enumerate(names) if n in set(report.retained)]
        self.retained_features_ = tuple(names[i] for i in keep)
        self.meta_width_ = X.shape[1] - len(encoded_feature_names(space))
        self.ensemble_ = fit_ranker_ensemble(
            X[:, keep],
            y,
            labels,
            n_members=self.members,
            seed=self.seed,
            rounds=self.rounds,
            depth=self.depth,
            learning_rate=self.learning_rate,
            min_leaf=self.min_leaf,
            pair_mode=self.pair_mode,
            pairs_per_row=self.pairs_per_row,
            max_bins=self.max_bins,
        )
        self.training_manifest_ = {
            "dataset_ids": sorted({g.dataset_id for g in groups}),
            "member_seeds": [self.seed + i for i in range(self.members)],
            "params": self.get_params(),
            "feature_names": list(names),
            "consumed_record_hashes": sorted(
                record_hash(r, space) for g in groups for r in g.records
            ),
        }
        self._all_feature_names = tuple(names)
        return self

    def _candidate_matrix(
        self, target_meta, candidates: Sequence[Configuration], space: ConfigSpace
    ) -> np.ndarray:
        meta = (
            target_meta.values
            if isinstance(target_meta, FeatureVector)
            else np.asarray(target_meta, dtype=np.float64)
        )
        if len(meta) != self.meta_width_:
            raise ValueError(
                f"target meta has {len(meta)} features, expected {self.meta_width_}"
            )
        cfg = encode_many(candidates, space)
        X = np.hstack([cfg, np.tile(meta, (len(candidates), 1))])
        keep = [
            i
            for i, n in enumerate(self._all_feature_names)
            if n in set(self.retained_features_)
        ]
        return X[:, keep]

    def score(
        self, target_meta, candidates: Sequence[Configuration], space: ConfigSpace
    ) -> ScoredCandidates:
        """Score a candidate pool for a target dataset."""
        if not candidates:
            raise ValueError("candidate pool is empty")
        X = self._candidate_matrix(target_meta, candidates, space)
        raw, _ = self.ensemble_.predict(X)
        return ScoredCandidates(
            configs=tuple(candidates),
            raw_scores=raw,
            standardized_scores=standardize_pool(raw),
        )

    def to_dict(self) -> dict:
        return {
            "version": _SERIAL_VERSION,
            "params": self.get_params(),
            "ensemble": ensemble_to_dict(self.ensemble_),
            "retained_features": list(self.retained_features_),
            "all_feature_names": list(self._all_feature_names),
            "meta_width": self.meta_width_,
            "manifest": self.training_manifest_,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "OfflineRanker":
        if obj.get("version") != _SERIAL_VERSION:
            raise ValueError(f"unsupported ranker version {obj.get('version')!r}")
        model = cls(**obj["params"])
        model.ensemble_ = ensemble_from_dict(obj["ensemble"])
        model.retained_features_ = tuple(obj["retained_features"])
        model._all_feature_names = tuple(obj["all_feature_names"])
        model.meta_width_ = obj["meta_width"]
        model.training_manifest_ = obj["manifest"]
        model.filter_report_ = None
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "OfflineRanker":
        return cls.from_dict(json.loads(Path(path).read_text()))


def select_top(scored: ScoredCandidates, k: int) -> list[Configuration]:
    """Top-k configurations by raw score, ties by lexicographic encoding."""
    if k < 1:
        raise ValueError("k must be >= 1")
    order = sorted(
        range(len(scored)),
        key=lambda i: (-scored.raw_scores[i], scored.configs[i].indices),
    )
    return [scored.configs[i] for i in order[: min(k, len(scored))]]


def scored_to_csv(scored: ScoredCandidates, space: ConfigSpace, path: str | Path) -> None:
    """Export a scored pool: one config per row plus raw and standardized scores."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([*space.names, "score", "score_standardized"])
        for config, s, sz in zip(
            scored.configs, scored.raw_scores, scored.standardized_scores
        ):
            values = config.values(space)
            writer.writerow(
                [*(values[n] for n in space.names), repr(float(s)), repr(float(sz))]
            )


def select_ranker_params(
    groups: Sequence[DatasetGroup],
    space: ConfigSpace,
    grid: dict[str, Sequence],
    base_params: Optional[dict] = None,
    seed: int = 0,
) -> dict:
    """Pick ranker hyperparameters by internal leave-one-group-out nDCG@5.

    Every grid point is evaluated by holding out each group in turn, scoring
    its record pool and computing nDCG@5 against the recorded outcomes. The
    winner maximizes the minimum nDCG@5 across held-out groups, then the
    mean (lexicographic).
    """
    if len(groups) < 2:
        raise ValueError("need at least two groups for held-out selection")
    base = dict(base_params or {})
    keys = sorted(grid)
    best_key, best_params = None, None
    for combo in itertools.product(*(grid[k] for k in keys)):
        params = dict(base)
        params.update(dict(zip(keys, combo)))
        ndcgs = []
        for i, heldout in enumerate(groups):
            train = [g for g in groups if g is not heldout]
            ranker = OfflineRanker(seed=seed, **params).fit(train, space)
            scored = ranker.score(
                dataset_features(heldout),
                [r.config for r in heldout.records],
                space,
            )
            ndcgs.append(
                ndcg_at_k(scored.raw_scores, heldout.scores(), k=5)
            )
        key = (min(ndcgs), float(np.mean(ndcgs)))
        if best_key is None or key > best_key:
            best_key, best_params = key, params
    return best_params
