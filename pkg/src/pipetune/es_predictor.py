"""Early-stop residual predictor.

Maps features of a truncated run to a standardized residual correction
(standardized outcome minus standardized surrogate score) with the regressor
ensemble's spread as an observation-noise estimate. An absolute-target mode
predicts the standardized outcome directly for the variant that runs without
the offline ranker; the surrogate score is never part of the input features
in either mode.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .corpus import DatasetGroup, EarlyStopTrajectory, fit_standardizer
from .features import (
    FeatureVector,
    config_features,
    dataset_features,
    trajectory_features,
)
from .gbt import ensemble_from_dict, ensemble_to_dict, fit_regressor_ensemble
from .ranker import OfflineRanker, record_hash, standardize_pool
from .space import ConfigSpace, Configuration

logger = logging.getLogger(__name__)

_SERIAL_VERSION = 1
VARIANCE_FLOOR = 1e-4


class TrajectoryTooShortError(ValueError):
    """A trajectory does not cover the configured truncation fraction."""


@dataclass(frozen=True)
class PseudoObservation:
    """A low-cost residual observation fed to the online optimizer."""

    config: Configuration
    r_hat: float
    variance: float
    trajectory_ref: str = ""

    def __post_init__(self):
        if self.variance <= 0:
            raise ValueError("variance must be positive")


def reconstruct(s_z: float, r_hat: float):
    """Proxy outcome: standardized surrogate score plus predicted correction."""
    return s_z + r_hat


def truncate_trajectory(
    traj: EarlyStopTrajectory, fraction: float
) -> EarlyStopTrajectory:
    """Restrict a trajectory to the first ``fraction`` of its full horizon."""
    if traj.truncation_fraction < fraction:
        raise TrajectoryTooShortError(
            f"trajectory covers {traj.truncation_fraction}, need {fraction}"
        )
    if traj.truncation_fraction == fraction:
        return traj
    channels = {}
    for name, series in traj.channels.items():
        last_step = series[-1][0]
        cutoff = fraction * (last_step / traj.truncation_fraction)
        kept = tuple(p for p in series if p[0] <= cutoff)
        if len(kept) < 2:
            raise TrajectoryTooShortError(
                f"channel {name!r} has fewer than two points before the cutoff"
            )
        channels[name] = kept
    return EarlyStopTrajectory(channels=channels, truncation_fraction=fraction)


class EarlyStopPredictor(BaseEstimator):
    """Regressor ensemble over [config ; dataset meta ; trajectory] features."""

    def __init__(
        self,
        members: int = 5,
        rounds: int = 200,
        depth: int = 4,
        learning_rate: float = 0.1,
        min_leaf: int = 5,
        subsample: float = 0.8,
        truncation: float = 0.5,
        target_kind: str = "residual",
        target_scoring: str = "cross_fit",
        cross_fit_folds: int = 3,
        variance_floor: float = VARIANCE_FLOOR,
        max_bins: int = 256,
        seed: int = 0,
    ):
        self.members = members
        self.rounds = rounds
        self.depth = depth
        self.learning_rate = learning_rate
        self.min_leaf = min_leaf
        self.subsample = subsample
        self.truncation = truncation
        self.target_kind = target_kind
        self.target_scoring = target_scoring
        self.cross_fit_folds = cross_fit_folds
        self.variance_floor = variance_floor
        self.max_bins = max_bins
        self.seed = seed

    def _features(
        self,
        config: Configuration,
        meta: FeatureVector,
        traj: EarlyStopTrajectory,
        space: ConfigSpace,
    ) -> FeatureVector:
        truncated = truncate_trajectory(traj, self.truncation)
        return FeatureVector.concat(
            [config_features(config, space), meta, trajectory_features(truncated)]
        )

    def _target_surrogates(
        self, groups: Sequence[DatasetGroup], space: ConfigSpace, surrogate
    ) -> dict[str, OfflineRanker]:
        """Surrogate used to score each group when building residual targets.

        In cross-fit mode the groups are partitioned into folds and each fold
        is scored by a surrogate refit without it, so target residuals carry
        deployment-scale miscalibration instead of the main surrogate's
        in-sample fit.
        """
        if self.target_scoring == "in_sample" or len(groups) < 2:
            return {g.dataset_id: surrogate for g in groups}
        if self.target_scoring != "cross_fit":
            raise ValueError(f"unknown target_scoring {self.target_scoring!r}")
        n_folds = min(self.cross_fit_folds, len(groups))
        ordered = sorted(groups, key=lambda g: g.dataset_id)
        folds = [ordered[i::n_folds] for i in range(n_folds)]
        out: dict[str, OfflineRanker] = {}
        for fold in folds:
            rest = [g for g in groups if g not in fold]
            inner = OfflineRanker(**surrogate.get_params()).fit(rest, space)
            for g in fold:
                out[g.dataset_id] = inner
        return out

    def fit(
        self,
        groups: Sequence[DatasetGroup],
        space: ConfigSpace,
        surrogate: Optional[OfflineRanker] = None,
    ):
        if self.target_kind not in ("residual", "absolute"):
            raise ValueError(f"unknown target_kind {self.target_kind!r}")
        if self.target_kind == "residual" and surrogate is None:
            raise ValueError("residual targets require a fitted surrogate")
        standardizer = fit_standardizer(groups)
        scorers = (
            self._target_surrogates(groups, space, surrogate)
            if self.target_kind == "residual"
            else {}
        )
        rows, targets = [], []
        names = None
        skipped = 0
        for group in groups:
            meta = dataset_features(group)
            y_z = standardizer.transform_many(group.dataset_id, group.scores())
            if self.target_kind == "residual":
                scored = scorers[group.dataset_id].score(
                    meta, [r.config for r in group.records], space
                )
                target_vec = y_z - scored.standardized_scores
            else:
                target_vec = y_z
            for record, target in zip(group.records, target_vec):
                if record.trajectory is None:
                    skipped += 1
                    continue
                fv = self._features(record.config, meta, record.trajectory, space)
                if names is None:
                    names = fv.names
                rows.append(fv.values)
                targets.append(float(target))
        if skipped:
            logger.warning("skipped %d records without trajectories", skipped)
        if not rows:
            raise ValueError("no record has a trajectory; nothing to fit")
        X = np.vstack(rows)
        self.feature_names_ = names
        self.skipped_records_ = skipped
        self.standardizer_ = standardizer
        self.ensemble_ = fit_regressor_ensemble(
            X,
            np.asarray(targets),
            n_members=self.members,
            seed=self.seed,
            rounds=self.rounds,
            depth=self.depth,
            learning_rate=self.learning_rate,
            min_leaf=self.min_leaf,
            subsample=self.subsample,
            max_bins=self.max_bins,
        )
        self.training_manifest_ = {
            "dataset_ids": sorted({g.dataset_id for g in groups}),
            "member_seeds": [self.seed + i for i in range(self.members)],
            "params": self.get_params(),
            "skipped_records": skipped,
            "consumed_record_hashes": sorted(
                record_hash(r, space)
                for g in groups
                for r in g.records
                if r.trajectory is not None
            ),
        }
        return self

    def predict_observation(
        self,
        config: Configuration,
        target_meta,
        traj: EarlyStopTrajectory,
        space: ConfigSpace,
        trajectory_ref: str = "",
    ) -> PseudoObservation:
        """Ensemble mean and floored spread for one truncated run."""
        meta = (
            target_meta
            if isinstance(target_meta, FeatureVector)
            else FeatureVector(
                tuple(f"meta_{i:03d}" for i in range(len(target_meta))),
                np.asarray(target_meta, dtype=np.float64),
            )
        )
        fv = self._features(config, meta, traj, space)
        if fv.names != self.feature_names_:
            raise ValueError("feature layout does not match training")
        mean, var = self.ensemble_.predict(fv.values.reshape(1, -1))
        return PseudoObservation(
            config=config,
            r_hat=float(mean[0]),
            variance=float(max(var[0], self.variance_floor)),
            trajectory_ref=trajectory_ref,
        )

    def to_dict(self) -> dict:
        return {
            "version": _SERIAL_VERSION,
            "params": self.get_params(),
            "ensemble": ensemble_to_dict(self.ensemble_),
            "feature_names": list(self.feature_names_),
            "skipped_records": self.skipped_records_,
            "standardizer": {
                "stats": {k: list(v) for k, v in self.standardizer_.stats.items()},
                "eps": self.standardizer_.eps,
            },
            "manifest": self.training_manifest_,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EarlyStopPredictor":
        if obj.get("version") != _SERIAL_VERSION:
            raise ValueError(f"unsupported predictor version {obj.get('version')!r}")
        from .corpus import Standardizer

        model = cls(**obj["params"])
        model.ensemble_ = ensemble_from_dict(obj["ensemble"])
        model.feature_names_ = tuple(obj["feature_names"])
        model.skipped_records_ = obj["skipped_records"]
        model.standardizer_ = Standardizer(
            stats={k: tuple(v) for k, v in obj["standardizer"]["stats"].items()},
            eps=obj["standardizer"]["eps"],
        )
        model.training_manifest_ = obj["manifest"]
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "EarlyStopPredictor":
        return cls.from_dict(json.loads(Path(path).read_text()))
