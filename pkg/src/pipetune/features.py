"""Feature construction and dataset-aware filtering.

Builds the per-example vectors consumed by the learned models: configuration
encodings, pass-through dataset meta features, and summary statistics of
early-stopped training trajectories computed over leakage-safe windows.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .corpus import DatasetGroup, EarlyStopTrajectory
from .space import ConfigSpace, Configuration, encode, encoded_feature_names

TRAJECTORY_STATS = ("mean", "max", "min", "std", "slope", "mean_diff")
PREFIX_FRACTION = 0.5  # window over the full-horizon step range
LATE_FRACTION = 0.2  # tail share of the prefix window, by point count


class MissingDescriptorError(ValueError):
    """A dataset group has no meta-feature vector attached."""


@dataclass(frozen=True)
class FeatureVector:
    """Named, finite numeric features."""

    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        if len(self.names) != len(self.values):
            raise ValueError("names and values differ in length")
        if len(set(self.names)) != len(self.names):
            raise ValueError("feature names must be unique")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature values must be finite")

    @staticmethod
    def concat(parts: Sequence["FeatureVector"]) -> "FeatureVector":
        names: tuple[str, ...] = ()
        for p in parts:
            names += p.names
        values = (
            np.concatenate([p.values for p in parts])
            if parts
            else np.empty(0, dtype=np.float64)
        )
        return FeatureVector(names, values)


def config_features(config: Configuration, space: ConfigSpace) -> FeatureVector:
    """Encoded configuration with names derived from dimension names."""
    return FeatureVector(tuple(encoded_feature_names(space)), encode(config, space))


def dataset_features(group: DatasetGroup) -> FeatureVector:
    """Meta-feature vector of a dataset group, passed through verbatim."""
    if group.meta_features is None:
        raise MissingDescriptorError(
            f"group {group.dataset_id!r} carries no meta features"
        )
    values = np.asarray(group.meta_features, dtype=np.float64)
    names = tuple(f"meta_{i:03d}" for i in range(len(values)))
    return FeatureVector(names, values)


def _window_stats(steps: np.ndarray, values: np.ndarray) -> tuple[list[float], float]:
    """Six summary statistics of one window plus its degeneracy flag."""
    mean = float(values.mean())
    vmax = float(values.max())
    vmin = float(values.min())
    std = float(values.std())
    if len(values) < 2:
        return [mean, vmax, vmin, std, 0.0, 0.0], 1.0
    s = steps.astype(np.float64)
    s_centered = s - s.mean()
    denom = float((s_centered**2).sum())
    slope = float((s_centered * (values - mean)).sum() / denom) if denom > 0 else 0.0
    mean_diff = float(np.diff(values).mean())
    return [mean, vmax, vmin, std, slope, mean_diff], 0.0


def trajectory_features(traj: EarlyStopTrajectory) -> FeatureVector:
    """Windowed summary statistics of every trajectory channel.

    The prefix window covers the first half of the full training horizon
    (inferred from the last logged step and the truncation fraction), so a
    series truncated at 50% is used whole and points beyond the midpoint are
    never read. The late window is the trailing fifth of the prefix points.
    Windows with fewer than two points emit zero slope and mean-difference
    and set their degeneracy flag.
    """
    names: list[str] = []
    out: list[float] = []
    for channel in traj.channel_names():
        series = traj.channels[channel]
        steps = np.asarray([s for s, _ in series], dtype=np.int64)
        values = np.asarray([v for _, v in series], dtype=np.float64)
        horizon = steps[-1] / traj.truncation_fraction
        cutoff = PREFIX_FRACTION * horizon
        in_prefix = steps <= cutoff
        if not in_prefix.any():
            raise ValueError(f"channel {channel!r} has an empty prefix window")
        p_steps, p_values = steps[in_prefix], values[in_prefix]
        n_late = max(1, math.ceil(LATE_FRACTION * len(p_steps)))
        windows = {
            "prefix": (p_steps, p_values),
            "late": (p_steps[-n_late:], p_values[-n_late:]),
        }
        for window, (w_steps, w_values) in windows.items():
            stats, flag = _window_stats(w_steps, w_values)
            for stat, value in zip(TRAJECTORY_STATS, stats):
                names.append(f"{channel}.{window}.{stat}")
                out.append(value)
            names.append(f"{channel}.{window}.degenerate")
            out.append(flag)
    return FeatureVector(tuple(names), np.asarray(out, dtype=np.float64))


@dataclass(frozen=True)
class FilterReport:
    """Outcome of dataset-aware feature filtering."""

    retained: tuple[str, ...]
    removed_low_variance: tuple[str, ...]
    removed_correlated: tuple[tuple[str, str], ...]  # (kept, removed)
    per_dataset_flags: dict[str, tuple[str, ...]]
    threshold_variance_ratio: float
    threshold_correlation: float
    flag_quorum: int

    def removed(self) -> set[str]:
        return set(self.removed_low_variance) | {r for _, r in self.removed_correlated}

    def to_json(self) -> str:
        return json.dumps(
            {
                "retained": list(self.retained),
                "removed_low_variance": list(self.removed_low_variance),
                "removed_correlated": [list(p) for p in self.removed_correlated],
                "per_dataset_flags": {
                    k: list(v) for k, v in sorted(self.per_dataset_flags.items())
                },
                "threshold_variance_ratio": self.threshold_variance_ratio,
                "threshold_correlation": self.threshold_correlation,
                "flag_quorum": self.flag_quorum,
            }
        )


def filter_features(
    matrices: Mapping[str, np.ndarray],
    names: Sequence[str],
    variance_ratio: float = 1e-2,
    correlation: float = 0.97,
    quorum: int | None = None,
) -> FilterReport:
    """Flag low-variance and redundant features per dataset, remove by quorum.

    Within each dataset a feature is flagged when its variance falls below
    ``variance_ratio`` times the median feature variance there, or when it is
    the later-indexed member of a pair with absolute Pearson correlation at
    or above ``correlation`` among the variance-surviving features. A feature
    is removed globally when flagged in at least ``quorum`` datasets
    (default: all but one).
    """
    if not matrices:
        raise ValueError("need at least one dataset matrix")
    names = tuple(names)
    n_features = len(names)
    for did, m in matrices.items():
        if m.size == 0:
            raise ValueError(f"dataset {did!r} has an empty matrix")
        if m.shape[1] != n_features:
            raise ValueError(f"dataset {did!r} matrix has wrong width")
    if quorum is None:
        quorum = max(1, len(matrices) - 1)

    var_counts = np.zeros(n_features, dtype=np.int64)
    corr_counts = np.zeros(n_features, dtype=np.int64)
    partner_votes: dict[int, dict[int, int]] = {}
    per_dataset_flags: dict[str, tuple[str, ...]] = {}

    for did in sorted(matrices):
        m = np.asarray(matrices[did], dtype=np.float64)
        variances = m.var(axis=0)
        threshold = variance_ratio * float(np.median(variances))
        var_flag = variances < threshold
        remaining = np.flatnonzero(~var_flag)
        corr_flag = np.zeros(n_features, dtype=bool)
        if len(remaining) >= 2 and m.shape[0] >= 2:
            sub = m[:, remaining]
            with np.errstate(invalid="ignore", divide="ignore"):
                cc = np.corrcoef(sub, rowvar=False)
            cc = np.nan_to_num(cc, nan=0.0)
            hi, hj = np.nonzero(np.triu(np.abs(cc) >= correlation, k=1))
            for a, b in zip(remaining[hi], remaining[hj]):
                corr_flag[b] = True
                partner_votes.setdefault(int(b), {})
                partner_votes[int(b)][int(a)] = (
                    partner_votes[int(b)].get(int(a), 0) + 1
                )
        var_counts += var_flag
        corr_counts += corr_flag
        flagged = var_flag | corr_flag
        per_dataset_flags[did] = tuple(names[i] for i in np.flatnonzero(flagged))

    total = var_counts + corr_counts
    # A feature flagged for either reason in a dataset counts once there.
    total = np.minimum(total, len(matrices))
    removed_idx = [i for i in range(n_features) if total[i] >= quorum]

    removed_low_variance = []
    removed_correlated = []
    for i in removed_idx:
        if var_counts[i] >= corr_counts[i]:
            removed_low_variance.append(names[i])
        else:
            votes = partner_votes.get(i, {})
            best = min(votes, key=lambda a: (-votes[a], a))
            removed_correlated.append((names[best], names[i]))

    retained = tuple(n for i, n in enumerate(names) if i not in set(removed_idx))
    return FilterReport(
        retained=retained,
        removed_low_variance=tuple(removed_low_variance),
        removed_correlated=tuple(removed_correlated),
        per_dataset_flags=per_dataset_flags,
        threshold_variance_ratio=variance_ratio,
        threshold_correlation=correlation,
        flag_quorum=quorum,
    )
