"""Historical-run corpus: records, trajectories, grouping, standardization.

The on-disk format is JSONL with one run per line. Required keys are
``dataset_id``, ``config`` (dimension-name to value map) and ``final_score``;
optional keys are ``trajectory`` (channel name to ``[step, value]`` series),
``truncation_fraction``, ``meta_features`` and ``tags``. Unknown keys are
preserved on round-trip.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .space import ConfigSpace, Configuration

STANDARDIZER_EPS = 1e-8

_KNOWN_KEYS = {
    "dataset_id",
    "config",
    "final_score",
    "trajectory",
    "truncation_fraction",
    "meta_features",
    "tags",
}


class CorpusFormatError(ValueError):
    """A corpus file or record violates the JSONL schema."""


class UnknownDatasetError(KeyError):
    """A dataset id has no fitted standardization statistics."""


@dataclass(frozen=True)
class EarlyStopTrajectory:
    """Logged training dynamics of one run, possibly truncated.

    ``channels`` maps a channel name to an ordered series of (step, value)
    pairs; ``truncation_fraction`` records how much of the full horizon the
    series covers.
    """

    channels: dict[str, tuple[tuple[int, float], ...]]
    truncation_fraction: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.truncation_fraction <= 1.0:
            raise ValueError("truncation_fraction must be in (0, 1]")
        for name, series in self.channels.items():
            if len(series) < 2:
                raise ValueError(f"channel {name!r} needs >= 2 points")
            steps = [s for s, _ in series]
            if any(b <= a for a, b in zip(steps, steps[1:])):
                raise ValueError(f"channel {name!r} steps must strictly increase")

    def channel_names(self) -> tuple[str, ...]:
        return tuple(sorted(self.channels))


@dataclass(frozen=True)
class RunRecord:
    """One historical execution of the pipeline."""

    dataset_id: str
    config: Configuration
    final_score: float
    trajectory: Optional[EarlyStopTrajectory] = None
    meta_features: Optional[tuple[float, ...]] = None
    tags: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.final_score):
            raise ValueError("final_score must be finite")
        if not 0.0 <= self.final_score <= 1.0:
            raise ValueError("final_score must be in [0, 1]")


@dataclass(frozen=True)
class DatasetGroup:
    """All records sharing one dataset id, plus its meta-feature vector."""

    dataset_id: str
    records: tuple[RunRecord, ...]
    meta_features: Optional[np.ndarray] = None

    def __post_init__(self):
        for r in self.records:
            if r.dataset_id != self.dataset_id:
                raise ValueError("all records in a group must share dataset_id")

    def scores(self) -> np.ndarray:
        return np.asarray([r.final_score for r in self.records], dtype=np.float64)


def _record_to_obj(record: RunRecord, space: ConfigSpace) -> dict:
    obj: dict = {
        "dataset_id": record.dataset_id,
        "config": record.config.values(space),
        "final_score": record.final_score,
    }
    if record.trajectory is not None:
        obj["trajectory"] = {
            name: [[s, v] for s, v in series]
            for name, series in record.trajectory.channels.items()
        }
        obj["truncation_fraction"] = record.trajectory.truncation_fraction
    if record.meta_features is not None:
        obj["meta_features"] = list(record.meta_features)
    if record.tags:
        obj["tags"] = record.tags
    obj.update(record.extras)
    return obj


def _record_from_obj(obj: dict, space: ConfigSpace, lineno: int) -> RunRecord:
    try:
        config = Configuration.from_values(space, obj["config"])
        trajectory = None
        if obj.get("trajectory") is not None:
            trajectory = EarlyStopTrajectory(
                channels={
                    name: tuple((int(s), float(v)) for s, v in series)
                    for name, series in obj["trajectory"].items()
                },
                truncation_fraction=float(obj.get("truncation_fraction", 1.0)),
            )
        meta = obj.get("meta_features")
        return RunRecord(
            dataset_id=obj["dataset_id"],
            config=config,
            final_score=float(obj["final_score"]),
            trajectory=trajectory,
            meta_features=tuple(float(v) for v in meta) if meta is not None else None,
            tags=obj.get("tags", {}),
            extras={k: v for k, v in obj.items() if k not in _KNOWN_KEYS},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusFormatError(f"line {lineno}: {exc}") from exc


def save_corpus(
    path: str | Path, groups: Sequence[DatasetGroup], space: ConfigSpace
) -> None:
    """Write groups as JSONL, one record per line, group order preserved."""
    path = Path(path)
    with path.open("w") as fh:
        for group in groups:
            for record in group.records:
                fh.write(json.dumps(_record_to_obj(record, space)) + "\n")


def load_corpus(path: str | Path, space: ConfigSpace) -> list[DatasetGroup]:
    """Load a JSONL corpus, grouping records by dataset id in file order."""
    path = Path(path)
    order: list[str] = []
    by_dataset: dict[str, list[RunRecord]] = {}
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {lineno}: invalid JSON: {exc}") from exc
            record = _record_from_obj(obj, space, lineno)
            if record.dataset_id not in by_dataset:
                order.append(record.dataset_id)
                by_dataset[record.dataset_id] = []
            by_dataset[record.dataset_id].append(record)

    groups = []
    for dataset_id in order:
        records = by_dataset[dataset_id]
        meta = next(
            (np.asarray(r.meta_features) for r in records if r.meta_features), None
        )
        groups.append(DatasetGroup(dataset_id, tuple(records), meta))
    return groups


@dataclass(frozen=True)
class Standardizer:
    """Per-dataset score standardization fitted on training datasets only."""

    stats: dict[str, tuple[float, float]]  # dataset_id -> (mean, population std)
    eps: float = STANDARDIZER_EPS

    def transform(self, dataset_id: str, y: float) -> float:
        if dataset_id not in self.stats:
            raise UnknownDatasetError(
                f"no standardization statistics for dataset {dataset_id!r}"
            )
        mu, sigma = self.stats[dataset_id]
        return (y - mu) / (sigma + self.eps)

    def transform_many(self, dataset_id: str, y: np.ndarray) -> np.ndarray:
        if dataset_id not in self.stats:
            raise UnknownDatasetError(
                f"no standardization statistics for dataset {dataset_id!r}"
            )
        mu, sigma = self.stats[dataset_id]
        return (np.asarray(y, dtype=np.float64) - mu) / (sigma + self.eps)


def fit_standardizer(groups: Sequence[DatasetGroup]) -> Standardizer:
    """Fit per-dataset mean and population stddev of final scores."""
    stats = {}
    for group in groups:
        if not group.records:
            raise ValueError(f"group {group.dataset_id!r} has no records")
        scores = group.scores()
        stats[group.dataset_id] = (float(scores.mean()), float(scores.std()))
    return Standardizer(stats)
