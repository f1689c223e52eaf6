"""Discrete configuration space: dimensions, encoding, enumeration, sampling.

A :class:`ConfigSpace` is an ordered list of named dimensions, each with a
finite level set. Points in the space are :class:`Configuration` objects
holding one level index per dimension. Encoding maps a configuration to a
fixed-length numeric vector (one-hot blocks for categorical dimensions, raw
level values for numeric ones).
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class InvalidConfigurationError(ValueError):
    """A configuration does not belong to the space it was used with."""


class SamplingError(ValueError):
    """Requested sample cannot be drawn from the space."""


@dataclass(frozen=True)
class Dimension:
    """One axis of the search space with a finite ordered level set."""

    name: str
    levels: tuple
    kind: str  # "categorical" or "numeric"

    def __post_init__(self):
        if len(self.levels) < 2:
            raise ValueError(f"dimension {self.name!r} needs >= 2 levels")
        if len(set(self.levels)) != len(self.levels):
            raise ValueError(f"dimension {self.name!r} has duplicate levels")
        if self.kind not in ("categorical", "numeric"):
            raise ValueError(f"dimension {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "numeric" and not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in self.levels
        ):
            raise ValueError(f"numeric dimension {self.name!r} has non-numeric levels")


def _infer_kind(levels: Sequence) -> str:
    if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in levels):
        return "numeric"
    return "categorical"


@dataclass(frozen=True)
class ConfigSpace:
    """Ordered collection of dimensions defining a finite product space."""

    dimensions: tuple[Dimension, ...]

    def __post_init__(self):
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise ValueError("dimension names must be unique")
        if not self.dimensions:
            raise ValueError("a space needs at least one dimension")

    @classmethod
    def from_levels(cls, dims: Sequence[tuple[str, Sequence]]) -> "ConfigSpace":
        """Build a space from ``(name, levels)`` pairs, inferring the kind."""
        return cls(
            tuple(
                Dimension(name, tuple(levels), _infer_kind(levels))
                for name, levels in dims
            )
        )

    @property
    def size(self) -> int:
        n = 1
        for d in self.dimensions:
            n *= len(d.levels)
        return n

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.dimensions)

    def validate(self, config: "Configuration") -> None:
        if len(config.indices) != len(self.dimensions):
            raise InvalidConfigurationError(
                f"configuration has {len(config.indices)} indices, "
                f"space has {len(self.dimensions)} dimensions"
            )
        for idx, dim in zip(config.indices, self.dimensions):
            if not 0 <= idx < len(dim.levels):
                raise InvalidConfigurationError(
                    f"index {idx} out of range for dimension {dim.name!r}"
                )

    def ordinal(self, config: "Configuration") -> int:
        """Mixed-radix rank of the configuration in enumeration order."""
        self.validate(config)
        rank = 0
        for idx, dim in zip(config.indices, self.dimensions):
            rank = rank * len(dim.levels) + idx
        return rank

    def to_json(self) -> str:
        doc = {
            "dimensions": [
                {"name": d.name, "kind": d.kind, "levels": list(d.levels)}
                for d in self.dimensions
            ]
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "ConfigSpace":
        doc = json.loads(text)
        return cls(
            tuple(
                Dimension(d["name"], tuple(d["levels"]), d["kind"])
                for d in doc["dimensions"]
            )
        )


@dataclass(frozen=True, order=True)
class Configuration:
    """A point in a space: one level index per dimension.

    Equality and ordering are defined by the index tuple, so configurations
    over the same space hash and compare by identity of their assignment.
    """

    indices: tuple[int, ...]

    def values(self, space: ConfigSpace) -> dict[str, Any]:
        space.validate(self)
        return {
            d.name: d.levels[i] for d, i in zip(space.dimensions, self.indices)
        }

    @classmethod
    def from_values(cls, space: ConfigSpace, mapping: dict[str, Any]) -> "Configuration":
        indices = []
        for d in space.dimensions:
            if d.name not in mapping:
                raise InvalidConfigurationError(f"missing dimension {d.name!r}")
            value = mapping[d.name]
            try:
                indices.append(d.levels.index(value))
            except ValueError:
                raise InvalidConfigurationError(
                    f"value {value!r} is not a level of dimension {d.name!r}"
                ) from None
        extra = set(mapping) - set(space.names)
        if extra:
            raise InvalidConfigurationError(f"unknown dimensions: {sorted(extra)}")
        return cls(tuple(indices))

    def to_json(self, space: ConfigSpace) -> str:
        return json.dumps(self.values(space))


# Default space: 6 base models, 3 SFT knobs, 5 RL knobs; 34,992 points.
_BASE_MODELS = (
    "qwen2.5-1.5b-instruct",
    "qwen2.5-3b-instruct",
    "qwen2.5-7b-instruct",
    "llama3.2-1b-instruct",
    "llama3.2-3b-instruct",
    "llama3.1-8b-instruct",
)


def default_space() -> ConfigSpace:
    """The standard post-training search space used throughout the package."""
    return ConfigSpace.from_levels(
        [
            ("base_model", _BASE_MODELS),
            ("sft_epochs", (1, 2, 3)),
            ("sft_batch", (32, 64, 128)),
            ("sft_lr", (1e-5, 2e-5, 5e-5)),
            ("rl_batch", (64, 128, 256)),
            ("rl_lr", (1e-6, 2e-6, 5e-6, 1e-5)),
            ("rl_beta", (0.0, 0.05, 0.1)),
            ("rl_rollouts", (8, 16)),
            ("rl_temperature", (0.7, 0.9, 1.1)),
        ]
    )


def enumerate_configs(space: ConfigSpace) -> list[Configuration]:
    """Full Cartesian product in lexicographic index order (last dim fastest)."""
    ranges = [range(len(d.levels)) for d in space.dimensions]
    return [Configuration(idx) for idx in itertools.product(*ranges)]


def encoded_feature_names(space: ConfigSpace) -> list[str]:
    """Column names of the encoded vector, in encoding order."""
    names: list[str] = []
    for d in space.dimensions:
        if d.kind == "categorical":
            names.extend(f"{d.name}={level}" for level in d.levels)
        else:
            names.append(d.name)
    return names


def encode(config: Configuration, space: ConfigSpace) -> np.ndarray:
    """Encode a configuration: one-hot categorical blocks, raw numeric levels."""
    space.validate(config)
    parts: list[float] = []
    for idx, d in zip(config.indices, space.dimensions):
        if d.kind == "categorical":
            block = [0.0] * len(d.levels)
            block[idx] = 1.0
            parts.extend(block)
        else:
            parts.append(float(d.levels[idx]))
    return np.asarray(parts, dtype=np.float64)


def encode_many(configs: Iterable[Configuration], space: ConfigSpace) -> np.ndarray:
    """Stack encodings of several configurations into a matrix."""
    rows = [encode(c, space) for c in configs]
    if not rows:
        width = len(encoded_feature_names(space))
        return np.empty((0, width), dtype=np.float64)
    return np.vstack(rows)


def _balanced_column(n: int, n_levels: int, rng: np.random.Generator) -> np.ndarray:
    """A shuffled length-n column where each level count differs by at most 1."""
    base, extra = divmod(n, n_levels)
    counts = np.full(n_levels, base, dtype=np.int64)
    if extra:
        bump = rng.permutation(n_levels)[:extra]
        counts[bump] += 1
    column = np.repeat(np.arange(n_levels), counts)
    rng.shuffle(column)
    return column


def sample_balanced(
    space: ConfigSpace, n: int, seed: int, max_repair_sweeps: int = 200
) -> list[Configuration]:
    """Draw n distinct configurations with per-dimension level balance.

    Each dimension independently contributes a shuffled level cycle in which
    every level appears n/(level count) times (within one when not divisible;
    the shortfall is logged). Columns are combined index-wise; duplicate rows
    are repaired by swapping entries within a column, which preserves the
    per-dimension counts exactly. Deterministic for a fixed seed.
    """
    if n < 1:
        raise SamplingError("n must be >= 1")
    if n > space.size:
        raise SamplingError(f"n={n} exceeds space size {space.size}")
    rng = np.random.default_rng(seed)

    if n == space.size:
        configs = enumerate_configs(space)
        order = rng.permutation(n)
        return [configs[i] for i in order]

    for d in space.dimensions:
        if n % len(d.levels):
            logger.warning(
                "n=%d not divisible by %d levels of %r; using counts within +/-1",
                n,
                len(d.levels),
                d.name,
            )

    columns = np.stack(
        [_balanced_column(n, len(d.levels), rng) for d in space.dimensions], axis=1
    )

    n_dims = columns.shape[1]
    for _ in range(max_repair_sweeps):
        _, first_pos, counts = np.unique(
            columns, axis=0, return_index=True, return_counts=True
        )
        if counts.max() == 1:
            break
        seen: dict[tuple, int] = {}
        dupe_rows = []
        for i, row in enumerate(map(tuple, columns)):
            if row in seen:
                dupe_rows.append(i)
            else:
                seen[row] = i
        for i in dupe_rows:
            j = int(rng.integers(n))
            d = int(rng.integers(n_dims))
            columns[i, d], columns[j, d] = columns[j, d], columns[i, d]
    else:
        raise SamplingError(
            "could not repair duplicate rows while keeping balance; "
            "n is too close to the space size"
        )

    return [Configuration(tuple(int(v) for v in row)) for row in columns]
