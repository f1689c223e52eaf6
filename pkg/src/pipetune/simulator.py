"""Synthetic multi-stage pipeline oracle.

Generates offline corpora, held-out ground truth and early-stop trajectories
with controllable structure: a cross-dataset shared response whose
coefficients are modulated by a latent dataset descriptor, a dataset-specific
residual response, observation noise, and trajectory channels whose
informativeness about the true score is tunable. Scores follow

    y(d, c) = clamp01( sigmoid(ls * g_shared(c, desc_d) + lr * g_d(c)) + eps )

where both responses are degree-2 polynomials with pairwise interactions over
a normalized config encoding, standardized to zero mean and unit variance
over the space per dataset. Everything is deterministic given the spec seed;
trajectory prefixes are bit-identical across truncation fractions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import DatasetGroup, EarlyStopTrajectory, RunRecord
from .space import ConfigSpace, Configuration, enumerate_configs, sample_balanced

HORIZON = 40  # fixed trajectory length in steps
TRUNCATIONS = (0.25, 0.5, 0.75, 1.0)
CHANNELS = ("train_loss", "val_loss", "grad_norm", "entropy")
_NORMALIZATION_CAP = 200_000  # above this, normalize on a seeded sample

# substream tags for seed derivation
_TAG_SHARED, _TAG_DATASET, _TAG_SAMPLING, _TAG_OBS, _TAG_TRAJ, _TAG_EVAL = range(6)


@dataclass(frozen=True)
class SimSpec:
    """Parameters of one synthetic study."""

    space: ConfigSpace
    n_datasets: int = 10
    descriptor_dim: int = 8
    shared_weight: float = 1.0
    residual_weight: float = 0.5
    noise: float = 0.02
    trajectory_informativeness: float = 0.7
    seed: int = 0
    runs_per_dataset: int = 600
    descriptor_modulation: float = 0.3
    interaction_scale: float = 0.5

    def __post_init__(self):
        if self.n_datasets < 1:
            raise ValueError("n_datasets must be >= 1")
        if self.descriptor_dim < 1:
            raise ValueError("descriptor_dim must be >= 1")
        if self.shared_weight < 0 or self.residual_weight < 0:
            raise ValueError("weights must be >= 0")
        if self.shared_weight + self.residual_weight <= 0:
            raise ValueError("shared_weight + residual_weight must be positive")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if not 0.0 <= self.trajectory_informativeness <= 1.0:
            raise ValueError("trajectory_informativeness must be in [0, 1]")
        if self.runs_per_dataset < 1:
            raise ValueError("runs_per_dataset must be >= 1")

    def to_dict(self) -> dict:
        return {
            "space": json.loads(self.space.to_json()),
            "n_datasets": self.n_datasets,
            "descriptor_dim": self.descriptor_dim,
            "shared_weight": self.shared_weight,
            "residual_weight": self.residual_weight,
            "noise": self.noise,
            "trajectory_informativeness": self.trajectory_informativeness,
            "seed": self.seed,
            "runs_per_dataset": self.runs_per_dataset,
            "descriptor_modulation": self.descriptor_modulation,
            "interaction_scale": self.interaction_scale,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SimSpec":
        space = ConfigSpace.from_json(json.dumps(obj["space"]))
        fields = {k: v for k, v in obj.items() if k != "space"}
        return cls(space=space, **fields)


def _rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, *path)))


class _SpaceLayout:
    """Index-level views of a space used by the polynomial responses."""

    def __init__(self, space: ConfigSpace):
        self.space = space
        self.numeric_dims = [
            i for i, d in enumerate(space.dimensions) if d.kind == "numeric"
        ]
        self.categorical_dims = [
            i for i, d in enumerate(space.dimensions) if d.kind == "categorical"
        ]
        # numeric level index -> equally spaced position in [-1, 1]
        self.numeric_u = {
            i: np.linspace(-1.0, 1.0, len(space.dimensions[i].levels))
            for i in self.numeric_dims
        }

    def index_matrix(self, configs: Sequence[Configuration]) -> np.ndarray:
        return np.asarray([c.indices for c in configs], dtype=np.int64)

    def u_matrix(self, idx: np.ndarray) -> np.ndarray:
        cols = [self.numeric_u[i][idx[:, i]] for i in self.numeric_dims]
        if not cols:
            return np.empty((len(idx), 0))
        return np.stack(cols, axis=1)


@dataclass
class _PolyResponse:
    """Materialized degree-2 response over the normalized config encoding."""

    layout: _SpaceLayout
    cat_effects: dict[int, np.ndarray]
    linear: np.ndarray
    quadratic: np.ndarray
    interactions: np.ndarray  # strictly upper triangular (n_num, n_num)
    mean: float = 0.0
    std: float = 1.0

    def raw(self, idx: np.ndarray) -> np.ndarray:
        u = self.layout.u_matrix(idx)
        out = u @ self.linear + (u**2) @ self.quadratic
        out = out + np.einsum("ni,ij,nj->n", u, self.interactions, u)
        for dim, effects in self.cat_effects.items():
            out = out + effects[idx[:, dim]]
        return out

    def normalized(self, idx: np.ndarray) -> np.ndarray:
        return (self.raw(idx) - self.mean) / self.std

    def calibrate(self, idx: np.ndarray) -> None:
        values = self.raw(idx)
        self.mean = float(values.mean())
        self.std = float(values.std()) or 1.0


def _draw_response(
    layout: _SpaceLayout, rng: np.random.Generator, interaction_scale: float = 0.5
) -> _PolyResponse:
    n_num = len(layout.numeric_dims)
    inter = np.triu(rng.normal(0.0, interaction_scale, size=(n_num, n_num)), k=1)
    return _PolyResponse(
        layout=layout,
        cat_effects={
            dim: rng.normal(0.0, 0.8, size=len(layout.space.dimensions[dim].levels))
            for dim in layout.categorical_dims
        },
        linear=rng.normal(0.0, 1.0, size=n_num),
        quadratic=rng.normal(0.0, 0.5, size=n_num),
        interactions=inter,
    )


class _SharedStructure:
    """Backbone response plus descriptor-modulated coefficient deltas."""

    def __init__(
        self,
        layout: _SpaceLayout,
        descriptor_dim: int,
        gamma: float,
        interaction_scale: float,
        seed: int,
    ):
        rng = _rng(seed, _TAG_SHARED)
        self.layout = layout
        self.backbone = _draw_response(layout, rng, interaction_scale)
        dd = descriptor_dim
        scale = gamma / math.sqrt(dd)
        n_num = len(layout.numeric_dims)
        self.lin_mod = rng.normal(0.0, scale, size=(n_num, dd))
        self.quad_mod = rng.normal(0.0, 0.5 * scale, size=(n_num, dd))
        self.cat_mod = {
            dim: rng.normal(
                0.0, 0.8 * scale, size=(len(layout.space.dimensions[dim].levels), dd)
            )
            for dim in layout.categorical_dims
        }

    def materialize(self, descriptor: np.ndarray) -> _PolyResponse:
        b = self.backbone
        return _PolyResponse(
            layout=self.layout,
            cat_effects={
                dim: b.cat_effects[dim] + self.cat_mod[dim] @ descriptor
                for dim in self.layout.categorical_dims
            },
            linear=b.linear + self.lin_mod @ descriptor,
            quadratic=b.quadratic + self.quad_mod @ descriptor,
            interactions=b.interactions,
        )


@dataclass
class SimDataset:
    """Ground-truth oracle for one synthetic dataset."""

    dataset_id: str
    index: int
    spec: SimSpec
    descriptor: np.ndarray
    shared: _PolyResponse
    residual: _PolyResponse
    _layout: _SpaceLayout
    _eval_counts: dict = field(default_factory=dict)

    @property
    def meta_features(self) -> tuple[float, ...]:
        d = self.descriptor
        stats = [float(d.mean()), float(d.std()), float(d.min()), float(d.max())]
        return tuple(float(v) for v in d) + tuple(stats)

    def latent(self, configs: Sequence[Configuration]) -> np.ndarray:
        """Pre-sigmoid score, standardized components weighted by the spec."""
        idx = self._layout.index_matrix(configs)
        z = self.spec.shared_weight * self.shared.normalized(idx)
        z = z + self.spec.residual_weight * self.residual.normalized(idx)
        return z

    def _signal(self, configs: Sequence[Configuration]) -> np.ndarray:
        """Unit-scale latent used to parameterize trajectories."""
        norm = math.hypot(self.spec.shared_weight, self.spec.residual_weight)
        return self.latent(configs) / norm

    def true_scores(self, configs: Sequence[Configuration]) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.latent(configs)))

    def true_score(self, config: Configuration) -> float:
        return float(self.true_scores([config])[0])

    def evaluate_full(self, config: Configuration) -> float:
        """Ground truth plus fresh observation noise, clamped to [0, 1].

        The noise stream is seeded per (dataset, config, call index), so
        repeated calls differ but any rerun of the same call sequence is
        reproducible.
        """
        ordinal = self.spec.space.ordinal(config)
        call = self._eval_counts.get(ordinal, 0)
        self._eval_counts[ordinal] = call + 1
        score = self.true_score(config)
        if self.spec.noise > 0:
            rng = _rng(self.spec.seed, _TAG_EVAL, self.index, ordinal, call)
            score += self.spec.noise * rng.standard_normal()
        return float(min(1.0, max(0.0, score)))

    def emit_trajectory(
        self, config: Configuration, truncation: float = 1.0
    ) -> EarlyStopTrajectory:
        """Parametric decay curves over a fixed 40-step horizon, truncated.

        Curve parameters mix the true latent score (weight rho) with an
        independent per-run draw (weight 1 - rho); per-step noise is seeded
        by (dataset, config) only, so shorter truncations are exact prefixes.
        """
        if truncation not in TRUNCATIONS:
            raise ValueError(f"truncation must be one of {TRUNCATIONS}")
        ordinal = self.spec.space.ordinal(config)
        rng = _rng(self.spec.seed, _TAG_TRAJ, self.index, ordinal)
        rho = self.spec.trajectory_informativeness
        s = rho * self._signal([config])[0] + (1.0 - rho) * rng.standard_normal()
        t = np.arange(1, HORIZON + 1)
        x = t / HORIZON
        # curve levels respond linearly in s; rates are clipped for positivity
        curves = {
            "train_loss": (1.6 - 0.1 * s) * np.exp(-max(0.3, 1.2 + 0.25 * s) * x)
            + (0.55 - 0.18 * s),
            "val_loss": (1.7 - 0.08 * s) * np.exp(-max(0.25, 1.0 + 0.2 * s) * x)
            + (0.65 - 0.22 * s),
            "grad_norm": max(0.15, 1.0 - 0.3 * s) * (0.4 + 0.8 * np.exp(-1.5 * x)),
            "entropy": 0.7 * np.exp(-max(0.2, 0.8 + 0.3 * s) * x) + (0.35 - 0.1 * s),
        }
        noise_scale = {"train_loss": 0.006, "val_loss": 0.009, "grad_norm": 0.012, "entropy": 0.006}
        keep = int(round(truncation * HORIZON))
        channels = {}
        for name in CHANNELS:
            values = curves[name] + noise_scale[name] * rng.standard_normal(HORIZON)
            channels[name] = tuple(
                (int(step), float(v)) for step, v in zip(t[:keep], values[:keep])
            )
        return EarlyStopTrajectory(channels=channels, truncation_fraction=truncation)


class Simulation:
    """A full synthetic study: corpus datasets plus one extra held-out dataset."""

    def __init__(self, spec: SimSpec):
        self.spec = spec
        layout = _SpaceLayout(spec.space)
        shared = _SharedStructure(
            layout,
            spec.descriptor_dim,
            spec.descriptor_modulation,
            spec.interaction_scale,
            spec.seed,
        )
        if spec.space.size <= _NORMALIZATION_CAP:
            calib_idx = layout.index_matrix(enumerate_configs(spec.space))
        else:
            calib_configs = sample_balanced(
                spec.space, min(4096, spec.space.size), seed=spec.seed
            )
            calib_idx = layout.index_matrix(calib_configs)

        self.datasets: list[SimDataset] = []
        for i in range(spec.n_datasets + 1):  # last one is the extra held-out
            rng = _rng(spec.seed, _TAG_DATASET, i)
            descriptor = rng.standard_normal(spec.descriptor_dim)
            shared_resp = shared.materialize(descriptor)
            shared_resp.calibrate(calib_idx)
            residual_resp = _draw_response(layout, rng, spec.interaction_scale)
            residual_resp.calibrate(calib_idx)
            self.datasets.append(
                SimDataset(
                    dataset_id=f"d{i}",
                    index=i,
                    spec=spec,
                    descriptor=descriptor,
                    shared=shared_resp,
                    residual=residual_resp,
                    _layout=layout,
                )
            )

    @property
    def corpus_datasets(self) -> list[SimDataset]:
        return self.datasets[: self.spec.n_datasets]

    @property
    def heldout(self) -> SimDataset:
        return self.datasets[self.spec.n_datasets]

    def dataset(self, dataset_id: str) -> SimDataset:
        for d in self.datasets:
            if d.dataset_id == dataset_id:
                return d
        raise KeyError(f"unknown dataset {dataset_id!r}")

    def build_groups(self) -> list[DatasetGroup]:
        """Balanced-sampled, noisily scored corpus with full trajectories."""
        spec = self.spec
        groups = []
        for sim in self.corpus_datasets:
            configs = sample_balanced(
                spec.space,
                min(spec.runs_per_dataset, spec.space.size),
                seed=int(_rng(spec.seed, _TAG_SAMPLING, sim.index).integers(2**31)),
            )
            truth = sim.true_scores(configs)
            noise_rng = _rng(spec.seed, _TAG_OBS, sim.index)
            observed = truth + spec.noise * noise_rng.standard_normal(len(configs))
            observed = np.clip(observed, 0.0, 1.0)
            meta = sim.meta_features
            records = tuple(
                RunRecord(
                    dataset_id=sim.dataset_id,
                    config=config,
                    final_score=float(score),
                    trajectory=sim.emit_trajectory(config, 1.0),
                    meta_features=meta,
                )
                for config, score in zip(configs, observed)
            )
            groups.append(
                DatasetGroup(sim.dataset_id, records, np.asarray(meta))
            )
        return groups

    def ground_truth_sidecar(self, score_table_cap: int = 50_000) -> dict:
        """Per-dataset optimum (and full score table for small spaces)."""
        configs = enumerate_configs(self.spec.space)
        include_table = self.spec.space.size <= score_table_cap
        doc = {"spec": self.spec.to_dict(), "datasets": []}
        for sim in self.datasets:
            scores = sim.true_scores(configs)
            best = int(scores.argmax())
            entry = {
                "dataset_id": sim.dataset_id,
                "role": "heldout_extra" if sim is self.heldout else "corpus",
                "optimum_config": configs[best].values(self.spec.space),
                "optimum_score": float(scores[best]),
                "meta_features": list(sim.meta_features),
            }
            if include_table:
                entry["scores"] = [float(v) for v in scores]
            doc["datasets"].append(entry)
        return doc


def generate(spec: SimSpec) -> tuple[list[DatasetGroup], SimDataset]:
    """Offline corpus groups plus the extra held-out dataset oracle."""
    sim = Simulation(spec)
    return sim.build_groups(), sim.heldout


def evaluate_full(sim: SimDataset, config: Configuration) -> float:
    return sim.evaluate_full(config)


def emit_trajectory(
    sim: SimDataset, config: Configuration, truncation: float
) -> EarlyStopTrajectory:
    return sim.emit_trajectory(config, truncation)


def write_sidecar(path: str | Path, simulation: Simulation) -> None:
    Path(path).write_text(json.dumps(simulation.ground_truth_sidecar()))


def load_sidecar_spec(path: str | Path) -> SimSpec:
    doc = json.loads(Path(path).read_text())
    return SimSpec.from_dict(doc["spec"])
