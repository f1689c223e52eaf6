"""Online two-phase loop: warm start, tempered UCB acquisition, offset updates.

The loop owns an exploration budget of early-stopped evaluations. Warm-start
candidates come from a diversity-constrained pick over the ranker's top
decile; each evaluation flows through the early-stop predictor into a
residual pseudo-observation (pre-bias value and noise). After every
observation the dataset offset is refreshed as an inverse-variance-weighted
mean and the GP is refit on centered targets. Acquisition maximizes

    alpha(c) = w_t * s_z(c) + b + mu(c) + beta_t * sigma(c)

over unevaluated candidates, with the anchor weight w_t annealed linearly
and beta_t decayed geometrically. Ablation variants drop the guidance term
or model absolute proxies instead of residual corrections.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import EarlyStopTrajectory
from .es_predictor import EarlyStopPredictor, PseudoObservation, reconstruct
from .gp import ResidualGP
from .ranker import ScoredCandidates
from .space import ConfigSpace, Configuration, encode_many

VARIANTS = ("full", "no_residual", "no_offline")


class PoolExhaustedError(RuntimeError):
    """Every candidate has already been evaluated."""


class AllEvaluationsFailedError(RuntimeError):
    """No successful observation exists to select from."""


@dataclass(frozen=True)
class Schedules:
    """Budget and annealing schedules of one online run."""

    budget: int = 15
    warm_start: int = 5
    w_start: float = 1.0
    w_end: float = 0.7
    beta_start: float = 2.0
    beta_end: float = 0.5

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.warm_start < 1:
            raise ValueError("warm_start must be >= 1")
        if not (0.0 <= self.w_end <= self.w_start <= 1.0):
            raise ValueError("need 0 <= w_end <= w_start <= 1")
        if not (0.0 < self.beta_end <= self.beta_start):
            raise ValueError("need 0 < beta_end <= beta_start")

    @property
    def warm_size(self) -> int:
        return min(self.warm_start, self.budget)

    @property
    def n_steps(self) -> int:
        return self.budget - self.warm_size

    def w(self, t: int) -> float:
        if self.n_steps <= 1:
            return self.w_start
        frac = t / (self.n_steps - 1)
        return self.w_start + (self.w_end - self.w_start) * frac

    def beta(self, t: int) -> float:
        if self.n_steps <= 1:
            return self.beta_start
        frac = t / (self.n_steps - 1)
        return self.beta_start * (self.beta_end / self.beta_start) ** frac


def tempered_score(s_z, b: float, mu, w: float):
    """Anchored value estimate: w * s_z + b + mu."""
    return w * np.asarray(s_z) + b + np.asarray(mu)


def update_offset(observations: Sequence[PseudoObservation]) -> float:
    """Inverse-variance-weighted mean of pre-bias residual observations."""
    if not observations:
        return 0.0
    deltas = np.asarray([o.r_hat for o in observations])
    weights = 1.0 / np.asarray([o.variance for o in observations])
    return float((deltas * weights).sum() / weights.sum())


def candidate_feature_matrix(
    configs: Sequence[Configuration], space: ConfigSpace
) -> np.ndarray:
    """Encoded candidates with numeric columns z-scored over the pool.

    One-hot columns stay raw; constant columns map to zero so distances and
    ARD lengthscales operate on comparable scales.
    """
    X = encode_many(configs, space)
    numeric_cols = []
    col = 0
    for d in space.dimensions:
        if d.kind == "categorical":
            col += len(d.levels)
        else:
            numeric_cols.append(col)
            col += 1
    X = X.copy()
    for c in numeric_cols:
        std = X[:, c].std()
        X[:, c] = (X[:, c] - X[:, c].mean()) / std if std > 0 else 0.0
    return X


def warm_start(
    scored: ScoredCandidates,
    k: int,
    seed: int,
    features: Optional[np.ndarray] = None,
    space: Optional[ConfigSpace] = None,
) -> list[Configuration]:
    """Greedy max-min-diversity picks inside the top decile by raw score.

    The first pick is the score argmax; each later pick maximizes the minimum
    standardized-feature distance to the picks so far. Exact distance ties
    break by a seeded draw.
    """
    n = len(scored)
    k = min(k, n)
    if features is None:
        if space is None:
            raise ValueError("need precomputed features or a space")
        features = candidate_feature_matrix(scored.configs, space)
    order = sorted(
        range(n), key=lambda i: (-scored.raw_scores[i], scored.configs[i].indices)
    )
    decile = order[: max(k, math.ceil(0.1 * n))]
    rng = np.random.default_rng(seed)
    picked = [decile[0]]
    remaining = [i for i in decile if i != decile[0]]
    while len(picked) < k and remaining:
        dists = np.stack(
            [
                np.linalg.norm(features[remaining] - features[p], axis=1)
                for p in picked
            ],
            axis=0,
        ).min(axis=0)
        best = dists.max()
        ties = [i for i, d in zip(remaining, dists) if d == best]
        choice = ties[int(rng.integers(len(ties)))] if len(ties) > 1 else ties[0]
        picked.append(choice)
        remaining.remove(choice)
    return [scored.configs[i] for i in picked]


@dataclass
class OnlineState:
    """Mutable state of one online search."""

    scored: ScoredCandidates
    features: np.ndarray
    gp: ResidualGP
    observations: list[PseudoObservation] = field(default_factory=list)
    offset: float = 0.0
    evaluated: dict[Configuration, bool] = field(default_factory=dict)  # success flag
    iteration: int = 0
    trace: list[dict] = field(default_factory=list)
    index_of: dict[Configuration, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.index_of:
            self.index_of = {c: i for i, c in enumerate(self.scored.configs)}

    def unevaluated_indices(self) -> np.ndarray:
        return np.asarray(
            [i for i, c in enumerate(self.scored.configs) if c not in self.evaluated],
            dtype=np.int64,
        )

    def refresh_model(self) -> None:
        """Re-center targets on the current offset and refit the GP."""
        self.offset = update_offset(self.observations)
        if self.observations:
            rows = [self.index_of[o.config] for o in self.observations]
            X = self.features[rows]
            targets = np.asarray([o.r_hat for o in self.observations]) - self.offset
            noise = np.asarray([o.variance for o in self.observations])
            self.gp.fit(X, targets, noise)
        else:
            self.gp.fit(
                np.empty((0, self.features.shape[1])), np.empty(0), np.empty(0)
            )


def acquire(
    state: OnlineState, w: float, beta: float, use_guidance: bool = True
) -> Configuration:
    """Argmax of the UCB acquisition over unevaluated candidates."""
    idx = state.unevaluated_indices()
    if len(idx) == 0:
        raise PoolExhaustedError("candidate pool exhausted")
    mu, sigma = state.gp.posterior(state.features[idx])
    s_z = state.scored.standardized_scores[idx] if use_guidance else 0.0
    alpha = tempered_score(s_z, state.offset, mu, w) + beta * sigma
    sz_full = state.scored.standardized_scores[idx]
    best = min(
        range(len(idx)),
        key=lambda j: (
            -alpha[j],
            -sz_full[j],
            state.scored.configs[idx[j]].indices,
        ),
    )
    return state.scored.configs[idx[best]]


def _alpha_top5(state: OnlineState, w: float, beta: float, use_guidance: bool) -> list:
    idx = state.unevaluated_indices()
    if len(idx) == 0:
        return []
    mu, sigma = state.gp.posterior(state.features[idx])
    s_z = state.scored.standardized_scores[idx] if use_guidance else 0.0
    alpha = np.asarray(tempered_score(s_z, state.offset, mu, w)) + beta * sigma
    top = np.argsort(-alpha, kind="stable")[:5]
    return [float(alpha[j]) for j in top]


@dataclass(frozen=True)
class SelectionResult:
    """Final choice of one online run plus its full per-iteration trace."""

    chosen: Configuration
    proxy_score: float
    trace: list[dict]
    evaluations_used: int


class TwoPhaseOptimizer:
    """Orchestrates one online search against an early-stop evaluator.

    ``evaluator`` maps a configuration to an early-stop trajectory; failures
    (any exception) consume budget and are recorded in the trace. Variants:
    "full" models residual corrections anchored to the ranker, "no_residual"
    feeds absolute proxies to the GP while keeping ranker-guided candidates,
    and "no_offline" drops the ranker entirely (random diverse warm start,
    absolute predictor).
    """

    def __init__(
        self,
        schedules: Schedules = Schedules(),
        variant: str = "full",
        refit_every: int = 5,
        gp_restarts: int = 8,
        noise_floor: float = 1e-4,
        seed: int = 0,
    ):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.schedules = schedules
        self.variant = variant
        self.refit_every = refit_every
        self.gp_restarts = gp_restarts
        self.noise_floor = noise_floor
        self.seed = seed

    @property
    def _guided(self) -> bool:
        return self.variant != "no_offline"

    def _observation_value(self, obs: PseudoObservation, s_z: float) -> PseudoObservation:
        if self.variant == "no_residual":
            # GP models the absolute proxy; store the reconstructed value.
            return PseudoObservation(
                config=obs.config,
                r_hat=reconstruct(s_z, obs.r_hat),
                variance=obs.variance,
                trajectory_ref=obs.trajectory_ref,
            )
        return obs

    def _proxy(self, obs: PseudoObservation, s_z: float) -> float:
        if self.variant == "no_offline":
            return obs.r_hat
        if self.variant == "no_residual":
            return obs.r_hat  # already reconstructed at observation time
        return reconstruct(s_z, obs.r_hat)

    def _warm_configs(self, state: OnlineState, rng: np.random.Generator):
        k = self.schedules.warm_size
        if self._guided:
            return warm_start(
                state.scored,
                k,
                seed=int(rng.integers(2**31)),
                features=state.features,
            )
        idx = rng.choice(len(state.scored.configs), size=k, replace=False)
        return [state.scored.configs[i] for i in sorted(idx)]

    def _evaluate(
        self,
        state: OnlineState,
        config: Configuration,
        evaluator: Callable[[Configuration], EarlyStopTrajectory],
        predictor: EarlyStopPredictor,
        target_meta,
        space: ConfigSpace,
        phase: str,
        w: float,
        beta: float,
        alpha_top5: list,
    ) -> None:
        i = state.index_of[config]
        s_z = float(state.scored.standardized_scores[i])
        row = {
            "t": state.iteration,
            "phase": phase,
            "config": config.values(space),
            "alpha_top5": alpha_top5,
            "w": w,
            "beta": beta,
            "b": state.offset,
            "wall_clock": time.time(),
        }
        try:
            traj = evaluator(config)
            obs = predictor.predict_observation(
                config, target_meta, traj, space, trajectory_ref=f"t={state.iteration}"
            )
            obs = self._observation_value(obs, s_z)
            state.observations.append(obs)
            state.evaluated[config] = True
            row.update({"r_hat": obs.r_hat, "v": obs.variance, "failed": False})
        except Exception as exc:  # failures consume budget
            state.evaluated[config] = False
            row.update({"r_hat": None, "v": None, "failed": True, "error": str(exc)})
        state.refresh_model()
        row["b"] = state.offset
        state.iteration += 1
        state.trace.append(row)

    def run(
        self,
        scored: ScoredCandidates,
        predictor: EarlyStopPredictor,
        evaluator: Callable[[Configuration], EarlyStopTrajectory],
        target_meta,
        space: ConfigSpace,
    ) -> SelectionResult:
        rng = np.random.default_rng(self.seed)
        features = candidate_feature_matrix(scored.configs, space)
        gp = ResidualGP(noise_floor=self.noise_floor)
        state = OnlineState(scored=scored, features=features, gp=gp)
        state.refresh_model()

        for config in self._warm_configs(state, rng):
            self._evaluate(
                state,
                config,
                evaluator,
                predictor,
                target_meta,
                space,
                phase="warm",
                w=self.schedules.w(0),
                beta=self.schedules.beta(0),
                alpha_top5=[],
            )

        hyperopt_seed = int(rng.integers(2**31))
        for t in range(self.schedules.n_steps):
            w, beta = self.schedules.w(t), self.schedules.beta(t)
            if t % self.refit_every == 0 and len(state.observations) >= 3:
                state.gp.optimize_hyperparameters(
                    seed=hyperopt_seed + t, restarts=self.gp_restarts
                )
                state.refresh_model()
            alpha_top5 = _alpha_top5(state, w, beta, self._guided)
            config = acquire(state, w, beta, use_guidance=self._guided)
            self._evaluate(
                state,
                config,
                evaluator,
                predictor,
                target_meta,
                space,
                phase="step",
                w=w,
                beta=beta,
                alpha_top5=alpha_top5,
            )
        return self.finalize(state)

    def finalize(self, state: OnlineState) -> SelectionResult:
        """Pick the evaluated configuration with the best reconstructed proxy."""
        if not state.observations:
            raise AllEvaluationsFailedError("every evaluation failed")
        candidates = []
        for obs in state.observations:
            i = state.index_of[obs.config]
            s_z = float(state.scored.standardized_scores[i])
            candidates.append((self._proxy(obs, s_z), s_z, obs.config))
        best = max(candidates, key=lambda c: (c[0], c[1], tuple(-i for i in c[2].indices)))
        return SelectionResult(
            chosen=best[2],
            proxy_score=best[0],
            trace=state.trace,
            evaluations_used=state.iteration,
        )
