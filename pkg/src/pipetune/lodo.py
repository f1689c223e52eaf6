"""Leave-one-dataset-out harness: baselines, ablations, reports, leakage audit.

For each split the offline components are trained on the remaining datasets
only; the held-out dataset serves as the online target through the simulator
oracle. Trained models are cached per split so method variants, budget
sweeps and truncation variants reuse them. A hash audit proves that no
held-out record entered any fit.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import DatasetGroup
from .es_predictor import EarlyStopPredictor
from .metrics import (
    MetricReport,
    mean_of,
    ndcg_at_k,
    pairwise_accuracy,
    recall_at_k,
    regret,
    spearman,
)
from .optimizer import Schedules, TwoPhaseOptimizer
from .ranker import OfflineRanker, ScoredCandidates, record_hash, select_top
from .simulator import SimDataset, Simulation
from .space import Configuration, enumerate_configs

METHODS = (
    "two_phase",
    "offline_only",
    "global",
    "random_single",
    "random_search",
    "no_residual",
    "no_bo",
    "no_offline",
)
RECALL_KS = (1, 3, 5, 10)
NDCG_KS = (5, 10)


class LeakageError(AssertionError):
    """A fitted model consumed a record from the held-out dataset."""


@dataclass(frozen=True)
class LodoSplit:
    heldout_id: str
    training_ids: tuple[str, ...]

    def __post_init__(self):
        if self.heldout_id in self.training_ids:
            raise ValueError("held-out dataset cannot be a training dataset")


@dataclass(frozen=True)
class LodoSettings:
    """Method and model settings shared across splits."""

    budget: int = 15
    warm_start: int = 5
    truncation: float = 0.5
    ranker_members: int = 3
    ranker_rounds: int = 120
    predictor_members: int = 5
    predictor_rounds: int = 120
    depth: int = 4
    learning_rate: float = 0.1
    min_leaf: int = 5
    gp_restarts: int = 8
    refit_every: int = 5
    apply_filter: bool = False
    max_bins: int = 64
    seed: int = 0


@dataclass
class SplitModels:
    """Offline artifacts trained for one split, lazily extended per variant."""

    split: LodoSplit
    ranker: OfflineRanker
    scored_pool: ScoredCandidates
    predictors: dict[tuple[float, str], EarlyStopPredictor] = field(
        default_factory=dict
    )


def _method_seed(base: int, split_index: int, tag: int) -> int:
    return int(
        np.random.SeedSequence((base, split_index, tag)).generate_state(1)[0] % 2**31
    )


class LodoHarness:
    """Runs selection methods across every leave-one-dataset-out split."""

    def __init__(self, simulation: Simulation, settings: LodoSettings = LodoSettings()):
        self.simulation = simulation
        self.settings = settings
        self.space = simulation.spec.space
        self.groups = simulation.build_groups()
        self.pool = enumerate_configs(self.space)
        self._models: dict[str, SplitModels] = {}
        self._truth: dict[str, np.ndarray] = {}

    # ---------------------------------------------------------------- splits

    def splits(self) -> list[LodoSplit]:
        ids = [g.dataset_id for g in self.groups]
        return [
            LodoSplit(hid, tuple(i for i in ids if i != hid)) for hid in ids
        ]

    def _training_groups(self, split: LodoSplit) -> list[DatasetGroup]:
        return [g for g in self.groups if g.dataset_id in split.training_ids]

    def _heldout_group(self, split: LodoSplit) -> DatasetGroup:
        return next(g for g in self.groups if g.dataset_id == split.heldout_id)

    def _heldout_sim(self, split: LodoSplit) -> SimDataset:
        return self.simulation.dataset(split.heldout_id)

    def true_pool_scores(self, heldout_id: str) -> np.ndarray:
        if heldout_id not in self._truth:
            sim = self.simulation.dataset(heldout_id)
            self._truth[heldout_id] = sim.true_scores(self.pool)
        return self._truth[heldout_id]

    # ---------------------------------------------------------------- models

    def prepare(self, split: LodoSplit) -> SplitModels:
        if split.heldout_id in self._models:
            return self._models[split.heldout_id]
        s = self.settings
        training = self._training_groups(split)
        ranker = OfflineRanker(
            members=s.ranker_members,
            rounds=s.ranker_rounds,
            depth=s.depth,
            learning_rate=s.learning_rate,
            min_leaf=s.min_leaf,
            apply_filter=s.apply_filter,
            max_bins=s.max_bins,
            seed=_method_seed(s.seed, self._split_index(split), 1),
        ).fit(training, self.space)
        sim = self._heldout_sim(split)
        scored = ranker.score(np.asarray(sim.meta_features), self.pool, self.space)
        models = SplitModels(split=split, ranker=ranker, scored_pool=scored)
        self._models[split.heldout_id] = models
        self._audit(models.ranker.training_manifest_, split)
        return models

    def predictor(
        self, split: LodoSplit, truncation: float, target_kind: str
    ) -> EarlyStopPredictor:
        models = self.prepare(split)
        key = (truncation, target_kind)
        if key not in models.predictors:
            s = self.settings
            predictor = EarlyStopPredictor(
                members=s.predictor_members,
                rounds=s.predictor_rounds,
                depth=s.depth,
                learning_rate=s.learning_rate,
                min_leaf=s.min_leaf,
                truncation=truncation,
                target_kind=target_kind,
                max_bins=s.max_bins,
                seed=_method_seed(s.seed, self._split_index(split), 2),
            ).fit(
                self._training_groups(split),
                self.space,
                surrogate=models.ranker if target_kind == "residual" else None,
            )
            self._audit(predictor.training_manifest_, split)
            models.predictors[key] = predictor
        return models.predictors[key]

    def _split_index(self, split: LodoSplit) -> int:
        for i, g in enumerate(self.groups):
            if g.dataset_id == split.heldout_id:
                return i
        raise KeyError(split.heldout_id)

    def _audit(self, manifest: dict, split: LodoSplit) -> None:
        heldout = self._heldout_group(split)
        forbidden = {record_hash(r, self.space) for r in heldout.records}
        consumed = set(manifest["consumed_record_hashes"])
        overlap = forbidden & consumed
        if overlap:
            raise LeakageError(
                f"{len(overlap)} held-out records entered a fit for split "
                f"{split.heldout_id!r}"
            )

    # --------------------------------------------------------------- methods

    def run_method(
        self,
        split: LodoSplit,
        method: str,
        budget: Optional[int] = None,
        truncation: Optional[float] = None,
    ) -> MetricReport:
        s = self.settings
        budget = budget if budget is not None else s.budget
        truncation = truncation if truncation is not None else s.truncation
        models = self.prepare(split)
        sim = self._heldout_sim(split)
        seed = _method_seed(s.seed, self._split_index(split), 10 + METHODS.index(method))
        evaluator = lambda config: sim.emit_trajectory(config, truncation)
        meta = np.asarray(sim.meta_features)
        online_evals = 0
        pool_scores = None

        if method == "random_single":
            rng = np.random.default_rng(seed)
            chosen = self.pool[int(rng.integers(len(self.pool)))]
        elif method == "global":
            chosen = self._global_best(split)
        elif method == "offline_only":
            chosen = select_top(models.scored_pool, 1)[0]
            pool_scores = models.scored_pool.raw_scores
        elif method == "random_search":
            predictor = self.predictor(split, truncation, "absolute")
            rng = np.random.default_rng(seed)
            idx = rng.choice(len(self.pool), size=min(budget, len(self.pool)), replace=False)
            best = None
            for i in sorted(idx):
                config = self.pool[i]
                obs = predictor.predict_observation(
                    config, meta, evaluator(config), self.space
                )
                key = (obs.r_hat, tuple(-v for v in config.indices))
                if best is None or key > best[0]:
                    best = (key, config)
            chosen = best[1]
            online_evals = len(idx)
        elif method == "no_bo":
            predictor = self.predictor(split, truncation, "residual")
            top = select_top(models.scored_pool, budget)
            sz = {
                c: models.scored_pool.standardized_scores[i]
                for i, c in enumerate(models.scored_pool.configs)
            }
            best = None
            for config in top:
                obs = predictor.predict_observation(
                    config, meta, evaluator(config), self.space
                )
                proxy = sz[config] + obs.r_hat
                key = (proxy, sz[config], tuple(-v for v in config.indices))
                if best is None or key > best[0]:
                    best = (key, config)
            chosen = best[1]
            online_evals = len(top)
        elif method in ("two_phase", "no_residual", "no_offline"):
            variant = "full" if method == "two_phase" else method
            target_kind = "absolute" if method == "no_offline" else "residual"
            predictor = self.predictor(split, truncation, target_kind)
            optimizer = TwoPhaseOptimizer(
                schedules=Schedules(budget=budget, warm_start=s.warm_start),
                variant=variant,
                refit_every=s.refit_every,
                gp_restarts=s.gp_restarts,
                seed=seed,
            )
            result = optimizer.run(
                models.scored_pool, predictor, evaluator, meta, self.space
            )
            chosen = result.chosen
            online_evals = result.evaluations_used
        else:
            raise ValueError(f"unknown method {method!r}")

        sim.evaluate_full(chosen)  # full-fidelity verification run
        return self._report(split, method, chosen, online_evals, pool_scores)

    def component_diagnostics(
        self, split: LodoSplit, es_pool_size: int = 400
    ) -> dict[str, dict]:
        """Pool-wide ranking quality of the offline surrogate and ES regressor.

        The regressor diagnostic reconstructs proxies over a seeded pool
        subsample (trajectories for the whole pool would defeat the point of
        early stopping).
        """
        models = self.prepare(split)
        sim = self._heldout_sim(split)
        truth = self.true_pool_scores(split.heldout_id)
        out = {
            "offline_ranker": {
                "spearman": spearman(models.scored_pool.raw_scores, truth),
                "pairwise_accuracy": pairwise_accuracy(
                    models.scored_pool.raw_scores, truth
                ),
                "ndcg@5": ndcg_at_k(models.scored_pool.raw_scores, truth, 5),
            }
        }
        predictor = self.predictor(split, self.settings.truncation, "residual")
        rng = np.random.default_rng(_method_seed(self.settings.seed, 0, 99))
        idx = rng.choice(
            len(self.pool), size=min(es_pool_size, len(self.pool)), replace=False
        )
        meta = np.asarray(sim.meta_features)
        proxies = []
        for i in sorted(idx):
            config = self.pool[i]
            obs = predictor.predict_observation(
                config,
                meta,
                sim.emit_trajectory(config, self.settings.truncation),
                self.space,
            )
            proxies.append(models.scored_pool.standardized_scores[i] + obs.r_hat)
        sub_truth = truth[sorted(idx)]
        out["es_regressor"] = {
            "spearman": spearman(proxies, sub_truth),
            "pairwise_accuracy": pairwise_accuracy(proxies, sub_truth),
            "ndcg@5": ndcg_at_k(proxies, sub_truth, 5),
        }
        return out

    def _global_best(self, split: LodoSplit) -> Configuration:
        by_config: dict[tuple, list[tuple[str, float]]] = defaultdict(list)
        for g in self._training_groups(split):
            for r in g.records:
                by_config[r.config.indices].append((g.dataset_id, r.final_score))
        means = {}
        for indices, entries in by_config.items():
            datasets = {d for d, _ in entries}
            means[indices] = (
                len(datasets),
                float(np.mean([v for _, v in entries])),
            )
        multi = {k: v[1] for k, v in means.items() if v[0] >= 2}
        candidates = multi if multi else {k: v[1] for k, v in means.items()}
        best = max(candidates.items(), key=lambda kv: (kv[1], tuple(-i for i in kv[0])))
        return Configuration(best[0])

    def _report(
        self,
        split: LodoSplit,
        method: str,
        chosen: Configuration,
        online_evals: int,
        pool_scores: Optional[np.ndarray],
    ) -> MetricReport:
        truth = self.true_pool_scores(split.heldout_id)
        opt_idx = int(truth.argmax())
        y_opt = float(truth[opt_idx])
        y_chosen = float(truth[self.space.ordinal(chosen)])
        r = regret(y_opt, y_chosen)
        recall, ndcg, pacc, rho = {}, {}, None, None
        if pool_scores is not None:
            order = np.argsort(-pool_scores, kind="stable")
            ranked = [self.pool[i] for i in order]
            for k in RECALL_KS:
                recall[k] = recall_at_k(ranked, self.pool[opt_idx], k)
            for k in NDCG_KS:
                ndcg[k] = ndcg_at_k(pool_scores, truth, k)
            pacc = pairwise_accuracy(pool_scores, truth)
            rho = spearman(pool_scores, truth)
        return MetricReport(
            dataset_id=split.heldout_id,
            method=method,
            final_score=y_chosen,
            regret=r,
            evaluations_used=online_evals,
            recall_at=recall,
            ndcg_at=ndcg,
            pairwise_accuracy=pacc,
            spearman=rho,
            negative_regret=r < 0,
        )

    def run(
        self,
        methods: Sequence[str],
        budget: Optional[int] = None,
        truncation: Optional[float] = None,
    ) -> dict[str, list[MetricReport]]:
        """All requested methods across all splits; failures are recorded."""
        results: dict[str, list[MetricReport]] = {m: [] for m in methods}
        self.failures: list[tuple[str, str, str]] = []
        for split in self.splits():
            for method in methods:
                try:
                    results[method].append(
                        self.run_method(split, method, budget, truncation)
                    )
                except Exception as exc:
                    self.failures.append((split.heldout_id, method, str(exc)))
        return results


def write_reports_csv(path: str | Path, results: dict[str, list[MetricReport]]) -> None:
    rows = []
    for method in sorted(results):
        for report in sorted(results[method], key=lambda r: r.dataset_id):
            rows.append(report.as_row())
    if not rows:
        raise ValueError("no reports to write")
    fields = sorted({k for row in rows for k in row}, key=lambda k: (k != "dataset_id", k != "method", k))
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def summarize(results: dict[str, list[MetricReport]]) -> dict:
    summary = {}
    for method, reports in sorted(results.items()):
        if not reports:
            continue
        entry = {
            "final_score": float(np.mean([r.final_score for r in reports])),
            "regret": float(np.mean([r.regret for r in reports])),
            "evaluations_used": float(np.mean([r.evaluations_used for r in reports])),
            "pairwise_accuracy": mean_of([r.pairwise_accuracy for r in reports]),
            "spearman": mean_of([r.spearman for r in reports]),
            "n_splits": len(reports),
        }
        for k in RECALL_KS:
            vals = [r.recall_at.get(k) for r in reports if r.recall_at]
            entry[f"recall@{k}"] = float(np.mean(vals)) if vals else None
        for k in NDCG_KS:
            vals = [r.ndcg_at.get(k) for r in reports if r.ndcg_at]
            entry[f"ndcg@{k}"] = float(np.mean(vals)) if vals else None
        summary[method] = entry
    return summary


def write_summary_json(path: str | Path, results: dict[str, list[MetricReport]]) -> None:
    Path(path).write_text(json.dumps(summarize(results), indent=2))


def sign_test_pvalue(wins: int, losses: int) -> float:
    """One-sided exact binomial tail P(X >= wins | n, 1/2), ties excluded."""
    from math import comb

    n = wins + losses
    if n == 0:
        return 1.0
    return sum(comb(n, k) for k in range(wins, n + 1)) / 2.0**n
