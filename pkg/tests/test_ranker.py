import json

import numpy as np
import pytest

from pipetune.corpus import DatasetGroup, RunRecord
from pipetune.gbt import NoPairsError
from pipetune.metrics import ndcg_at_k, pairwise_accuracy
from pipetune.ranker import (
    OfflineRanker,
    ScoredCandidates,
    select_ranker_params,
    select_top,
    scored_to_csv,
    standardize_pool,
)
from pipetune.simulator import SimSpec, Simulation
from pipetune.space import Configuration, encode, enumerate_configs


def linear_groups(space, n_datasets=4, rows=14, seed=0):
    """Corpus where the outcome is one fixed linear function of the encoding."""
    rng = np.random.default_rng(seed)
    pool = enumerate_configs(space)
    w = rng.normal(size=len(encode(pool[0], space)))
    raw = np.asarray([encode(c, space) @ w for c in pool])
    scores = (raw - raw.min()) / (raw.max() - raw.min())
    groups = []
    for d in range(n_datasets):
        idx = rng.choice(len(pool), size=rows, replace=False)
        records = tuple(
            RunRecord(f"d{d}", pool[i], float(scores[i]), meta_features=(float(d), 1.0))
            for i in idx
        )
        groups.append(DatasetGroup(f"d{d}", records, np.asarray([float(d), 1.0])))
    return groups, pool, scores


class TestTraining:
    def test_linear_corpus_transfers(self, tiny_space):
        groups, pool, scores = linear_groups(tiny_space)
        ranker = OfflineRanker(members=3, rounds=120, depth=3, min_leaf=2, seed=1).fit(
            groups[:-1], tiny_space
        )
        heldout = groups[-1]
        scored = ranker.score(heldout.meta_features, [r.config for r in heldout.records], tiny_space)
        truth = heldout.scores()
        assert pairwise_accuracy(scored.raw_scores, truth) >= 0.95

    def test_minimal_two_record_group(self, tiny_space):
        pool = enumerate_configs(tiny_space)
        records = (
            RunRecord("d0", pool[0], 0.2, meta_features=(0.0,)),
            RunRecord("d0", pool[5], 0.8, meta_features=(0.0,)),
        )
        group = DatasetGroup("d0", records, np.asarray([0.0]))
        ranker = OfflineRanker(members=1, rounds=5, min_leaf=1, seed=0).fit([group], tiny_space)
        assert ranker.ensemble_ is not None

    def test_no_pairs_rejected(self, tiny_space):
        pool = enumerate_configs(tiny_space)
        records = (
            RunRecord("d0", pool[0], 0.5, meta_features=(0.0,)),
            RunRecord("d0", pool[1], 0.5, meta_features=(0.0,)),
        )
        group = DatasetGroup("d0", records, np.asarray([0.0]))
        with pytest.raises(NoPairsError):
            OfflineRanker(members=1, rounds=2).fit([group], tiny_space)

    def test_same_seed_identical_serialization(self, tiny_space):
        groups, _, _ = linear_groups(tiny_space)
        a = OfflineRanker(members=2, rounds=10, seed=9).fit(groups, tiny_space)
        b = OfflineRanker(members=2, rounds=10, seed=9).fit(groups, tiny_space)
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())

    def test_serialization_round_trip(self, tiny_space):
        groups, pool, _ = linear_groups(tiny_space)
        ranker = OfflineRanker(members=2, rounds=10, seed=3).fit(groups, tiny_space)
        restored = OfflineRanker.from_dict(json.loads(json.dumps(ranker.to_dict())))
        a = ranker.score(groups[0].meta_features, pool, tiny_space)
        b = restored.score(groups[0].meta_features, pool, tiny_space)
        np.testing.assert_array_equal(a.raw_scores, b.raw_scores)

    def test_ranking_group_tag_merges_subsets(self, tiny_space):
        pool = enumerate_configs(tiny_space)
        # two dataset ids tagged as one ranking group: cross-subset pairs exist
        records_a = (RunRecord("d0a", pool[0], 0.2, meta_features=(0.0,), tags={"ranking_group": "d0"}),)
        records_b = (RunRecord("d0b", pool[5], 0.9, meta_features=(0.0,), tags={"ranking_group": "d0"}),)
        groups = [
            DatasetGroup("d0a", records_a, np.asarray([0.0])),
            DatasetGroup("d0b", records_b, np.asarray([0.0])),
        ]
        ranker = OfflineRanker(members=1, rounds=4, min_leaf=1, seed=0).fit(groups, tiny_space)
        assert ranker.ensemble_ is not None

    def test_apply_filter_keeps_layout_consistent(self, tiny_space):
        groups, pool, _ = linear_groups(tiny_space, rows=16)
        ranker = OfflineRanker(members=1, rounds=8, apply_filter=True, seed=0).fit(
            groups, tiny_space
        )
        scored = ranker.score(groups[0].meta_features, pool, tiny_space)
        assert len(scored.raw_scores) == len(pool)
        assert ranker.filter_report_ is not None


@pytest.fixture(scope="module")
def fitted(tiny_space):
    groups, pool, scores = linear_groups(tiny_space)
    ranker = OfflineRanker(members=2, rounds=40, seed=2).fit(groups, tiny_space)
    return ranker, groups, pool


class TestScoring:
    def test_single_candidate_standardizes_to_zero(self, fitted, tiny_space):
        ranker, groups, pool = fitted
        scored = ranker.score(groups[0].meta_features, [pool[0]], tiny_space)
        assert scored.standardized_scores.tolist() == [0.0]

    def test_duplicates_share_scores(self, fitted, tiny_space):
        ranker, groups, pool = fitted
        scored = ranker.score(groups[0].meta_features, [pool[1], pool[1]], tiny_space)
        assert scored.raw_scores[0] == scored.raw_scores[1]

    def test_pool_standardization_moments(self, fitted, tiny_space):
        ranker, groups, pool = fitted
        scored = ranker.score(groups[0].meta_features, pool, tiny_space)
        assert scored.standardized_scores.mean() == pytest.approx(0.0, abs=1e-9)
        assert scored.standardized_scores.std() == pytest.approx(1.0, abs=1e-9)

    def test_standardization_preserves_order(self, fitted, tiny_space):
        ranker, groups, pool = fitted
        scored = ranker.score(groups[0].meta_features, pool, tiny_space)
        assert (
            np.argsort(scored.raw_scores).tolist()
            == np.argsort(scored.standardized_scores).tolist()
        )

    def test_permutation_equivariance(self, fitted, tiny_space, rng):
        ranker, groups, pool = fitted
        scored = ranker.score(groups[0].meta_features, pool, tiny_space)
        perm = rng.permutation(len(pool))
        scored_p = ranker.score(groups[0].meta_features, [pool[i] for i in perm], tiny_space)
        np.testing.assert_array_equal(scored.raw_scores[perm], scored_p.raw_scores)

    def test_meta_width_checked(self, fitted, tiny_space):
        ranker, _, pool = fitted
        with pytest.raises(ValueError):
            ranker.score(np.zeros(7), pool, tiny_space)

    def test_empty_pool_rejected(self, fitted, tiny_space):
        ranker, groups, _ = fitted
        with pytest.raises(ValueError):
            ranker.score(groups[0].meta_features, [], tiny_space)

    def test_csv_export(self, fitted, tiny_space, tmp_path):
        ranker, groups, pool = fitted
        scored = ranker.score(groups[0].meta_features, pool[:5], tiny_space)
        path = tmp_path / "scores.csv"
        scored_to_csv(scored, tiny_space, path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 6
        assert lines[0].split(",")[-2:] == ["score", "score_standardized"]


class TestStandardizePool:
    def test_constant_pool_is_zero(self):
        np.testing.assert_array_equal(standardize_pool(np.asarray([2.0, 2.0])), 0.0)

    def test_single_entry_is_zero(self):
        np.testing.assert_array_equal(standardize_pool(np.asarray([5.0])), 0.0)


class TestSelectTop:
    def make_scored(self, scores):
        configs = tuple(Configuration((i,)) for i in range(len(scores)))
        raw = np.asarray(scores, dtype=np.float64)
        return ScoredCandidates(configs, raw, standardize_pool(raw))

    def test_argmax_first(self):
        scored = self.make_scored([0.1, 0.9, 0.5, 0.7])
        assert select_top(scored, 1) == [Configuration((1,))]

    def test_top3_ordering(self):
        scored = self.make_scored([0.1, 0.9, 0.5, 0.7])
        assert [c.indices[0] for c in select_top(scored, 3)] == [1, 3, 2]

    def test_ties_break_lexicographically(self):
        scored = self.make_scored([0.5, 0.5, 0.5])
        assert [c.indices[0] for c in select_top(scored, 2)] == [0, 1]

    def test_k_beyond_pool_returns_all_sorted(self):
        scored = self.make_scored([0.2, 0.8])
        assert [c.indices[0] for c in select_top(scored, 10)] == [1, 0]

    def test_k_zero_rejected(self):
        with pytest.raises(ValueError):
            select_top(self.make_scored([0.1]), 0)


class TestLodoBeatsRandomScorer:
    def test_ndcg_dominates_random_over_seeds(self, tiny_space):
        wins = 0
        n_seeds = 50
        for seed in range(n_seeds):
            spec = SimSpec(
                space=tiny_space,
                n_datasets=4,
                descriptor_dim=4,
                runs_per_dataset=12,
                shared_weight=1.0,
                residual_weight=0.0,
                noise=0.0,
                descriptor_modulation=0.0,
                seed=1000 + seed,
            )
            sim = Simulation(spec)
            groups = sim.build_groups()
            ranker = OfflineRanker(members=1, rounds=40, depth=3, max_bins=32, seed=0).fit(
                groups[:-1], tiny_space
            )
            target = sim.dataset(groups[-1].dataset_id)
            pool = enumerate_configs(tiny_space)
            scored = ranker.score(np.asarray(target.meta_features), pool, tiny_space)
            truth = target.true_scores(pool)
            rng = np.random.default_rng(seed)
            random_scores = rng.random(len(pool))
            if ndcg_at_k(scored.raw_scores, truth, 5) >= ndcg_at_k(random_scores, truth, 5):
                wins += 1
        assert wins >= n_seeds - 1


class TestParamSelection:
    def test_lexicographic_grid_pick(self, tiny_space):
        groups, _, _ = linear_groups(tiny_space, n_datasets=3, rows=10)
        best = select_ranker_params(
            groups,
            tiny_space,
            grid={"rounds": [5, 30]},
            base_params={"members": 1, "depth": 3, "min_leaf": 2},
            seed=0,
        )
        assert best["rounds"] in (5, 30)
        assert best["members"] == 1
