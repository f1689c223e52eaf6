import numpy as np
import pytest

from pipetune.corpus import load_corpus, save_corpus
from pipetune.simulator import (
    HORIZON,
    SimSpec,
    Simulation,
    generate,
)
from pipetune.space import enumerate_configs


class TestSimSpec:
    def test_rejects_zero_weights(self, tiny_space):
        with pytest.raises(ValueError):
            SimSpec(space=tiny_space, shared_weight=0.0, residual_weight=0.0)

    def test_rejects_bad_informativeness(self, tiny_space):
        with pytest.raises(ValueError):
            SimSpec(space=tiny_space, trajectory_informativeness=1.5)

    def test_dict_round_trip(self, tiny_space):
        spec = SimSpec(space=tiny_space, n_datasets=3, seed=17, noise=0.05)
        assert SimSpec.from_dict(spec.to_dict()) == spec


class TestGenerate:
    def test_shapes_and_ids(self, tiny_sim):
        groups = tiny_sim.build_groups()
        assert [g.dataset_id for g in groups] == ["d0", "d1", "d2", "d3"]
        assert all(len(g.records) == 12 for g in groups)
        assert tiny_sim.heldout.dataset_id == "d4"

    def test_generate_returns_corpus_and_heldout(self, tiny_space):
        spec = SimSpec(space=tiny_space, n_datasets=2, runs_per_dataset=6, seed=1)
        groups, heldout = generate(spec)
        assert len(groups) == 2
        assert heldout.dataset_id == "d2"

    def test_same_seed_byte_identical_corpus(self, tiny_space, tmp_path):
        spec = SimSpec(space=tiny_space, n_datasets=2, runs_per_dataset=8, seed=42)
        for name in ("a", "b"):
            sim = Simulation(spec)
            save_corpus(tmp_path / f"{name}.jsonl", sim.build_groups(), tiny_space)
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_corpus_round_trips_through_loader(self, tiny_sim, tiny_space, tmp_path):
        groups = tiny_sim.build_groups()
        save_corpus(tmp_path / "c.jsonl", groups, tiny_space)
        loaded = load_corpus(tmp_path / "c.jsonl", tiny_space)
        assert [g.dataset_id for g in loaded] == [g.dataset_id for g in groups]
        assert loaded[0].records[0].final_score == groups[0].records[0].final_score
        assert loaded[0].meta_features is not None

    def test_scores_in_unit_interval(self, tiny_sim):
        for g in tiny_sim.build_groups():
            scores = g.scores()
            assert (scores >= 0).all() and (scores <= 1).all()

    def test_meta_features_include_descriptor(self, tiny_sim):
        sim = tiny_sim.datasets[0]
        meta = sim.meta_features
        assert len(meta) == tiny_sim.spec.descriptor_dim + 4
        np.testing.assert_allclose(meta[: len(sim.descriptor)], sim.descriptor)


class TestEvaluateFull:
    def test_noiseless_is_repeatable(self, tiny_space):
        spec = SimSpec(space=tiny_space, n_datasets=1, runs_per_dataset=6, noise=0.0, seed=3)
        sim = Simulation(spec).datasets[0]
        config = enumerate_configs(tiny_space)[0]
        assert sim.evaluate_full(config) == sim.evaluate_full(config)

    def test_noise_varies_per_call_but_reruns_identically(self, tiny_space):
        spec = SimSpec(space=tiny_space, n_datasets=1, runs_per_dataset=6, noise=0.05, seed=3)
        config = enumerate_configs(tiny_space)[1]
        a = Simulation(spec).datasets[0]
        first, second = a.evaluate_full(config), a.evaluate_full(config)
        assert first != second
        b = Simulation(spec).datasets[0]
        assert (b.evaluate_full(config), b.evaluate_full(config)) == (first, second)

    def test_clamped_to_unit_interval(self, tiny_space):
        spec = SimSpec(space=tiny_space, n_datasets=1, runs_per_dataset=6, noise=5.0, seed=3)
        sim = Simulation(spec).datasets[0]
        values = [sim.evaluate_full(c) for c in enumerate_configs(tiny_space)[:10]]
        assert all(0.0 <= v <= 1.0 for v in values)

    def test_true_argmax_defines_reference_optimum(self, tiny_sim):
        sim = tiny_sim.datasets[0]
        pool = enumerate_configs(tiny_sim.spec.space)
        scores = sim.true_scores(pool)
        best = int(scores.argmax())
        assert sim.true_score(pool[best]) == scores[best]
        assert scores[best] >= scores.max() - 1e-15


class TestTrajectories:
    def test_truncation_lengths(self, tiny_sim):
        sim = tiny_sim.datasets[0]
        config = enumerate_configs(tiny_sim.spec.space)[0]
        for frac, steps in ((0.25, 10), (0.5, 20), (0.75, 30), (1.0, 40)):
            traj = sim.emit_trajectory(config, frac)
            assert all(len(s) == steps for s in traj.channels.values())
        assert HORIZON == 40

    def test_invalid_truncation_rejected(self, tiny_sim):
        sim = tiny_sim.datasets[0]
        config = enumerate_configs(tiny_sim.spec.space)[0]
        with pytest.raises(ValueError):
            sim.emit_trajectory(config, 0.4)

    def test_channel_set(self, tiny_sim):
        sim = tiny_sim.datasets[0]
        traj = sim.emit_trajectory(enumerate_configs(tiny_sim.spec.space)[0], 0.5)
        assert traj.channel_names() == ("entropy", "grad_norm", "train_loss", "val_loss")

    def test_shorter_truncations_are_exact_prefixes(self, tiny_sim):
        sim = tiny_sim.datasets[1]
        config = enumerate_configs(tiny_sim.spec.space)[2]
        full = sim.emit_trajectory(config, 1.0)
        for frac in (0.25, 0.5, 0.75):
            short = sim.emit_trajectory(config, frac)
            for name, series in short.channels.items():
                assert series == full.channels[name][: len(series)]

    def test_informative_regime_recovers_ordering(self, tiny_space):
        # rho = 1, no noise: a regressor on trajectory features should track y
        from pipetune.es_predictor import EarlyStopPredictor
        from pipetune.metrics import spearman

        spec = SimSpec(
            space=tiny_space,
            n_datasets=4,
            runs_per_dataset=16,
            descriptor_dim=4,
            noise=0.0,
            trajectory_informativeness=1.0,
            seed=21,
        )
        sim = Simulation(spec)
        groups = sim.build_groups()
        predictor = EarlyStopPredictor(
            members=3, rounds=80, target_kind="absolute", max_bins=64, seed=0
        ).fit(groups, tiny_space, surrogate=None)
        target = sim.heldout
        pool = enumerate_configs(tiny_space)
        proxies = [
            predictor.predict_observation(
                c, np.asarray(target.meta_features), target.emit_trajectory(c, 0.5), tiny_space
            ).r_hat
            for c in pool
        ]
        rho = spearman(proxies, target.true_scores(pool))
        assert rho >= 0.8

    def test_uninformative_regime_is_pure_noise(self, tiny_space):
        spec = SimSpec(
            space=tiny_space,
            n_datasets=2,
            runs_per_dataset=8,
            trajectory_informativeness=0.0,
            seed=33,
        )
        sim = Simulation(spec).datasets[0]
        pool = enumerate_configs(tiny_space)
        # identical trajectory statistics regardless of the config's true score:
        # curves depend only on the per-run random draw
        spec_informative = SimSpec(
            space=tiny_space,
            n_datasets=2,
            runs_per_dataset=8,
            trajectory_informativeness=0.0,
            shared_weight=5.0,
            seed=33,
        )
        sim2 = Simulation(spec_informative).datasets[0]
        a = sim.emit_trajectory(pool[0], 0.5)
        b = sim2.emit_trajectory(pool[0], 0.5)
        assert a.channels == b.channels


class TestSidecar:
    def test_contains_optimum_and_tables(self, tiny_sim):
        doc = tiny_sim.ground_truth_sidecar()
        assert len(doc["datasets"]) == tiny_sim.spec.n_datasets + 1
        entry = doc["datasets"][0]
        pool = enumerate_configs(tiny_sim.spec.space)
        scores = tiny_sim.datasets[0].true_scores(pool)
        assert entry["optimum_score"] == pytest.approx(scores.max())
        assert entry["scores"] == [float(v) for v in scores]

    def test_spec_round_trip(self, tiny_sim, tmp_path):
        from pipetune.simulator import load_sidecar_spec, write_sidecar

        write_sidecar(tmp_path / "gt.json", tiny_sim)
        assert load_sidecar_spec(tmp_path / "gt.json") == tiny_sim.spec
