import json

import numpy as np
import pytest

from pipetune.corpus import (
    CorpusFormatError,
    DatasetGroup,
    EarlyStopTrajectory,
    RunRecord,
    UnknownDatasetError,
    fit_standardizer,
    load_corpus,
    save_corpus,
)
from pipetune.space import Configuration, enumerate_configs


def make_record(space, dataset_id="d0", score=0.5, idx=0, **kwargs):
    return RunRecord(
        dataset_id=dataset_id,
        config=enumerate_configs(space)[idx],
        final_score=score,
        **kwargs,
    )


class TestTrajectory:
    def test_requires_two_points(self):
        with pytest.raises(ValueError):
            EarlyStopTrajectory(channels={"loss": ((1, 0.5),)})

    def test_steps_strictly_increase(self):
        with pytest.raises(ValueError):
            EarlyStopTrajectory(channels={"loss": ((2, 0.5), (2, 0.4))})

    def test_truncation_fraction_bounds(self):
        with pytest.raises(ValueError):
            EarlyStopTrajectory(
                channels={"loss": ((1, 0.5), (2, 0.4))}, truncation_fraction=0.0
            )


class TestRunRecord:
    def test_score_bounds(self, tiny_space):
        with pytest.raises(ValueError):
            make_record(tiny_space, score=1.5)

    def test_group_requires_matching_ids(self, tiny_space):
        with pytest.raises(ValueError):
            DatasetGroup("d0", (make_record(tiny_space, dataset_id="d1"),))


class TestCorpusIO:
    def test_round_trip_bit_exact(self, tiny_space, tmp_path):
        traj = EarlyStopTrajectory(
            channels={"train_loss": ((1, 0.123456789012345), (2, 0.4))},
            truncation_fraction=0.5,
        )
        groups = [
            DatasetGroup(
                "d0",
                (
                    make_record(tiny_space, score=0.3712398471, idx=0, trajectory=traj),
                    make_record(tiny_space, score=0.81, idx=3, tags={"note": "x"}),
                ),
                meta_features=np.asarray([0.1, 0.2]),
            ),
            DatasetGroup("d1", (make_record(tiny_space, "d1", 0.5, idx=1),)),
        ]
        # meta features ride on records, so attach them there too
        groups[0] = DatasetGroup(
            "d0",
            tuple(
                RunRecord(
                    r.dataset_id, r.config, r.final_score, r.trajectory,
                    meta_features=(0.1, 0.2), tags=r.tags,
                )
                for r in groups[0].records
            ),
            meta_features=np.asarray([0.1, 0.2]),
        )
        path = tmp_path / "corpus.jsonl"
        save_corpus(path, groups, tiny_space)
        loaded = load_corpus(path, tiny_space)
        assert [g.dataset_id for g in loaded] == ["d0", "d1"]
        assert loaded[0].records[0].final_score == 0.3712398471
        assert loaded[0].records[0].trajectory == traj
        assert loaded[0].records[1].tags == {"note": "x"}
        assert loaded[0].meta_features.tolist() == [0.1, 0.2]
        save_corpus(tmp_path / "again.jsonl", loaded, tiny_space)
        assert (tmp_path / "again.jsonl").read_bytes() == path.read_bytes()

    def test_grouping_by_dataset(self, tiny_space, tmp_path):
        groups = [
            DatasetGroup(
                "a",
                (make_record(tiny_space, "a", 0.1), make_record(tiny_space, "a", 0.2, idx=1)),
            ),
            DatasetGroup("b", (make_record(tiny_space, "b", 0.3),)),
        ]
        path = tmp_path / "c.jsonl"
        save_corpus(path, groups, tiny_space)
        loaded = load_corpus(path, tiny_space)
        assert [len(g.records) for g in loaded] == [2, 1]

    def test_empty_file_is_empty_corpus(self, tiny_space, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert load_corpus(path, tiny_space) == []

    def test_malformed_line_reports_number(self, tiny_space, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"dataset_id": "a"}\n')
        with pytest.raises(CorpusFormatError, match="line 1"):
            load_corpus(path, tiny_space)

    def test_invalid_json_reports_number(self, tiny_space, tmp_path):
        good = json.dumps(
            {
                "dataset_id": "a",
                "config": enumerate_configs(tiny_space)[0].values(tiny_space),
                "final_score": 0.5,
            }
        )
        path = tmp_path / "bad.jsonl"
        path.write_text(good + "\nnot json\n")
        with pytest.raises(CorpusFormatError, match="line 2"):
            load_corpus(path, tiny_space)

    def test_duplicate_records_retained(self, tiny_space, tmp_path):
        record = make_record(tiny_space, score=0.4)
        path = tmp_path / "dup.jsonl"
        save_corpus(path, [DatasetGroup("d0", (record, record))], tiny_space)
        assert len(load_corpus(path, tiny_space)[0].records) == 2

    def test_unknown_keys_preserved(self, tiny_space, tmp_path):
        obj = {
            "dataset_id": "a",
            "config": enumerate_configs(tiny_space)[0].values(tiny_space),
            "final_score": 0.5,
            "custom_key": {"nested": 1},
        }
        path = tmp_path / "extra.jsonl"
        path.write_text(json.dumps(obj) + "\n")
        loaded = load_corpus(path, tiny_space)
        assert loaded[0].records[0].extras == {"custom_key": {"nested": 1}}
        save_corpus(path, loaded, tiny_space)
        assert json.loads(path.read_text())["custom_key"] == {"nested": 1}


class TestStandardizer:
    def test_hand_example(self, tiny_space):
        group = DatasetGroup(
            "d0",
            (make_record(tiny_space, score=0.4), make_record(tiny_space, score=0.6, idx=1)),
        )
        std = fit_standardizer([group])
        mu, sigma = std.stats["d0"]
        assert mu == pytest.approx(0.5)
        assert sigma == pytest.approx(0.1)
        assert std.transform("d0", 0.4) == pytest.approx(-1.0, abs=1e-6)
        assert std.transform("d0", 0.6) == pytest.approx(1.0, abs=1e-6)

    def test_constant_scores_map_to_zero(self, tiny_space):
        group = DatasetGroup(
            "d0",
            (make_record(tiny_space, score=0.5), make_record(tiny_space, score=0.5, idx=1)),
        )
        std = fit_standardizer([group])
        assert std.transform("d0", 0.5) == 0.0

    def test_single_record_maps_to_zero(self, tiny_space):
        std = fit_standardizer([DatasetGroup("d0", (make_record(tiny_space, score=0.7),))])
        assert std.transform("d0", 0.7) == 0.0

    def test_mean_plus_sigma_is_one(self, tiny_space):
        group = DatasetGroup(
            "d0",
            tuple(make_record(tiny_space, score=s, idx=i) for i, s in enumerate((0.2, 0.5, 0.8))),
        )
        std = fit_standardizer([group])
        mu, sigma = std.stats["d0"]
        assert std.transform("d0", mu + sigma) == pytest.approx(1.0, abs=1e-6)

    def test_unknown_dataset_raises(self, tiny_space):
        std = fit_standardizer([DatasetGroup("d0", (make_record(tiny_space),))])
        with pytest.raises(UnknownDatasetError):
            std.transform("other", 0.5)

    def test_empty_group_rejected(self):
        with pytest.raises(ValueError):
            fit_standardizer([DatasetGroup("d0", ())])

    def test_monotone_in_score(self, tiny_space, rng):
        scores = rng.random(tiny_space.size)
        group = DatasetGroup(
            "d0", tuple(make_record(tiny_space, score=float(s), idx=i) for i, s in enumerate(scores))
        )
        std = fit_standardizer([group])
        z = [std.transform("d0", float(s)) for s in scores]
        assert np.argsort(z).tolist() == np.argsort(scores).tolist()
