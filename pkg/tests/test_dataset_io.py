import json
import pickle

import numpy as np
import pytest

from core.dataset_io import (
    DatasetManifest,
    import_external,
    import_splits,
    infer_domain,
    load_dataset,
    resolve_split,
    save_dataset,
)
from core.errors import DatasetFormatError
from core.events import Domain, EventSequence
from utils.path_manager import PathManager


def _manifest(domain, count, split="train", **kw) -> DatasetManifest:
    return DatasetManifest(domain=domain, split=split, count=count, **kw)


class TestSplitFiles:
    def test_save_and_load(self, tmp_path, domain, toy_sequence):
        sequences = [toy_sequence, EventSequence.empty(), toy_sequence.prefix(1)]
        save_dataset(tmp_path, "train", sequences, _manifest(domain, 3, seed=7))
        loaded, manifest = load_dataset(tmp_path, "train")
        assert manifest.seed == 7 and manifest.format_version == "kstpp-data-v1"
        assert [len(s) for s in loaded] == [3, 0, 1]
        assert np.array_equal(loaded[0].ys, toy_sequence.ys)

    def test_resolve_by_file_or_manifest(self, tmp_path, domain, toy_sequence):
        save_dataset(tmp_path, "test", [toy_sequence], _manifest(domain, 1, split="test"))
        by_file = resolve_split(tmp_path / "test.jsonl")
        by_manifest = resolve_split(tmp_path / "test.manifest.json")
        assert by_file == by_manifest == (tmp_path / "test.jsonl", tmp_path / "test.manifest.json")

    def test_missing_split_names_path(self, tmp_path):
        with pytest.raises(DatasetFormatError) as info:
            load_dataset(tmp_path, "validation")
        assert "validation.jsonl" in str(info.value)

    def test_count_mismatch_on_save(self, tmp_path, domain, toy_sequence):
        with pytest.raises(DatasetFormatError):
            save_dataset(tmp_path, "train", [toy_sequence], _manifest(domain, 2))

    def _write(self, tmp_path, domain, lines, count):
        (tmp_path / "train.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
        (tmp_path / "train.manifest.json").write_text(
            json.dumps(_manifest(domain, count).model_dump(mode="json")), encoding="utf-8"
        )

    def test_unsorted_record_names_line(self, tmp_path, domain):
        lines = [
            json.dumps({"t": [0.5, 1.0], "x": [0.1, 0.2], "y": [0.3, 0.4]}),
            json.dumps({"t": [2.0, 1.0], "x": [0.1, 0.2], "y": [0.3, 0.4]}),
        ]
        self._write(tmp_path, domain, lines, 2)
        with pytest.raises(DatasetFormatError) as info:
            load_dataset(tmp_path, "train")
        assert info.value.line == 2
        assert ":2:" in str(info.value)

    def test_out_of_domain_record(self, tmp_path, domain):
        self._write(tmp_path, domain, [json.dumps({"t": [9.0], "x": [0.1], "y": [0.3]})], 1)
        with pytest.raises(DatasetFormatError) as info:
            load_dataset(tmp_path, "train")
        assert info.value.line == 1

    def test_missing_key(self, tmp_path, domain):
        self._write(tmp_path, domain, [json.dumps({"t": [1.0], "x": [0.1]})], 1)
        with pytest.raises(DatasetFormatError):
            load_dataset(tmp_path, "train")

    def test_bad_json(self, tmp_path, domain):
        self._write(tmp_path, domain, ["{not json"], 1)
        with pytest.raises(DatasetFormatError):
            load_dataset(tmp_path, "train")

    def test_empty_record_is_empty_sequence(self, tmp_path, domain):
        self._write(tmp_path, domain, [json.dumps({"t": [], "x": [], "y": []})], 1)
        loaded, _ = load_dataset(tmp_path, "train")
        assert len(loaded[0]) == 0

    def test_manifest_count_checked(self, tmp_path, domain):
        self._write(tmp_path, domain, [json.dumps({"t": [1.0], "x": [0.1], "y": [0.3]})], 3)
        with pytest.raises(DatasetFormatError):
            load_dataset(tmp_path, "train")

    def test_manifest_rejects_unknown_fields(self, tmp_path, domain):
        (tmp_path / "train.jsonl").write_text("", encoding="utf-8")
        data = _manifest(domain, 0).model_dump(mode="json")
        data["colour"] = "red"
        (tmp_path / "train.manifest.json").write_text(json.dumps(data), encoding="utf-8")
        with pytest.raises(DatasetFormatError):
            load_dataset(tmp_path, "train")


class TestImport:
    def test_cleans_and_infers_domain(self, tmp_path):
        raw = [
            [[0.5, 1.0, 2.0], [0.4, 1.1, 2.1], [1.5, 1.2, 2.2], [float("nan"), 0.0, 0.0]],
            [[0.0, 1.0, 2.0], [2.0, 3.0, 4.0]],
        ]
        path = tmp_path / "data.json"
        path.write_text(json.dumps(raw), encoding="utf-8")
        sequences, domain = import_external(path)
        assert [s.times.tolist() for s in sequences] == [[0.5, 1.5], [2.0]]
        assert domain.t_max == 2.0
        assert domain.x_range == pytest.approx((1.0, 3.0), abs=1e-5)

    def test_pickle_and_columns(self, tmp_path):
        path = tmp_path / "data.pkl"
        with open(path, "wb") as f:
            pickle.dump([[[7, 0.2, 0.3, 1.0], [7, 0.4, 0.5, 2.0]]], f)
        domain = Domain(t_max=3.0, x_range=(0.0, 1.0), y_range=(0.0, 1.0))
        sequences, used = import_external(path, domain=domain, columns=(3, 1, 2))
        assert used == domain
        assert sequences[0].times.tolist() == [1.0, 2.0]
        assert sequences[0].xs.tolist() == [0.2, 0.4]

    def test_events_outside_domain_dropped(self, tmp_path):
        path = tmp_path / "data.json"
        path.write_text(json.dumps([[[0.5, 0.5, 0.5], [1.0, 5.0, 0.5]]]), encoding="utf-8")
        domain = Domain(t_max=3.0, x_range=(0.0, 1.0), y_range=(0.0, 1.0))
        sequences, _ = import_external(path, domain=domain)
        assert len(sequences[0]) == 1

    def test_shared_domain_across_splits(self, tmp_path):
        for name, xs in (("a", [0.0, 1.0]), ("b", [-2.0, 0.5])):
            (tmp_path / f"{name}.json").write_text(
                json.dumps([[[1.0, xs[0], 0.0], [2.0, xs[1], 1.0]]]), encoding="utf-8"
            )
        splits, domain = import_splits({"train": tmp_path / "a.json", "test": tmp_path / "b.json"}, t_max=4.0)
        assert domain.t_max == 4.0
        assert domain.x_range[0] < -2.0 and domain.x_range[1] > 1.0
        assert set(splits) == {"train", "test"}

    def test_bundled_extract(self):
        sequences, domain = import_external(PathManager.get_resource_path("resources/datasets/toy_extract.json"))
        assert len(sequences) == 20
        assert all(len(s) >= 8 for s in sequences)
        for s in sequences:
            s.validate(domain)

    def test_not_a_list(self, tmp_path):
        path = tmp_path / "data.json"
        path.write_text(json.dumps({"foo": 1}), encoding="utf-8")
        with pytest.raises(DatasetFormatError):
            import_external(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetFormatError):
            import_external(tmp_path / "nope.json")

    def test_no_events(self):
        with pytest.raises(DatasetFormatError):
            infer_domain([np.zeros((0, 3))])
