import json

import numpy as np
import pytest

from mscrub.dataio import (
    dataset_format,
    load_dataset,
    moments_from_dict,
    moments_to_dict,
    save_dataset,
)
from mscrub.errors import DataFormatError, InvalidInput, MalformedFile
from mscrub.moments import LabeledDataset, fit_moments


def small_dataset(bounds=None):
    rng = np.random.default_rng(0)
    X = rng.random((20, 3))
    z = rng.integers(0, 2, 20)
    z[:2] = [0, 1]
    return LabeledDataset.from_arrays(X, z, bounds=bounds)


class TestCsv:
    def test_round_trip(self, tmp_path):
        ds = small_dataset()
        path = tmp_path / "data.csv"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert np.array_equal(back.X, ds.X)
        assert np.array_equal(back.z, ds.z)
        assert back.feature_names == ["f0", "f1", "f2"]

    def test_label_column_by_name(self, tmp_path):
        path = tmp_path / "named.csv"
        path.write_text("a,target,b\n1.0,0,2.0\n3.0,1,4.0\n")
        ds = load_dataset(path, label_col="target")
        assert np.array_equal(ds.X, [[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(ds.z, [0, 1])
        assert ds.feature_names == ["a", "b"]

    def test_missing_label_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(DataFormatError):
            load_dataset(path)

    def test_malformed_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,label\n1.0,0\nnot_a_number,1\n")
        with pytest.raises(DataFormatError) as err:
            load_dataset(path)
        assert err.value.line == 3

    def test_wrong_field_count_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,label\n1.0,0\n1.0\n2.0,1\n")
        with pytest.raises(DataFormatError) as err:
            load_dataset(path)
        assert err.value.line == 3

    def test_missing_file(self, tmp_path):
        with pytest.raises(InvalidInput):
            load_dataset(tmp_path / "nope.csv")


class TestF32:
    def test_round_trip_with_bounds(self, tmp_path):
        ds = small_dataset(bounds=(np.zeros(3), np.ones(3)))
        path = tmp_path / "data.f32"
        files = save_dataset(ds, path)
        assert {f.name for f in files} == {"data.f32", "data.f32.labels", "data.f32.json"}
        back = load_dataset(path)
        assert np.allclose(back.X, ds.X, atol=1e-6)
        assert np.array_equal(back.z, ds.z)
        assert back.bounds is not None
        assert np.allclose(back.bounds[0], 0.0)

    def test_load_via_sidecar_path(self, tmp_path):
        ds = small_dataset()
        save_dataset(ds, tmp_path / "data.f32")
        back = load_dataset(tmp_path / "data.f32.json")
        assert back.n == ds.n

    def test_truncated_tensor(self, tmp_path):
        ds = small_dataset()
        path = tmp_path / "data.f32"
        save_dataset(ds, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(MalformedFile):
            load_dataset(path)

    def test_missing_sidecar_key(self, tmp_path):
        ds = small_dataset()
        path = tmp_path / "data.f32"
        save_dataset(ds, path)
        sidecar = tmp_path / "data.f32.json"
        meta = json.loads(sidecar.read_text())
        del meta["labels"]
        sidecar.write_text(json.dumps(meta))
        with pytest.raises(MalformedFile):
            load_dataset(path)

    def test_label_count_mismatch(self, tmp_path):
        ds = small_dataset()
        path = tmp_path / "data.f32"
        save_dataset(ds, path)
        labels = tmp_path / "data.f32.labels"
        labels.write_bytes(labels.read_bytes()[:-4])
        with pytest.raises(MalformedFile):
            load_dataset(path)

    def test_format_detection(self):
        assert dataset_format("x.csv") == "csv"
        assert dataset_format("x.f32") == "f32"
        assert dataset_format("x.bin") == "f32"


class TestMomentsJson:
    def test_round_trip(self):
        ds = small_dataset()
        m = fit_moments(ds)
        back = moments_from_dict(moments_to_dict(m))
        assert np.array_equal(back.covs, m.covs)
        assert np.array_equal(back.cross_cov, m.cross_cov)
        assert back.shrinkage == m.shrinkage

    def test_missing_field(self):
        with pytest.raises(MalformedFile):
            moments_from_dict({"k": 2})
