import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adb.boundary import AdbModel, BoundaryParams, Centroids
from adb.data_io import (
    OPEN_LABEL,
    EmbeddedDataset,
    LabelMap,
    generate_synthetic,
    load_dataset,
    load_model,
    make_known_open_split,
    mean_pool,
    model_to_dict,
    save_dataset,
    save_model,
    subsample_labeled,
)
from adb.errors import (
    ArgumentError,
    DimensionMismatchError,
    EmptyDatasetError,
    InsufficientDataError,
    ModelFormatError,
    ParseError,
)


def _dataset(counts: dict[str, int], dim=2, seed=0):
    rng = np.random.default_rng(seed)
    labels = tuple(name for name, n in counts.items() for _ in range(n))
    return EmbeddedDataset(labels, rng.normal(size=(len(labels), dim)), LabelMap(tuple(counts)))


class TestLoadDataset:
    def test_csv_roundtrip_shape(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("label,f0,f1,f2\na,1,2,3\nb,4,5,6\n")
        ds = load_dataset(p)
        assert len(ds) == 2 and ds.dim == 3 and len(ds.label_map) == 2
        assert ds.label_map.names == ("a", "b")
        np.testing.assert_array_equal(ds.vectors, [[1, 2, 3], [4, 5, 6]])

    def test_csv_dimension_mismatch_names_line(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("label,f0,f1,f2\na,1,2,3\nb,4,5,6,7\n")
        with pytest.raises(DimensionMismatchError, match="line 3"):
            load_dataset(p)

    def test_csv_malformed_value(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("label,f0\na,1\nb,x\n")
        with pytest.raises(ParseError, match="line 3"):
            load_dataset(p)

    def test_csv_rejects_nan(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("label,f0\na,nan\n")
        with pytest.raises(ParseError):
            load_dataset(p)

    @pytest.mark.parametrize("content", ["", "label,f0\n"])
    def test_empty(self, tmp_path, content):
        p = tmp_path / "d.csv"
        p.write_text(content)
        with pytest.raises(EmptyDatasetError):
            load_dataset(p)

    def test_jsonl_tokens_are_mean_pooled(self, tmp_path):
        p = tmp_path / "d.jsonl"
        tokens = [[1.0, 2.0, 3.0, 4.0], [3.0, 2.0, 1.0, 0.0], [2.0, 5.0, 2.0, -1.0]]
        rows = [{"label": "x", "tokens": tokens}, {"label": "y", "vector": [0, 0, 0, 1]}]
        p.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        ds = load_dataset(p)
        # (1+3+2)/3, (2+2+5)/3, (3+1+2)/3, (4+0-1)/3
        np.testing.assert_allclose(ds.vectors[0], [2.0, 3.0, 2.0, 1.0], rtol=0, atol=1e-15)
        assert ds.labels == ("x", "y")

    def test_jsonl_dimension_mismatch(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text('{"label": "a", "vector": [1, 2]}\n{"label": "b", "vector": [1, 2, 3]}\n')
        with pytest.raises(DimensionMismatchError, match="line 2"):
            load_dataset(p)

    def test_jsonl_bad_json(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text('{"label": "a", "vector": [1, 2]}\n{oops\n')
        with pytest.raises(ParseError, match="line 2"):
            load_dataset(p)

    def test_open_label_is_reserved(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("label,f0\na,1\nopen,2\n")
        ds = load_dataset(p)
        assert ds.label_map.names == ("a",)
        assert ds.labels == ("a", OPEN_LABEL)

    def test_save_load_roundtrip_is_exact(self, tmp_path):
        ds = generate_synthetic(3, 5, 4, seed=3)
        save_dataset(ds, tmp_path / "d.csv")
        assert load_dataset(tmp_path / "d.csv") == ds


class TestMeanPool:
    def test_examples(self):
        np.testing.assert_array_equal(mean_pool([(1, 1), (3, 3)]), [2, 2])
        np.testing.assert_array_equal(mean_pool([(0.5, -2.0)]), [0.5, -2.0])
        np.testing.assert_array_equal(mean_pool([(1, 0), (0, 1), (2, 2)]), [1, 1])

    def test_empty_sequence(self):
        with pytest.raises(ArgumentError):
            mean_pool([])

    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 5)),
                  elements=st.floats(-1e6, 1e6)))
    def test_duplication_invariance(self, a):
        np.testing.assert_allclose(mean_pool(np.concatenate([a, a])), mean_pool(a), rtol=1e-12, atol=1e-9)


class TestSplit:
    def test_known_count_and_open_relabel(self):
        ds = _dataset({"a": 10, "b": 10, "c": 10, "d": 10})
        sp = make_known_open_split(ds, 0.5, seed=7)
        assert len(sp.known_classes) == 2
        open_classes = set("abcd") - set(sp.known_classes)
        assert OPEN_LABEL in sp.test.labels
        assert set(sp.train.labels) == set(sp.known_classes)
        assert set(sp.validation.labels) == set(sp.known_classes)
        assert not open_classes & set(sp.test.labels)
        assert sp.open_classes == tuple(sorted(open_classes))

    def test_full_known_ratio_has_no_open(self):
        sp = make_known_open_split(_dataset({"a": 10, "b": 10}), 1.0, seed=1)
        assert OPEN_LABEL not in sp.test.labels
        assert set(sp.known_classes) == {"a", "b"}

    def test_deterministic(self):
        ds = _dataset({"a": 12, "b": 9, "c": 15})
        s1 = make_known_open_split(ds, 0.67, seed=3)
        s2 = make_known_open_split(ds, 0.67, seed=3)
        assert s1 == s2
        assert s1.manifest() == s2.manifest()

    def test_independent_of_label_map_order(self):
        ds = _dataset({"a": 12, "b": 9, "c": 15, "d": 10})
        rev = EmbeddedDataset(ds.labels, ds.vectors, LabelMap(("d", "c", "b", "a")))
        assert make_known_open_split(ds, 0.5, 11).known_classes == make_known_open_split(rev, 0.5, 11).known_classes

    @pytest.mark.parametrize("ratio", [0.0, -0.1, 1.5])
    def test_ratio_out_of_range(self, ratio):
        with pytest.raises(ArgumentError):
            make_known_open_split(_dataset({"a": 5, "b": 5}), ratio, 0)

    def test_insufficient_records(self):
        with pytest.raises(InsufficientDataError):
            make_known_open_split(_dataset({"a": 2, "b": 5}), 1.0, 0)

    def test_min_one_known_class(self):
        sp = make_known_open_split(_dataset({"a": 5, "b": 5, "c": 5}), 0.1, 0)
        assert len(sp.known_classes) == 1

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(3, 30), min_size=2, max_size=6), st.floats(0.2, 1.0), st.integers(0, 10_000))
    def test_partition_law(self, sizes, ratio, seed):
        counts = {f"c{i}": n for i, n in enumerate(sizes)}
        ds = _dataset(counts)
        sp = make_known_open_split(ds, ratio, seed)
        rows = {tuple(v) for v in ds.vectors}
        assert len(rows) == len(ds)  # continuous draws, so rows identify records
        known = set(sp.known_classes)
        used = [tuple(v) for v in sp.train.vectors] + [tuple(v) for v in sp.validation.vectors]
        used += [tuple(v) for v, l in zip(sp.test.vectors, sp.test.labels) if l != OPEN_LABEL]
        assert len(used) == len(set(used))
        by_row = dict(zip((tuple(v) for v in ds.vectors), ds.labels))
        expected_known = sum(n for c, n in counts.items() if c in known)
        assert len(used) == expected_known
        assert all(by_row[r] in known for r in used)
        for v, l in zip(sp.test.vectors, sp.test.labels):
            if l == OPEN_LABEL:
                assert by_row[tuple(v)] not in known


class TestSubsample:
    def test_identity(self):
        ds = _dataset({"a": 10, "b": 4})
        assert subsample_labeled(ds, 1.0, 0) == ds

    def test_counts(self):
        ds = _dataset({"a": 10, "b": 3})
        sub = subsample_labeled(ds, 0.2, seed=5)
        assert sub.class_counts() == {"a": 2, "b": 1}

    def test_deterministic_and_stratified(self):
        ds = _dataset({"a": 17, "b": 11, "c": 1})
        s1, s2 = subsample_labeled(ds, 0.4, 9), subsample_labeled(ds, 0.4, 9)
        assert s1 == s2
        assert all(n >= 1 for n in s1.class_counts().values())

    @pytest.mark.parametrize("ratio", [0.0, 1.01])
    def test_bad_ratio(self, ratio):
        with pytest.raises(ArgumentError):
            subsample_labeled(_dataset({"a": 3}), ratio, 0)


class TestSynthetic:
    def test_counts(self):
        ds = generate_synthetic(3, 50, 2, seed=0)
        assert len(ds) == 150 and len(ds.label_map) == 3 and ds.dim == 2

    def test_zero_noise_rejected(self):
        with pytest.raises(ArgumentError):
            generate_synthetic(3, 5, 2, noise_sigma=0.0)

    @pytest.mark.parametrize("args", [(1, 5, 2), (3, 0, 2), (3, 5, 0)])
    def test_bad_sizes(self, args):
        with pytest.raises(ArgumentError):
            generate_synthetic(*args)

    def test_deterministic(self):
        assert generate_synthetic(4, 10, 3, seed=2) == generate_synthetic(4, 10, 3, seed=2)
        assert generate_synthetic(4, 10, 3, seed=2) != generate_synthetic(4, 10, 3, seed=3)

    def test_min_gap(self):
        from adb.data_io import pairwise_min_distance

        ds = generate_synthetic(8, 20, 16, centroid_scale=10, noise_sigma=1, seed=0, min_centroid_gap=10)
        means = np.stack([ds.vectors[np.array(ds.labels) == n].mean(0) for n in ds.label_map.names])
        assert pairwise_min_distance(means) > 8  # empirical means sit near the placed centroids


def _model(k=3, d=2, seed=0):
    rng = np.random.default_rng(seed)
    return AdbModel(
        Centroids(rng.normal(size=(k, d)), np.arange(1, k + 1)),
        BoundaryParams(rng.normal(size=k)),
        LabelMap(tuple(f"c{i}" for i in range(k))),
        config={"learning_rate": 0.05},
        seed=seed,
    )


class TestModelPersistence:
    @settings(max_examples=25, deadline=None)
    @given(k=st.integers(1, 6), d=st.integers(1, 5), seed=st.integers(0, 2**31))
    def test_roundtrip(self, tmp_path_factory, k, d, seed):
        m = _model(k, d, seed)
        path = tmp_path_factory.mktemp("m") / "model.json"
        save_model(m, path)
        m2 = load_model(path)
        assert m2 == m
        np.testing.assert_array_equal(m2.radii, m.radii)

    def _write(self, tmp_path, obj):
        p = tmp_path / "model.json"
        p.write_text(json.dumps(obj))
        return p

    def test_radii_length_mismatch(self, tmp_path):
        obj = model_to_dict(_model())
        obj["radii"] = obj["radii"][:2]
        with pytest.raises(ModelFormatError):
            load_model(self._write(tmp_path, obj))

    def test_negative_radius(self, tmp_path):
        obj = model_to_dict(_model())
        obj["radii"][0] = -1.0
        with pytest.raises(ModelFormatError):
            load_model(self._write(tmp_path, obj))

    def test_version_mismatch(self, tmp_path):
        obj = model_to_dict(_model())
        obj["format_version"] = 2
        with pytest.raises(ModelFormatError):
            load_model(self._write(tmp_path, obj))

    def test_file_layout(self, tmp_path):
        save_model(_model(), tmp_path / "m.json")
        obj = json.loads((tmp_path / "m.json").read_text())
        for key in ("format_version", "dim", "labels", "centroids", "delta_hat", "radii", "config", "seed"):
            assert key in obj
