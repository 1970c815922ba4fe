import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnsfp.traces import (
    Dataset, DatasetError, SynthProfile, Trace, dumps_dataset, generate_synthetic,
    load_dataset, prefix, save_dataset,
)

WORKED = (-64, 88, 33, -33)


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def small_dataset():
    return Dataset((
        Trace(WORKED, "example.com", "s1", 1.5),
        Trace((100, -200), "example.com", "s2"),
        Trace((7, -7, 7), "other.org", "s3"),
    ), "tiny")


class TestTrace:
    def test_rejects_zero(self):
        with pytest.raises(DatasetError, match="zero record size at index 1"):
            Trace((5, 0), "a", "x")

    def test_rejects_oversized_record(self):
        Trace((65536, -65536), "a", "x")
        with pytest.raises(DatasetError, match="exceeds"):
            Trace((65537,), "a", "x")

    def test_rejects_empty(self):
        with pytest.raises(DatasetError):
            Trace((), "a", "x")

    def test_rejects_non_integers(self):
        with pytest.raises(DatasetError, match="non-integer"):
            Trace((1.5,), "a", "x")
        with pytest.raises(DatasetError, match="non-integer"):
            Trace((True,), "a", "x")

    def test_total_bytes(self):
        assert Trace(WORKED, "a", "x").total_bytes() == 64 + 88 + 33 + 33


class TestPrefix:
    t = Trace(WORKED, "example.com", "s1")

    def test_truncates(self):
        p = prefix(self.t, 2)
        assert p.records == (-64, 88)
        assert (p.label, p.sample_id) == ("example.com", "s1")

    def test_identity_and_saturation(self):
        assert prefix(self.t, 4) == self.t
        assert prefix(self.t, 10**6) == self.t

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            prefix(self.t, 0)

    @given(st.lists(st.integers(1, 50).map(lambda v: v if v % 2 else -v), min_size=1,
                    max_size=30),
           st.integers(1, 40), st.integers(1, 40))
    def test_composition(self, records, a, b):
        t = Trace(tuple(records), "w", "s")
        assert prefix(prefix(t, a), b) == prefix(t, min(a, b))


class TestDataset:
    def test_classes_sorted(self):
        d = Dataset((Trace((1,), "b", "1"), Trace((1,), "a", "2"), Trace((1,), "b", "3")))
        assert d.classes == ("a", "b")
        assert d.class_counts() == {"a": 1, "b": 2}

    def test_duplicate_sample_id(self):
        with pytest.raises(DatasetError, match="duplicate sample_id"):
            Dataset((Trace((1,), "a", "s"), Trace((2,), "b", "s")))

    def test_take_per_class(self):
        d = generate_synthetic(SynthProfile(n_classes=3, samples_per_class=5, seed=1))
        sub = d.take_per_class(2)
        assert sub.class_counts() == {c: 2 for c in d.classes}


class TestLoading:
    def test_worked_jsonl_line(self, tmp_path):
        p = _write(tmp_path, "d.jsonl",
                   '{"label":"example.com","sample_id":"s1","records":[-64,88,33,-33]}\n')
        d = load_dataset(p)
        assert d.traces[0].records == WORKED
        assert d.classes == ("example.com",)

    def test_zero_record_names_line_and_index(self, tmp_path):
        p = _write(tmp_path, "d.jsonl",
                   '{"label":"a","sample_id":"s1","records":[5]}\n'
                   '{"label":"a","sample_id":"s2","records":[0, 5]}\n')
        with pytest.raises(DatasetError, match="line 2.*zero record size at index 0"):
            load_dataset(p)

    def test_malformed_json(self, tmp_path):
        p = _write(tmp_path, "d.jsonl", '{"label": "a", \n')
        with pytest.raises(DatasetError, match="line 1"):
            load_dataset(p)

    def test_missing_field(self, tmp_path):
        p = _write(tmp_path, "d.jsonl", '{"label": "a", "records": [1]}\n')
        with pytest.raises(DatasetError, match="line 1"):
            load_dataset(p)

    def test_duplicate_ids_in_file(self, tmp_path):
        line = '{"label":"a","sample_id":"s","records":[1]}\n'
        with pytest.raises(DatasetError, match="duplicate sample_id"):
            load_dataset(_write(tmp_path, "d.jsonl", line * 2))

    @pytest.mark.parametrize("name", ["e.jsonl", "e.csv"])
    def test_empty_file(self, tmp_path, name):
        with pytest.raises(DatasetError, match="empty dataset"):
            load_dataset(_write(tmp_path, name, ""))

    def test_csv_format(self, tmp_path):
        p = _write(tmp_path, "d.csv", "label,sample_id,records\nexample.com,s1,-64 88 33 -33\n")
        assert load_dataset(p).traces[0].records == WORKED

    def test_csv_bad_record(self, tmp_path):
        p = _write(tmp_path, "d.csv", "label,sample_id,records\na,s1,1 x\n")
        with pytest.raises(DatasetError, match="line 2"):
            load_dataset(p)

    def test_unknown_extension(self, tmp_path):
        with pytest.raises(ValueError):
            load_dataset(_write(tmp_path, "d.txt", "x"))


class TestSaving:
    @pytest.mark.parametrize("fmt", ["jsonl", "csv"])
    def test_round_trip(self, tmp_path, fmt):
        d = small_dataset()
        path = tmp_path / f"d.{fmt}"
        save_dataset(d, path)
        back = load_dataset(path)
        assert back.traces == d.traces

    def test_csv_to_jsonl_preserves_records(self, tmp_path):
        d = small_dataset()
        save_dataset(d, tmp_path / "d.csv")
        save_dataset(load_dataset(tmp_path / "d.csv"), tmp_path / "d.jsonl")
        assert [t.records for t in load_dataset(tmp_path / "d.jsonl")] == \
            [t.records for t in d]

    def test_refuses_empty(self, tmp_path):
        with pytest.raises(DatasetError, match="refusing to write empty dataset"):
            save_dataset(Dataset(()), tmp_path / "x.jsonl")

    def test_jsonl_is_one_object_per_line(self):
        lines = dumps_dataset(small_dataset()).splitlines()
        assert len(lines) == 3
        assert json.loads(lines[0])["collected_at"] == 1.5


class TestSynthetic:
    def test_deterministic_bytes(self, tmp_path):
        p = SynthProfile(n_classes=10, samples_per_class=4, noise_rate=0.3, seed=7)
        save_dataset(generate_synthetic(p), tmp_path / "a.jsonl")
        save_dataset(generate_synthetic(p), tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_noiseless_samples_identical(self):
        d = generate_synthetic(SynthProfile(n_classes=6, samples_per_class=5, noise_rate=0))
        for traces in d.by_class().values():
            assert len({t.records for t in traces}) == 1

    def test_shape_and_signs(self):
        p = SynthProfile(n_classes=12, samples_per_class=3, noise_rate=0.5, seed=3)
        d = generate_synthetic(p)
        assert len(d.classes) == 12 and len(d) == 36
        for t in d:
            assert t.records[0] > 0 and t.records[1] < 0
            assert all((a > 0) != (b > 0) for a, b in zip(t.records, t.records[1:]))
            assert 4 <= len(t) <= 16

    def test_jitter_band(self):
        base = generate_synthetic(SynthProfile(n_classes=8, samples_per_class=6, noise_rate=0))
        noisy = generate_synthetic(SynthProfile(n_classes=8, samples_per_class=6,
                                                noise_rate=1.0))
        for a, b in zip(base, noisy):
            diffs = [abs(x - y) for x, y in zip(a.records, b.records)]
            assert all(1 <= v <= 8 for v in diffs)

    def test_distinct_signatures(self):
        d = generate_synthetic(SynthProfile(n_classes=50, samples_per_class=1, noise_rate=0))
        assert len({t.records for t in d}) == 50

    @pytest.mark.parametrize("kwargs", [
        {"n_classes": 0}, {"samples_per_class": 0}, {"noise_rate": 1.5},
        {"resources_per_class_range": (3, 2)}, {"size_alphabet": ()},
    ])
    def test_invalid_profile(self, kwargs):
        with pytest.raises(ValueError):
            SynthProfile(**kwargs)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32), st.floats(0, 1))
    def test_pure_function_of_profile(self, seed, noise):
        p = SynthProfile(n_classes=3, samples_per_class=2, noise_rate=noise, seed=seed)
        assert generate_synthetic(p) == generate_synthetic(p)
