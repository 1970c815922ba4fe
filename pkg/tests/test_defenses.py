import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dnsfp.defenses import (
    PRESETS, PaddingError, PaddingPolicy, PaddingTransformer, apply_padding, apply_to_dataset,
    derive_constant, load_policy, pad_records,
)
from dnsfp.traces import Dataset, SynthProfile, Trace, generate_synthetic

WORKED = Trace((-64, 88, 33, -33), "example.com", "s1")
big_records = st.lists(st.integers(52, 3000).flatmap(lambda v: st.sampled_from((v, -v))),
                       min_size=1, max_size=30)


class TestPolicy:
    @pytest.mark.parametrize("kw", [
        {"mode": "nope"}, {"query_block": 0}, {"header_overhead": -1}, {"cell_size": 0},
        {"mode": "constant"},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            PaddingPolicy(**kw)

    def test_json_round_trip(self, tmp_path):
        p = PaddingPolicy.edns0(128, 468)
        (tmp_path / "p.json").write_text(p.to_json())
        assert load_policy(tmp_path / "p.json") == p

    def test_unknown_field(self):
        with pytest.raises(ValueError, match="unknown policy fields"):
            PaddingPolicy.from_dict({"mode": "block", "blocksize": 3})

    def test_presets(self):
        assert (PRESETS["edns0-128"].query_block, PRESETS["edns0-128"].response_block) == \
            (128, 128)
        assert (PRESETS["edns0-468"].query_block, PRESETS["edns0-468"].response_block) == \
            (128, 468)


class TestBlock:
    def test_query_rounding(self):
        assert pad_records((139,), PaddingPolicy.edns0(128, None)) == (179,)

    def test_response_side(self):
        # payload 149 -> 468
        assert pad_records((-200,), PaddingPolicy.edns0(128, 468)) == (-519,)

    def test_exact_boundary_unchanged(self):
        assert pad_records((128 + 51,), PaddingPolicy.edns0(128, 128)) == (179,)

    def test_unpadded_side_passes_through(self):
        assert pad_records((139, -20), PaddingPolicy.edns0(128, None)) == (179, -20)

    def test_small_record_error(self):
        with pytest.raises(PaddingError, match=r"record 2 \(33\)"):
            apply_padding(WORKED, PaddingPolicy.edns0(128, 128))
        with pytest.raises(PaddingError, match="'s1'"):
            apply_padding(WORKED, PaddingPolicy.edns0(128, 128))

    @given(big_records, st.integers(1, 600), st.integers(1, 600))
    def test_properties(self, records, qb, rb):
        p = PaddingPolicy.edns0(qb, rb)
        out = pad_records(records, p)
        assert len(out) == len(records)
        assert [r > 0 for r in out] == [r > 0 for r in records]
        assert all(abs(o) >= abs(r) for o, r in zip(out, records))
        assert all((abs(o) - 51) % (qb if o > 0 else rb) == 0 for o in out)
        assert pad_records(out, p) == out


class TestConstantAndCell:
    def test_constant_worked(self):
        assert pad_records(WORKED.records, PaddingPolicy.perfect(825)) == (-825, 825, 825, -825)

    def test_cell(self):
        assert pad_records((-1100,), PaddingPolicy.tor_cells()) == (-512, -512, -512)

    @given(big_records)
    def test_cell_properties(self, records):
        p = PaddingPolicy.tor_cells(512)
        out = pad_records(records, p)
        assert len(out) >= len(records)
        assert {abs(r) for r in out} == {512}
        assert pad_records(out, p) == out

    @given(big_records)
    def test_constant_idempotent(self, records):
        p = PaddingPolicy.perfect(3000)
        out = pad_records(records, p)
        assert pad_records(out, p) == out
        assert [r > 0 for r in out] == [r > 0 for r in records]


class TestDataset:
    d = generate_synthetic(SynthProfile(n_classes=5, samples_per_class=3, seed=2))

    def test_identity_ratio(self):
        _, rep = apply_to_dataset(self.d, PRESETS["none"])
        assert rep.ratio == 1.0

    def test_constant_bytes(self):
        c = derive_constant(self.d)
        out, rep = apply_to_dataset(self.d, PaddingPolicy.perfect(c))
        assert rep.defended_bytes == c * sum(len(t) for t in self.d)
        assert rep.ratio >= 1

    def test_edns0_overhead_order(self):
        _, r128 = apply_to_dataset(self.d, PRESETS["edns0-128"])
        _, r468 = apply_to_dataset(self.d, PRESETS["edns0-468"])
        assert r468.ratio > r128.ratio > 1

    def test_derive_constant(self):
        d = Dataset((Trace((5, -7), "a", "1"),))
        assert derive_constant(d) == 7
        d = Dataset((Trace((100, -825), "a", "1"), Trace((300,), "b", "2")))
        assert derive_constant(d) == 825
        with pytest.raises(ValueError):
            derive_constant(Dataset(()))

    def test_report_dict(self):
        _, rep = apply_to_dataset(self.d, PRESETS["tor"])
        assert json.loads(json.dumps(rep.to_dict()))["ratio"] == rep.ratio


class TestTransformer:
    def test_auto_constant(self):
        t = PaddingTransformer(mode="constant", constant_size="auto").fit([(1, -9), (4,)])
        assert t.policy_.constant_size == 9
        assert t.transform([(2, -3)]) == [(9, -9)]

    def test_keeps_trace_objects(self):
        t = PaddingTransformer(mode="cell", cell_size=10).fit([WORKED])
        (out,) = t.transform([WORKED])
        assert isinstance(out, Trace) and out.label == "example.com"
        assert len(out) == 7 + 9 + 4 + 4
