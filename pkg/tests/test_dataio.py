import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedara import dataio
from fedara.dataio import AttributeCodebook, Dataset, DataFormatError, SplitSpec


class TestBinaryCsv:
    def test_three_rows(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("1,0,1,0\n0,0,1,1\n1,1,0,0\n")
        ds = dataio.load_binary_csv(p)
        assert len(ds) == 3 and ds.num_classes == 2
        np.testing.assert_array_equal(ds.Y, [0, 1, 0])

    def test_header_sniffed(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,label\n1,0,2\n0,1,0\n")
        ds = dataio.load_binary_csv(p)
        assert ds.attribute_names == ["a", "b"] and ds.num_classes == 3

    def test_ragged_row_reports_line(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("1,0,1\n0,1,0\n1,0\n")
        with pytest.raises(DataFormatError) as exc:
            dataio.load_binary_csv(p)
        assert exc.value.line == 3 and ":3:" in str(exc.value)

    def test_non_binary_rejected(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("1,0,1\n0,2,0\n")
        with pytest.raises(DataFormatError) as exc:
            dataio.load_binary_csv(p)
        assert exc.value.line == 2
        assert dataio.load_binary_csv(p, binary=False).X[1, 1] == 2.0

    def test_non_integer_label(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("1,0,1.5\n")
        with pytest.raises(DataFormatError):
            dataio.load_binary_csv(p)

    def test_roundtrip(self, tmp_path):
        ds = dataio.synth_purchase_like(40, 6, 3, seed=2)
        dataio.write_csv(tmp_path / "r.csv", ds)
        back = dataio.load_binary_csv(tmp_path / "r.csv")
        np.testing.assert_array_equal(back.X, ds.X)
        np.testing.assert_array_equal(back.Y, ds.Y)

    def test_roundtrip_with_header(self, tmp_path):
        ds = dataio.synth_purchase_like(10, 3, 2, seed=0)
        dataio.write_csv(tmp_path / "r.csv", ds, header=True)
        back = dataio.load_binary_csv(tmp_path / "r.csv")
        assert back.attribute_names == ["x0", "x1", "x2"]
        np.testing.assert_array_equal(back.X, ds.X)


class TestGenome:
    def test_codebook_encoding(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("ACTG" + "A" * 16 + "\t1\n" + "T" * 20 + "\t0\n")
        ds = dataio.load_genome(p)
        np.testing.assert_array_equal(ds.X[0, :4], [1, 2, 4, 3])
        np.testing.assert_array_equal(ds.X[1], 4)
        np.testing.assert_array_equal(ds.Y, [1, 0])

    def test_bad_character_reports_position(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("ACGTN" + "A" * 15 + "\t1\n")
        with pytest.raises(DataFormatError, match="position 5") as exc:
            dataio.load_genome(p)
        assert exc.value.line == 1

    def test_bad_label(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("A" * 20 + "\t2\n")
        with pytest.raises(DataFormatError):
            dataio.load_genome(p)

    def test_bad_length(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("A" * 19 + "\t0\n")
        with pytest.raises(DataFormatError):
            dataio.load_genome(p)

    def test_roundtrip(self, tmp_path):
        ds = dataio.synth_genome_like(30, 3, seed=1)
        dataio.write_genome(tmp_path / "g.txt", ds)
        back = dataio.load_genome(tmp_path / "g.txt")
        np.testing.assert_array_equal(back.X, ds.X)

    def test_class_ratio(self):
        ds = dataio.synth_genome_like(2880, 288, seed=0)
        assert np.bincount(ds.Y).tolist() == [2880, 288]
        assert set(np.unique(ds.X)) == {1.0, 2.0, 3.0, 4.0}


class TestSynthetic:
    def test_marginal_within_tolerance(self):
        ds = dataio.synth_purchase_like(10000, 5, 3, attr_variance_profile=0.5, seed=0)
        assert np.all(np.abs(ds.X.mean(axis=0) - 0.5) <= 0.02)

    def test_per_column_marginals(self):
        profile = [0.1, 0.3, 0.5, 0.9]
        ds = dataio.synth_purchase_like(2000, 4, 2, attr_variance_profile=profile, seed=1)
        assert np.all(np.abs(ds.X.mean(axis=0) - profile) <= 0.02)

    def test_deterministic(self):
        a = dataio.synth_purchase_like(100, 5, 3, seed=4)
        b = dataio.synth_purchase_like(100, 5, 3, seed=4)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.Y, b.Y)

    def test_correlated_attribute_has_high_cramers_v(self):
        ds = dataio.synth_purchase_like(3000, 4, 2, seed=0, informative=[0], label_noise=0.0)
        assert dataio.cramers_v(ds, 0) > 0.5

    @pytest.mark.parametrize("p", [0.0, 1.0, 1.2])
    def test_infeasible_marginal(self, p):
        with pytest.raises(ValueError):
            dataio.synth_purchase_like(10, 3, 2, attr_variance_profile=p)

    def test_too_small(self):
        with pytest.raises(ValueError):
            dataio.synth_purchase_like(10, 1, 2)


class TestSplit:
    def test_sizes(self):
        ds = dataio.synth_purchase_like(1000, 5, 2, seed=0)
        sp = dataio.split(ds, SplitSpec(victim_size=50, seed=0))
        assert (len(sp.public), len(sp.train), len(sp.test)) == (100, 720, 180)
        assert len(sp.victim) == 50

    def test_disjoint_and_reproducible(self):
        ds = dataio.synth_purchase_like(1000, 5, 2, seed=0)
        a = dataio.split(ds, SplitSpec(victim_size=30, seed=3), participants=4)
        b = dataio.split(ds, SplitSpec(victim_size=30, seed=3), participants=4)
        np.testing.assert_array_equal(a.victim, b.victim)
        groups = [a.public, a.train, a.test]
        all_idx = np.concatenate(groups)
        assert len(np.unique(all_idx)) == len(all_idx) == 1000
        parts = [a.victim, *a.others]
        assert len(np.unique(np.concatenate(parts))) == 4 * 30
        assert set(np.concatenate(parts)) <= set(a.train)
        assert not set(a.victim) & set(a.test)

    def test_insufficient_rows(self):
        ds = dataio.synth_purchase_like(100, 5, 2, seed=0)
        with pytest.raises(ValueError, match="insufficient"):
            dataio.split(ds, SplitSpec(victim_size=50), participants=2)


class TestCandidates:
    def test_binary(self):
        cb = AttributeCodebook(1, (0, 1))
        cs = dataio.enumerate_candidates([1.0, 7.0, 0.0], cb, width=3)
        assert cs.rows.shape == (2, 3)
        np.testing.assert_array_equal(cs.rows[:, 1], [0, 1])
        np.testing.assert_array_equal(cs.rows[:, [0, 2]], [[1, 0], [1, 0]])

    def test_genome_masked_record(self):
        cb = dataio.genome_codebook(0)
        cs = dataio.enumerate_candidates(np.full(19, 2.0), cb, width=20)
        assert cs.rows.shape == (4, 20)
        np.testing.assert_array_equal(cs.rows[:, 0], [1, 2, 3, 4])
        np.testing.assert_array_equal(cs.rows[:, 1:], 2.0)

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            dataio.enumerate_candidates(np.zeros(5), AttributeCodebook(0, (0, 1)), width=3)

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(st.integers(0, 3), min_size=2, max_size=8),
        st.data(),
    )
    def test_true_index_reproduces_record(self, row, data):
        col = data.draw(st.integers(0, len(row) - 1))
        record = np.array(row, dtype=float)
        cb = AttributeCodebook(col, (0, 1, 2, 3))
        cs = dataio.enumerate_candidates(record, cb, width=len(row))
        k = int(cb.to_index(record[col]))
        np.testing.assert_array_equal(cs.rows[k - 1], record)
        masked = dataio.mask_column(record[None], col)
        np.testing.assert_array_equal(dataio.enumerate_all(masked, cb)[0, k - 1], record)


class TestCodebook:
    def test_indices(self):
        cb = AttributeCodebook(0, (0, 1))
        np.testing.assert_array_equal(cb.to_index([1, 0, 1]), [2, 1, 2])
        np.testing.assert_array_equal(cb.to_raw([2, 1]), [1, 0])

    def test_unknown_value(self):
        with pytest.raises(ValueError):
            AttributeCodebook(0, (0, 1)).to_index([2])

    def test_distinct_values(self):
        with pytest.raises(ValueError):
            AttributeCodebook(0, (1, 1))

    def test_affinity(self):
        assert AttributeCodebook(0, (1, 2, 3, 4)).is_affine
        assert not AttributeCodebook(0, (0, 1, 5)).is_affine

    def test_discretize(self):
        np.testing.assert_array_equal(dataio.discretize_equal_width([0, 1, 2, 3, 4], 4), [1, 2, 3, 4, 4])
        np.testing.assert_array_equal(dataio.discretize_equal_width([2, 2], 4), [1, 1])


class TestAssociation:
    def test_independent_low(self):
        rng = np.random.default_rng(0)
        ds = Dataset(rng.integers(0, 2, (10000, 2)), rng.integers(0, 3, 10000), 3)
        assert dataio.cramers_v(ds, 0) < 0.05

    def test_deterministic_function_is_one(self):
        y = np.arange(300) % 3
        ds = Dataset(np.c_[y * 2.0, np.zeros(300)], y, 3)
        assert dataio.cramers_v(ds, 0) == pytest.approx(1.0)

    def test_constant_column_is_zero(self):
        ds = Dataset(np.zeros((10, 1)), np.arange(10) % 2, 2)
        assert dataio.cramers_v(ds, 0) == 0.0

    def test_symmetric_under_relabeling(self):
        rng = np.random.default_rng(1)
        y = rng.integers(0, 3, 500)
        x = (y + rng.integers(0, 2, 500)) % 3
        a = Dataset(np.c_[x.astype(float)], y, 3)
        b = Dataset(np.c_[np.array([7.0, 3.0, 5.0])[x]], y, 3)
        assert dataio.cramers_v(a, 0) == pytest.approx(dataio.cramers_v(b, 0), abs=1e-12)

    def test_attr_variance(self):
        ds = Dataset(np.c_[[0.0, 1.0, 0.0, 1.0]], [0, 1, 0, 1], 2)
        assert dataio.attr_variance(ds, 0) == 0.25
