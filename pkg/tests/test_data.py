import numpy as np
import pytest

from ssl_iqa.data import (
    Dataset,
    SplitSpec,
    SyntheticSpec,
    format_dataset,
    generate_synthetic,
    load_dataset,
    parse_dataset,
    save_dataset,
    split,
    split_indices,
)
from ssl_iqa.errors import FormatError, ParseError
from ssl_iqa.evaluation import srcc


class TestFileFormat:
    def test_round_trip(self, tmp_path):
        syn = generate_synthetic(SyntheticSpec(n_labeled=30, n_unlabeled=10, feature_dim=5, seed=2))
        for ds in (syn.labeled, syn.unlabeled):
            path = tmp_path / "d.tsv"
            save_dataset(ds, path)
            assert load_dataset(path) == ds

    def test_layout(self):
        ds = Dataset(["a", "b"], [[1.5, -2.0], [0.1, 3.0]], [7.0, np.nan])
        assert format_dataset(ds) == "#dim=2\na\t7.0\t1.5,-2.0\nb\t-\t0.1,3.0\n"
        assert ds[1].mos is None and ds[0].mos == 7.0

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.tsv"
        path.write_text("")
        assert len(load_dataset(path)) == 0

    def test_non_numeric_feature_names_line(self):
        with pytest.raises(ParseError) as err:
            parse_dataset("#dim=2\na\t1\t1,2\nb\t2\t1,x\n")
        assert err.value.line == 3
        assert "line 3" in str(err.value)

    def test_inconsistent_length(self):
        with pytest.raises(FormatError):
            parse_dataset("a\t1\t1,2\nb\t2\t1,2,3\n")

    def test_wrong_field_count(self):
        with pytest.raises(ParseError):
            parse_dataset("a\t1,2\n")

    def test_label_blind_load(self, tmp_path):
        ds = Dataset(["a", "b"], [[1.0], [2.0]], [3.0, 4.0])
        save_dataset(ds, tmp_path / "x.tsv")
        blind, mos = load_dataset(tmp_path / "x.tsv", label_blind=True)
        assert not blind.is_labeled.any()
        assert mos == {"a": 3.0, "b": 4.0}

    def test_duplicate_ids_rejected(self):
        with pytest.raises(FormatError):
            Dataset(["a", "a"], [[1.0], [2.0]], [1.0, 2.0])


class TestSynthetic:
    def test_noiseless_mos_is_monotone_in_latent(self):
        for nl in ("identity", "cube", "sigmoid"):
            syn = generate_synthetic(SyntheticSpec(n_labeled=200, n_unlabeled=50, noise_std=0.0, nonlinearity=nl))
            lat = [syn.latent[i] for i in syn.labeled.ids]
            assert srcc(lat, syn.labeled.mos) == pytest.approx(1.0, abs=1e-12)

    def test_mos_range(self):
        syn = generate_synthetic(SyntheticSpec(n_labeled=100, n_unlabeled=100))
        every = np.concatenate([syn.labeled.mos, list(syn.heldout_mos.values())])
        assert every.min() == 0.0 and every.max() == 100.0
        assert not syn.unlabeled.is_labeled.any()

    def test_no_ood_by_default(self):
        syn = generate_synthetic(SyntheticSpec(n_labeled=100, n_unlabeled=100))
        assert not syn.ood_ids

    def test_ood_planting(self):
        spec = SyntheticSpec(n_labeled=300, n_unlabeled=500, feature_dim=8, ood_fraction=0.1, ood_in_labeled=False)
        syn = generate_synthetic(spec)
        assert len(syn.ood_ids) == 50 and all(i.startswith("U") for i in syn.ood_ids)
        mask = np.array([i in syn.ood_ids for i in syn.unlabeled.ids])
        c = list(syn.ood_coords)
        assert len(c) == 2
        shift = syn.unlabeled.features[mask][:, c].mean() - syn.unlabeled.features[~mask][:, c].mean()
        assert 2.5 < shift < 3.5

    def test_deterministic_files(self, tmp_path):
        spec = SyntheticSpec(n_labeled=40, n_unlabeled=20, seed=9)
        a, b = generate_synthetic(spec), generate_synthetic(spec)
        save_dataset(a.labeled, tmp_path / "a.tsv")
        save_dataset(b.labeled, tmp_path / "b.tsv")
        assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()

    def test_noise_calibration(self):
        syn = generate_synthetic(SyntheticSpec(noise_std=0.3, seed=0))
        lat = [syn.latent[i] for i in syn.labeled.ids]
        assert abs(srcc(lat, syn.labeled.mos) - 0.95) < 0.01


class TestSplit:
    def test_sizes(self):
        ds = generate_synthetic(SyntheticSpec(n_labeled=100, n_unlabeled=0)).labeled
        tr, va, te = split(ds, SplitSpec(), 0)
        assert (len(tr), len(va), len(te)) == (60, 20, 20)

    @pytest.mark.parametrize("n", [5, 17, 100, 1001])
    def test_disjoint_exhaustive(self, n):
        for r in range(3):
            parts = split_indices(n, SplitSpec(), r)
            joined = np.concatenate(parts)
            assert sorted(joined) == list(range(n))

    def test_repeats_differ(self):
        perms = [np.concatenate(split_indices(100, SplitSpec(), r)) for r in range(3)]
        assert not np.array_equal(perms[0], perms[1])
        assert not np.array_equal(perms[1], perms[2])

    def test_errors(self):
        with pytest.raises(ValueError):
            split_indices(100, SplitSpec(), 3)
        with pytest.raises(ValueError):
            split_indices(4, SplitSpec(), 0)
        with pytest.raises(ValueError):
            SplitSpec(fractions=(0.5, 0.2, 0.2))
