import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image as PILImage

from rebalance_ssl.errors import ConfigError
from rebalance_ssl.imgdata import (
    FolderDataset,
    ImbalanceSpec,
    Provenance,
    SourceExample,
    build_split,
    channel_stats,
    load_dataset,
    make_imbalanced,
    read_manifest,
    round_half_up,
    split_labeled_unlabeled,
    split_test,
    write_manifest,
)


def folder_dataset(counts, size=8, seed=0):
    """In-memory dataset with the given per-class counts."""
    rng = np.random.default_rng(seed)
    examples = []
    for c, n in enumerate(counts):
        for i in range(n):
            img = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
            examples.append(SourceExample(f"class_{c}/img_{i:04d}.png", c, img))
    return FolderDataset(examples, [f"class_{c}" for c in range(len(counts))])


class TestLoadDataset:
    def test_folder_layout(self, tmp_path):
        rng = np.random.default_rng(0)
        for name in ["beach", "airport", "forest"]:
            d = tmp_path / name
            d.mkdir()
            for i in range(4):
                arr = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
                PILImage.fromarray(arr).save(d / f"img_{i}.png")
        ds = load_dataset(tmp_path)
        # class ids follow lexicographic folder order
        assert ds.class_names == ["airport", "beach", "forest"]
        assert len(ds.examples) == 12
        assert ds.examples[0].image.shape == (8, 8, 3)
        assert ds.class_counts() == [4, 4, 4]

    def test_single_folder_rejected(self, tmp_path):
        d = tmp_path / "only"
        d.mkdir()
        PILImage.fromarray(np.zeros((4, 4, 3), np.uint8)).save(d / "a.png")
        with pytest.raises(ConfigError):
            load_dataset(tmp_path)

    def test_missing_root_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_dataset(tmp_path / "nope")

    def test_undecodable_file_skipped(self, tmp_path):
        rng = np.random.default_rng(0)
        for name in ["a", "b"]:
            d = tmp_path / name
            d.mkdir()
            arr = rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
            PILImage.fromarray(arr).save(d / "good.png")
        (tmp_path / "a" / "broken.png").write_bytes(b"not an image")
        ds = load_dataset(tmp_path)
        assert len(ds.examples) == 2

    def test_all_undecodable_class_fails(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        PILImage.fromarray(np.zeros((4, 4, 3), np.uint8)).save(tmp_path / "b" / "ok.png")
        (tmp_path / "a" / "broken.png").write_bytes(b"junk")
        with pytest.raises(ConfigError):
            load_dataset(tmp_path)


class TestSplitTest:
    def test_ucm_like_fraction(self):
        ds = folder_dataset([100] * 21)
        train, test = split_test(ds, 0.10, seed=7)
        assert test.class_counts() == [10] * 21
        assert len(test.examples) == 210
        assert len(train.examples) == 2100 - 210

    def test_two_per_class_half(self):
        ds = folder_dataset([2, 2])
        train, test = split_test(ds, 0.5, seed=1)
        assert train.class_counts() == [1, 1]
        assert test.class_counts() == [1, 1]

    def test_determinism(self):
        ds = folder_dataset([30, 20, 10])
        a_train, a_test = split_test(ds, 0.2, seed=5)
        b_train, b_test = split_test(ds, 0.2, seed=5)
        assert [e.path for e in a_train.examples] == [e.path for e in b_train.examples]
        assert [e.path for e in a_test.examples] == [e.path for e in b_test.examples]

    def test_disjoint(self):
        ds = folder_dataset([10, 10])
        train, test = split_test(ds, 0.3, seed=2)
        assert not {e.path for e in train.examples} & {e.path for e in test.examples}

    def test_singleton_class_rejected(self):
        ds = folder_dataset([5, 1])
        with pytest.raises(ValueError):
            split_test(ds, 0.2, seed=0)


class TestMakeImbalanced:
    def test_gamma_one_is_identity(self):
        ds = folder_dataset([20, 20, 20])
        out = make_imbalanced(ds, ImbalanceSpec(gamma=1.0, seed=3))
        assert out.class_counts() == [20, 20, 20]

    def test_exponential_profile_counts(self):
        # hand evaluation of 100 * 0.1 ** ((l-1)/2) with round-half-up:
        # 100, 31.62.. -> 32, 10
        ds = folder_dataset([100, 100, 100])
        out = make_imbalanced(ds, ImbalanceSpec(gamma=0.1, profile="exponential", seed=11))
        assert sorted(out.class_counts(), reverse=True) == [100, 32, 10]

    def test_linear_profile_counts(self):
        # 100 * (1 - 0.9 * (l-1)/2): 100, 55, 10
        ds = folder_dataset([100, 100, 100])
        out = make_imbalanced(ds, ImbalanceSpec(gamma=0.1, profile="linear", seed=11))
        assert sorted(out.class_counts(), reverse=True) == [100, 55, 10]

    def test_ratio_on_balanced_set(self):
        ds = folder_dataset([90] * 21)
        out = make_imbalanced(ds, ImbalanceSpec(gamma=0.1, seed=0))
        counts = out.class_counts()
        ratio = min(counts) / max(counts)
        # within one rounding unit of gamma
        assert abs(ratio - 0.1) <= 1.0 / max(counts)

    def test_never_increases_counts(self):
        ds = folder_dataset([30, 10, 50])
        out = make_imbalanced(ds, ImbalanceSpec(gamma=0.3, seed=9))
        for before, after in zip(ds.class_counts(), out.class_counts()):
            assert after <= before

    def test_minority_assignment_varies_with_seed(self):
        ds = folder_dataset([50, 50, 50, 50, 50])
        outs = {
            tuple(make_imbalanced(ds, ImbalanceSpec(gamma=0.1, seed=s)).class_counts())
            for s in range(8)
        }
        assert len(outs) > 1  # permutation actually depends on the seed

    def test_determinism(self):
        ds = folder_dataset([40, 40, 40])
        a = make_imbalanced(ds, ImbalanceSpec(gamma=0.2, seed=4))
        b = make_imbalanced(ds, ImbalanceSpec(gamma=0.2, seed=4))
        assert [e.path for e in a.examples] == [e.path for e in b.examples]


class TestSplitLabeledUnlabeled:
    def test_fraction_arithmetic(self):
        ds = folder_dataset([100, 100])
        labeled, unlabeled, truth = split_labeled_unlabeled(ds, 0.05, seed=1)
        assert len(labeled) == 10
        assert len(unlabeled) == 190
        assert len(truth) == 190

    def test_two_example_class(self):
        ds = folder_dataset([2, 2])
        labeled, unlabeled, _ = split_labeled_unlabeled(ds, 0.5, seed=1)
        assert len(labeled) == 2 and len(unlabeled) == 2

    def test_zero_labeled_class_rejected(self):
        ds = folder_dataset([10, 10])
        with pytest.raises(ValueError):
            split_labeled_unlabeled(ds, 0.01, seed=0)

    def test_determinism(self):
        ds = folder_dataset([20, 30])
        a = split_labeled_unlabeled(ds, 0.25, seed=6)
        b = split_labeled_unlabeled(ds, 0.25, seed=6)
        assert [e.path for e in a[0]] == [e.path for e in b[0]]
        assert [e.uid for e in a[1]] == [e.uid for e in b[1]]

    def test_truth_hidden_from_unlabeled_view(self):
        ds = folder_dataset([10, 10])
        _, unlabeled, truth = split_labeled_unlabeled(ds, 0.5, seed=2)
        for ex in unlabeled:
            assert not hasattr(ex, "class_id")
            assert truth[ex.uid] in (0, 1)


class TestBuildSplit:
    def test_partition_property(self):
        ds = folder_dataset([30, 40, 50])
        split = build_split(ds, 0.2, 0.3, ImbalanceSpec(gamma=0.5, seed=0), seed=0)
        labeled = {e.path for e in split.labeled}
        unlabeled = {e.uid for e in split.unlabeled}
        test = {e.path for e in split.test}
        assert not labeled & unlabeled
        assert not labeled & test
        assert not unlabeled & test
        all_ids = {e.path for e in ds.examples}
        assert (labeled | unlabeled | test) <= all_ids

    def test_test_carved_before_imbalance(self):
        ds = folder_dataset([50, 50, 50])
        split = build_split(ds, 0.2, 0.5, ImbalanceSpec(gamma=0.1, seed=0), seed=0)
        by_class = [0, 0, 0]
        for ex in split.test:
            by_class[ex.class_id] += 1
        assert by_class == [10, 10, 10]  # test set stays balanced

    def test_reproducible(self):
        ds = folder_dataset([30, 30])
        a = build_split(ds, 0.1, 0.2, None, seed=42)
        b = build_split(ds, 0.1, 0.2, None, seed=42)
        assert [e.path for e in a.labeled] == [e.path for e in b.labeled]
        assert [e.uid for e in a.unlabeled] == [e.uid for e in b.unlabeled]
        assert [e.path for e in a.test] == [e.path for e in b.test]


class TestChannelStats:
    def test_all_black(self):
        imgs = [np.zeros((4, 4, 3), np.uint8)]
        mean, std = channel_stats(imgs)
        np.testing.assert_allclose(mean, [0, 0, 0])
        np.testing.assert_allclose(std, [1e-6] * 3)

    def test_constant_128(self):
        imgs = [np.full((4, 4, 3), 128, np.uint8)]
        mean, _ = channel_stats(imgs)
        np.testing.assert_allclose(mean, [128 / 255] * 3, atol=1e-12)

    def test_two_pixel_population_std(self):
        # population std of {0, 1} is 0.5 exactly
        img = np.array([[[0, 0, 0], [255, 255, 255]]], dtype=np.uint8)
        mean, std = channel_stats([img])
        np.testing.assert_allclose(mean, [0.5] * 3, atol=1e-12)
        np.testing.assert_allclose(std, [0.5] * 3, atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            channel_stats([])


class TestManifest:
    def test_roundtrip_and_format(self, tmp_path):
        ds = folder_dataset([6, 6])
        split = build_split(ds, 0.2, 0.5, None, seed=3)
        path = tmp_path / "manifest.tsv"
        write_manifest(split, path)
        rows = read_manifest(path)
        roles = {role for _, role, _ in rows}
        assert roles == {"labeled", "unlabeled", "test"}
        for rel, role, class_id in rows:
            if role == "unlabeled":
                assert class_id == -1  # ground truth must not leak
            else:
                assert class_id in (0, 1)
        assert len(rows) == 12

    def test_byte_identical_given_seed(self, tmp_path):
        ds = folder_dataset([8, 8])
        for name in ("a.tsv", "b.tsv"):
            split = build_split(ds, 0.25, 0.5, None, seed=9)
            write_manifest(split, tmp_path / name)
        assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()


class TestProvenance:
    def test_pseudo_requires_valid_fields(self):
        with pytest.raises(ValueError):
            Provenance.pseudo(0, 0.99)
        with pytest.raises(ValueError):
            Provenance.pseudo(1, 1.5)
        p = Provenance.pseudo(2, 0.97)
        assert p.kind == "pseudo" and p.generation == 2

    def test_round_half_up(self):
        assert round_half_up(0.5) == 1
        assert round_half_up(1.5) == 2
        assert round_half_up(31.62) == 32
        assert round_half_up(2.4) == 2


@settings(max_examples=40, deadline=None)
@given(
    counts=st.lists(st.integers(min_value=4, max_value=40), min_size=2, max_size=6),
    gamma=st.floats(min_value=0.05, max_value=1.0),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_imbalance_never_increases_and_is_deterministic(counts, gamma, seed):
    ds = folder_dataset(counts)
    spec = ImbalanceSpec(gamma=gamma, seed=seed)
    out1 = make_imbalanced(ds, spec)
    out2 = make_imbalanced(ds, spec)
    assert [e.path for e in out1.examples] == [e.path for e in out2.examples]
    for before, after in zip(ds.class_counts(), out1.class_counts()):
        assert 1 <= after <= before
