import gzip
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.linear_model import LogisticRegression

from fedhisyn.data import (
    Dataset,
    IdxFormatError,
    Partition,
    divergence_D,
    load_idx,
    load_mnist,
    partition_dirichlet,
    partition_iid,
    synth_dataset,
)

MNIST_DIR = Path(__file__).resolve().parents[1] / "data" / "mnist10k"


def idx_bytes(magic, dims, payload):
    return struct.pack(">i", magic) + b"".join(struct.pack(">i", d) for d in dims) + bytes(payload)


@pytest.fixture
def idx_pair(tmp_path):
    def write(img_magic=0x803, lbl_magic=0x801, n_img=2, n_lbl=2, img_payload=None, lbl_payload=None, gz=False):
        img_payload = img_payload if img_payload is not None else [0, 255, 255, 0] * n_img
        lbl_payload = lbl_payload if lbl_payload is not None else list(range(n_lbl))
        imgs = idx_bytes(img_magic, (n_img, 2, 2), img_payload)
        lbls = idx_bytes(lbl_magic, (n_lbl,), lbl_payload)
        if gz:
            imgs, lbls = gzip.compress(imgs), gzip.compress(lbls)
        ip, lp = tmp_path / "img", tmp_path / "lbl"
        ip.write_bytes(imgs)
        lp.write_bytes(lbls)
        return ip, lp
    return write


class TestLoadIdx:
    def test_hand_built_fixture(self, idx_pair):
        ds = load_idx(*idx_pair())
        assert ds.features.shape == (2, 4)
        np.testing.assert_array_equal(ds.features[0], [0.0, 1.0, 1.0, 0.0])
        assert list(ds.labels) == [0, 1]

    def test_gzip(self, idx_pair):
        ds = load_idx(*idx_pair(gz=True))
        np.testing.assert_array_equal(ds.features[1], [0.0, 1.0, 1.0, 0.0])

    def test_count_mismatch(self, idx_pair):
        with pytest.raises(IdxFormatError) as err:
            load_idx(*idx_pair(n_img=10, n_lbl=9))
        assert err.value.field == "count"

    def test_bad_magic(self, idx_pair):
        with pytest.raises(IdxFormatError) as err:
            load_idx(*idx_pair(img_magic=0x801))
        assert err.value.field == "images.magic"
        with pytest.raises(IdxFormatError) as err:
            load_idx(*idx_pair(lbl_magic=0x803))
        assert err.value.field == "labels.magic"

    def test_truncated(self, idx_pair):
        with pytest.raises(IdxFormatError) as err:
            load_idx(*idx_pair(img_payload=[0] * 5))
        assert err.value.field == "images.data"

    def test_truncated_header(self, tmp_path, idx_pair):
        ip, lp = idx_pair()
        ip.write_bytes(b"\x00\x00\x08")
        with pytest.raises(IdxFormatError) as err:
            load_idx(ip, lp)
        assert err.value.field == "images.header"

    @pytest.mark.skipif(not MNIST_DIR.exists(), reason="bundled MNIST subset missing")
    def test_bundled_mnist_subset(self):
        train = load_mnist(MNIST_DIR, train=True)
        test = load_mnist(MNIST_DIR, train=False)
        assert train.features.shape == (8000, 784)
        assert len(test) == 2000
        assert train.num_classes == 10 and set(train.labels) == set(range(10))
        assert 0.0 <= train.features.min() and train.features.max() <= 1.0


class TestSynth:
    def test_deterministic(self):
        a = synth_dataset(100, 4, 3, 2.0, seed=5)
        b = synth_dataset(100, 4, 3, 2.0, seed=5)
        assert a.features.tobytes() == b.features.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_balanced(self):
        ds = synth_dataset(103, 5, 4, 1.0, seed=1)
        counts = np.bincount(ds.labels, minlength=4)
        assert counts.max() - counts.min() <= 1

    def test_mean_separation(self):
        ds = synth_dataset(20000, 6, 3, 5.0, seed=4)
        mu = np.stack([ds.features[ds.labels == c].mean(axis=0) for c in range(3)])
        gaps = [np.linalg.norm(mu[a] - mu[b]) for a, b in ((0, 1), (0, 2), (1, 2))]
        np.testing.assert_allclose(gaps, 5.0, rtol=0.05)
        within = ds.features[ds.labels == 0] - mu[0]
        assert np.var(within) == pytest.approx(1.0, rel=0.05)

    def test_no_separation_is_chance(self):
        ds = synth_dataset(2000, 5, 4, 0.0, seed=2)
        acc = LogisticRegression(max_iter=1000).fit(ds.features, ds.labels).score(ds.features, ds.labels)
        assert abs(acc - 0.25) <= 0.1

    def test_wide_separation_is_learnable(self):
        from fedhisyn import nn_core
        ds = synth_dataset(400, 2, 2, 10.0, seed=3)
        spec = nn_core.ModelSpec(2, 2)
        w = np.zeros(spec.num_params)
        batch = nn_core.Batch(ds.features, ds.labels)
        for _ in range(3000):
            w = nn_core.sgd_step(spec, w, batch, 5.0)
        acc = np.mean(np.argmax(nn_core.forward(spec, w, ds.features), axis=1) == ds.labels)
        assert acc >= 0.99

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            synth_dataset(2, 3, 5, 1.0, seed=0)


def balanced(n=1000, classes=10, seed=0):
    labels = np.random.default_rng(seed).permutation(np.arange(n) % classes)
    return Dataset(np.zeros((n, 1)), labels, classes)


def assert_valid(partition: Partition, n: int):
    assert all(len(s) > 0 for s in partition.shards)
    joined = np.sort(np.concatenate(partition.shards))
    np.testing.assert_array_equal(joined, np.arange(n))


class TestPartitions:
    def test_dirichlet_covers(self):
        ds = balanced()
        assert_valid(partition_dirichlet(ds, 100, 0.3, seed=1), len(ds))

    def test_dirichlet_large_beta_near_global(self):
        ds = balanced()
        part = partition_dirichlet(ds, 10, 1e6, seed=2)
        for shard in part.shards:
            props = np.bincount(ds.labels[shard], minlength=10) / len(shard)
            assert np.all(np.abs(props - 0.1) <= 0.05)

    def test_dirichlet_more_skewed_than_iid(self):
        ds = balanced()
        assert divergence_D(ds, partition_dirichlet(ds, 100, 0.3, 3)) > divergence_D(ds, partition_iid(ds, 100, 3))

    def test_infeasible(self):
        with pytest.raises(ValueError):
            partition_dirichlet(balanced(20, 2), 21, 0.5, 0)
        with pytest.raises(ValueError):
            partition_iid(balanced(20, 2), 21, 0)

    def test_empty_shard_repair(self):
        # tiny beta concentrates each class on one device, leaving most devices empty before repair
        ds = balanced(40, 2)
        assert_valid(partition_dirichlet(ds, 30, 0.01, seed=4), 40)

    def test_iid_sizes(self):
        ds = balanced(100, 10)
        part = partition_iid(ds, 10, seed=0)
        assert [len(s) for s in part.shards] == [10] * 10
        assert_valid(part, 100)

    def test_iid_histograms_near_uniform(self):
        ds = balanced(1000, 10)
        for shard in partition_iid(ds, 10, seed=5).shards:
            assert np.all(np.abs(np.bincount(ds.labels[shard], minlength=10) - 10) <= 3)

    def test_deterministic(self):
        ds = balanced()
        a = partition_dirichlet(ds, 20, 0.5, 9)
        b = partition_dirichlet(ds, 20, 0.5, 9)
        assert all(np.array_equal(x, y) for x, y in zip(a.shards, b.shards))


@settings(max_examples=60, deadline=None)
@given(n_devices=st.integers(1, 60), beta=st.floats(0.01, 100.0), seed=st.integers(0, 10_000),
       n=st.integers(60, 300))
def test_partition_property_sweep(n_devices, beta, seed, n):
    ds = balanced(n, 5, seed)
    assert_valid(partition_dirichlet(ds, n_devices, beta, seed), n)
    assert_valid(partition_iid(ds, n_devices, seed), n)


class TestDivergence:
    def test_stratified_copies_zero(self):
        labels = np.array([0, 1, 2, 0, 1, 2])
        ds = Dataset(np.zeros((6, 1)), labels, 3)
        part = Partition([np.array([0, 1, 2]), np.array([3, 4, 5])], None, 0)
        assert divergence_D(ds, part) == 0.0

    def test_exclusive_labels(self):
        ds = Dataset(np.zeros((4, 1)), np.array([0, 0, 1, 1]), 2)
        part = Partition([np.array([0, 1]), np.array([2, 3])], 0.1, 0)
        assert divergence_D(ds, part) == pytest.approx(2.0)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), beta=st.floats(0.05, 10.0))
    def test_nonnegative_and_reorder_invariant(self, seed, beta):
        ds = balanced(200, 4, seed)
        part = partition_dirichlet(ds, 15, beta, seed)
        d = divergence_D(ds, part)
        rev = Partition(part.shards[::-1], part.beta, part.seed)
        assert d >= 0
        assert divergence_D(ds, rev) == pytest.approx(d, abs=1e-12)

    @pytest.mark.skipif(not MNIST_DIR.exists(), reason="bundled MNIST subset missing")
    def test_mnist_ordering(self):
        train = load_mnist(MNIST_DIR)
        d03 = divergence_D(train, partition_dirichlet(train, 100, 0.3, 0))
        d08 = divergence_D(train, partition_dirichlet(train, 100, 0.8, 0))
        d_iid = divergence_D(train, partition_iid(train, 100, 0))
        assert d03 > d08 > d_iid
