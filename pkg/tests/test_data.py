import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regionscope.data import (
    AugmentationPolicy,
    LabeledSet,
    augment,
    augment_batch,
    batches,
    epoch_order,
    load_dataset,
    load_idx,
    make_moons,
    moons_raw,
    write_csv,
    write_idx,
)
from regionscope.errors import ConfigError, DataError, FormatError, ShapeError, TruncatedFileError


def test_moons_zero_noise_on_arcs():
    pts, labels = moons_raw(4, noise=0.0, seed=0)
    outer = pts[labels == 0]
    inner = pts[labels == 1]
    np.testing.assert_allclose(np.hypot(outer[:, 0], outer[:, 1]), 1.0, atol=1e-15)
    np.testing.assert_allclose(np.hypot(1.0 - inner[:, 0], 0.5 - inner[:, 1]), 1.0, atol=1e-15)
    assert sorted(map(tuple, np.round(outer, 12))) == [(-1.0, 0.0), (1.0, 0.0)]


def test_moons_outer_arc_upper_half():
    pts, labels = moons_raw(1000, noise=0.0, seed=3)
    assert (pts[labels == 0, 1] >= -1e-15).all()
    assert (labels == 0).sum() == 500


def test_moons_deterministic_and_rescaled():
    a = make_moons(1000, 0.1, seed=7)
    b = make_moons(1000, 0.1, seed=7)
    assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
    assert a.images.min() == 0.0 and a.images.max() == 1.0
    assert not np.array_equal(a.images, make_moons(1000, 0.1, seed=8).images)


def test_moons_errors():
    with pytest.raises(ConfigError):
        make_moons(1)
    with pytest.raises(ConfigError):
        make_moons(10, noise=-0.1)


def test_moons_csv(tmp_path):
    ds = make_moons(6, 0.0, seed=0)
    write_csv(ds, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "a,b,label" and len(lines) == 7
    a, b, y = lines[1].split(",")
    assert float(a) == ds.images[0, 0] and float(b) == ds.images[0, 1] and int(y) == ds.labels[0]


def _fixture(tmp_path, img_magic=0x803, lab_magic=0x801, n_lab=2, cut=0):
    pix = bytes([0, 255, 128, 1, 7, 64, 200, 3])
    img = struct.pack(">IIII", img_magic, 2, 2, 2) + pix
    lab = struct.pack(">II", lab_magic, n_lab) + bytes([3, 9][:n_lab] + [0] * max(0, n_lab - 2))
    if cut:
        img = img[:-cut]
    (tmp_path / "img").write_bytes(img)
    (tmp_path / "lab").write_bytes(lab)
    return tmp_path / "img", tmp_path / "lab", pix


def test_idx_hand_built_fixture(tmp_path):
    ip, lp, pix = _fixture(tmp_path)
    ds = load_idx(ip, lp)
    assert ds.images.shape == (2, 4)
    assert ds.images.ravel().tolist() == [b / 255.0 for b in pix]
    assert ds.labels.tolist() == [3, 9]


def test_idx_gzip(tmp_path):
    ip, lp, pix = _fixture(tmp_path)
    (tmp_path / "img.gz").write_bytes(gzip.compress(ip.read_bytes()))
    ds = load_idx(tmp_path / "img.gz", lp)
    assert ds.images.ravel().tolist() == [b / 255.0 for b in pix]


def test_idx_errors(tmp_path):
    ip, lp, _ = _fixture(tmp_path)
    with pytest.raises(FormatError):
        load_idx(ip, ip)
    ip, lp, _ = _fixture(tmp_path, lab_magic=0x803)
    with pytest.raises(FormatError):
        load_idx(ip, lp)
    ip, lp, _ = _fixture(tmp_path, n_lab=3)
    with pytest.raises(DataError):
        load_idx(ip, lp)
    ip, lp, _ = _fixture(tmp_path, cut=1)
    with pytest.raises(TruncatedFileError):
        load_idx(ip, lp)
    (tmp_path / "tiny").write_bytes(b"\0\0")
    with pytest.raises(TruncatedFileError):
        load_idx(tmp_path / "tiny", lp)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 6), gz=st.booleans())
def test_idx_round_trip(tmp_path_factory, seed, n, gz):
    tmp = tmp_path_factory.mktemp("idx")
    rng = np.random.default_rng(seed)
    ds = LabeledSet(rng.integers(0, 256, size=(n, 9)) / 255.0, rng.integers(0, 10, size=n))
    sfx = ".gz" if gz else ""
    write_idx(ds, tmp / f"i{sfx}", tmp / f"l{sfx}")
    back = load_idx(tmp / f"i{sfx}", tmp / f"l{sfx}")
    assert np.array_equal(back.images, ds.images) and np.array_equal(back.labels, ds.labels)


def test_mnist_fixture(mnist_root):
    tr = load_dataset("mnist", "train", mnist_root)
    te = load_dataset("mnist", "test", mnist_root)
    assert tr.dim == 784 and te.dim == 784
    assert 0.0 <= tr.images.min() and tr.images.max() <= 1.0
    assert set(np.unique(tr.labels)) == set(range(10))
    with pytest.raises(DataError):
        load_dataset("mnist", "train", mnist_root / "missing")


def test_subset():
    ds = make_moons(50, 0.1)
    sub = ds.subset(10, seed=4)
    assert len(sub) == 10 and np.array_equal(sub.images, ds.subset(10, seed=4).images)
    assert ds.subset(None) is ds and ds.subset(500) is ds


def test_disabled_policy_is_identity():
    x = np.random.default_rng(0).uniform(size=16)
    assert np.array_equal(augment(x, AugmentationPolicy.disabled(), np.random.default_rng(1)), x)


def test_hflip_swaps_columns():
    x = np.array([0.1, 0.2, 0.3, 0.4])
    pol = AugmentationPolicy(crop=False, blur=False, hflip_prob=1.0)
    np.testing.assert_allclose(augment(x, pol, np.random.default_rng(0)), [0.2, 0.1, 0.4, 0.3], atol=1e-15)


def _direct_blur(img, sigma):
    r = int(np.ceil(3 * sigma))
    offs = np.arange(-r, r + 1)
    k = np.exp(-offs**2 / (2 * sigma**2))
    k /= k.sum()
    pad = np.pad(img, r, mode="symmetric")
    n = img.shape[0]
    out = np.zeros_like(img)
    for i in range(n):
        for j in range(n):
            out[i, j] = sum(k[a] * k[b] * pad[i + a, j + b] for a in range(2 * r + 1) for b in range(2 * r + 1))
    return out


def test_blur_matches_direct_convolution():
    img = np.random.default_rng(2).uniform(size=(8, 8))
    pol = AugmentationPolicy(crop=False, hflip=False, blur_prob=1.0, blur_sigma_range=(0.7, 0.7))
    got = augment(img.ravel(), pol, np.random.default_rng(0)).reshape(8, 8)
    np.testing.assert_allclose(got, np.clip(_direct_blur(img, 0.7), 0, 1), atol=1e-12)


def test_blur_small_sigma_identity():
    img = np.random.default_rng(3).uniform(size=784)
    pol = AugmentationPolicy(crop=False, hflip=False, blur_prob=1.0, blur_sigma_range=(0.05, 0.05))
    assert np.abs(augment(img, pol, np.random.default_rng(0)) - img).max() < 1e-6


def test_full_crop_is_identity():
    img = np.random.default_rng(4).uniform(size=49)
    pol = AugmentationPolicy(hflip=False, blur=False, crop_scale_range=(1.0, 1.0), crop_ratio_range=(1.0, 1.0))
    np.testing.assert_allclose(augment(img, pol, np.random.default_rng(0)), img, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_augment_stays_in_unit_range(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(4, 64))
    out = augment_batch(x, AugmentationPolicy(jitter=True, jitter_sigma=0.3), rng)
    assert out.shape == x.shape and out.min() >= 0.0 and out.max() <= 1.0


def test_augment_shape_errors():
    with pytest.raises(ShapeError):
        augment(np.zeros(10), AugmentationPolicy(), np.random.default_rng(0))
    with pytest.raises(ShapeError):
        augment(np.zeros((2, 4)), AugmentationPolicy(), np.random.default_rng(0))


def test_policy_validation():
    with pytest.raises(ConfigError):
        AugmentationPolicy(crop_scale_range=(0.0, 1.0))
    with pytest.raises(ConfigError):
        AugmentationPolicy(hflip_prob=1.5)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 200), bs=st.integers(2, 64), seed=st.integers(0, 1000), epoch=st.integers(0, 5))
def test_epoch_partition(n, bs, seed, epoch):
    chunks = epoch_order(n, bs, seed, epoch)
    allidx = np.concatenate(chunks)
    assert sorted(allidx.tolist()) == list(range(n))
    assert all(len(c) >= 2 for c in chunks)


def test_batches_deterministic_and_plain():
    ds = make_moons(30, 0.1)
    a = list(batches(ds, 8, seed=1, epoch=2))
    b = list(batches(ds, 8, seed=1, epoch=2))
    for x, y in zip(a, b):
        assert np.array_equal(x.indices, y.indices) and np.array_equal(x.x1, y.x1)
        assert np.array_equal(x.x1, ds.images[x.indices]) and x.x2 is None
    c = list(batches(ds, 8, seed=1, epoch=3))
    assert not all(np.array_equal(x.indices, y.indices) for x, y in zip(a, c))


def test_two_views_differ():
    rng = np.random.default_rng(0)
    ds = LabeledSet(rng.uniform(size=(100, 784)), rng.integers(0, 10, 100))
    diff = 0
    for b in batches(ds, 50, seed=0, two_views=True, policy=AugmentationPolicy()):
        diff += int(np.any(b.x1 != b.x2, axis=1).sum())
    assert diff >= 95
    for b in batches(ds, 50, seed=0, two_views=True):
        assert np.array_equal(b.x1, b.x2)


def test_batch_size_errors():
    ds = make_moons(10)
    with pytest.raises(ConfigError):
        list(batches(ds, 1, seed=0, two_views=True))
    with pytest.raises(ConfigError):
        list(batches(ds, 0, seed=0))
