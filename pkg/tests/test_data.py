import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from airdp.data import (Dataset, Partition, generate_synthetic, load_csv, load_idx, partition_skewed,
                        partition_uniform, save_csv, write_idx)
from airdp.errors import DimensionError, FormatError, PreconditionError
from airdp.numerics import make_rng


def test_synthetic_labels_follow_formula():
    ds = generate_synthetic(500, 10, noise_std=0.0, rng=make_rng(0))
    assert ds.U.shape == (500, 10)
    assert np.allclose(ds.v, ds.U[:, 1] + 3 * ds.U[:, 4])


def test_synthetic_noise_level():
    ds = generate_synthetic(50000, 10, rng=make_rng(1))
    resid = ds.v - ds.U[:, 1] - 3 * ds.U[:, 4]
    assert abs(resid.std() - 0.2) < 0.005


def test_synthetic_needs_five_covariates():
    with pytest.raises(DimensionError):
        generate_synthetic(10, 4)


def test_dataset_is_read_only():
    ds = generate_synthetic(5, rng=make_rng(0))
    with pytest.raises(ValueError):
        ds.U[0, 0] = 1.0


@given(st.integers(1, 500), st.integers(1, 30))
def test_uniform_partition_balanced(n, K):
    if K > n:
        with pytest.raises(PreconditionError):
            partition_uniform(n, K)
        return
    p = partition_uniform(n, K)
    assert p.K == K and p.sizes.sum() == n
    assert p.sizes.max() - p.sizes.min() <= 1


def test_skewed_partition():
    p = partition_skewed(10000, 10, 0.5)
    assert p.sizes[0] == 5000
    assert list(p.sizes[1:]) == [556] * 5 + [555] * 4
    with pytest.raises(PreconditionError):
        partition_skewed(100, 10, 0.05)
    with pytest.raises(PreconditionError):
        partition_skewed(100, 10, 0.95)


def test_skewed_equal_fraction_is_uniform():
    assert list(partition_skewed(100, 10, 0.1).sizes) == [10] * 10


def test_partition_rejects_overlap():
    with pytest.raises(PreconditionError):
        Partition((np.array([0, 1]), np.array([1, 2])))


def _idx_pair(tmp_path, n=7, gz=True):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(n, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, size=n, dtype=np.uint8)
    suffix = ".gz" if gz else ""
    ip, lp = tmp_path / f"img{suffix}", tmp_path / f"lab{suffix}"
    write_idx(ip, images)
    write_idx(lp, labels)
    return ip, lp, images, labels


@pytest.mark.parametrize("gz", [True, False])
def test_idx_round_trip(tmp_path, gz):
    ip, lp, images, labels = _idx_pair(tmp_path, gz=gz)
    ds = load_idx(ip, lp)
    assert ds.U.shape == (7, 785)
    assert np.allclose(ds.U[:, :-1], images.reshape(7, -1) / 255.0)
    assert np.all(ds.U[:, -1] == 1.0)
    assert np.array_equal(ds.v, labels)
    assert load_idx(ip, lp, limit=3).n == 3


def test_idx_bad_magic(tmp_path):
    ip, lp, *_ = _idx_pair(tmp_path, gz=False)
    raw = bytearray(ip.read_bytes())
    raw[:4] = struct.pack(">I", 0x0801)
    ip.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        load_idx(ip, lp)


def test_idx_truncated(tmp_path):
    ip, lp, *_ = _idx_pair(tmp_path, gz=False)
    ip.write_bytes(ip.read_bytes()[:-10])
    with pytest.raises(FormatError):
        load_idx(ip, lp)


def test_idx_count_mismatch(tmp_path):
    ip, _, *_ = _idx_pair(tmp_path, gz=False)
    lp = tmp_path / "short"
    write_idx(lp, np.zeros(3, np.uint8))
    with pytest.raises(FormatError):
        load_idx(ip, lp)


def test_csv_round_trip(tmp_path):
    ds = generate_synthetic(20, rng=make_rng(2))
    save_csv(ds, tmp_path / "d.csv")
    back = load_csv(tmp_path / "d.csv")
    assert np.array_equal(back.U, ds.U) and np.array_equal(back.v, ds.v)


def test_csv_errors(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("")
    with pytest.raises(FormatError):
        load_csv(p)
    p.write_text("u1,v\n")
    with pytest.raises(FormatError):
        load_csv(p)


def test_dataset_dimension_checks():
    with pytest.raises(DimensionError):
        Dataset(np.zeros((3, 2)), np.zeros(2))
