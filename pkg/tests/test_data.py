import gzip
import math
import os
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ibmcr.data import (
    Dataset,
    all_patterns,
    export_csv,
    gen_szt,
    icosahedron_vertices,
    import_csv,
    load_mnist_idx,
    read_idx_images,
    split,
    subsample,
    szt_scores,
    write_idx_images,
    write_idx_labels,
)
from ibmcr.errors import ConsistencyError, FormatError, InputDomainError


@pytest.fixture(scope="module")
def szt():
    return gen_szt()


def test_szt_shape_and_balance(szt):
    assert szt.features.shape == (12, 4096)
    assert set(np.unique(szt.features)) == {-1.0, 1.0}
    assert 0.49 <= szt.labels.mean() <= 0.51
    # every pattern appears exactly once
    assert np.unique(szt.features.T, axis=0).shape[0] == 4096


def test_szt_extreme_thresholds():
    assert np.all(gen_szt(gamma=-math.inf).labels == 1)
    assert np.all(gen_szt(gamma=math.inf).labels == 0)


def test_szt_is_deterministic(szt):
    assert gen_szt().checksum == szt.checksum


def test_szt_labels_are_a_function_of_the_pattern():
    X = all_patterns(12)
    perm = np.random.default_rng(0).permutation(4096)
    np.testing.assert_array_equal(szt_scores(X[perm]), szt_scores(X)[perm])


def test_szt_score_is_symmetric_under_vertex_sign_flip():
    # x -> -x leaves |sum x_k u_k| unchanged
    X = all_patterns(12)
    noiseless = szt_scores(X, noise_scale=0.0)
    np.testing.assert_allclose(szt_scores(-X, noise_scale=0.0), noiseless, atol=1e-12)


def test_icosahedron_geometry():
    u = icosahedron_vertices()
    np.testing.assert_allclose(np.linalg.norm(u, axis=1), 1.0)
    dots = np.round(u @ u.T, 9)
    # each vertex has 5 neighbours at the same angle
    for row in dots:
        vals, counts = np.unique(row, return_counts=True)
        assert sorted(counts.tolist()) == [1, 1, 5, 5]
    np.testing.assert_allclose(u.sum(axis=0), 0.0, atol=1e-12)


def idx_fixture(tmp_path, n_labels=2):
    images = np.array([[[0, 255], [17, 128]], [[1, 2], [3, 4]]], dtype=np.uint8)
    write_idx_images(tmp_path / "img.idx", images)
    write_idx_labels(tmp_path / "lab.idx", np.arange(n_labels) % 10)
    return images


def test_idx_roundtrip(tmp_path):
    images = idx_fixture(tmp_path)
    raw = (tmp_path / "img.idx").read_bytes()
    assert raw[:16] == struct.pack(">IIII", 0x803, 2, 2, 2)
    np.testing.assert_array_equal(read_idx_images(tmp_path / "img.idx"), images)
    ds = load_mnist_idx(tmp_path / "img.idx", tmp_path / "lab.idx")
    assert ds.features.shape == (4, 2) and ds.num_classes == 10
    np.testing.assert_array_equal(ds.features[:, 0], [0.0, 1.0, 17 / 255, 128 / 255])
    np.testing.assert_array_equal(ds.labels, [0, 1])


def test_idx_gzip(tmp_path):
    images = idx_fixture(tmp_path)
    with gzip.open(tmp_path / "img.idx.gz", "wb") as f:
        f.write((tmp_path / "img.idx").read_bytes())
    np.testing.assert_array_equal(read_idx_images(tmp_path / "img.idx.gz"), images)


def test_idx_bad_magic(tmp_path):
    idx_fixture(tmp_path)
    raw = bytearray((tmp_path / "img.idx").read_bytes())
    raw[3] = 0x01
    (tmp_path / "bad.idx").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="expected 0x00000803, found 0x00000801"):
        load_mnist_idx(tmp_path / "bad.idx", tmp_path / "lab.idx")


def test_idx_truncated(tmp_path):
    idx_fixture(tmp_path)
    (tmp_path / "short.idx").write_bytes((tmp_path / "img.idx").read_bytes()[:20])
    with pytest.raises(FormatError, match="byte offset 20"):
        read_idx_images(tmp_path / "short.idx")


def test_idx_count_mismatch(tmp_path):
    idx_fixture(tmp_path, n_labels=3)
    with pytest.raises(ConsistencyError):
        load_mnist_idx(tmp_path / "img.idx", tmp_path / "lab.idx")


def test_canonical_mnist_header():
    d = os.environ.get("IBMCR_MNIST_DIR")
    path = Path(d or ".") / "train-images-idx3-ubyte"
    if not d or not path.exists():
        pytest.skip("canonical MNIST training files not available")
    with open(path, "rb") as f:
        magic, n, rows, cols = struct.unpack(">IIII", f.read(16))
    assert (magic, n, rows * cols) == (0x803, 60000, 784)


def test_csv_fixture(tmp_path):
    (tmp_path / "d.csv").write_text("a,b,label\n0.5,1,0\n-2,3.25,1\n7,0,2\n")
    ds = import_csv(tmp_path / "d.csv", 3)
    np.testing.assert_array_equal(ds.features, [[0.5, -2, 7], [1, 3.25, 0]])
    np.testing.assert_array_equal(ds.labels, [0, 1, 2])


def test_csv_without_header(tmp_path):
    (tmp_path / "d.csv").write_text("0.5,1,0\n-2,3.25,1\n")
    assert import_csv(tmp_path / "d.csv", 2).num_samples == 2


@pytest.mark.parametrize(
    "body, match",
    [
        ("", "empty"),
        ("x,label\n1,0\n2,3,1\n", "row 3"),
        ("x,label\n1,0\nfoo,1\n", "row 3"),
        ("x,label\n1,0\n1,5\n", "row 3 label"),
        ("x,label\n1,0.5\n", "row 2 label"),
    ],
)
def test_csv_errors(tmp_path, body, match):
    (tmp_path / "d.csv").write_text(body)
    with pytest.raises(FormatError, match=match):
        import_csv(tmp_path / "d.csv", 2)


def test_csv_roundtrip_checksum(tmp_path, szt):
    export_csv(szt, tmp_path / "szt.csv")
    back = import_csv(tmp_path / "szt.csv", 2)
    assert back.checksum == szt.checksum


def test_dataset_validation():
    with pytest.raises(ConsistencyError):
        Dataset(np.zeros((2, 3)), np.zeros(2), 2)
    with pytest.raises(InputDomainError):
        Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)


def test_subsample_identity_and_errors(szt):
    assert subsample(szt, szt.num_samples, seed=0).checksum == szt.checksum
    with pytest.raises(InputDomainError):
        subsample(szt, szt.num_samples + 1, seed=0)


def test_split_full_fraction(szt):
    train, test = split(szt, 1.0, seed=0)
    assert train.num_samples == szt.num_samples and test.num_samples == 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.95))
def test_split_is_stratified_and_disjoint(seed, fraction):
    rng = np.random.default_rng(seed)
    m, k = int(rng.integers(10, 200)), int(rng.integers(1, 5))
    labels = np.concatenate([np.arange(k), rng.integers(0, k, m - k)])
    ds = Dataset(np.arange(m, dtype=float)[None, :], labels, k)
    train, test = split(ds, fraction, seed)
    assert train.num_samples == round(fraction * m)
    ids = np.concatenate([train.features[0], test.features[0]])
    assert sorted(ids.tolist()) == list(range(m))
    for c in range(k):
        expected = fraction * np.sum(labels == c)
        assert abs(np.sum(train.labels == c) - expected) <= 1.0
    again, _ = split(ds, fraction, seed)
    assert again.checksum == train.checksum
