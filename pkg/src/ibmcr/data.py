"""Datasets: the synthetic 12-bit task, MNIST IDX files, and plain CSV.

Features are stored as ``D x M`` (samples in columns) to match the feature
matrices used by :mod:`ibmcr.rates`.
"""

import csv
import gzip
import hashlib
import itertools
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ibmcr.errors import ConsistencyError, FormatError, InputDomainError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    features: np.ndarray  # D x M
    labels: np.ndarray
    num_classes: int
    name: str = ""
    checksum: str = field(init=False)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64).reshape(-1)
        if self.features.ndim != 2:
            raise InputDomainError(f"features must be D x M, got {self.features.shape}")
        if self.features.shape[1] != self.labels.size:
            raise ConsistencyError(
                f"{self.features.shape[1]} feature columns but {self.labels.size} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InputDomainError(f"labels must lie in [0, {self.num_classes})")
        self.checksum = dataset_checksum(self.features, self.labels, self.num_classes)

    @property
    def num_samples(self):
        return self.labels.size

    @property
    def dim(self):
        return self.features.shape[0]

    def take(self, idx, name=None):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[:, idx], self.labels[idx], self.num_classes, name or self.name)


def dataset_checksum(features, labels, num_classes):
    h = hashlib.sha256()
    h.update(struct.pack("<QQQ", features.shape[0], features.shape[1], num_classes))
    h.update(np.ascontiguousarray(features, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(labels, dtype="<i8").tobytes())
    return h.hexdigest()


# -- synthetic task ------------------------------------------------------------


def icosahedron_vertices():
    """The 12 vertices of a regular icosahedron on the unit sphere."""
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = []
    for a, b in itertools.product((-1.0, 1.0), repeat=2):
        verts += [(0.0, a, b * phi), (a, b * phi, 0.0), (b * phi, 0.0, a)]
    v = np.array(verts)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def all_patterns(n_bits=12):
    """All 2**n_bits patterns with entries +-1, row i is the binary expansion of i (MSB first)."""
    codes = np.arange(2**n_bits)
    bits = (codes[:, None] >> np.arange(n_bits - 1, -1, -1)) & 1
    return (2.0 * bits - 1.0)


def szt_scores(patterns, noise_seed=0, noise_scale=1e-6):
    """Rotation-invariant score of each +-1 pattern on the icosahedron vertices.

    With u_k the vertices and x_k the pattern, the dipole m = sum_k x_k u_k is
    passed through tanh(|m|^2 / 12). |m|^2 depends only on the inter-vertex
    angles, so the score is invariant under the icosahedral symmetry group.
    A tiny seeded perturbation, indexed by the pattern itself rather than by
    its position, separates the symmetry orbits' ties; it is far below the gap
    around the balanced threshold and does not change default labels.
    """
    u = icosahedron_vertices()
    m = patterns @ u
    score = np.tanh(np.sum(m * m, axis=1) / 12.0)
    rng = np.random.default_rng(noise_seed)
    jitter = rng.standard_normal(2 ** patterns.shape[1])
    ids = ((patterns > 0).astype(np.int64) << np.arange(patterns.shape[1] - 1, -1, -1)).sum(axis=1)
    return score + noise_scale * jitter[ids]


def balanced_threshold(scores, target=0.5, tol=0.01, max_iter=200):
    """Bisect for gamma so that mean(scores > gamma) lies within target +- tol."""
    lo, hi = float(scores.min()) - 1.0, float(scores.max())
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        frac = float(np.mean(scores > mid))
        if abs(frac - target) <= tol:
            return mid
        if frac > target:
            lo = mid
        else:
            hi = mid
    raise InputDomainError(f"could not balance labels to {target} +- {tol}")


def gen_szt(gamma=None, noise_seed=0):
    """Binary classification of all 4096 +-1 patterns on 12 sphere sites.

    ``gamma=None`` picks the threshold by bisection so the positive class is
    within 0.5 +- 0.01 of the data.
    """
    X = all_patterns(12)
    s = szt_scores(X, noise_seed)
    if gamma is None:
        gamma = balanced_threshold(s)
    y = (s > gamma).astype(np.int64)
    return Dataset(X.T, y, 2, name=f"szt(noise_seed={noise_seed})")


# -- IDX -----------------------------------------------------------------------


def _open_maybe_gz(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def _read_idx(path, magic, ndims):
    with _open_maybe_gz(path) as f:
        buf = f.read()
    header = 4 + 4 * ndims
    if len(buf) < 4:
        raise FormatError(f"{path}: truncated at byte offset {len(buf)}, magic needs 4 bytes")
    found = struct.unpack_from(">I", buf)[0]
    if found != magic:
        raise FormatError(f"{path}: bad magic, expected 0x{magic:08x}, found 0x{found:08x}")
    if len(buf) < header:
        raise FormatError(f"{path}: truncated at byte offset {len(buf)}, header needs {header} bytes")
    dims = struct.unpack_from(f">{ndims}I", buf, 4)
    n = int(np.prod(dims))
    if len(buf) < header + n:
        raise FormatError(f"{path}: truncated at byte offset {len(buf)}, data needs {header + n} bytes")
    if len(buf) > header + n:
        raise FormatError(f"{path}: {len(buf) - header - n} trailing bytes after offset {header + n}")
    return np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(dims)


def read_idx_images(path):
    return _read_idx(path, IDX_IMAGES_MAGIC, 3)


def read_idx_labels(path):
    return _read_idx(path, IDX_LABELS_MAGIC, 1)


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        f.write(labels.tobytes())


def load_mnist_idx(images_path, labels_path):
    """MNIST-style IDX pair -> Dataset with pixels scaled to [0, 1]."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and labels.max() > 9:
        raise FormatError(f"{labels_path}: label {int(labels.max())} outside 0..9")
    X = images.reshape(images.shape[0], -1).T.astype(np.float64) / 255.0
    return Dataset(X, labels.astype(np.int64), 10, name="mnist")


def write_bundled_mnist_idx(directory):
    """Write the 5000 real MNIST digits shipped with ``mlxtend`` as an IDX pair.

    A stand-in when the canonical training files are unavailable. Returns the
    (images, labels) paths.
    """
    from mlxtend.data import mnist_data

    X, y = mnist_data()
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    images, labels = out / "train-images-idx3-ubyte", out / "train-labels-idx1-ubyte"
    write_idx_images(images, np.rint(X).astype(np.uint8).reshape(-1, 28, 28))
    write_idx_labels(labels, np.asarray(y, dtype=np.uint8))
    return images, labels


# -- CSV -----------------------------------------------------------------------


def import_csv(path, num_classes):
    """One sample per row, trailing integer label. A non-numeric first row is a header."""
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r]
    if not rows:
        raise FormatError(f"{path}: empty file")
    start = 0
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        start = 1
    body = rows[start:]
    if not body:
        raise FormatError(f"{path}: no data rows")
    width = len(body[0])
    if width < 2:
        raise FormatError(f"{path}: row {start + 1} needs at least one feature and a label")
    feats, labels = [], []
    for lineno, r in enumerate(body, start=start + 1):
        if len(r) != width:
            raise FormatError(f"{path}: row {lineno} has {len(r)} columns, expected {width}")
        try:
            feats.append([float(v) for v in r[:-1]])
            lab = float(r[-1])
        except ValueError:
            raise FormatError(f"{path}: row {lineno} has a non-numeric cell") from None
        if lab != int(lab) or not 0 <= lab < num_classes:
            raise FormatError(f"{path}: row {lineno} label {r[-1]!r} not in [0, {num_classes})")
        labels.append(int(lab))
    X = np.array(feats, dtype=np.float64).T
    return Dataset(X, np.array(labels, dtype=np.int64), num_classes, name=str(path))


def export_csv(ds, path):
    """Write with a header ``f0..f{D-1},label`` and 9 significant digits."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow([f"f{i}" for i in range(ds.dim)] + ["label"])
        for col, lab in zip(ds.features.T, ds.labels):
            w.writerow([f"{v:.9g}" for v in col] + [int(lab)])


# -- resampling ----------------------------------------------------------------


def _stratified_pick(labels, n, rng):
    """Pick n indices, allocating per class by largest remainder."""
    classes = np.unique(labels)
    m = labels.size
    members = [np.flatnonzero(labels == c) for c in classes]
    quota = np.array([n * idx.size / m for idx in members])
    take = np.floor(quota).astype(np.int64)
    rest = n - int(take.sum())
    order = np.argsort(-(quota - take), kind="stable")
    take[order[:rest]] += 1
    chosen = [rng.permutation(idx)[:k] for idx, k in zip(members, take)]
    return np.sort(np.concatenate(chosen)) if chosen else np.empty(0, dtype=np.int64)


def subsample(ds, n, seed):
    if not 0 <= n <= ds.num_samples:
        raise InputDomainError(f"cannot subsample {n} of {ds.num_samples} samples")
    idx = _stratified_pick(ds.labels, n, np.random.default_rng(seed))
    return ds.take(idx, name=f"{ds.name}[{n}]")


def split(ds, fraction, seed):
    """Stratified (train, test) split with round(fraction * M) training samples."""
    if not 0.0 <= fraction <= 1.0:
        raise InputDomainError(f"split fraction must be in [0, 1], got {fraction}")
    n_train = int(round(fraction * ds.num_samples))
    train_idx = _stratified_pick(ds.labels, n_train, np.random.default_rng(seed))
    mask = np.ones(ds.num_samples, dtype=bool)
    mask[train_idx] = False
    return ds.take(train_idx, f"{ds.name}:train"), ds.take(np.flatnonzero(mask), f"{ds.name}:test")
