"""Coding-rate quantities of a feature matrix.

Features are stored as a ``d x M`` array, one column per sample. All rates are
in nats; use :func:`to_bits` at display boundaries.
"""

import csv
import math
import struct
from dataclasses import dataclass

import numpy as np

from ibmcr.errors import FormatError, InputDomainError, NumericError, PartitionError

LN2 = math.log(2.0)


def to_bits(nats):
    return nats / LN2


def as_features(Z):
    """Validate and return ``Z`` as a finite 2-D float64 array."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise InputDomainError(f"feature matrix must be 2-D, got shape {Z.shape}")
    if Z.shape[0] < 1 or Z.shape[1] < 1:
        raise InputDomainError(f"feature matrix must have d >= 1 and M >= 1, got {Z.shape}")
    if not np.all(np.isfinite(Z)):
        raise InputDomainError("feature matrix contains non-finite entries")
    return Z


def _center(Z):
    return Z - Z.mean(axis=1, keepdims=True)


@dataclass(frozen=True)
class Partition:
    """Hard assignment of M samples to K classes.

    The membership matrix of class j is ``diag(assignment == j)``; only the
    assignment vector is stored.
    """

    assignment: np.ndarray
    num_classes: int

    def __post_init__(self):
        a = np.asarray(self.assignment)
        if a.ndim != 1 or a.size == 0:
            raise PartitionError("assignment must be a nonempty 1-D sequence")
        if not np.issubdtype(a.dtype, np.integer):
            if not np.all(np.equal(np.mod(a, 1), 0)):
                raise PartitionError("assignment must contain integer class indices")
        a = a.astype(np.int64)
        if self.num_classes < 1:
            raise PartitionError(f"num_classes must be >= 1, got {self.num_classes}")
        if a.min() < 0 or a.max() >= self.num_classes:
            raise PartitionError(f"class indices must lie in [0, {self.num_classes})")
        counts = np.bincount(a, minlength=self.num_classes)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            raise PartitionError(f"class {int(empty[0])} has no samples")
        object.__setattr__(self, "assignment", a)

    @classmethod
    def from_labels(cls, labels, num_classes=None):
        labels = np.asarray(labels, dtype=np.int64)
        if num_classes is None:
            num_classes = int(labels.max()) + 1 if labels.size else 0
        return cls(labels, num_classes)

    @property
    def size(self):
        return int(self.assignment.size)

    def counts(self):
        """tr(Pi_j) for each class."""
        return np.bincount(self.assignment, minlength=self.num_classes)

    def membership(self, j):
        """Dense diagonal membership matrix Pi_j (M x M). For tests and small M only."""
        return np.diag((self.assignment == j).astype(np.float64))


def logdet_gram(Z, alpha):
    """log det(I_d + alpha * Z Z^T), via Cholesky on the smaller Gram side."""
    Z = as_features(Z)
    if not (alpha > 0 and math.isfinite(alpha)):
        raise InputDomainError(f"alpha must be positive and finite, got {alpha}")
    d, m = Z.shape
    G = Z @ Z.T if d <= m else Z.T @ Z
    A = np.eye(G.shape[0]) + alpha * G
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"Cholesky failed on {A.shape[0]}x{A.shape[1]} Gram matrix") from exc
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def coding_rate(Z, eps, center=False):
    """R(Z, eps) = 1/2 log det(I + d/(M eps^2) Z Z^T)."""
    Z = as_features(Z)
    _check_eps(eps)
    if center:
        Z = _center(Z)
    d, m = Z.shape
    return 0.5 * logdet_gram(Z, d / (m * eps**2))


def conditional_coding_rate(Z, partition, eps, center=False):
    """Class-weighted average of per-class coding rates, R^c(Z, eps | Pi)."""
    Z = as_features(Z)
    _check_eps(eps)
    partition = _check_partition(Z, partition)
    if center:
        Z = _center(Z)
    d, m = Z.shape
    total = 0.0
    for j, n_j in enumerate(partition.counts()):
        Zj = Z[:, partition.assignment == j]
        total += (n_j / m) * logdet_gram(Zj, d / (n_j * eps**2))
    return 0.5 * total


def rate_reduction(Z, partition, eps, center=False):
    """Delta R = R(Z, eps) - R^c(Z, eps | Pi)."""
    return coding_rate(Z, eps, center) - conditional_coding_rate(Z, partition, eps, center)


def _check_eps(eps):
    if not (eps > 0 and math.isfinite(eps)):
        raise InputDomainError(f"precision eps must be positive and finite, got {eps}")


def _check_partition(Z, partition):
    if not isinstance(partition, Partition):
        partition = Partition.from_labels(partition)
    if partition.size != Z.shape[1]:
        raise InputDomainError(
            f"partition has {partition.size} samples but Z has {Z.shape[1]} columns"
        )
    return partition


# -- serialization -----------------------------------------------------------


def write_features_csv(path, Z):
    """One sample per row, header f0..f{d-1}."""
    Z = as_features(Z)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"f{i}" for i in range(Z.shape[0])])
        for col in Z.T:
            w.writerow([repr(float(v)) for v in col])


def read_features_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not body:
        raise FormatError(f"{path}: no sample rows")
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise FormatError(f"{path}: row {i} has {len(r)} cells, expected {len(header)}")
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric cell ({exc})") from exc
    return data.T.copy()


_BIN_HEADER = struct.Struct("<II")


def features_to_bytes(Z):
    """Little-endian ``u32 d, u32 M, f64[d*M]`` with column-major values."""
    Z = np.asarray(Z, dtype=np.float64)
    d, m = Z.shape
    return _BIN_HEADER.pack(d, m) + Z.astype("<f8").tobytes(order="F")


def features_from_bytes(buf):
    if len(buf) < _BIN_HEADER.size:
        raise FormatError("feature blob shorter than its 8-byte header")
    d, m = _BIN_HEADER.unpack_from(buf)
    expected = _BIN_HEADER.size + 8 * d * m
    if len(buf) != expected:
        raise FormatError(f"feature blob is {len(buf)} bytes, header implies {expected}")
    flat = np.frombuffer(buf, dtype="<f8", offset=_BIN_HEADER.size)
    return flat.reshape((d, m), order="F").astype(np.float64)


def write_features_bin(path, Z):
    with open(path, "wb") as f:
        f.write(features_to_bytes(Z))


def read_features_bin(path):
    with open(path, "rb") as f:
        return features_from_bytes(f.read())
