"""Binning estimators of I(X;T) and I(T;Y) for logged hidden-layer activations.

Each unit is quantized into equal-width bins and a sample's code is the tuple
of its bin indices. Estimates are plug-in and reported in bits.
"""

import csv
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ibmcr.errors import InputDomainError

ACTIVATIONS = ("tanh", "relu", "linear")
RANGE_MODES = ("fixed", "per_layer_observed", "global_observed")


@dataclass
class ActivationSnapshot:
    epoch: int
    layer: int
    values: np.ndarray  # units x samples
    activation: str = "tanh"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise InputDomainError(f"snapshot values must be units x samples, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InputDomainError(f"non-finite activations at epoch {self.epoch} layer {self.layer}")
        if self.activation not in ACTIVATIONS:
            raise InputDomainError(f"unknown activation {self.activation!r}")
        self.values = v

    @property
    def num_samples(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class BinningConfig:
    bins: int = 30
    range_mode: str = "fixed"
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if self.bins < 2:
            raise InputDomainError(f"bins must be >= 2, got {self.bins}")
        if self.range_mode not in RANGE_MODES:
            raise InputDomainError(f"unknown range_mode {self.range_mode!r}")
        if self.range_mode == "fixed" and not self.lo < self.hi:
            raise InputDomainError(f"fixed range needs lo < hi, got ({self.lo}, {self.hi})")

    @classmethod
    def for_activation(cls, activation, bins=30):
        """Saturating units get the fixed [-1, 1] range, unbounded ones the observed range."""
        if activation == "tanh":
            return cls(bins, "fixed", -1.0, 1.0)
        return cls(bins, "per_layer_observed")


@dataclass(frozen=True)
class DiscreteCode:
    """Per-sample bin tuples (samples x units) and their integer symbol ids."""

    bins: np.ndarray
    symbols: np.ndarray

    def __len__(self):
        return int(self.symbols.size)


def _symbols(rows):
    # rows: samples x units integer array
    rows = np.ascontiguousarray(rows)
    _, inv = np.unique(rows, axis=0, return_inverse=True)
    return inv.reshape(-1).astype(np.int64)


def as_code(symbols):
    """Wrap an arbitrary per-sample symbol sequence as a DiscreteCode."""
    _, inv = np.unique(np.asarray(symbols), return_inverse=True)
    inv = inv.reshape(-1).astype(np.int64)
    return DiscreteCode(inv[:, None], inv)


def discretize(snapshot, cfg, value_range=None):
    """Bin each unit of ``snapshot``.

    ``value_range`` supplies (lo, hi) for the observed modes (e.g. min/max over a
    whole training run); without it the snapshot's own extremes are used.
    """
    v = snapshot.values
    if cfg.range_mode == "fixed":
        lo, hi = cfg.lo, cfg.hi
    elif value_range is not None:
        lo, hi = value_range
    else:
        lo, hi = float(v.min()), float(v.max())
    if hi > lo:
        idx = np.floor(cfg.bins * (v - lo) / (hi - lo))
        idx = np.clip(idx, 0, cfg.bins - 1).astype(np.int64)
    else:
        idx = np.zeros(v.shape, dtype=np.int64)
    rows = idx.T
    return DiscreteCode(rows, _symbols(rows))


def _entropy_from_counts(counts):
    n = counts.sum()
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log2(p)))


def entropy_discrete(code):
    """Plug-in Shannon entropy of the code distribution, in bits."""
    sym = code.symbols if isinstance(code, DiscreteCode) else np.asarray(code)
    if sym.size == 0:
        raise InputDomainError("entropy of an empty code")
    return _entropy_from_counts(np.unique(sym, return_counts=True)[1])


def mi_xt(code, deterministic=True):
    """I(X;T) in bits.

    For a deterministic encoder applied once to each distinct input,
    H(T|X) = 0 and the estimate is H(T). Otherwise H(T|X) is computed with the
    sample index standing in for X.
    """
    h_t = entropy_discrete(code)
    if deterministic:
        return h_t
    # H(T|X) = H(X,T) - H(X)
    sym = code.symbols
    joint = np.stack([np.arange(sym.size), sym], axis=1)
    h_xt = _entropy_from_counts(np.unique(joint, axis=0, return_counts=True)[1])
    h_x = math.log2(sym.size)
    return h_t - (h_xt - h_x)


def mi_ty(code, labels):
    """I(T;Y) = H(T) - sum_y p(y) H(T | Y=y), in bits."""
    sym = code.symbols
    labels = np.asarray(labels)
    if labels.shape != sym.shape:
        raise InputDomainError(f"{labels.size} labels for {sym.size} codes")
    h_t = _entropy_from_counts(np.bincount(sym))
    h_cond = 0.0
    classes, inv = np.unique(labels, return_inverse=True)
    inv = inv.reshape(-1)
    for k in range(classes.size):
        sel = sym[inv == k]
        h_cond += sel.size / sym.size * _entropy_from_counts(np.bincount(sel))
    mi = h_t - h_cond
    if -1e-12 < mi < 0:
        mi = 0.0
    return mi


@dataclass(frozen=True)
class InfoPlanePoint:
    epoch: int
    layer: int
    mi_xt_bits: float
    mi_ty_bits: float
    seed: int | None = None


def observed_ranges(snapshots, cfg):
    """(lo, hi) per layer for the observed range modes, taken over all epochs."""
    if cfg.range_mode == "fixed":
        return {}
    per_layer = defaultdict(lambda: [math.inf, -math.inf])
    for s in snapshots:
        r = per_layer[s.layer]
        r[0] = min(r[0], float(s.values.min()))
        r[1] = max(r[1], float(s.values.max()))
    if cfg.range_mode == "global_observed":
        lo = min(r[0] for r in per_layer.values())
        hi = max(r[1] for r in per_layer.values())
        return {layer: (lo, hi) for layer in per_layer}
    return {layer: tuple(r) for layer, r in per_layer.items()}


def info_plane(snapshots, labels, cfg, seed=None, deterministic=True):
    """One information-plane point per (epoch, layer), sorted by that key."""
    labels = np.asarray(labels)
    ranges = observed_ranges(snapshots, cfg)
    points = []
    for s in snapshots:
        if s.num_samples != labels.size:
            raise InputDomainError(
                f"snapshot epoch {s.epoch} layer {s.layer} has {s.num_samples} samples, "
                f"labels have {labels.size}"
            )
        code = discretize(s, cfg, ranges.get(s.layer))
        points.append(InfoPlanePoint(s.epoch, s.layer, mi_xt(code, deterministic), mi_ty(code, labels), seed))
    points.sort(key=lambda p: (p.epoch, p.layer))
    return points


POINT_HEADER = ("epoch", "layer", "mi_xt_bits", "mi_ty_bits")


def write_points_csv(points, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(POINT_HEADER)
        for p in points:
            w.writerow([p.epoch, p.layer, repr(float(p.mi_xt_bits)), repr(float(p.mi_ty_bits))])


def read_points_csv(path):
    with open(path, newline="") as f:
        r = csv.DictReader(f)
        return [
            InfoPlanePoint(int(row["epoch"]), int(row["layer"]), float(row["mi_xt_bits"]), float(row["mi_ty_bits"]))
            for row in r
        ]
