"""Experiment configuration and the train -> trace -> information-plane pipeline."""

import copy
import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from ibmcr import data as data_mod
from ibmcr.errors import ConfigError
from ibmcr.mi_est import RANGE_MODES, BinningConfig, InfoPlanePoint, info_plane
from ibmcr.nn import ACTIVATIONS, MLPConfig, geometric_schedule, init, read_trace, train, write_trace

OUTPUT_ROOT_ENV = "IBMCR_OUTPUT_ROOT"
MNIST_DIR_ENV = "IBMCR_MNIST_DIR"
COMPRESSION_THRESHOLD_BITS = 0.5


@dataclass
class DatasetSpec:
    kind: str = "szt"  # szt | mnist | csv
    noise_seed: int = 0
    gamma: float | None = None
    images: str | None = None
    labels: str | None = None
    csv: str | None = None
    num_classes: int | None = None
    subsample: int | None = None
    subsample_seed: int = 0
    train_fraction: float = 0.8
    split_seed: int = 0


@dataclass
class ModelSpec:
    hidden_widths: list = field(default_factory=lambda: [12, 10, 7, 5, 4, 3, 2])
    activation: str = "tanh"
    learning_rate: float = 0.1
    batch_size: int = 256
    epochs: int = 8000
    momentum: float = 0.0
    log_points: int = 60


@dataclass
class BinningSpec:
    bins: int = 30
    range_mode: str | None = None  # None: fixed(-1,1) for tanh, per_layer_observed otherwise
    lo: float = -1.0
    hi: float = 1.0

    def resolve(self, activation):
        if self.range_mode is None:
            return BinningConfig.for_activation(activation, self.bins)
        return BinningConfig(self.bins, self.range_mode, self.lo, self.hi)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    binning: BinningSpec = field(default_factory=BinningSpec)
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    eps: float = 0.5
    betas: list = field(default_factory=lambda: [0.5, 1, 2, 10, 100, 1000, 10000])
    output: str | None = None

    def validate(self):
        ds, m, b = self.dataset, self.model, self.binning
        if ds.kind not in ("szt", "mnist", "csv"):
            raise ConfigError("dataset.kind", f"must be szt, mnist or csv, got {ds.kind!r}")
        if ds.kind == "mnist" and not (ds.images and ds.labels):
            raise ConfigError("dataset.images", "mnist needs dataset.images and dataset.labels paths")
        if ds.kind == "csv":
            if not ds.csv:
                raise ConfigError("dataset.csv", "csv dataset needs a path")
            if not ds.num_classes or ds.num_classes < 1:
                raise ConfigError("dataset.num_classes", "csv dataset needs a positive class count")
        if ds.subsample is not None and ds.subsample < 1:
            raise ConfigError("dataset.subsample", "must be a positive sample count")
        if not 0.0 < ds.train_fraction <= 1.0:
            raise ConfigError("dataset.train_fraction", "must be in (0, 1]")
        if not m.hidden_widths or any(not isinstance(w, int) or w < 1 for w in m.hidden_widths):
            raise ConfigError("model.hidden_widths", "must be a nonempty list of positive integers")
        if m.activation not in ACTIVATIONS:
            raise ConfigError("model.activation", f"must be one of {ACTIVATIONS}")
        if not m.learning_rate >= 0:
            raise ConfigError("model.learning_rate", "must be nonnegative")
        if m.batch_size < 1:
            raise ConfigError("model.batch_size", "must be positive")
        if m.epochs < 0:
            raise ConfigError("model.epochs", "must be nonnegative")
        if not 0.0 <= m.momentum < 1.0:
            raise ConfigError("model.momentum", "must be in [0, 1)")
        if m.log_points < 2:
            raise ConfigError("model.log_points", "must be at least 2")
        if b.bins < 2:
            raise ConfigError("binning.bins", "must be at least 2")
        if b.range_mode is not None and b.range_mode not in RANGE_MODES:
            raise ConfigError("binning.range_mode", f"must be one of {RANGE_MODES} or null")
        if b.range_mode == "fixed" and not b.lo < b.hi:
            raise ConfigError("binning.lo", "fixed range needs lo < hi")
        if not self.seeds or any(not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ConfigError("seeds", "must be a nonempty list of nonnegative integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds", "must not repeat")
        if not self.eps > 0:
            raise ConfigError("eps", "must be positive")
        if not self.betas or any(not b_ > 0 for b_ in self.betas):
            raise ConfigError("betas", "must be a nonempty list of positive numbers")
        return self

    def to_dict(self):
        return asdict(self)

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, raw):
        raw = raw or {}
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown config key")
        kw = dict(raw)
        for key, sub in (("dataset", DatasetSpec), ("model", ModelSpec), ("binning", BinningSpec)):
            if key in kw:
                kw[key] = _sub_from_dict(sub, kw[key], key)
        return cls(**kw)


def _sub_from_dict(cls, raw, prefix):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(prefix, "must be a mapping")
    known = {f.name for f in fields(cls)}
    for k in raw:
        if k not in known:
            raise ConfigError(f"{prefix}.{k}", "unknown config key")
    return cls(**raw)


def load_config(path=None, overrides=()):
    """Read a YAML config and apply ``key.sub=value`` overrides (values parsed as YAML)."""
    raw = {}
    if path:
        with open(path) as f:
            raw = yaml.safe_load(f) or {}
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config file must hold a mapping")
    raw = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, value = item.split("=", 1)
        set_dotted(raw, key.strip(), yaml.safe_load(value))
    return ExperimentConfig.from_dict(raw).validate()


def set_dotted(raw, key, value):
    parts = key.split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(key, "cannot descend into a non-mapping value")
    node[parts[-1]] = value


def output_root(cfg=None):
    if cfg is not None and cfg.output:
        return Path(cfg.output)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


# -- panels --------------------------------------------------------------------

PANELS = {
    "a": dict(hidden_widths=[10, 7, 5, 3], activation="relu"),
    "b": dict(hidden_widths=[12, 10, 7, 5, 4, 3, 2], activation="tanh"),
    "c": dict(hidden_widths=[10, 7, 5, 4, 3], activation="relu"),
    "d": dict(hidden_widths=[32, 28, 24, 20, 16, 12], activation="relu"),
}


def panel_config(panel, mnist_dir=None):
    """Default configuration for one information-plane panel."""
    if panel not in PANELS:
        raise ConfigError("panel", f"must be one of {sorted(PANELS)}")
    model = ModelSpec(**PANELS[panel])
    if panel == "d":
        mnist_dir = Path(mnist_dir or os.environ.get(MNIST_DIR_ENV, "mnist"))
        dataset = DatasetSpec(
            kind="mnist",
            images=str(_first_existing(mnist_dir, "train-images-idx3-ubyte")),
            labels=str(_first_existing(mnist_dir, "train-labels-idx1-ubyte")),
            subsample=10000,
        )
        model.learning_rate, model.batch_size, model.epochs = 0.05, 128, 2000
    else:
        dataset = DatasetSpec()
    return ExperimentConfig(name=f"panel_{panel}", dataset=dataset, model=model)


def _first_existing(directory, stem):
    for suffix in ("", ".gz"):
        p = Path(directory) / (stem + suffix)
        if p.exists():
            return p
    return Path(directory) / stem


# -- pipeline ------------------------------------------------------------------


def build_dataset(spec):
    if spec.kind == "szt":
        ds = data_mod.gen_szt(spec.gamma, spec.noise_seed)
    elif spec.kind == "mnist":
        ds = data_mod.load_mnist_idx(spec.images, spec.labels)
    else:
        ds = data_mod.import_csv(spec.csv, spec.num_classes)
    if spec.subsample is not None:
        ds = data_mod.subsample(ds, spec.subsample, spec.subsample_seed)
    return ds


def prepare_data(spec):
    """(evaluation set, train split, test split). Snapshots use the evaluation set."""
    full = build_dataset(spec)
    train_set, test_set = data_mod.split(full, spec.train_fraction, spec.split_seed)
    return full, train_set, test_set


def mlp_config(cfg, input_dim, num_classes, seed):
    m = cfg.model
    return MLPConfig(
        input_dim=input_dim,
        hidden_widths=list(m.hidden_widths),
        activation=m.activation,
        num_classes=num_classes,
        seed=seed,
        learning_rate=m.learning_rate,
        batch_size=m.batch_size,
        epochs=m.epochs,
        momentum=m.momentum,
    )


def run_training(cfg, out_dir, data=None, progress=None):
    """Train one model per seed; write trace directories ``out_dir/seed{n}``."""
    eval_set, train_set, test_set = data if data is not None else prepare_data(cfg.dataset)
    schedule = geometric_schedule(cfg.model.epochs, cfg.model.log_points)
    dirs = []
    for seed in cfg.seeds:
        mcfg = mlp_config(cfg, eval_set.dim, eval_set.num_classes, seed)
        model = init(mcfg)
        cb = (lambda m, s=seed: progress(s, m)) if progress else None
        trace = train(model, train_set, mcfg, schedule, eval_set=eval_set, test_set=test_set, progress=cb)
        d = Path(out_dir) / f"seed{seed}"
        write_trace(d, trace, mcfg, eval_set.checksum, extra={
            "experiment": cfg.to_dict(),
            "eval_labels": eval_set.labels.tolist(),
            "num_classes": eval_set.num_classes,
        })
        dirs.append(d)
    return dirs


def trace_infoplane(trace_dir, binning=None):
    """Information-plane points of one trace directory."""
    meta, trace = read_trace(trace_dir)
    spec = binning if binning is not None else BinningSpec(**meta["experiment"]["binning"])
    bcfg = spec.resolve(trace.activation) if isinstance(spec, BinningSpec) else spec
    labels = np.asarray(meta["eval_labels"], dtype=np.int64)
    return info_plane(trace.snapshots, labels, bcfg, seed=meta["config"]["seed"])


def average_points(points):
    """Seed-average of points sharing (epoch, layer); returned with seed=None."""
    groups = {}
    for p in points:
        groups.setdefault((p.epoch, p.layer), []).append(p)
    out = []
    for (epoch, layer), ps in sorted(groups.items()):
        out.append(InfoPlanePoint(
            epoch, layer,
            float(np.mean([p.mi_xt_bits for p in ps])),
            float(np.mean([p.mi_ty_bits for p in ps])),
            None,
        ))
    return out


INFOPLANE_HEADER = ("seed", "epoch", "layer", "mi_xt_bits", "mi_ty_bits")


def format_infoplane_csv(per_seed, averaged):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(INFOPLANE_HEADER)
    for p in sorted(per_seed, key=lambda p: (p.seed, p.epoch, p.layer)):
        w.writerow([p.seed, p.epoch, p.layer, repr(float(p.mi_xt_bits)), repr(float(p.mi_ty_bits))])
    for p in averaged:
        w.writerow(["mean", p.epoch, p.layer, repr(float(p.mi_xt_bits)), repr(float(p.mi_ty_bits))])
    return buf.getvalue()


def read_infoplane_csv(path):
    """Return (per-seed points, averaged points). Plain 4-column files count as averaged."""
    per_seed, averaged = [], []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            seed = row.get("seed", "mean")
            p = InfoPlanePoint(
                int(row["epoch"]), int(row["layer"]),
                float(row["mi_xt_bits"]), float(row["mi_ty_bits"]),
                None if seed in (None, "mean") else int(seed),
            )
            (averaged if p.seed is None else per_seed).append(p)
    return per_seed, averaged


def build_infoplane(trace_dirs, binning=None):
    per_seed = []
    for d in trace_dirs:
        per_seed.extend(trace_infoplane(d, binning))
    return per_seed, average_points(per_seed)


# -- phase diagnostics ---------------------------------------------------------


def curves_by_layer(points):
    layers = {}
    for p in sorted(points, key=lambda p: (p.layer, p.epoch)):
        layers.setdefault(p.layer, []).append(p)
    return layers


def compression_depth(mi_xt_series):
    """Largest drop from the running peak of I(X;T) to its final value, in bits."""
    xs = np.asarray(mi_xt_series, dtype=np.float64)
    running_peak = np.maximum.accumulate(xs)
    return float(np.max(running_peak - xs[-1]))


def phase_diagnostics(points, threshold=COMPRESSION_THRESHOLD_BITS):
    out = {}
    for layer, curve in curves_by_layer(points).items():
        xs = [p.mi_xt_bits for p in curve]
        ys = [p.mi_ty_bits for p in curve]
        depth = compression_depth(xs)
        out[layer] = {
            "compression_depth_bits": depth,
            "shows_compression": depth >= threshold,
            "mi_xt_first": xs[0],
            "mi_xt_final": xs[-1],
            "mi_ty_first": ys[0],
            "mi_ty_final": ys[-1],
            "mi_ty_gain": ys[-1] - ys[0],
            "first_epoch": curve[0].epoch,
            "final_epoch": curve[-1].epoch,
        }
    return out


def summarize(per_seed, averaged, metrics_by_seed=None):
    seeds = sorted({p.seed for p in per_seed})
    summary = {
        "averaged": {str(k): v for k, v in phase_diagnostics(averaged).items()},
        "per_seed": {
            str(s): {str(k): v for k, v in phase_diagnostics([p for p in per_seed if p.seed == s]).items()}
            for s in seeds
        },
        "compression_threshold_bits": COMPRESSION_THRESHOLD_BITS,
    }
    if metrics_by_seed:
        summary["final_metrics"] = metrics_by_seed
    return summary


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
