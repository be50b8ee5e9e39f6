"""Small fully-connected classifier trained by minibatch SGD, with activation tracing.

Samples are rows inside this module (``batch x features``); hidden-layer
snapshots are transposed to ``units x samples`` when recorded.
"""

import json
import math
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ibmcr.errors import InputDomainError, TrainingDivergedError
from ibmcr.mi_est import ActivationSnapshot
from ibmcr.rates import read_features_bin, write_features_bin

ACTIVATIONS = ("tanh", "relu", "linear")


@dataclass
class MLPConfig:
    input_dim: int
    hidden_widths: list
    activation: str = "tanh"
    num_classes: int = 2
    seed: int = 0
    learning_rate: float = 0.1
    batch_size: int = 256
    epochs: int = 8000
    momentum: float = 0.0  # 0 means plain SGD

    def validate(self):
        if self.input_dim < 1:
            raise InputDomainError("input_dim must be positive")
        if not self.hidden_widths or any(w < 1 for w in self.hidden_widths):
            raise InputDomainError("hidden_widths must be a nonempty list of positive ints")
        if self.activation not in ACTIVATIONS:
            raise InputDomainError(f"activation must be one of {ACTIVATIONS}")
        if self.num_classes < 1:
            raise InputDomainError("num_classes must be positive")
        if not 0 <= self.seed < 2**64:
            raise InputDomainError("seed must be a 64-bit unsigned integer")
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 0:
            raise InputDomainError("learning_rate >= 0, batch_size >= 1 and epochs >= 0 required")
        if not 0.0 <= self.momentum < 1.0:
            raise InputDomainError("momentum must be in [0, 1)")
        return self

    @property
    def layer_sizes(self):
        return [self.input_dim, *self.hidden_widths, self.num_classes]


def _act(kind, a):
    if kind == "tanh":
        return np.tanh(a)
    if kind == "relu":
        return np.maximum(a, 0.0)
    return a


def _act_grad(kind, a, h):
    # derivative w.r.t. pre-activation a, given h = act(a)
    if kind == "tanh":
        return 1.0 - h * h
    if kind == "relu":
        return (a > 0).astype(a.dtype)
    return np.ones_like(a)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class MLP:
    weights: list  # (fan_in, fan_out) each
    biases: list
    activation: str

    @property
    def num_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self):
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def checksum(self):
        crc = 0
        for p in self.params():
            crc = zlib.crc32(np.ascontiguousarray(p, dtype="<f8").tobytes(), crc)
        return crc

    def copy(self):
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)


def init(cfg):
    """Glorot-uniform weights from ``cfg.seed``, zero biases."""
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    weights, biases = [], []
    sizes = cfg.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLP(weights, biases, cfg.activation)


def forward(model, X, keep_preact=False):
    """Return (hidden activations per layer, class probabilities) for rows of X.

    With ``keep_preact`` the pre-activations are returned as a third element.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.weights[0].shape[0]:
        raise InputDomainError(
            f"batch must be (n, {model.weights[0].shape[0]}), got {X.shape}"
        )
    h = X
    hidden, pre = [], []
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        a = h @ W + b
        h = _act(model.activation, a)
        pre.append(a)
        hidden.append(h)
    probs = softmax(h @ model.weights[-1] + model.biases[-1])
    if keep_preact:
        return hidden, probs, pre
    return hidden, probs


def cross_entropy(probs, y):
    p = probs[np.arange(y.size), y]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


def loss_and_grads(model, X, y):
    """Mean cross-entropy and its gradient for each parameter (same order as ``params()``)."""
    hidden, probs, pre = forward(model, X, keep_preact=True)
    n = y.size
    loss = cross_entropy(probs, y)
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    inputs = [X, *hidden]
    grads = [None] * (2 * len(model.weights))
    for i in range(len(model.weights) - 1, -1, -1):
        grads[2 * i] = inputs[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * _act_grad(model.activation, pre[i - 1], hidden[i - 1])
    return loss, grads


def gradient_check(model, X, y, step=1e-5, floor=1e-6):
    """Max relative error between backprop and central finite differences.

    Relative error per parameter is |g - fd| / max(|g|, |fd|, floor).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _, grads = loss_and_grads(model, X, y)
    worst = 0.0
    for p, g in zip(model.params(), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = cross_entropy(forward(model, X)[1], y)
            flat[k] = orig - step
            down = cross_entropy(forward(model, X)[1], y)
            flat[k] = orig
            fd = (up - down) / (2 * step)
            err = abs(gflat[k] - fd) / max(abs(gflat[k]), abs(fd), floor)
            worst = max(worst, err)
    return worst


def geometric_schedule(epochs, points=60):
    """{0} and round(r**k) spanning [1, epochs] with about ``points`` values, deduplicated."""
    if epochs <= 0:
        return [0]
    if points < 2:
        return [0, epochs]
    r = epochs ** (1.0 / (points - 1))
    sched = {0, epochs}
    sched.update(int(round(r**k)) for k in range(points))
    return sorted(e for e in sched if 0 <= e <= epochs)


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float


@dataclass
class TrainTrace:
    logged_epochs: list = field(default_factory=list)
    metrics: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # ActivationSnapshot
    activation: str = "tanh"

    def snapshots_at(self, epoch):
        return [s for s in self.snapshots if s.epoch == epoch]


def _accuracy(model, X, y):
    if y.size == 0:
        return float("nan")
    return float(np.mean(forward(model, X)[1].argmax(axis=1) == y))


def train(model, train_set, cfg, log_epochs, eval_set=None, test_set=None, progress=None):
    """Minibatch SGD on mean cross-entropy, recording hidden activations on ``eval_set``.

    Datasets are :class:`ibmcr.data.Dataset` (features D x M). Epoch e in
    ``log_epochs`` is recorded after e full passes; epoch 0 is the initial model.
    """
    cfg.validate()
    eval_set = eval_set if eval_set is not None else train_set
    X, y = train_set.features.T.copy(), train_set.labels
    Xe = eval_set.features.T.copy()
    Xt = test_set.features.T.copy() if test_set is not None else np.empty((0, X.shape[1]))
    yt = test_set.labels if test_set is not None else np.empty(0, dtype=np.int64)
    if cfg.batch_size > y.size:
        raise InputDomainError(f"batch_size {cfg.batch_size} exceeds training set size {y.size}")
    log_epochs = sorted(set(int(e) for e in log_epochs))
    if log_epochs and (log_epochs[0] < 0 or log_epochs[-1] > cfg.epochs):
        raise InputDomainError(f"log epochs must lie in [0, {cfg.epochs}]")
    to_log = set(log_epochs)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    velocity = [np.zeros_like(p) for p in model.params()]
    trace = TrainTrace(activation=model.activation)

    def record(epoch):
        hidden, probs = forward(model, Xe)
        _, train_probs = forward(model, X)
        trace.logged_epochs.append(epoch)
        trace.metrics.append(EpochMetrics(
            epoch,
            cross_entropy(train_probs, y),
            float(np.mean(train_probs.argmax(axis=1) == y)),
            _accuracy(model, Xt, yt),
        ))
        for layer, h in enumerate(hidden):
            trace.snapshots.append(ActivationSnapshot(epoch, layer, h.T.copy(), model.activation))
        if progress:
            progress(trace.metrics[-1])

    if 0 in to_log:
        record(0)
    n = y.size
    lr, mu = cfg.learning_rate, cfg.momentum
    params = model.params()
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(model, X[idx], y[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"loss is {loss} at epoch {epoch}, batch {bi}")
            if mu:
                for p, g, v in zip(params, grads, velocity):
                    v *= mu
                    v -= lr * g
                    p += v
            else:
                for p, g in zip(params, grads):
                    p -= lr * g
        if epoch in to_log:
            record(epoch)
    return trace


# -- trace files ---------------------------------------------------------------


def write_metrics_csv(trace, path):
    lines = ["epoch,loss,train_acc,test_acc"]
    for m in trace.metrics:
        lines.append(f"{m.epoch},{float(m.loss)!r},{float(m.train_acc)!r},{float(m.test_acc)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_trace(directory, trace, cfg, dataset_checksum, extra=None):
    """Write ``meta.json``, ``metrics.csv`` and one ``e{epoch}_l{layer}.bin`` per snapshot."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "config": asdict(cfg),
        "logged_epochs": trace.logged_epochs,
        "activation": trace.activation,
        "num_hidden_layers": len(cfg.hidden_widths),
        "dataset_checksum": dataset_checksum,
    }
    if extra:
        meta.update(extra)
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    write_metrics_csv(trace, d / "metrics.csv")
    for s in trace.snapshots:
        write_features_bin(d / f"e{s.epoch}_l{s.layer}.bin", s.values)


def read_trace(directory):
    """Load (meta, TrainTrace) from a directory written by :func:`write_trace`."""
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    trace = TrainTrace(activation=meta["activation"])
    trace.logged_epochs = list(meta["logged_epochs"])
    for line in (d / "metrics.csv").read_text().splitlines()[1:]:
        e, loss, tr, te = line.split(",")
        trace.metrics.append(EpochMetrics(int(e), float(loss), float(tr), float(te)))
    for e in trace.logged_epochs:
        for layer in range(meta["num_hidden_layers"]):
            values = read_features_bin(d / f"e{e}_l{layer}.bin")
            trace.snapshots.append(ActivationSnapshot(e, layer, values, trace.activation))
    return meta, trace
