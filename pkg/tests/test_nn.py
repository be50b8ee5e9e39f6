import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import kink_free_batch
from ibmcr.data import Dataset, gen_szt
from ibmcr.errors import InputDomainError, TrainingDivergedError
from ibmcr.nn import (
    MLP,
    MLPConfig,
    forward,
    geometric_schedule,
    gradient_check,
    init,
    loss_and_grads,
    read_trace,
    softmax,
    train,
    write_trace,
)


def toy_data(seed=0, m=32, dim=4, k=2):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((dim, m))
    y = np.concatenate([np.arange(k), rng.integers(0, k, m - k)])
    return Dataset(X, y, k, "toy")


def test_init_deterministic():
    cfg = MLPConfig(4, [5, 3], seed=9)
    assert init(cfg).checksum() == init(cfg).checksum()
    assert init(cfg).checksum() != init(MLPConfig(4, [5, 3], seed=10)).checksum()


def test_param_count():
    assert init(MLPConfig(2, [3], num_classes=2)).num_params == 17


def test_init_distribution():
    model = init(MLPConfig(300, [200], seed=1))
    W = model.weights[0]
    limit = math.sqrt(6 / 500)
    assert np.abs(W).max() <= limit
    sd = limit / math.sqrt(3) / math.sqrt(W.size)
    assert abs(W.mean()) < 3 * sd
    assert all(np.all(b == 0) for b in model.biases)


def test_config_validation():
    for bad in (MLPConfig(0, [3]), MLPConfig(2, []), MLPConfig(2, [3], activation="sigmoid"),
                MLPConfig(2, [3], momentum=1.0), MLPConfig(2, [3], learning_rate=-1)):
        with pytest.raises(InputDomainError):
            bad.validate()


def test_zero_model_is_uniform():
    model = init(MLPConfig(3, [4]))
    for p in model.params():
        p[...] = 0
    _, probs = forward(model, np.ones((5, 3)))
    np.testing.assert_allclose(probs, 0.5)


def test_linear_identity_layer():
    model = MLP([np.eye(3), np.ones((3, 2))], [np.zeros(3), np.zeros(2)], "linear")
    X = np.random.default_rng(0).standard_normal((6, 3))
    hidden, _ = forward(model, X)
    np.testing.assert_array_equal(hidden[0], X)


def test_forward_scripted_oracle():
    model = init(MLPConfig(3, [4, 2], "tanh", num_classes=3, seed=4))
    x = np.array([[0.3, -1.2, 2.0]])
    W, b = model.weights, model.biases
    h1 = [math.tanh(sum(x[0, i] * W[0][i, j] for i in range(3)) + b[0][j]) for j in range(4)]
    h2 = [math.tanh(sum(h1[i] * W[1][i, j] for i in range(4)) + b[1][j]) for j in range(2)]
    logits = [sum(h2[i] * W[2][i, j] for i in range(2)) + b[2][j] for j in range(3)]
    z = sum(math.exp(v) for v in logits)
    hidden, probs = forward(model, x)
    np.testing.assert_allclose(hidden[1][0], h2, rtol=1e-12)
    np.testing.assert_allclose(probs[0], [math.exp(v) / z for v in logits], rtol=1e-12)


def test_forward_dimension_mismatch():
    with pytest.raises(InputDomainError):
        forward(init(MLPConfig(3, [2])), np.ones((2, 4)))


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_softmax_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((5, 4)) * rng.choice([1, 100, 1e4])
    np.testing.assert_allclose(softmax(logits).sum(axis=1), 1.0, atol=1e-12)


def test_epochs_zero_logs_initial_only():
    ds = toy_data()
    cfg = MLPConfig(4, [3, 2], epochs=0, batch_size=8)
    trace = train(init(cfg), ds, cfg, [0])
    assert trace.logged_epochs == [0]
    assert [s.layer for s in trace.snapshots] == [0, 1]
    assert trace.snapshots[0].values.shape == (3, 32)


def test_zero_learning_rate_keeps_loss():
    ds = toy_data()
    cfg = MLPConfig(4, [3], learning_rate=0.0, epochs=5, batch_size=8)
    trace = train(init(cfg), ds, cfg, range(6))
    losses = [m.loss for m in trace.metrics]
    assert max(losses) - min(losses) <= 1e-12


def test_tiny_model_gradient():
    # all-zero weights, so only the output biases carry gradient
    model = MLP([np.zeros((1, 1)), np.zeros((1, 2))], [np.zeros(1), np.array([0.3, -0.1])], "tanh")
    assert gradient_check(model, np.zeros((1, 1)), np.array([1])) <= 1e-7


def test_gradient_check_tanh():
    model = init(MLPConfig(4, [3], "tanh", seed=2))
    for p in model.params():
        p += np.random.default_rng(0).normal(0, 0.1, p.shape)
    X = np.random.default_rng(1).standard_normal((6, 4))
    assert gradient_check(model, X, np.array([0, 1, 1, 0, 1, 0])) <= 1e-4


def test_gradient_check_relu_away_from_kinks():
    rng = np.random.default_rng(3)
    model = init(MLPConfig(5, [6, 4], "relu", num_classes=3, seed=3))
    X = kink_free_batch(model, rng, 10)
    _, _, pre = forward(model, X, keep_preact=True)
    assert min(np.abs(a).min() for a in pre) > 1e-3
    assert gradient_check(model, X, rng.integers(0, 3, 10)) <= 1e-4


def test_loss_decreases_on_repeated_batch():
    ds = toy_data(m=16)
    X, y = ds.features.T, ds.labels
    model = init(MLPConfig(4, [5, 3], seed=1))
    prev = math.inf
    for _ in range(10):
        loss, grads = loss_and_grads(model, X, y)
        assert loss <= prev + 1e-9
        prev = loss
        for p, g in zip(model.params(), grads):
            p -= 0.01 * g


def test_divergence_reports_epoch():
    ds = toy_data()
    cfg = MLPConfig(4, [3], "linear", learning_rate=1e200, epochs=3, batch_size=8)
    with pytest.raises(TrainingDivergedError, match="epoch 1, batch"):
        with np.errstate(all="ignore"):
            train(init(cfg), ds, cfg, [])


def test_geometric_schedule():
    s = geometric_schedule(8000)
    assert s[0] == 0 and s[-1] == 8000
    assert 45 <= len(s) <= 62
    assert s == sorted(set(s))
    ratios = [b / a for a, b in zip(s[20:], s[21:])]
    assert max(ratios) / min(ratios) < 1.2
    assert geometric_schedule(0) == [0]


def test_trace_files_are_deterministic(tmp_path):
    ds = toy_data()
    cfg = MLPConfig(4, [3, 2], epochs=4, batch_size=5, seed=7)
    blobs = []
    for run in ("a", "b"):
        trace = train(init(cfg), ds, cfg, [0, 2, 4])
        write_trace(tmp_path / run, trace, cfg, ds.checksum)
        blobs.append({p.name: p.read_bytes() for p in sorted((tmp_path / run).iterdir())})
    assert blobs[0] == blobs[1]
    meta, back = read_trace(tmp_path / "a")
    assert meta["dataset_checksum"] == ds.checksum
    assert back.logged_epochs == [0, 2, 4]
    np.testing.assert_array_equal(back.snapshots[-1].values, trace.snapshots[-1].values)


def test_partial_batch_is_used():
    # 10 samples, batch 4: one epoch is three steps of sizes 4, 4, 2
    ds = toy_data(m=10)
    cfg = MLPConfig(4, [3], epochs=1, batch_size=4, learning_rate=0.3, seed=2)
    model = init(cfg)
    manual = model.copy()
    train(model, ds, cfg, [])
    perm = np.random.default_rng(np.random.SeedSequence([2, 1])).permutation(10)
    X, y = ds.features.T, ds.labels
    for idx in (perm[:4], perm[4:8], perm[8:]):
        _, grads = loss_and_grads(manual, X[idx], y[idx])
        for p, g in zip(manual.params(), grads):
            p -= 0.3 * g
    for a, b in zip(model.params(), manual.params()):
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)


@pytest.mark.slow
def test_szt_net_beats_majority_baseline():
    ds = gen_szt()
    cfg = MLPConfig(12, [10, 7, 5, 3], "tanh", 2, seed=0, learning_rate=0.1, batch_size=256, epochs=3000)
    trace = train(init(cfg), ds, cfg, [3000])
    baseline = np.bincount(ds.labels).max() / ds.labels.size
    assert trace.metrics[-1].train_acc > baseline + 0.05
