import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_dataset, seeds
from srbfl.errors import ContractViolation, DivergenceError, UnsupportedMetricError
from srbfl.fl_core import (
    Dataset,
    LossKind,
    ModelParams,
    TrainConfig,
    aggregate,
    evaluate_accuracy,
    global_loss,
    local_gradient,
    local_loss,
    local_train,
)
from srbfl.synthetic import two_gaussians

LOSSES = [LossKind.LOGISTIC_BINARY, LossKind.SQUARED_ERROR]


def scalar_loss(w, x, y, loss):
    """Per-sample loss written out with plain floats."""
    z = sum(wi * xi for wi, xi in zip(w[:-1], x)) + w[-1]
    if loss is LossKind.SQUARED_ERROR:
        return (z - y) ** 2
    return math.log1p(math.exp(z)) - y * z if z < 30 else z - y * z + math.log1p(math.exp(-z))


def fd_gradient(params, data, loss, h=1e-6):
    w = params.weights
    g = np.empty_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (local_loss(ModelParams(w + e), data, loss) - local_loss(ModelParams(w - e), data, loss)) / (2 * h)
    return g


def test_dataset_invariants():
    with pytest.raises(ContractViolation):
        Dataset(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(ContractViolation):
        Dataset(np.zeros((3, 2)), np.zeros(2))
    d = Dataset(np.zeros((3, 2)), np.zeros(3))
    with pytest.raises(ValueError):
        d.features[0, 0] = 1.0


def test_params_must_be_finite():
    with pytest.raises(ContractViolation):
        ModelParams(np.array([1.0, np.nan]))


def test_params_bytes_roundtrip(rng):
    p = ModelParams(rng.normal(size=7))
    assert ModelParams.from_bytes(p.to_bytes()) == p


def test_zero_params_squared_zero_labels():
    d = Dataset(np.arange(12.0).reshape(4, 3), np.zeros(4))
    assert local_loss(ModelParams.zeros(4), d, LossKind.SQUARED_ERROR) == 0.0


def test_logistic_at_zero_is_n_ln2(rng):
    d = random_dataset(rng, 4, 3)
    assert local_loss(ModelParams.zeros(4), d, LossKind.LOGISTIC_BINARY) == pytest.approx(4 * math.log(2), abs=1e-12)
    assert 4 * math.log(2) == pytest.approx(2.772589, abs=1e-6)


@pytest.mark.parametrize("loss", LOSSES)
def test_local_loss_matches_scalar_oracle(rng, loss):
    d = random_dataset(rng, 25, 3, binary=loss is LossKind.LOGISTIC_BINARY)
    w = rng.normal(size=4)
    expected = sum(scalar_loss(w, x, y, loss) for x, y in zip(d.features.tolist(), d.labels.tolist()))
    assert local_loss(ModelParams(w), d, loss) == pytest.approx(expected, rel=1e-12)


def test_single_sample_squared():
    d = Dataset(np.array([[1.5, -2.0]]), np.array([0.25]))
    w = np.array([0.3, 0.7, -0.1])
    p = 0.3 * 1.5 + 0.7 * -2.0 - 0.1
    assert local_loss(ModelParams(w), d, LossKind.SQUARED_ERROR) == pytest.approx((p - 0.25) ** 2, rel=1e-14)


def test_dimension_mismatch():
    d = Dataset(np.zeros((3, 2)), np.zeros(3))
    for fn in (local_loss, local_gradient):
        with pytest.raises(ContractViolation):
            fn(ModelParams.zeros(2), d, LossKind.SQUARED_ERROR)


def test_global_loss_single_device(rng):
    d = random_dataset(rng, 17, 2)
    p = ModelParams(rng.normal(size=3))
    assert global_loss(p, [d], LossKind.LOGISTIC_BINARY) == pytest.approx(
        local_loss(p, d, LossKind.LOGISTIC_BINARY) / 17, rel=1e-15
    )


def test_global_loss_duplicate_datasets(rng):
    d = random_dataset(rng, 9, 2)
    p = ModelParams(rng.normal(size=3))
    assert global_loss(p, [d, d], LossKind.SQUARED_ERROR) == pytest.approx(
        global_loss(p, [d], LossKind.SQUARED_ERROR), rel=1e-14
    )


def test_global_loss_empty():
    with pytest.raises(ContractViolation):
        global_loss(ModelParams.zeros(2), [], LossKind.SQUARED_ERROR)


@given(seed=seeds, parts=st.integers(1, 8), loss=st.sampled_from(LOSSES))
def test_global_loss_pooled_oracle(seed, parts, loss):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(parts, 80))
    pooled = random_dataset(rng, n, 3, binary=loss is LossKind.LOGISTIC_BINARY)
    cuts = np.sort(rng.choice(np.arange(1, n), size=parts - 1, replace=False)) if parts > 1 else []
    pieces = [
        Dataset(x, y) for x, y in zip(np.split(pooled.features, cuts), np.split(pooled.labels, cuts))
    ]
    p = ModelParams(rng.normal(size=4))
    w = p.weights
    oracle = sum(scalar_loss(w, x, y, loss) for x, y in zip(pooled.features.tolist(), pooled.labels.tolist())) / n
    assert global_loss(p, pieces, loss) == pytest.approx(oracle, rel=1e-9)


@given(seed=seeds, loss=st.sampled_from(LOSSES))
def test_gradient_matches_finite_differences(seed, loss):
    rng = np.random.default_rng(seed)
    d = random_dataset(rng, int(rng.integers(1, 20)), int(rng.integers(1, 5)), binary=loss is LossKind.LOGISTIC_BINARY)
    p = ModelParams(rng.normal(size=d.dim + 1))
    g = local_gradient(p, d, loss)
    fd = fd_gradient(p, d, loss)
    err = np.abs(g - fd)
    denom = np.maximum(np.abs(g), np.abs(fd))
    assert np.all((err <= 1e-5 * denom) | (err <= 1e-9))


def test_gradient_zero_at_interpolation():
    x = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]])
    w = np.array([0.5, -1.5, 2.0])
    d = Dataset(x, x @ w[:-1] + w[-1])
    np.testing.assert_allclose(local_gradient(ModelParams(w), d, LossKind.SQUARED_ERROR), 0.0, atol=1e-12)


@pytest.mark.parametrize("loss", LOSSES)
def test_gradient_doubles_with_duplicated_data(rng, loss):
    d = random_dataset(rng, 11, 3, binary=loss is LossKind.LOGISTIC_BINARY)
    p = ModelParams(rng.normal(size=4))
    np.testing.assert_allclose(
        local_gradient(p, Dataset.concat([d, d]), loss), 2 * local_gradient(p, d, loss), rtol=1e-12
    )


def test_train_config_rejects_bad_values():
    with pytest.raises(ContractViolation):
        TrainConfig(step_size=0.0)
    with pytest.raises(ContractViolation):
        TrainConfig(epochs=0)


@pytest.mark.parametrize("loss", LOSSES)
def test_small_step_descends(rng, loss):
    d = random_dataset(rng, 40, 3, binary=loss is LossKind.LOGISTIC_BINARY)
    start = ModelParams(rng.normal(size=4))
    end = local_train(start, d, TrainConfig(step_size=1e-3, epochs=10, loss=loss))
    assert local_loss(end, d, loss) <= local_loss(start, d, loss)


def test_fixed_point_at_squared_optimum(rng):
    d = random_dataset(rng, 30, 3, binary=False)
    design = np.hstack([d.features, np.ones((30, 1))])
    w_star, *_ = np.linalg.lstsq(design, d.labels, rcond=None)
    start = ModelParams(w_star)
    out = local_train(start, d, TrainConfig(step_size=0.01, epochs=20, loss=LossKind.SQUARED_ERROR))
    np.testing.assert_allclose(out.weights, w_star, atol=1e-12, rtol=0)


def test_logistic_training_separates_two_clusters():
    d = two_gaussians(seed=3, n=200, dim=2, separation=4.0)
    out = local_train(ModelParams.zeros(3), d, TrainConfig(step_size=0.5, epochs=200))
    assert evaluate_accuracy(out, d) >= 0.95


def test_training_is_deterministic(rng):
    d = random_dataset(rng, 50, 3)
    cfg = TrainConfig(step_size=0.3, epochs=25)
    a = local_train(ModelParams.zeros(4), d, cfg)
    b = local_train(ModelParams.zeros(4), d, cfg)
    assert a.weights.tobytes() == b.weights.tobytes()


def test_divergence_names_epoch():
    x = np.array([[1e3], [-1e3]])
    d = Dataset(x, np.array([1.0, -1.0]))
    with pytest.raises(DivergenceError) as exc:
        local_train(ModelParams.zeros(2), d, TrainConfig(step_size=10.0, epochs=500, loss=LossKind.SQUARED_ERROR))
    assert exc.value.epoch > 1
    assert "epoch" in str(exc.value)


def test_aggregate_examples():
    w = ModelParams(np.array([3.0, -1.0]))
    assert aggregate([(w, 5), (w, 2)]) == w
    mid = aggregate([(ModelParams(np.array([0.0, 2.0])), 10), (ModelParams(np.array([2.0, 0.0])), 10)])
    np.testing.assert_array_equal(mid.weights, [1.0, 1.0])
    with pytest.raises(ContractViolation):
        aggregate([])
    with pytest.raises(ContractViolation):
        aggregate([(w, 0)])


@given(seed=seeds, k=st.integers(1, 10))
def test_aggregate_matches_coordinatewise_oracle_and_is_permutation_invariant(seed, k):
    rng = np.random.default_rng(seed)
    ws = [rng.normal(size=3) for _ in range(k)]
    counts = [int(c) for c in rng.integers(1, 100, size=k)]
    total = sum(counts)
    oracle = [sum(c * w[i] for w, c in zip(ws, counts)) / total for i in range(3)]
    ups = [(ModelParams(w), c) for w, c in zip(ws, counts)]
    got = aggregate(ups)
    np.testing.assert_allclose(got.weights, oracle, rtol=1e-12, atol=1e-12)
    perm = rng.permutation(k)
    np.testing.assert_allclose(aggregate([ups[i] for i in perm]).weights, got.weights, rtol=1e-12, atol=1e-15)


def test_accuracy_examples(rng):
    d = two_gaussians(seed=1, n=100, dim=2, separation=8.0)
    perfect = local_train(ModelParams.zeros(3), d, TrainConfig(step_size=0.5, epochs=300))
    assert evaluate_accuracy(perfect, d) == 1.0
    assert evaluate_accuracy(perfect, d.with_labels(1 - d.labels)) == 0.0
    with pytest.raises(UnsupportedMetricError):
        evaluate_accuracy(perfect, d, LossKind.SQUARED_ERROR)


@given(seed=seeds)
def test_accuracy_matches_counting_oracle(seed):
    rng = np.random.default_rng(seed)
    d = random_dataset(rng, 30, 2)
    w = rng.normal(size=3)
    hits = 0
    for x, y in zip(d.features.tolist(), d.labels.tolist()):
        z = w[0] * x[0] + w[1] * x[1] + w[2]
        hits += (1.0 if z >= 0 else 0.0) == y
    assert evaluate_accuracy(ModelParams(w), d) == hits / 30


@given(seed=seeds, loss=st.sampled_from(LOSSES))
def test_losses_non_negative(seed, loss):
    rng = np.random.default_rng(seed)
    d = random_dataset(rng, 20, 3, binary=loss is LossKind.LOGISTIC_BINARY, scale=10.0)
    p = ModelParams(rng.normal(scale=10.0, size=4))
    assert local_loss(p, d, loss) >= 0
    assert global_loss(p, [d, d], loss) >= 0
