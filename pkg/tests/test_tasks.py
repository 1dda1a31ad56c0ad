from dataclasses import replace

import numpy as np
import pytest

from strucgrad import losses
from strucgrad.data import MLCDataset, SeqDataset, SeqExample
from strucgrad.gradcheck import check_gradients
from strucgrad.tasks import MLCTask, QuadraticTask, SeqTask, task_from_description
from strucgrad.tensor import ParamVector


@pytest.fixture
def mlc(rng):
    task = MLCTask.build(5, 4, infer_hidden=(6,), feature_dim=3, global_hidden=4)
    X = rng.standard_normal((8, 5))
    Y = (rng.random((8, 4)) < 0.5).astype(float)
    data = MLCDataset.from_arrays(X, Y)
    theta, phi = task.init_params(np.random.default_rng(1), np.random.default_rng(2))
    return task, data, theta, phi


@pytest.fixture
def seq(rng):
    task = SeqTask.build(9, 3, embed_dim=3, infer_hidden=(4,), feature_dim=3)
    exs = [SeqExample(rng.integers(2, 9, n), rng.integers(0, 3, n)) for n in (4, 2, 5)]
    data = SeqDataset(exs, {str(i): i for i in range(9)}, {str(i): i for i in range(3)})
    theta, phi = task.init_params(np.random.default_rng(1), np.random.default_rng(2))
    return task, data, theta, phi


def test_aux_with_zero_lambda_is_mbce(mlc):
    task, data, theta, phi = mlc
    b = task.make_batch(data, np.arange(8))
    assert task.aux_fn(0.0)(theta, phi, b) == task.mle_fn()(theta, phi, b)


def test_aux_with_zero_energy_is_mbce(mlc):
    task, data, theta, _ = mlc
    b = task.make_batch(data, np.arange(8))
    zero = ParamVector(task.phi_layout)
    assert task.aux_fn(3.0)(theta, zero, b) == pytest.approx(task.mle_fn()(theta, zero, b), abs=1e-15)


def test_aux_is_mbce_plus_weighted_energy(mlc):
    task, data, theta, phi = mlc
    b = task.make_batch(data, np.arange(8))
    yhat = task.predict_proba(theta, data)
    mb = np.mean([losses.mbce(y, p) for y, p in zip(data.Y, yhat)])
    energy = task.energy.energy(phi.unflatten(), data.X, yhat).value.mean()
    assert task.aux_fn(1.0)(theta, phi, b) == pytest.approx(mb + energy, abs=1e-12)


def test_negative_lambda_is_rejected(mlc):
    with pytest.raises(ValueError):
        mlc[0].aux_fn(-1.0)


def test_unknown_primary_loss(mlc):
    with pytest.raises(ValueError):
        mlc[0].prim_fn("dvn")


def test_ssvm_prim_zero_energy_is_soft_cost(mlc):
    task, data, theta, _ = mlc
    b = task.make_batch(data, np.arange(8))
    zero = ParamVector(task.phi_layout)
    yhat = task.predict_proba(theta, data)
    cost = losses.soft_f1_cost(yhat, data.Y).value.mean()
    assert task.prim_fn("ssvm")(theta, zero, b) == pytest.approx(cost)


def test_cd_prim_needs_negatives(mlc):
    task, data, theta, phi = mlc
    with pytest.raises(ValueError, match="negative"):
        task.prim_fn("cd")(theta, phi, task.make_batch(data, np.arange(3)))


def test_cd_prim_with_zero_energy_and_zero_cost_is_log_k_plus_one(mlc):
    task, data, theta, _ = mlc
    b = task.make_batch(data, np.arange(8))
    b = replace(b, negatives=np.repeat(b.Y[:, None, :], 4, axis=1))
    zero = ParamVector(task.phi_layout)
    assert task.prim_fn("cd")(theta, zero, b) == pytest.approx(np.log(5))


def test_cd_prim_without_relaxed_negative_ignores_theta(mlc):
    task, data, theta, phi = mlc
    b = task.with_negatives(theta, task.make_batch(data, np.arange(8)), 3, np.random.default_rng(0))
    g = task.prim_fn("cd").value_and_grad(theta, phi, b)[1]["theta"]
    assert not g.any()


def test_with_negatives_requires_k(mlc):
    task, data, theta, _ = mlc
    with pytest.raises(ValueError, match="at least one negative"):
        task.with_negatives(theta, task.make_batch(data, [0]), 0, np.random.default_rng(0))


def test_seq_aux_zero_lambda_is_nll(seq):
    task, data, theta, phi = seq
    b = task.make_batch(data, [0, 1, 2])
    assert task.aux_fn(0.0)(theta, phi, b) == task.mle_fn()(theta, phi, b)


def test_seq_cd_negatives_are_one_hot(seq):
    task, data, theta, _ = seq
    b = task.with_negatives(theta, task.make_batch(data, [0, 1]), 4, np.random.default_rng(0))
    for negs, toks in zip(b.negatives, b.tokens):
        assert negs.shape == (4, len(toks), 3) and np.all(negs.sum(-1) == 1)


def test_check_data_dimension_mismatch(mlc):
    task = mlc[0]
    with pytest.raises(ValueError):
        task.check_data(MLCDataset.from_arrays(np.zeros((2, 3)), np.zeros((2, 4))))


def test_evaluate_keys(mlc, seq):
    assert set(mlc[0].evaluate(mlc[2], mlc[1])) == {"example_f1", "micro_f1", "macro_f1"}
    assert set(seq[0].evaluate(seq[2], seq[1])) == {"token_accuracy"}


def test_describe_round_trip(mlc, seq):
    for task in (mlc[0], seq[0]):
        again = task_from_description(task.describe())
        assert again.theta_layout == task.theta_layout and again.phi_layout == task.phi_layout


def test_quadratic_task_closed_form():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    task = QuadraticTask(M)
    theta, phi = task.init_params(None, None)
    assert task.aux_fn()(ParamVector(task.theta_layout, [3.0, 7.0]), phi, None) == 0.0
    assert task.prim_fn()(ParamVector(task.theta_layout, [3.0, 7.0]), phi, None) == 29.0


def test_every_shipped_objective_passes_the_gradient_contract():
    results = check_gradients(np.random.default_rng(7), points=10, tolerance=1e-4)
    assert len(results) == 10
    for r in results:
        assert r.passed, r.line()
