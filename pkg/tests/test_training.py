import numpy as np
import pytest

import rgi.training as training
from rgi.dataset import RECORD_DTYPE, GenerateConfig, RirDataset, generate_dataset, read_dataset, write_dataset
from rgi.errors import BothZero, EmptyDataset, InvalidConfig, NonFiniteGradient
from rgi.ism import SimConfig
from rgi.model import PARAM_SHAPES
from rgi.training import (
    PERMS,
    AdamState,
    TrainConfig,
    angular_loss,
    angular_loss_grad,
    decision_loss,
    decision_loss_grad,
    optimizer_step,
    pit_total_loss,
    train,
    write_history,
)


def _random_instance(rng, walls=8):
    A_gt = np.zeros((8, 4))
    A_gt[:walls] = rng.normal(size=(walls, 4))
    p_gt = np.zeros(8)
    p_gt[:walls] = 1
    return rng.normal(size=(8, 4)), rng.uniform(0.01, 0.99, size=8), A_gt, p_gt


def _naive_minimum(A_hat, p_hat, A_gt, p_gt):
    """Recompute both losses for every permuted ground truth."""
    permuted_A = A_gt[PERMS]
    permuted_p = p_gt[PERMS]
    dots = (permuted_A * A_hat[None]).sum(axis=(1, 2))
    gammas = 1 - np.abs(dots) / (np.linalg.norm(A_hat) * np.linalg.norm(A_gt) + 1e-12)
    q = np.clip(p_hat, 1e-7, 1 - 1e-7)
    betas = -(permuted_p * np.log(q) + (1 - permuted_p) * np.log(1 - q)).mean(axis=1)
    return float((gammas + 0.1 * betas).min())


def test_angular_loss_identities():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(8, 4))
    assert angular_loss(A, A) == pytest.approx(0.0, abs=1e-9)
    assert angular_loss(-A, A) == pytest.approx(0.0, abs=1e-9)
    assert angular_loss(-A, 2.0 * A) == angular_loss(A, 2.0 * A)
    e1, e2 = np.zeros((8, 4)), np.zeros((8, 4))
    e1[0, 0], e2[1, 2] = 1.0, 1.0
    assert angular_loss(e1, e2) == pytest.approx(1.0)
    with pytest.raises(BothZero):
        angular_loss(np.zeros((8, 4)), np.zeros((8, 4)))


def test_decision_loss_identities():
    p = np.array([1, 1, 1, 1, 1, 1, 0, 0], dtype=float)
    assert decision_loss(np.clip(p, 1e-7, 1 - 1e-7), p) <= 8 * -np.log(1 - 1e-7)
    assert decision_loss(np.full(8, 0.5), p) == pytest.approx(np.log(2))
    rng = np.random.default_rng(1)
    q = rng.uniform(size=8)
    perm = rng.permutation(8)
    assert decision_loss(q[perm], p[perm]) == pytest.approx(decision_loss(q, p), abs=1e-15)


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    A_hat, p_hat, A_gt, p_gt = _random_instance(rng)
    g_A = angular_loss_grad(A_hat, A_gt)
    g_p = decision_loss_grad(p_hat, p_gt)
    h = 1e-6
    for i, j in [(0, 0), (3, 2), (7, 3)]:
        bump = np.zeros_like(A_hat)
        bump[i, j] = h
        numeric = (angular_loss(A_hat + bump, A_gt) - angular_loss(A_hat - bump, A_gt)) / (2 * h)
        assert g_A[i, j] == pytest.approx(numeric, rel=1e-5, abs=1e-9)
    for i in (0, 5):
        bump = np.zeros(8)
        bump[i] = h
        numeric = (decision_loss(p_hat + bump, p_gt) - decision_loss(p_hat - bump, p_gt)) / (2 * h)
        assert g_p[i] == pytest.approx(numeric, rel=1e-5)


def test_pit_recovers_a_row_shift():
    rng = np.random.default_rng(3)
    _, _, A_gt, p_gt = _random_instance(rng)
    A_hat = np.roll(A_gt, 2, axis=0)
    p_hat = np.clip(np.roll(p_gt, 2), 1e-7, 1 - 1e-7)
    loss = pit_total_loss(A_hat, p_hat, A_gt, p_gt)
    assert loss.total < 1e-6
    np.testing.assert_array_equal(loss.permutation, (np.arange(8) - 2) % 8)


def test_pit_total_is_gamma_plus_weighted_beta():
    rng = np.random.default_rng(4)
    loss = pit_total_loss(*_random_instance(rng, walls=6))
    assert loss.total == loss.gamma + 0.1 * loss.beta
    assert sorted(loss.permutation) == list(range(8))


def test_pit_matches_naive_enumeration():
    rng = np.random.default_rng(5)
    for _ in range(100):
        instance = _random_instance(rng, walls=int(rng.integers(6, 9)))
        assert pit_total_loss(*instance).total == pytest.approx(_naive_minimum(*instance), abs=1e-12)


def test_pit_invariant_to_ground_truth_order():
    rng = np.random.default_rng(6)
    for _ in range(20):
        A_hat, p_hat, A_gt, p_gt = _random_instance(rng, walls=7)
        perm = rng.permutation(8)
        a = pit_total_loss(A_hat, p_hat, A_gt, p_gt).total
        b = pit_total_loss(A_hat, p_hat, A_gt[perm], p_gt[perm]).total
        assert a == pytest.approx(b, abs=1e-12)


def test_pit_never_worse_than_identity():
    rng = np.random.default_rng(7)
    for _ in range(20):
        A_hat, p_hat, A_gt, p_gt = _random_instance(rng)
        identity = angular_loss(A_hat, A_gt) + 0.1 * decision_loss(p_hat, p_gt)
        assert pit_total_loss(A_hat, p_hat, A_gt, p_gt).total <= identity + 1e-15


def test_pit_both_zero():
    with pytest.raises(BothZero):
        pit_total_loss(np.zeros((8, 4)), np.full(8, 0.5), np.zeros((8, 4)), np.zeros(8))


def test_adam_zero_gradient_keeps_params():
    params = {"w": np.array([1.0, -2.0])}
    optimizer_step(params, {"w": np.zeros(2)}, AdamState(), lr=0.1)
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])


@pytest.mark.parametrize("g", [3.0, -0.25])
def test_adam_first_step_is_lr_times_sign(g):
    params = {"w": np.array(0.0)}
    optimizer_step(params, {"w": np.array(g)}, AdamState(), lr=1e-3)
    assert float(params["w"]) == pytest.approx(-1e-3 * np.sign(g), rel=1e-6)


def test_adam_rejects_non_finite():
    params = {"w": np.zeros(3)}
    with pytest.raises(NonFiniteGradient):
        optimizer_step(params, {"w": np.array([0.0, np.nan, 1.0])}, AdamState(), lr=1e-3)


def test_train_config_validation():
    with pytest.raises(InvalidConfig):
        TrainConfig(max_epochs=0, patience=1)
    with pytest.raises(InvalidConfig):
        TrainConfig(max_epochs=5, patience=6)
    with pytest.raises(InvalidConfig):
        TrainConfig.from_dict({"epochs": 3})
    config = TrainConfig(max_epochs=3, patience=2, seed=9)
    assert TrainConfig.from_dict(config.to_dict()) == config


@pytest.fixture
def tiny_sets(tmp_path, synthetic_samples):
    train_set = read_dataset(write_dataset(tmp_path / "train.rgi", synthetic_samples[:4]))
    val_set = read_dataset(write_dataset(tmp_path / "val.rgi", synthetic_samples[4:6]))
    return train_set, val_set


def test_train_needs_data(tiny_sets):
    empty = RirDataset(np.zeros(0, dtype=RECORD_DTYPE))
    with pytest.raises(EmptyDataset):
        train(empty, tiny_sets[1], TrainConfig())
    with pytest.raises(EmptyDataset):
        train(tiny_sets[0], empty, TrainConfig())


def test_training_is_deterministic(tiny_sets, tmp_path):
    config = TrainConfig(batch_size=2, max_epochs=2, patience=2, seed=1)
    first = train(*tiny_sets, config)
    second = train(*tiny_sets, config)
    assert [r.row() for r in first.history] == [r.row() for r in second.history]
    for name in PARAM_SHAPES:
        np.testing.assert_array_equal(first.best_params[name], second.best_params[name])

    a = write_history(tmp_path / "a.csv", first.history).read_text()
    b = write_history(tmp_path / "b.csv", second.history).read_text()
    assert a == b
    assert a.splitlines()[0] == "epoch,train_gamma,train_beta,train_total,val_gamma,val_beta,val_total"
    assert len(a.splitlines()) == 3


def test_history_totals_combine_gamma_and_beta(tiny_sets):
    result = train(*tiny_sets, TrainConfig(batch_size=4, max_epochs=1, patience=1, seed=2))
    record = result.history[0]
    assert record.val_total == pytest.approx(record.val_gamma + 0.1 * record.val_beta, abs=1e-12)
    assert record.train_total == pytest.approx(record.train_gamma + 0.1 * record.train_beta, abs=1e-12)


def test_early_stopping_halts_after_patience(tiny_sets, monkeypatch):
    val_curve = iter([1.0, 0.5, 0.6, 0.7, 0.8, 0.4, 0.3])
    monkeypatch.setattr(training, "evaluate_loss", lambda *a, **k: np.array([0.0, 0.0, next(val_curve)]))
    monkeypatch.setattr(
        training, "batch_loss_and_grads",
        lambda *a, **k: (np.zeros(3), {name: np.zeros(shape) for name, shape in PARAM_SHAPES.items()}),
    )
    result = train(*tiny_sets, TrainConfig(batch_size=2, max_epochs=7, patience=3))
    assert result.stopped_early
    assert len(result.history) == 5
    assert result.best_epoch == 2
    assert result.best_val_total == 0.5


@pytest.mark.slow
def test_overfits_small_dataset(tmp_path):
    out = tmp_path / "overfit.rgi"
    generate_dataset(GenerateConfig(
        counts={"shoebox": 13, "pentagonal": 13, "hexagonal": 12, "l_shaped": 12},
        out=str(out), global_seed=11, sim=SimConfig(max_order=2), threads=2,
    ))
    data = read_dataset(out)
    result = train(data, data, TrainConfig(batch_size=5, max_epochs=300, patience=300, seed=0))
    assert result.history[-1].train_total < 0.02
