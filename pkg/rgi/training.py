"""
Permutation-invariant loss, Adam and the epoch loop with early stopping.

Total loss per room: L = gamma + 0.1 * beta, minimized over all 8! alignments
of ground-truth rows to predicted slots. Gradients flow through the loss with
the winning alignment held fixed.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from tqdm import tqdm

from rgi.dataset import RirDataset, stack_inputs
from rgi.errors import BothZero, EmptyDataset, InvalidConfig, IoFailure, NonFiniteGradient
from rgi.model import WPRIME, NetworkParams, backward, forward, init_params
from rgi.utils.log import progress_enabled

logger = logging.getLogger(__name__)

DECISION_WEIGHT = 0.1
ANGULAR_EPS = 1e-12
BCE_EPS = 1e-7

# all 40320 orderings, row k maps predicted slot i -> ground-truth row PERMS[k, i]
PERMS = np.array(list(itertools.permutations(range(WPRIME))))

HISTORY_COLUMNS = ("epoch", "train_gamma", "train_beta", "train_total", "val_gamma", "val_beta", "val_total")


@dataclass
class LossBreakdown:
    gamma: float
    beta: float
    total: float
    permutation: np.ndarray


def angular_loss(A_hat, A_gt_perm) -> float:
    """gamma = 1 - |<b_hat, b>| / (|b_hat| |b| + eps) on the flattened matrices."""
    b_hat = np.ravel(A_hat).astype(np.float64)
    b = np.ravel(A_gt_perm).astype(np.float64)
    n_hat, n = np.linalg.norm(b_hat), np.linalg.norm(b)
    if n_hat == 0 and n == 0:
        raise BothZero("Angular loss is undefined when both matrices are zero")
    return float(1.0 - abs(b_hat @ b) / (n_hat * n + ANGULAR_EPS))


def angular_loss_grad(A_hat, A_gt_perm) -> np.ndarray:
    """d gamma / d A_hat, same shape as A_hat."""
    A_hat = np.asarray(A_hat, dtype=np.float64)
    b_hat = A_hat.ravel()
    b = np.ravel(A_gt_perm).astype(np.float64)
    n_hat, n = np.linalg.norm(b_hat), np.linalg.norm(b)
    if n_hat == 0 and n == 0:
        raise BothZero("Angular loss is undefined when both matrices are zero")
    s = b_hat @ b
    den = n_hat * n + ANGULAR_EPS
    unit = b_hat / n_hat if n_hat > 0 else np.zeros_like(b_hat)
    grad = -(np.sign(s) * b / den - abs(s) * n * unit / den**2)
    return grad.reshape(A_hat.shape)


def _bce(p_hat, p, eps: float):
    q = np.clip(p_hat, eps, 1.0 - eps)
    return -(p * np.log(q) + (1.0 - p) * np.log(1.0 - q))


def decision_loss(p_hat, p_gt_perm, eps: float = BCE_EPS) -> float:
    """Mean binary cross entropy over the slots, probabilities clamped to [eps, 1 - eps]."""
    p_hat = np.asarray(p_hat, dtype=np.float64)
    p = np.asarray(p_gt_perm, dtype=np.float64)
    return float(_bce(p_hat, p, eps).mean())


def decision_loss_grad(p_hat, p_gt_perm, eps: float = BCE_EPS) -> np.ndarray:
    p_hat = np.asarray(p_hat, dtype=np.float64)
    p = np.asarray(p_gt_perm, dtype=np.float64)
    q = np.clip(p_hat, eps, 1.0 - eps)
    grad = -(p / q - (1.0 - p) / (1.0 - q)) / p_hat.size
    # clamp has zero slope outside its range
    grad[(p_hat < eps) | (p_hat > 1.0 - eps)] = 0.0
    return grad


def pit_total_loss(A_hat, p_hat, A_gt, p_gt, bce_eps: float = BCE_EPS) -> LossBreakdown:
    """Exact minimum of gamma + 0.1 * beta over every row alignment.

    The inner product under an alignment is a sum of entries of the 8x8 matrix
    of row dot products, and the norms do not depend on it, so every candidate
    costs one gather.
    """
    A_hat = np.asarray(A_hat, dtype=np.float64)
    A_gt = np.asarray(A_gt, dtype=np.float64)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    p_gt = np.asarray(p_gt, dtype=np.float64)

    n_hat, n = np.linalg.norm(A_hat), np.linalg.norm(A_gt)
    if n_hat == 0 and n == 0:
        raise BothZero("Angular loss is undefined when both matrices are zero")

    rows = np.arange(WPRIME)
    dots = A_hat @ A_gt.T
    bce = _bce(p_hat[:, None], p_gt[None, :], bce_eps)
    s = dots[rows, PERMS].sum(axis=1)
    gammas = 1.0 - np.abs(s) / (n_hat * n + ANGULAR_EPS)
    betas = bce[rows, PERMS].mean(axis=1)
    best = int(np.argmin(gammas + DECISION_WEIGHT * betas))

    perm = PERMS[best].copy()
    gamma = angular_loss(A_hat, A_gt[perm])
    beta = decision_loss(p_hat, p_gt[perm], bce_eps)
    return LossBreakdown(gamma=gamma, beta=beta, total=gamma + DECISION_WEIGHT * beta, permutation=perm)


def pit_loss_and_grads(A_hat, p_hat, A_gt, p_gt, bce_eps: float = BCE_EPS) -> tuple:
    """(LossBreakdown, dL/dA_hat, dL/dp_hat) with the alignment frozen."""
    loss = pit_total_loss(A_hat, p_hat, A_gt, p_gt, bce_eps)
    A_perm = np.asarray(A_gt, dtype=np.float64)[loss.permutation]
    p_perm = np.asarray(p_gt, dtype=np.float64)[loss.permutation]
    d_A = angular_loss_grad(A_hat, A_perm)
    d_p = DECISION_WEIGHT * decision_loss_grad(p_hat, p_perm, bce_eps)
    return loss, d_A, d_p


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def optimizer_step(
    params,
    grads: dict,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """Adam update in place. `params` is NetworkParams or a dict of arrays."""
    tensors = params.tensors if isinstance(params, NetworkParams) else params
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"Gradient of '{name}' holds NaN or Inf")
        if np.shape(g) != np.shape(tensors[name]):
            raise InvalidConfig(f"Gradient '{name}' has shape {np.shape(g)}, expected {np.shape(tensors[name])}")

    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for name, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        tensors[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)

    if isinstance(params, NetworkParams):
        params.bump()
    return params, state


@dataclass
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 1e-3
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    bce_eps: float = BCE_EPS

    def __post_init__(self):
        for name in ("batch_size", "max_epochs", "patience"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise InvalidConfig(f"{name} must be a positive integer, got {value}")
        for name in ("learning_rate", "adam_eps", "bce_eps"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be positive, got {getattr(self, name)}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidConfig(f"Moment decay rates must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.bce_eps >= 0.5:
            raise InvalidConfig(f"bce_eps must be below 0.5, got {self.bce_eps}")
        if self.patience > self.max_epochs:
            raise InvalidConfig(f"patience ({self.patience}) exceeds max_epochs ({self.max_epochs})")
        if self.seed < 0:
            raise InvalidConfig(f"seed must be >= 0, got {self.seed}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"Unknown training options {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class EpochRecord:
    epoch: int
    train_gamma: float
    train_beta: float
    train_total: float
    val_gamma: float
    val_beta: float
    val_total: float

    def row(self) -> list:
        return [self.epoch] + [f"{getattr(self, c):.10f}" for c in HISTORY_COLUMNS[1:]]


@dataclass
class TrainResult:
    best_params: NetworkParams
    best_epoch: int
    best_val_total: float
    history: list
    stopped_early: bool


def _targets(dataset: RirDataset, indices) -> tuple:
    records = dataset.records[indices]
    return records["A"].astype(np.float64), records["p"].astype(np.float64)


def batch_loss_and_grads(params: NetworkParams, x, A_gt, p_gt, bce_eps: float = BCE_EPS) -> tuple:
    """Batch-mean loss breakdown (gamma, beta, total) and parameter gradients."""
    out, cache = forward(params, x)
    batch = len(A_gt)
    d_A = np.zeros_like(out.A_hat)
    d_p = np.zeros_like(out.p_hat)
    sums = np.zeros(3)
    for i in range(batch):
        loss, d_A[i], d_p[i] = pit_loss_and_grads(out.A_hat[i], out.p_hat[i], A_gt[i], p_gt[i], bce_eps)
        sums += (loss.gamma, loss.beta, loss.total)
    grads = backward(params, cache, d_A / batch, d_p / batch)
    return sums / batch, grads


def evaluate_loss(params: NetworkParams, dataset: RirDataset, batch_size: int = 16, bce_eps: float = BCE_EPS) -> np.ndarray:
    """Mean (gamma, beta, total) over a dataset."""
    if len(dataset) == 0:
        raise EmptyDataset("Cannot compute a loss over an empty dataset")
    sums = np.zeros(3)
    for start in range(0, len(dataset), batch_size):
        idx = np.arange(start, min(start + batch_size, len(dataset)))
        out, _ = forward(params, stack_inputs(dataset, idx))
        A_gt, p_gt = _targets(dataset, idx)
        for i in range(len(idx)):
            loss = pit_total_loss(out.A_hat[i], out.p_hat[i], A_gt[i], p_gt[i], bce_eps)
            sums += (loss.gamma, loss.beta, loss.total)
    return sums / len(dataset)


def train(
    train_set: RirDataset,
    val_set: RirDataset,
    config: TrainConfig,
    params: Optional[NetworkParams] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainResult:
    """Mini-batch Adam with per-epoch validation and patience-based stopping."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise EmptyDataset("Training needs nonempty train and validation sets")

    params = init_params(config.seed) if params is None else params
    rng = np.random.default_rng([config.seed, 1])
    state = AdamState()
    best_params, best_epoch, best_val = params.copy(), 0, np.inf
    since_best = 0
    history = []
    stopped_early = False

    logger.info("Training on %d samples, validating on %d (batch %d, lr %g)",
                len(train_set), len(val_set), config.batch_size, config.learning_rate)
    epochs = tqdm(range(1, config.max_epochs + 1), desc="train", disable=not progress_enabled())
    for epoch in epochs:
        order = rng.permutation(len(train_set))
        sums = np.zeros(3)
        for start in range(0, len(order), config.batch_size):
            idx = np.sort(order[start : start + config.batch_size])
            A_gt, p_gt = _targets(train_set, idx)
            means, grads = batch_loss_and_grads(params, stack_inputs(train_set, idx), A_gt, p_gt, config.bce_eps)
            sums += means * len(idx)
            optimizer_step(params, grads, state, config.learning_rate, config.beta1, config.beta2, config.adam_eps)
        train_means = sums / len(train_set)
        val_means = evaluate_loss(params, val_set, config.batch_size, config.bce_eps)

        record = EpochRecord(epoch, *map(float, train_means), *map(float, val_means))
        history.append(record)
        epochs.set_postfix(train=f"{record.train_total:.4f}", val=f"{record.val_total:.4f}")
        logger.debug("epoch %d: train L %.6f, val L %.6f", epoch, record.train_total, record.val_total)
        if on_epoch is not None:
            on_epoch(record)

        if record.val_total < best_val:
            best_params, best_epoch, best_val = params.copy(), epoch, record.val_total
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                stopped_early = True
                logger.info("Early stop at epoch %d (best epoch %d)", epoch, best_epoch)
                break

    logger.info("Best validation L %.6f at epoch %d", best_val, best_epoch)
    return TrainResult(best_params, best_epoch, float(best_val), history, stopped_early)


def write_history(path, history: list) -> Path:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(HISTORY_COLUMNS)
            for record in history:
                writer.writerow(record.row())
    except OSError as e:
        raise IoFailure(f"Cannot write history '{path}': {e}") from e
    return path
