"""
Geometry inference scores: wall-count accuracy, distance and angle errors.

Estimated walls are paired with ground-truth walls by minimum total angular
cost before the plane errors are taken; scores are averaged over the pairs of
a room, then over rooms.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from tqdm import tqdm

from rgi.dataset import RirDataset, stack_inputs
from rgi.errors import EmptyDataset, IoFailure, NoPredictedWalls, ZeroNormalEstimate
from rgi.geometry import FAMILY_LABELS, SHAPE_FAMILIES
from rgi.model import NetworkParams, forward
from rgi.utils.log import progress_enabled

logger = logging.getLogger(__name__)

THRESHOLD = 0.5
NORMAL_EPS = 1e-9
TOTAL = "Total"
REPORT_COLUMNS = (TOTAL,) + tuple(FAMILY_LABELS[f] for f in SHAPE_FAMILIES)
REPORT_ROWS = (("acc_w", "ACC_w (%)"), ("delta_d", "delta_d (m)"), ("delta_theta", "delta_theta (degree)"))


def binarize(p_hat, threshold: float = THRESHOLD) -> np.ndarray:
    return np.asarray(p_hat) >= threshold


def acc_w(predicted, num_walls) -> float:
    """Percentage of rooms whose predicted wall count equals the true count.

    `predicted` is either per-room counts or per-room presence masks.
    """
    predicted = np.asarray(predicted)
    num_walls = np.asarray(num_walls)
    if len(predicted) == 0:
        raise EmptyDataset("ACC_w needs at least one room")
    if len(predicted) != len(num_walls):
        raise ValueError(f"Got {len(predicted)} predictions for {len(num_walls)} rooms")
    counts = predicted.sum(axis=1) if predicted.ndim == 2 else predicted
    return float(100.0 * np.mean(counts == num_walls))


@dataclass
class WallPairing:
    pairs: list
    estimates: np.ndarray
    targets: np.ndarray
    costs: np.ndarray
    unmatched_pred: list = field(default_factory=list)
    unmatched_gt: list = field(default_factory=list)

    @property
    def total_cost(self) -> float:
        return float(self.costs.sum())


def _angular_cost(est: np.ndarray, gt: np.ndarray) -> np.ndarray:
    num = np.abs(est @ gt.T)
    den = np.linalg.norm(est, axis=1)[:, None] * np.linalg.norm(gt, axis=1)[None, :] + 1e-12
    return 1.0 - num / den


def match_walls(A_hat, mask, A_gt) -> WallPairing:
    """Minimum-cost assignment of predicted-present rows to nonzero ground-truth rows."""
    A_hat = np.asarray(A_hat, dtype=np.float64)
    A_gt = np.asarray(A_gt, dtype=np.float64)
    pred_rows = np.flatnonzero(np.asarray(mask))
    gt_rows = np.flatnonzero(np.linalg.norm(A_gt, axis=1) > 0)
    if len(pred_rows) == 0:
        raise NoPredictedWalls("No slot is predicted present")

    cost = _angular_cost(A_hat[pred_rows], A_gt[gt_rows])
    rows, cols = linear_sum_assignment(cost)
    pairs = [(int(pred_rows[r]), int(gt_rows[c])) for r, c in zip(rows, cols)]
    matched_pred = {p for p, _ in pairs}
    matched_gt = {g for _, g in pairs}
    return WallPairing(
        pairs=pairs,
        estimates=A_hat[[p for p, _ in pairs]].reshape(-1, 4),
        targets=A_gt[[g for _, g in pairs]].reshape(-1, 4),
        costs=cost[rows, cols],
        unmatched_pred=[int(r) for r in pred_rows if r not in matched_pred],
        unmatched_gt=[int(g) for g in gt_rows if g not in matched_gt],
    )


def canonical_plane(row) -> tuple:
    """(unit normal, distance >= 0) of a homogeneous plane row."""
    row = np.asarray(row, dtype=np.float64)
    scale = np.linalg.norm(row[:3])
    if scale < NORMAL_EPS:
        raise ZeroNormalEstimate(f"Plane row {row.tolist()} has a vanishing normal")
    n, d = row[:3] / scale, row[3] / scale
    if d < 0:
        n, d = -n, -d
    return n, float(d)


def _pair_arrays(pairs) -> tuple:
    if isinstance(pairs, WallPairing):
        return pairs.estimates, pairs.targets
    estimates = np.array([e for e, _ in pairs], dtype=np.float64).reshape(-1, 4)
    targets = np.array([t for _, t in pairs], dtype=np.float64).reshape(-1, 4)
    return estimates, targets


def distance_errors(pairs) -> np.ndarray:
    estimates, targets = _pair_arrays(pairs)
    return np.array([abs(canonical_plane(e)[1] - canonical_plane(t)[1]) for e, t in zip(estimates, targets)])


def angle_errors(pairs) -> np.ndarray:
    estimates, targets = _pair_arrays(pairs)
    cosines = [abs(canonical_plane(e)[0] @ canonical_plane(t)[0]) for e, t in zip(estimates, targets)]
    return np.degrees(np.arccos(np.clip(cosines, 0.0, 1.0)))


def delta_d(pairs) -> float:
    """Mean absolute error of the device-to-wall distance, in meters.

    `pairs` is a WallPairing or a sequence of (estimate row, ground-truth row).
    """
    errors = distance_errors(pairs)
    if errors.size == 0:
        raise EmptyDataset("delta_d needs at least one pair")
    return float(errors.mean())


def delta_theta(pairs) -> float:
    """Mean acute angle between estimated and true normals, in degrees."""
    errors = angle_errors(pairs)
    if errors.size == 0:
        raise EmptyDataset("delta_theta needs at least one pair")
    return float(errors.mean())


@dataclass
class RoomScore:
    index: int
    seed: int
    family: str
    num_walls: int
    predicted_count: int
    d_errors: np.ndarray
    theta_errors: np.ndarray

    @property
    def count_correct(self) -> bool:
        return self.predicted_count == self.num_walls


def score_room(index, seed, family, A_hat, p_hat, A_gt, num_walls, threshold: float = THRESHOLD) -> RoomScore:
    mask = binarize(p_hat, threshold)
    d_err, t_err = [], []
    if mask.any():
        pairing = match_walls(A_hat, mask, A_gt)
        for est, gt in zip(pairing.estimates, pairing.targets):
            try:
                d_err.extend(distance_errors([(est, gt)]))
                t_err.extend(angle_errors([(est, gt)]))
            except ZeroNormalEstimate:
                logger.debug("Room %d: skipping a pair with a vanishing estimated normal", index)
    return RoomScore(
        index=index,
        seed=seed,
        family=family,
        num_walls=int(num_walls),
        predicted_count=int(mask.sum()),
        d_errors=np.array(d_err),
        theta_errors=np.array(t_err),
    )


def _summarize(rooms: list) -> dict:
    if not rooms:
        return {"acc_w": None, "delta_d": None, "delta_theta": None, "rooms": 0}
    scored = [r for r in rooms if r.d_errors.size]
    return {
        "acc_w": acc_w([r.predicted_count for r in rooms], [r.num_walls for r in rooms]),
        "delta_d": float(np.mean([r.d_errors.mean() for r in scored])) if scored else None,
        "delta_theta": float(np.mean([r.theta_errors.mean() for r in scored])) if scored else None,
        "rooms": len(rooms),
    }


@dataclass
class EvalReport:
    columns: dict
    rooms: list

    def to_dict(self) -> dict:
        return self.columns


Predictor = Callable[[np.ndarray], tuple]


def network_predictor(params: NetworkParams, dataset: RirDataset) -> Predictor:
    def predict(indices):
        out, _ = forward(params, stack_inputs(dataset, indices))
        return out.A_hat, out.p_hat

    return predict


def evaluate(
    params: Optional[NetworkParams],
    dataset: RirDataset,
    predictor: Optional[Predictor] = None,
    threshold: float = THRESHOLD,
    threads: int = 1,
    batch_size: int = 16,
) -> EvalReport:
    """Score every room, per family and in total.

    `predictor(indices) -> (A_hat, p_hat)` replaces the network when given.
    """
    if len(dataset) == 0:
        raise EmptyDataset("Cannot evaluate an empty dataset")
    predict = predictor if predictor is not None else network_predictor(params, dataset)
    batches = [np.arange(s, min(s + batch_size, len(dataset))) for s in range(0, len(dataset), batch_size)]

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        outputs = list(tqdm(pool.map(predict, batches), total=len(batches), desc="evaluate",
                            disable=not progress_enabled()))

    records = dataset.records
    rooms = []
    for idx, (A_hat, p_hat) in zip(batches, outputs):
        for k, i in enumerate(idx):
            rec = records[i]
            rooms.append(score_room(
                int(i), int(rec["seed"]), SHAPE_FAMILIES[int(rec["shape_id"])],
                A_hat[k], p_hat[k], rec["A"], rec["num_walls"], threshold,
            ))

    columns = {TOTAL: _summarize(rooms)}
    for family in SHAPE_FAMILIES:
        columns[FAMILY_LABELS[family]] = _summarize([r for r in rooms if r.family == family])
    logger.info("ACC_w %.2f%% over %d rooms", columns[TOTAL]["acc_w"], len(rooms))
    return EvalReport(columns=columns, rooms=rooms)


def _cell(value) -> str:
    return "" if value is None else f"{value:.4f}"


def write_report_csv(path, report: EvalReport) -> Path:
    """Metric rows by Total + per-family columns."""
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("Metric",) + REPORT_COLUMNS)
            for key, label in REPORT_ROWS:
                writer.writerow([label] + [_cell(report.columns[c][key]) for c in REPORT_COLUMNS])
    except OSError as e:
        raise IoFailure(f"Cannot write report '{path}': {e}") from e
    return path


def write_details_csv(path, report: EvalReport) -> Path:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("index", "seed", "family", "num_walls", "predicted_count", "delta_d", "delta_theta"))
            for r in report.rooms:
                writer.writerow([
                    r.index, r.seed, FAMILY_LABELS[r.family], r.num_walls, r.predicted_count,
                    ";".join(f"{v:.6f}" for v in r.d_errors),
                    ";".join(f"{v:.6f}" for v in r.theta_errors),
                ])
    except OSError as e:
        raise IoFailure(f"Cannot write details '{path}': {e}") from e
    return path
