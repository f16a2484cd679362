import csv

import numpy as np
import pytest

from rgi.dataset import read_dataset, write_dataset
from rgi.errors import EmptyDataset, NoPredictedWalls, ZeroNormalEstimate
from rgi.metrics import (
    REPORT_COLUMNS,
    acc_w,
    binarize,
    delta_d,
    delta_theta,
    evaluate,
    match_walls,
    write_details_csv,
    write_report_csv,
)
from rgi.model import init_params

SQ = np.sqrt(2) / 2


@pytest.fixture
def dataset(tmp_path, synthetic_samples):
    return read_dataset(write_dataset(tmp_path / "eval.rgi", synthetic_samples))


def _box_gt():
    A = np.zeros((8, 4))
    A[:6] = [[0, 0, 1, 1.5], [0, 0, -1, 1.5], [1, 0, 0, 3], [-1, 0, 0, 3], [0, 1, 0, 2], [0, -1, 0, 2]]
    return A


def test_binarize():
    mask = binarize([0.9] * 6 + [0.1] * 2)
    assert mask.sum() == 6 and not mask[6:].any()
    assert binarize([0.5])[0]
    assert not binarize(np.zeros(8)).any()


def test_acc_w():
    assert acc_w([6, 7, 8], [6, 7, 8]) == 100.0
    assert acc_w([5] + [6] * 9, [6] * 10) == pytest.approx(90.0)
    assert acc_w(np.array([[True] * 7 + [False]]), [6]) == 0.0
    with pytest.raises(EmptyDataset):
        acc_w([], [])


def test_match_shuffled_rows():
    A_gt = _box_gt()
    order = np.array([3, 0, 5, 1, 4, 2])
    A_hat = np.zeros((8, 4))
    A_hat[:6] = A_gt[order]
    pairing = match_walls(A_hat, np.arange(8) < 6, A_gt)
    assert pairing.total_cost < 1e-9
    assert sorted(pairing.pairs) == [(i, int(order[i])) for i in range(6)]
    assert pairing.unmatched_gt == [] and pairing.unmatched_pred == []


def test_match_fewer_predictions():
    A_gt = _box_gt()
    pairing = match_walls(A_gt, np.arange(8) < 5, A_gt)
    assert len(pairing.pairs) == 5
    assert pairing.unmatched_gt == [5]


def test_zero_row_still_matched():
    A_gt = _box_gt()
    A_hat = A_gt.copy()
    A_hat[2] = 0.0
    pairing = match_walls(A_hat, np.arange(8) < 6, A_gt)
    assert (2, 2) in pairing.pairs
    assert pairing.costs.max() == pytest.approx(1.0)


def test_no_predicted_walls():
    with pytest.raises(NoPredictedWalls):
        match_walls(_box_gt(), np.zeros(8, dtype=bool), _box_gt())


def test_delta_d_examples():
    assert delta_d([([0, 0, 2, 4], [0, 0, 1, 1.5])]) == pytest.approx(0.5)
    gt = [0.6, 0.8, 0.0, 2.5]
    assert delta_d([(gt, gt)]) == pytest.approx(0.0, abs=1e-12)
    assert delta_d([(np.negative(gt), gt)]) == pytest.approx(0.0, abs=1e-12)
    assert delta_d([(np.multiply(gt, 3.7), gt)]) == pytest.approx(0.0, abs=1e-12)


def test_delta_theta_examples():
    assert delta_theta([([0, 1, 0, 2], [SQ, SQ, 0, 2])]) == pytest.approx(45.0)
    assert delta_theta([([0, 0, -1, -1.5], [0, 0, 1, 1.5])]) == pytest.approx(0.0, abs=1e-6)
    assert delta_theta([([0, 0, 1, 1.5], [0, 0, 1, 1.5])]) == pytest.approx(0.0, abs=1e-6)
    assert 0.0 <= delta_theta([([1, 0, 0, 1], [0, 1, 0, 1])]) <= 90.0


def test_vanishing_normal():
    with pytest.raises(ZeroNormalEstimate):
        delta_d([([0, 0, 0, 1], [0, 0, 1, 1.5])])
    with pytest.raises(ZeroNormalEstimate):
        delta_theta([([0, 0, 1e-12, 1], [0, 0, 1, 1.5])])


def _oracle(dataset, scramble=False):
    rng = np.random.default_rng(0)

    def predict(indices):
        A = dataset.records["A"][indices].astype(np.float64)
        p = dataset.records["p"][indices].astype(np.float64)
        if scramble:
            for b in range(len(indices)):
                perm = rng.permutation(8)
                A[b], p[b] = A[b][perm] * rng.choice([-1.0, 1.0], size=(8, 1)), p[b][perm]
        return A, p

    return predict


@pytest.mark.parametrize("scramble", [False, True])
def test_oracle_scores_perfectly(dataset, scramble):
    report = evaluate(None, dataset, predictor=_oracle(dataset, scramble))
    for column in REPORT_COLUMNS:
        scores = report.columns[column]
        assert scores["acc_w"] == 100.0
        assert scores["delta_d"] == pytest.approx(0.0, abs=1e-5)
        assert scores["delta_theta"] == pytest.approx(0.0, abs=1e-2)
    assert report.columns["Total"]["rooms"] == len(dataset)


def test_untrained_network_is_not_perfect(dataset):
    report = evaluate(init_params(0), dataset, batch_size=4)
    assert report.columns["Total"]["acc_w"] < 100.0


def test_threads_do_not_change_report(dataset):
    params = init_params(1)
    one = evaluate(params, dataset, threads=1, batch_size=3)
    two = evaluate(params, dataset, threads=2, batch_size=3)
    assert one.columns == two.columns


def test_evaluate_empty(dataset):
    with pytest.raises(EmptyDataset):
        evaluate(None, dataset[0:0], predictor=_oracle(dataset))


def test_report_csv_layout(tmp_path, dataset):
    report = evaluate(None, dataset, predictor=_oracle(dataset))
    rows = list(csv.reader(write_report_csv(tmp_path / "r.csv", report).open()))
    assert rows[0] == ["Metric", "Total", "Shoebox", "Pentagonal", "Hexagonal", "L-shaped"]
    assert [r[0] for r in rows[1:]] == ["ACC_w (%)", "delta_d (m)", "delta_theta (degree)"]
    assert rows[1][1:] == ["100.0000"] * 5


def test_details_csv(tmp_path, dataset):
    report = evaluate(None, dataset, predictor=_oracle(dataset))
    rows = list(csv.reader(write_details_csv(tmp_path / "d.csv", report).open()))
    assert rows[0][:5] == ["index", "seed", "family", "num_walls", "predicted_count"]
    assert len(rows) == len(dataset) + 1
    assert rows[1][2] == "Shoebox" and rows[1][4] == "6"
    assert len(rows[1][5].split(";")) == 6
