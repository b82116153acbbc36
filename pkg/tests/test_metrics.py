import math

import numpy as np
import pytest

from causiam.adapt import StepReport
from causiam.metrics import MetricRow, aggregate, psnr, render_table, rows_from_csv, rows_to_csv, ssim


def test_ssim_identity():
    x = np.random.default_rng(0).uniform(size=(3, 32, 32))
    assert abs(ssim(x, x) - 1.0) <= 1e-9


def test_ssim_symmetric():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(2, 3, 24, 24))
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-15


def test_ssim_anticorrelated_checkerboard():
    i, j = np.indices((16, 16))
    board = ((i + j) % 2).astype(float)[None]
    assert ssim(board, 1 - board) < 0


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))


def test_psnr_offset_closed_form():
    a = np.zeros((3, 16, 16))
    # 0.1 is not exact in binary, so the closed-form 20 dB holds to rounding
    assert abs(psnr(a, a + 0.1) - 20.0) <= 1e-12


def test_psnr_identical_is_inf():
    x = np.ones((3, 4, 4))
    assert psnr(x, x) == math.inf


def test_psnr_monotone_in_noise():
    rng = np.random.default_rng(2)
    x = rng.uniform(size=(3, 16, 16))
    n = rng.standard_normal(x.shape)
    vals = [psnr(x, x + s * n) for s in (0.01, 0.02, 0.05, 0.1)]
    assert vals == sorted(vals, reverse=True)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


def _rep(d, rnd, p, s):
    return StepReport(0, d, rnd, 0.0, 0.0, 0.0, psnr_adapted=p, ssim_adapted=s)


def test_aggregate_buckets_in_order():
    reps = [_rep("b", 1, 20.0, 0.5), _rep("a", 1, 30.0, 0.7), _rep("b", 1, 22.0, 0.6), _rep("b", 2, 25.0, 0.8)]
    rows, overall = aggregate(reps)
    assert [(r.domain_id, r.round, r.n_images) for r in rows] == [("b", 1, 2), ("a", 1, 1), ("b", 2, 1)]
    assert rows[0].mean_psnr == 21.0
    assert overall.n_images == 4 and overall.mean_psnr == 24.25


def test_aggregate_empty():
    with pytest.raises(ValueError):
        aggregate([])


def test_csv_roundtrip():
    rows = [MetricRow("gaussB", 1, 100, 27.123456789012345, 0.8123456789012345),
            MetricRow("discA-test", 3, 50, math.inf, 1.0 / 3)]
    assert rows_from_csv(rows_to_csv(rows)) == rows


def test_csv_bad_header():
    with pytest.raises(ValueError):
        rows_from_csv("a,b\n1,2\n")


def test_table_layout():
    rows = [MetricRow("d1", 1, 2, 20.0, 0.5), MetricRow("d2", 1, 2, 30.0, 0.7)]
    text = render_table(rows, MetricRow("all", 0, 4, 25.0, 0.6))
    lines = text.splitlines()
    assert lines[0].split() == ["Round", "d1", "d2", "Avg"]
    assert "25.000 / 0.6000" in lines[2] and lines[3].startswith("All")
