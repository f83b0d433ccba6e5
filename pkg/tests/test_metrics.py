"""Metric contract tests, anchored on hand arithmetic and the published
anemia-degree confusion counts."""

import numpy as np
import pytest

from hgbnet import metrics as M

# Test-set class totals and correctly-classified diagonal for use case 1
# (MIMIC-III), with per-class serious-misdiagnosis counts 6/0/3/0.
MIMIC_TOTALS = np.array([1000, 371, 488, 64])
MIMIC_DIAG = np.array([904, 249, 446, 44])


def mimic_uc1_confusion():
    """A 4x4 matrix consistent with the published counts: the stated
    diagonal, the stated serious-misdiagnosis counts per true class, and
    the remaining errors placed in adjacent classes."""
    conf = np.zeros((4, 4), dtype=np.int64)
    np.fill_diagonal(conf, MIMIC_DIAG)
    conf[0, 2] = 6                      # serious errors for true class 0
    conf[0, 1] = 1000 - 904 - 6
    conf[1, 0] = 60                     # adjacent split, |i-j| < 2
    conf[1, 2] = 371 - 249 - 60
    conf[2, 0] = 3                      # serious errors for true class 2
    conf[2, 1] = 20
    conf[2, 3] = 488 - 446 - 3 - 20
    conf[3, 2] = 64 - 44
    assert (conf.sum(axis=1) == MIMIC_TOTALS).all()
    return conf


class TestRegressionMetrics:
    def test_perfect(self):
        assert M.regression_metrics([1.0, 2.0], [1.0, 2.0]) == (0.0, 0.0, 1.0)

    def test_predicting_mean_gives_zero_r2(self):
        y = np.array([1.0, 2.0, 3.0])
        _, _, r2 = M.regression_metrics(y, np.full(3, y.mean()))
        assert r2 == pytest.approx(0.0, abs=1e-15)

    def test_hand_example_with_negative_r2(self):
        rmse, mae, r2 = M.regression_metrics([1.0, 2.0, 3.0], [1.0, 2.0, 5.0])
        assert rmse == pytest.approx(np.sqrt(4 / 3))
        assert mae == pytest.approx(2 / 3)
        assert r2 == pytest.approx(-1.0)

    def test_constant_truth_convention(self):
        assert M.regression_metrics([2.0, 2.0], [2.0, 2.0])[2] == 1.0
        assert M.regression_metrics([2.0, 2.0], [2.0, 2.5])[2] == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            M.regression_metrics([1.0], [1.0, 2.0])

    def test_scale_equivariance(self):
        rng = np.random.default_rng(5)
        y, p = rng.normal(size=30), rng.normal(size=30)
        base = M.regression_metrics(y, p)
        scaled = M.regression_metrics(3.5 * y, 3.5 * p)
        assert scaled[0] == pytest.approx(3.5 * base[0])
        assert scaled[1] == pytest.approx(3.5 * base[1])
        assert scaled[2] == pytest.approx(base[2])


class TestClassificationMetrics:
    def test_published_per_class_recalls(self):
        conf = mimic_uc1_confusion()
        _, _, _, per_class = M.classification_from_confusion(conf)
        np.testing.assert_allclose(per_class["recall"],
                                   [0.904, 0.671, 0.914, 0.688], atol=5e-4)

    def test_published_weighted_recall(self):
        wp, wr, wf, _ = M.classification_from_confusion(mimic_uc1_confusion())
        assert wr == pytest.approx(1643 / 1923)
        assert wr == pytest.approx(0.854, abs=1e-3)

    def test_all_correct(self):
        wp, wr, wf, conf = M.classification_metrics([0, 1, 2, 3] * 5, [0, 1, 2, 3] * 5)
        assert (wp, wr, wf) == (1.0, 1.0, 1.0)
        assert conf.sum() == 20

    def test_zero_predicted_class_precision_zero(self):
        # class 3 never predicted
        wp, _, _, _ = M.classification_metrics([3, 0], [0, 0])
        assert 0.0 <= wp <= 1.0

    def test_confusion_row_sums(self):
        rng = np.random.default_rng(6)
        t = rng.integers(0, 4, 200)
        p = rng.integers(0, 4, 200)
        conf = M.confusion_matrix(t, p)
        np.testing.assert_array_equal(conf.sum(axis=1), np.bincount(t, minlength=4))

    def test_relabeling_permutes_per_class_metrics(self):
        rng = np.random.default_rng(7)
        t = rng.integers(0, 4, 300)
        p = rng.integers(0, 4, 300)
        perm = np.array([2, 0, 3, 1])
        base = M.classification_from_confusion(M.confusion_matrix(t, p))
        moved = M.classification_from_confusion(M.confusion_matrix(perm[t], perm[p]))
        for key in ("precision", "recall", "f1"):
            np.testing.assert_allclose(base[3][key], moved[3][key][perm])
        # weighted aggregates are invariant
        np.testing.assert_allclose(base[:3], moved[:3])

    def test_label_range_checked(self):
        with pytest.raises(ValueError):
            M.classification_metrics([0, 4], [0, 0])
        with pytest.raises(ValueError):
            M.classification_metrics([], [])


class TestSeriousMisdiagnosis:
    def test_diagonal_only(self):
        assert M.serious_misdiagnosis(np.diag([5, 5, 5, 5])) == 0.0

    def test_published_rate(self):
        rate = M.serious_misdiagnosis(mimic_uc1_confusion())
        assert rate == pytest.approx(9 / 1923)
        assert rate == pytest.approx(0.005, abs=5e-4)

    def test_all_mass_far_corner(self):
        conf = np.zeros((4, 4), dtype=int)
        conf[0, 3] = 17
        assert M.serious_misdiagnosis(conf) == 1.0


class TestIntervalCurve:
    def test_single_bucket_equals_global(self):
        y = np.array([1.0, 2.0, 3.0])
        p = np.array([1.1, 2.1, 2.9])
        rows = M.interval_curve([0.2, 0.2, 0.2], y, p, "r2")
        assert len(rows) == 1
        assert rows[0].value == pytest.approx(M.regression_metrics(y, p)[2])
        assert rows[0].low_confidence  # n=3 < 10

    def test_two_buckets_match_direct_computation(self):
        rng = np.random.default_rng(8)
        y = rng.normal(size=24)
        p = y + rng.normal(size=24) * 0.2
        b = np.array([0.2] * 12 + [1.4] * 12)
        rows = M.interval_curve(b, y, p, "r2")
        assert [r.bucket for r in rows] == [0.2, 1.4]
        for row, sel in zip(rows, (b == 0.2, b == 1.4)):
            assert row.value == pytest.approx(M.regression_metrics(y[sel], p[sel])[2])
            assert not row.low_confidence

    def test_empty_bucket_absent(self):
        rows = M.interval_curve([0.2, 0.6], [1.0, 2.0], [1.0, 2.0], "mae")
        assert [r.bucket for r in rows] == [0.2, 0.6]


class TestReportFormatting:
    def test_round_trip_stability(self):
        rng = np.random.default_rng(9)
        y = rng.normal(12, 2, 40)
        p = y + rng.normal(0, 0.5, 40)
        t = rng.integers(0, 4, 40)
        c = rng.integers(0, 4, 40)
        b = rng.choice([0.2, 0.4, 1.2], 40)
        rep1 = M.build_report(y, p, t, c, b)
        rep2 = M.build_report(y, p, t, c, b)
        assert M.format_report(rep1) == M.format_report(rep2)
        assert "format_version=1" in M.format_report(rep1)


class TestSpearman:
    def test_monotone_series(self):
        assert M.spearman_rank([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
        assert M.spearman_rank([1, 2, 3, 4], [5, 4, 3, 2]) == pytest.approx(-1.0)

    def test_uncorrelated_near_zero(self):
        rng = np.random.default_rng(10)
        x, y = rng.normal(size=500), rng.normal(size=500)
        assert abs(M.spearman_rank(x, y)) < 0.2
