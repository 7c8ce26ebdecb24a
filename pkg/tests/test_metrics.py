import numpy as np
import pytest
from scipy.special import expit

from ecgfreq.errors import (
    DegenerateCurve, EmptyInput, EmptyMatrix, FoldCountMismatch, MisalignedRecords, NonFiniteLogit, OverlapDetected,
    SingleClass,
)
from ecgfreq.metrics import (
    ConfusionMatrix, Curve, PredictionSet, auroc, brier, classification_metrics, confusion_matrix, decide, ece,
    ece_conf, ensemble_logits, mean_curve_with_band, pooled_confusion, pr_curve, roc_curve, softmax_prob,
)


def pairwise_auroc(p, y):
    pos, neg = p[y == 1], p[y == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (len(pos) * len(neg))


def brute_ece(p, y, n_bins):
    total = 0.0
    for b in range(n_bins):
        lo, hi = b / n_bins, (b + 1) / n_bins
        mask = (p >= lo) & ((p < hi) if b < n_bins - 1 else (p <= hi))
        if mask.any():
            total += mask.sum() / len(p) * abs(y[mask].mean() - p[mask].mean())
    return total


def test_softmax_prob():
    assert softmax_prob(0, 0) == 0.5
    assert softmax_prob(2, 1) == pytest.approx(1 / (1 + np.e), abs=1e-12)
    assert softmax_prob(-1000, 1000) == 1.0
    z = np.random.default_rng(0).standard_normal((50, 2)) * 5
    p1 = softmax_prob(z[:, 0], z[:, 1])
    np.testing.assert_allclose(p1, np.exp(z[:, 1]) / np.exp(z).sum(axis=1), atol=1e-9)
    with pytest.raises(NonFiniteLogit):
        softmax_prob(np.nan, 0)


def test_decide():
    assert decide(0.5) == 1
    assert decide(0.4999) == 0
    np.testing.assert_array_equal(decide([0.0, 0.3, 1.0], tau=0.0), [1, 1, 1])


def test_classification_metrics_hand_case():
    m = classification_metrics(ConfusionMatrix(tn=9, fp=1, fn=2, tp=8))
    assert m.sensitivity == pytest.approx(0.8)
    assert m.specificity == pytest.approx(0.9)
    assert m.precision == pytest.approx(8 / 9)
    assert m.f1 == pytest.approx(0.8421, abs=1e-4)
    assert m.mcc == pytest.approx(0.7035, abs=1e-4)
    assert m.accuracy == pytest.approx(17 / 20)
    assert m.degenerate == ()


def test_classification_metrics_perfect():
    m = classification_metrics(ConfusionMatrix(tn=5, fp=0, fn=0, tp=7))
    assert all(v == 1.0 for v in m.as_dict().values())


def test_classification_metrics_zero_over_zero_is_flagged():
    m = classification_metrics(ConfusionMatrix(tn=6, fp=0, fn=4, tp=0))
    assert m.sensitivity == 0.0
    assert m.precision == 0.0
    assert 'precision' in m.degenerate
    assert 'f1' in m.degenerate
    with pytest.raises(EmptyMatrix):
        classification_metrics(ConfusionMatrix())


def test_accuracy_matches_direct_count():
    rng = np.random.default_rng(1)
    p1, y = rng.random(100), rng.integers(0, 2, 100)
    m = classification_metrics(confusion_matrix(y, decide(p1)))
    assert m.accuracy == pytest.approx(np.mean(decide(p1) == y))


def test_auroc_examples():
    assert auroc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert auroc([0.5, 0.5], [1, 0]) == 0.5
    with pytest.raises(SingleClass):
        auroc([0.1, 0.2], [1, 1])


def test_auroc_matches_pairwise_oracle():
    rng = np.random.default_rng(2)
    for trial in range(200):
        n = int(rng.integers(2, 201))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        # every other trial is tie-heavy
        p = rng.integers(0, 5, n) / 4 if trial % 2 else rng.random(n)
        assert auroc(p, y) == pytest.approx(pairwise_auroc(p, y), abs=1e-9)


def test_auroc_rank_invariance():
    rng = np.random.default_rng(3)
    p, y = rng.random(80), rng.integers(0, 2, 80)
    assert auroc(p ** 3, y) == pytest.approx(auroc(p, y), abs=1e-12)


def test_calibration_drift_changes_sensitivity_not_auroc():
    rng = np.random.default_rng(4)
    y = np.repeat([0, 1], 50)
    z = np.zeros((100, 2))
    z[:, 1] = np.round(rng.normal(2 * y - 1, 1.0), 3)
    shifted = z.copy()
    shifted[:, 0] += 1.5

    base, drift = PredictionSet(range(100), z, y), PredictionSet(range(100), shifted, y)
    sens = lambda ps: classification_metrics(confusion_matrix(ps.y, ps.decisions())).sensitivity
    assert sens(drift) < sens(base)
    assert auroc(drift.p1, y) == auroc(base.p1, y)


def test_roc_area_matches_auroc():
    rng = np.random.default_rng(5)
    for _ in range(20):
        p, y = rng.integers(0, 10, 60) / 9, rng.integers(0, 2, 60)
        y[:2] = [0, 1]
        assert roc_curve(p, y).area() == pytest.approx(auroc(p, y), abs=1e-9)


def test_roc_perfect_passes_through_corner():
    curve = roc_curve([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert any((x == 0.0) and (y == 1.0) for x, y in zip(curve.x, curve.y))
    assert np.all(np.diff(curve.thresholds) < 0)


def test_pr_curve_descending_thresholds_and_recall():
    rng = np.random.default_rng(6)
    p, y = rng.random(40), np.repeat([0, 1], 20)
    curve = pr_curve(p, y)
    assert np.all(np.diff(curve.thresholds) < 0)
    assert np.all(np.diff(curve.x) >= 0)
    assert curve.x[-1] == 1.0


def test_mean_curve_with_band():
    grid = np.linspace(0, 1, 101)
    line = Curve(np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.array([np.inf, 0.0]))
    flat = Curve(np.array([0.0, 1.0]), np.array([1.0, 1.0]), np.array([np.inf, 0.0]))
    band = mean_curve_with_band([line, flat], grid)
    assert len(band) == 101
    np.testing.assert_allclose(band['y_mean'], (grid + 1) / 2, atol=1e-12)
    np.testing.assert_allclose(band['y_std'], np.abs(1 - grid) / 2, atol=1e-12)

    same = mean_curve_with_band([line, line, line], grid)
    np.testing.assert_allclose(same['y_std'], 0.0)
    with pytest.raises(DegenerateCurve):
        mean_curve_with_band([line], grid)


def test_brier():
    assert brier([1.0, 0.0], [1, 0]) == 0.0
    assert brier([0.5] * 7, [1, 0, 1, 1, 0, 0, 1]) == 0.25
    assert brier([0.8, 0.3], [1, 0]) == pytest.approx(0.065)
    y = np.array([1] * 3 + [0] * 7)
    assert brier(np.full(10, 0.3), y) == pytest.approx(0.3 * 0.7)
    with pytest.raises(EmptyInput):
        brier([], [])


def test_ece_examples():
    value, bins = ece([0.2, 0.2, 0.9, 0.9], [0, 1, 1, 1], n_bins=2)
    assert value == pytest.approx(0.2)
    assert bins['count'].tolist() == [2, 2]
    assert list(bins.columns) == ['lo', 'hi', 'count', 'mean_p', 'pos_rate']
    assert ece([0.0, 1.0, 1.0], [0, 1, 1])[0] == 0.0
    with pytest.raises(EmptyInput):
        ece([], [])


def test_ece_single_bin_and_oracle():
    rng = np.random.default_rng(7)
    p, y = rng.random(300), rng.integers(0, 2, 300)
    assert ece(p, y, 1)[0] == pytest.approx(abs(y.mean() - p.mean()), abs=1e-12)
    for n_bins in (1, 5, 10, 15):
        value, bins = ece(p, y, n_bins)
        assert value == pytest.approx(brute_ece(p, y, n_bins), abs=1e-12)
        assert bins['count'].sum() == 300


def test_ece_last_bin_is_closed():
    _, bins = ece([1.0, 1.0], [1, 1], n_bins=10)
    assert bins['count'].iloc[-1] == 2


def test_ece_conf():
    # confident and right -> zero gap
    assert ece_conf([0.0, 1.0], [0, 1]) == 0.0
    assert 0.0 <= ece_conf(np.random.default_rng(8).random(50), np.repeat([0, 1], 25)) <= 1.0


def test_ensemble_averages_logits_not_probabilities():
    y = np.array([1])
    a = PredictionSet(['r'], [[0.0, 4.0]], y, 'fold0')
    b = PredictionSet(['r'], [[0.0, 0.0]], y, 'fold1')
    ens = ensemble_logits([a, b], k=2)
    assert ens.p1[0] == pytest.approx(expit(2.0), abs=1e-12)
    assert ens.p1[0] == pytest.approx(0.8808, abs=1e-4)
    assert abs(ens.p1[0] - (a.p1[0] + b.p1[0]) / 2) > 0.1
    assert ens.context == 'ensemble'

    sym = ensemble_logits([PredictionSet(['r'], [[0.0, 2.0]], y), PredictionSet(['r'], [[2.0, 0.0]], y)])
    assert sym.p1[0] == 0.5


def test_ensemble_identity_and_errors():
    rng = np.random.default_rng(9)
    ps = PredictionSet([f'r{i}' for i in range(20)], rng.standard_normal((20, 2)), rng.integers(0, 2, 20))
    ens = ensemble_logits([ps] * 5, k=5)
    np.testing.assert_allclose(ens.z, ps.z, atol=1e-12)
    np.testing.assert_allclose(ens.p1, ps.p1, atol=1e-12)
    assert ensemble_logits([ps]).record_ids == ps.record_ids

    with pytest.raises(FoldCountMismatch):
        ensemble_logits([ps] * 4, k=5)
    other = PredictionSet(list(reversed(ps.record_ids)), ps.z, ps.y)
    with pytest.raises(MisalignedRecords):
        ensemble_logits([ps, other])


def test_pooled_confusion():
    a = PredictionSet(['a', 'b'], [[0, 1], [1, 0]], [1, 0])
    b = PredictionSet(['c', 'd'], [[0, 1], [1, 0]], [1, 0])
    pooled = pooled_confusion([a, b])
    assert pooled == ConfusionMatrix(tn=2, fp=0, fn=0, tp=2)
    assert pooled.total == len(a) + len(b)
    with pytest.raises(OverlapDetected):
        pooled_confusion([a, a])


def test_higher_tau_never_increases_tp():
    rng = np.random.default_rng(10)
    folds = [PredictionSet([f'{k}_{i}' for i in range(30)], rng.standard_normal((30, 2)), rng.integers(0, 2, 30)) for k in range(3)]
    assert pooled_confusion(folds, 0.9).tp <= pooled_confusion(folds, 0.5).tp


def test_prediction_csv_roundtrip(tmp_path):
    ps = PredictionSet(['00a', 'b'], [[0.1, -0.2], [1.5, 2.5]], [0, 1], 'cnn1d/62hz/fold0')
    path = ps.to_csv(tmp_path / 'p.csv', 'h')
    assert path.read_text().splitlines()[1] == 'record_id,context,z0,z1,p1,label'
    back = PredictionSet.from_csv(path)
    assert back.record_ids == ['00a', 'b']
    assert back.context == 'cnn1d/62hz/fold0'
    np.testing.assert_allclose(back.z, ps.z)
    np.testing.assert_allclose(back.p1, ps.p1)
