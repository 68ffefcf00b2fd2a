import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import mannwhitneyu

from conftest import blobs, make_dataset
from hpcdetect.errors import ClassAbsent, ConvergenceFailure, EmptyMatrix, SchemaMismatch
from hpcdetect.evaluation import (
    REFERENCE_TEST_MATRIX, REFERENCE_VALIDATION_MATRIX, ConfusionMatrix, confusion, cross_validate, metrics, roc,
    roc_from_scores,
)
from hpcdetect.learners import train

FIVE = [0, 1, 2, 3, 4]


def test_binary_metrics_arithmetic():
    # rows = truth (positive, negative); TP=90, FN=2, FP=3, TN=5
    rep = metrics(ConfusionMatrix([1, 0][::-1], np.array([[5, 3], [2, 90]])))
    assert rep.accuracy == pytest.approx(0.95)
    assert rep.precision["SpectreV1"] == pytest.approx(90 / 93)
    assert rep.recall["SpectreV1"] == pytest.approx(90 / 92)


def test_reference_test_matrix_row_sums_and_accuracy():
    cm = ConfusionMatrix(FIVE, REFERENCE_TEST_MATRIX)
    assert cm.counts.sum(axis=1).tolist() == [17025, 2248, 2047, 6304, 2808]
    assert metrics(cm).accuracy == pytest.approx(30390 / 30432, abs=1e-12)


def test_reference_validation_matrix_accuracy():
    assert metrics(ConfusionMatrix(FIVE, REFERENCE_VALIDATION_MATRIX)).accuracy == pytest.approx(34756 / 34838, abs=1e-12)


def test_zero_conventions_and_empty_matrix():
    rep = metrics(ConfusionMatrix([0, 1, 2], np.array([[4, 0, 0], [0, 0, 0], [2, 0, 0]])))
    assert rep.precision["SpectreV1"] == 0 and rep.recall["SpectreV1"] == 0 and rep.f1["SpectreV1"] == 0
    assert rep.f1["SpectreV2"] == 0
    # class 1 never appears, so the macro mean runs over classes 0 and 2
    assert rep.macro_recall == pytest.approx((1.0 + 0.0) / 2)
    with pytest.raises(EmptyMatrix):
        metrics(ConfusionMatrix([0, 1], np.zeros((2, 2), int)))


def test_perfect_and_constant_classifiers():
    y = np.array([0, 0, 1, 1, 2, 2, 2])
    cm = ConfusionMatrix.from_labels(y, y, [0, 1, 2])
    assert np.array_equal(cm.counts, np.diag([2, 2, 3]))
    cm = ConfusionMatrix.from_labels(y, np.zeros_like(y), [0, 1, 2])
    assert cm.counts[:, 1:].sum() == 0 and cm.counts[:, 0].tolist() == [2, 2, 3]


@settings(max_examples=30)
@given(st.integers(0, 10**6))
def test_macro_f1_invariant_under_relabeling(seed):
    rng = np.random.default_rng(seed)
    C = rng.integers(0, 50, (4, 4))
    if C.sum() == 0:
        C[0, 0] = 1
    perm = rng.permutation(4)
    a = metrics(ConfusionMatrix([0, 1, 2, 3], C))
    b = metrics(ConfusionMatrix([0, 1, 2, 3], C[np.ix_(perm, perm)]))
    assert a.macro_f1 == pytest.approx(b.macro_f1, abs=1e-12)
    assert a.accuracy == pytest.approx(b.accuracy, abs=1e-12)


def test_two_path_accuracy_equivalence_on_random_pairs():
    rng = np.random.default_rng(0)
    algos = ["lda", "knn", "adaboost", "lr", "svm"]
    for i in range(100):
        K = int(rng.integers(2, 5))
        n = int(rng.integers(20, 60))
        X = rng.normal(size=(n, 3)) + rng.integers(0, K, n)[:, None]
        y = rng.integers(0, K, n)
        y[:K] = np.arange(K)
        ds = make_dataset(X, y)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceFailure)
            m = train(algos[i % 5], ds, {"rounds": 5} if algos[i % 5] == "adaboost" else
                      {"epochs": 20} if algos[i % 5] in ("lr", "svm") else None, seed=i)
        Xt = rng.normal(size=(40, 3)) * 2
        yt = rng.integers(0, K, 40)
        test = make_dataset(Xt, yt)
        direct = sum(int(m.predict(Xt[j:j + 1])[0] == yt[j]) for j in range(40)) / 40
        assert metrics(confusion(m, test)).accuracy == direct


def test_confusion_schema_checks():
    X, y = blobs(40)
    m = train("lda", make_dataset(X, y))
    other = make_dataset(X, y, names=["LL_ACCESS", "PAGE_FAULTS"])
    with pytest.raises(SchemaMismatch):
        confusion(m, other)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**9))
def test_auc_equals_mann_whitney(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 300))
    pos = rng.random(n) < rng.uniform(0.1, 0.9)
    pos[0], pos[1] = True, False
    # coarse scores force plenty of ties
    scores = np.round(rng.normal(size=n) + pos * rng.uniform(0, 2), int(rng.integers(0, 3)))
    auc = roc_from_scores(scores, pos).auc
    u = mannwhitneyu(scores[pos], scores[~pos], alternative="two-sided").statistic
    assert abs(auc - u / (pos.sum() * (~pos).sum())) < 1e-9


def test_null_auc_near_half():
    rng = np.random.default_rng(42)
    scores = rng.random(10000)
    labels = rng.permutation(np.arange(10000) < 5000)
    assert abs(roc_from_scores(scores, labels).auc - 0.5) <= 0.03


def test_roc_shape_and_reversal():
    rng = np.random.default_rng(1)
    s = rng.integers(0, 10, 200).astype(float)
    y = rng.random(200) < 0.4
    c = roc_from_scores(s, y)
    assert (c.fpr[0], c.tpr[0]) == (0.0, 0.0) and (c.fpr[-1], c.tpr[-1]) == (1.0, 1.0)
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
    assert roc_from_scores(-s, y).auc == pytest.approx(1 - c.auc, abs=1e-12)
    assert roc_from_scores(y.astype(float), y).auc == 1.0


def test_roc_class_absent():
    with pytest.raises(ClassAbsent):
        roc_from_scores([0.1, 0.2], [True, True])
    X, y = blobs(40)
    m = train("lda", make_dataset(X, y))
    with pytest.raises(ClassAbsent):
        roc(m, make_dataset(X, y), 3)
    c = roc(m, make_dataset(X, y), 1)
    assert c.auc == 1.0


def test_cross_validate_two_folds_on_four_rows():
    ds = make_dataset(np.array([[0.0], [0.1], [5.0], [5.1]]), np.array([0, 0, 1, 1]))
    # seed 0 puts one row of each class in every holdout, so both train folds see both classes
    cv = cross_validate("knn", ds, k=2, hyperparams={"k": 1}, seed=0)
    assert cv.fold_accuracies == [1.0, 1.0]
    assert cv.pooled.total == 4


def test_cross_validate_reproducible():
    X, y = blobs(100, seed=5, k=3, sep=20.0)
    big = make_dataset(X, y)
    a = cross_validate("adaboost", big, k=5, hyperparams={"rounds": 10}, seed=2)
    b = cross_validate("adaboost", big, k=5, hyperparams={"rounds": 10}, seed=2)
    assert a.to_dict() == b.to_dict()
    assert len(a.folds) == 5
    assert a.mean_accuracy == pytest.approx(np.mean(a.fold_accuracies))
