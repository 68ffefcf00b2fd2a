import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.tree import DecisionTreeClassifier

from hpcdetect.tree import DecisionTree, Presorted, _best_split, _level_scan, _level_scan_py, sqrt_features


def _root_scan(X, y, w, K, min_leaf, scan=_level_scan):
    pre = Presorted(X)
    n, d = X.shape
    seg = np.array([0, n], dtype=np.int64)
    cand = np.ones((1, d), dtype=np.bool_)
    tot_w = np.bincount(y, weights=w, minlength=K)[None, :]
    tot_n = np.array([n], dtype=np.int64)
    return scan(pre.order, pre.values, y, w, seg, cand, tot_w, tot_n, K, min_leaf)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(5, 60), st.integers(2, 4), st.integers(1, 4))
def test_level_scan_matches_brute_force(seed, n, K, min_leaf):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 6, (n, 3)).astype(float)
    y = rng.integers(0, K, n)
    w = rng.random(n) + 0.01
    score, feat, thr = _root_scan(X, y, w, K, min_leaf)
    best = -np.inf
    for j in range(3):
        o = np.argsort(X[:, j], kind="stable")
        r = _best_split(X[o, j], y[o], w[o], K, min_leaf)
        if r is not None:
            best = max(best, r[0])
    if best == -np.inf:
        assert feat[0] == -1
    else:
        assert score[0] == pytest.approx(best, rel=1e-12)
        # threshold sits strictly between two observed values of the chosen feature
        col = X[:, feat[0]]
        assert (col <= thr[0]).any() and (col > thr[0]).any()


def test_jit_and_python_scans_agree():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(300, 4))
    y = rng.integers(0, 3, 300)
    w = np.ones(300)
    a = _root_scan(X, y, w, 3, 2)
    b = _root_scan(X, y, w, 3, 2, scan=_level_scan_py)
    for u, v in zip(a, b):
        assert np.array_equal(u, v)


@pytest.mark.parametrize("seed", range(5))
def test_root_split_matches_sklearn(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(400, 5)).astype(np.float32).astype(np.float64)  # sklearn works in float32
    y = (X[:, seed % 5] + 0.3 * rng.normal(size=400) > 0).astype(int) + (X[:, (seed + 1) % 5] > 1)
    ours = DecisionTree(max_depth=1).fit(X, y, 3)
    ref = DecisionTreeClassifier(max_depth=1, random_state=0).fit(X, y)
    assert ours.feature[0] == ref.tree_.feature[0]
    assert ours.threshold[0] == pytest.approx(ref.tree_.threshold[0], abs=1e-9)


def test_depth_limited_tree_matches_sklearn_predictions():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(500, 4))
    y = ((X[:, 0] > 0).astype(int) + (X[:, 1] > 0.5)).astype(int)
    ours = DecisionTree(max_depth=3).fit(X, y, 3)
    ref = DecisionTreeClassifier(max_depth=3, random_state=0).fit(X, y)
    Xt = rng.normal(size=(1000, 4))
    assert np.mean(ours.predict(Xt) == ref.predict(Xt)) > 0.99


def test_weighted_fit_ignores_zero_weight_rows():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0, 0, 1, 1])
    w = np.array([1.0, 1.0, 0.0, 1.0])
    t = DecisionTree(max_depth=2).fit(X, y, 2, sample_weight=w)
    assert t.predict_train().tolist() == [0, 0, -1, 1]
    assert t.threshold[0] == 2.0  # midpoint of 1 and 3; row at 2 is excluded


def test_pure_node_is_a_leaf_and_train_predictions_match_predict():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 3))
    y = (X[:, 0] > 0).astype(int)
    t = DecisionTree(max_depth=5).fit(X, y, 2)
    assert np.array_equal(t.predict_train(), t.predict(X))
    assert np.all(t.predict(X) == y)
    const = DecisionTree(max_depth=5).fit(X, np.zeros(200, int), 2)
    assert const.node_count == 1


def test_serialization_round_trip():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(100, 3))
    y = rng.integers(0, 3, 100)
    t = DecisionTree(max_depth=4, min_samples_leaf=3).fit(X, y, 3)
    u = DecisionTree.from_dict(t.to_dict())
    assert np.array_equal(t.predict_proba(X), u.predict_proba(X))
    assert u.depth <= 4


def test_sqrt_features():
    assert sqrt_features(30) == 6
    assert sqrt_features(4) == 2
