import warnings

import numpy as np
import pytest
from sklearn.decomposition import PCA

from conftest import make_dataset
from hpcdetect.dataset import Dataset
from hpcdetect.errors import SingleClass, UnlabeledData
from hpcdetect.features import (
    DegenerateCovariance, ImportanceReport, distribution_summary, pca_rank, rf_importance, select,
)

NAMES = ["CACHE_REFERENCES", "CACHE_MISSES", "CPU_CYCLES", "INSTRUCTIONS"]


def _informative(n=600, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    y = (X[:, 2] > 0).astype(int) + (X[:, 2] > 1)
    X[:, 3] = 5.0  # constant column
    return make_dataset(X, y, NAMES)


def test_rf_ranks_the_informative_feature_first():
    rep = rf_importance(_informative(), trees=20, seed=1, m=2, max_depth=6)
    assert rep.ranking[0] == "CPU_CYCLES"
    assert rep.scores["INSTRUCTIONS"] == 0.0
    assert all(v >= 0 for v in rep.scores.values())
    assert rep.details["oob_accuracy"] > 0.9


def test_rf_is_deterministic_for_a_seed():
    a = rf_importance(_informative(300), trees=10, seed=3, max_depth=5)
    b = rf_importance(_informative(300), trees=10, seed=3, max_depth=5)
    assert a.to_dict() == b.to_dict()


def test_rf_rejects_bad_labels():
    ds = _informative(50)
    with pytest.raises(UnlabeledData):
        rf_importance(Dataset(NAMES, ds.X, np.full(50, -1)), trees=2)
    with pytest.raises(SingleClass):
        rf_importance(Dataset(NAMES, ds.X, np.zeros(50, int)), trees=2)


def test_ties_break_toward_lower_catalog_id():
    rep = ImportanceReport("x", {"DTLB_READ": 0.5, "LL_ACCESS": 0.5, "PAGE_FAULTS": 0.9, "CPU_CYCLES": 0.1})
    assert select(rep, 3) == ["PAGE_FAULTS", "LL_ACCESS", "DTLB_READ"]


def test_pca_scores_match_sklearn_loadings():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(500, 4)) @ rng.normal(size=(4, 4))
    ds = make_dataset(X, np.zeros(500, int), NAMES)
    rep = pca_rank(ds, m=2)
    ref = PCA(n_components=4).fit(X)
    expected = np.abs(ref.components_[:2]).T @ ref.explained_variance_ratio_[:2]
    assert [rep.scores[n] for n in NAMES] == pytest.approx(expected.tolist(), rel=1e-8)


def test_pca_degenerate_covariance_warns():
    X = np.column_stack([np.arange(20.0), np.arange(20.0) * 2, np.ones(20), np.zeros(20)])
    with pytest.warns(DegenerateCovariance):
        pca_rank(make_dataset(X, np.zeros(20, int), NAMES), m=1)
    with pytest.raises(ValueError):
        pca_rank(make_dataset(X, np.zeros(20, int), NAMES), m=5)


def test_distribution_summary_groups_by_scenario(small_corpus):
    rows = distribution_summary(small_corpus, bins=10)
    assert len(rows) == len(small_corpus.scenario_names()) * len(small_corpus.feature_names)
    r = next(r for r in rows if r.scenario == "meltdown_fast" and r.feature == "PAGE_FAULTS")
    assert r.maximum == 0 and r.count == 300
    assert sum(r.bin_counts) == r.count
    assert r.minimum <= r.p25 <= r.median <= r.p75 <= r.maximum
