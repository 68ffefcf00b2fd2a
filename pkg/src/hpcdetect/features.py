"""Feature ranking (random-forest permutation importance, PCA) and per-scenario distributions."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import SingleClass, UnlabeledData
from .events import CLASS_NAMES, catalog_id
from .tree import DecisionTree, Presorted, sqrt_features

FOREST_DEFAULTS = {"trees": 100, "max_depth": 12, "min_leaf": 5}


class DegenerateCovariance(UserWarning):
    pass


@dataclass
class ImportanceReport:
    method: str
    scores: dict
    ranking: list = field(default_factory=list)
    selected: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "method": self.method,
            "scores": dict(self.scores),
            "ranking": list(self.ranking),
            "selected": list(self.selected),
            "details": self.details,
        }


def _rank(scores):
    return sorted(scores, key=lambda n: (-scores[n], catalog_id(n), n))


def select(report, m=4):
    """Top ``m`` feature names by score; equal scores go to the lower catalog id."""
    return _rank(report.scores)[:m]


def _check_labels(dataset):
    if len(dataset) == 0 or np.any(dataset.y < 0):
        raise UnlabeledData("importance needs every row labeled")
    classes = np.unique(dataset.y)
    if len(classes) < 2:
        raise SingleClass("importance needs at least two classes")
    return classes


def rf_importance(dataset, trees=100, seed=0, m=4, max_depth=12, min_leaf=5, max_features=None):
    """Out-of-bag permutation importance from a Gini random forest.

    Tree ``t`` draws its bootstrap, split features and permutations from
    ``SeedSequence([seed, t])``. A feature's score is the mean over trees of
    (OOB accuracy - OOB accuracy with that column permuted), floored at 0,
    so the scores add up to the total accuracy the forest loses.
    """
    classes = _check_labels(dataset)
    X = np.asarray(dataset.X, dtype=np.float64)
    yi = np.searchsorted(classes, dataset.y)
    n, d = X.shape
    K = len(classes)
    mf = sqrt_features(d) if max_features is None else max_features
    pre = Presorted(X)
    drops = np.zeros(d)
    oob_acc = []
    used = 0
    for t in range(trees):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), t]))
        counts = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.float64)
        tree = DecisionTree(max_depth=max_depth, min_samples_leaf=min_leaf, max_features=mf, rng=rng)
        tree.fit(X, yi, K, sample_weight=counts, presorted=pre)
        oob = np.flatnonzero(counts == 0)
        if oob.size == 0:
            continue
        Xo = X[oob]
        yo = yi[oob]
        base = float(np.mean(tree.predict(Xo) == yo))
        oob_acc.append(base)
        used += 1
        for j in tree.used_features():
            col = Xo[:, j].copy()
            Xo[:, j] = col[rng.permutation(len(oob))]
            drops[j] += base - float(np.mean(tree.predict(Xo) == yo))
            Xo[:, j] = col
    if used:
        drops /= used
    scores = {name: max(0.0, float(v)) for name, v in zip(dataset.feature_names, drops)}
    ranking = _rank(scores)
    return ImportanceReport(
        "RandomForest", scores, ranking, ranking[:m],
        {"trees": trees, "seed": seed, "max_depth": max_depth, "min_leaf": min_leaf,
         "max_features": mf, "oob_accuracy": float(np.mean(oob_acc)) if oob_acc else None},
    )


def pca_rank(dataset, m=4):
    """Score features by sum over the top ``m`` components of |loading| x explained-variance ratio.

    Expects standardized input; the data are centered here but not rescaled.
    """
    X = np.asarray(dataset.X, dtype=np.float64)
    d = X.shape[1]
    if not 1 <= m <= d:
        raise ValueError(f"m must lie in 1..{d}")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / max(len(X) - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    total = evals.sum()
    if total <= 0:
        warnings.warn("feature covariance is zero", DegenerateCovariance, stacklevel=2)
        ratio = np.zeros(d)
    else:
        ratio = evals / total
        if np.linalg.matrix_rank(cov) < d:
            warnings.warn("feature covariance is rank deficient", DegenerateCovariance, stacklevel=2)
    contrib = np.abs(evecs[:, :m]) @ ratio[:m]
    scores = {name: float(v) for name, v in zip(dataset.feature_names, contrib)}
    ranking = _rank(scores)
    return ImportanceReport(
        "PCA", scores, ranking, ranking[:m],
        {"explained_variance_ratio": ratio.tolist(), "components": m,
         "loadings": evecs[:, :m].T.tolist()},
    )


@dataclass
class DistributionSummary:
    scenario: str
    feature: str
    count: int
    minimum: float
    p25: float
    median: float
    p75: float
    maximum: float
    mean: float
    stddev: float
    bin_edges: list
    bin_counts: list

    def to_dict(self):
        return dict(self.__dict__)


def distribution_summary(dataset, bins=20):
    """Per (scenario, feature) quantiles, moments and histogram.

    Groups by scenario provenance when the dataset has it, else by class label.
    """
    if dataset.scenarios is not None:
        names = dataset.scenario_names()
        groups = [(name, dataset.scenarios == name) for name in names]
    else:
        groups = [(CLASS_NAMES.get(c, "unlabeled"), dataset.y == c) for c in np.unique(dataset.y)]
    out = []
    for name, mask in groups:
        X = np.asarray(dataset.X[mask], dtype=np.float64)
        for j, feat in enumerate(dataset.feature_names):
            col = X[:, j]
            q = np.quantile(col, [0.0, 0.25, 0.5, 0.75, 1.0])
            counts, edges = np.histogram(col, bins=bins)
            out.append(DistributionSummary(
                str(name), feat, int(col.size), *(float(v) for v in q),
                float(col.mean()), float(col.std()), edges.tolist(), counts.astype(int).tolist(),
            ))
    return out
