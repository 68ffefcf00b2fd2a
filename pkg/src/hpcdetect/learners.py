"""Multi-class learners behind one train / predict / save interface.

LDA, multinomial logistic regression, KNN and one-vs-rest linear SVM work on
standardized features; Adaboost (SAMME over CART trees) consumes raw counts.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .dataset import Dataset, Standardizer, fit_standardizer
from .errors import (
    ConvergenceFailure, CorruptModel, NonFiniteFeature, SchemaMismatch, SingleClass,
    UnlabeledData, VersionMismatch,
)
from .tree import DecisionTree, Presorted

FORMAT_VERSION = 1
MODEL_FORMAT = "hpcdetect-model"
ALGORITHMS = ("LDA", "LR", "KNN", "SVM", "ADABOOST")
STANDARDIZED = {"LDA", "LR", "KNN", "SVM"}

DEFAULTS = {
    "LDA": {},
    "LR": {"epochs": 300, "learning_rate": 0.5, "decay": 0.01, "l2": 1e-4, "tol": 1e-9},
    "KNN": {"k": 5},
    "SVM": {"epochs": 300, "learning_rate": 0.5, "decay": 0.01, "l2": 1e-4, "tol": 1e-9},
    "ADABOOST": {"rounds": 200, "depth": 3},
}

EPS_FLOOR = 1e-10


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# LDA

class LDA:
    def fit(self, X, yi, K, hp):
        n, d = X.shape
        means = np.stack([X[yi == k].mean(axis=0) for k in range(K)])
        resid = X - means[yi]
        cov = resid.T @ resid / max(n - K, 1)
        tr = float(np.trace(cov))
        ridge = 1e-6 * tr / d if tr > 0 else 1e-6
        cov = cov + ridge * np.eye(d)
        inv_mu = np.linalg.solve(cov, means.T)  # (d, K)
        self.coef = inv_mu
        self.intercept = -0.5 * np.einsum("kd,dk->k", means, inv_mu) + np.log(np.bincount(yi, minlength=K) / n)
        self.ridge = ridge
        return self

    def decision(self, X):
        return X @ self.coef + self.intercept

    def predict_proba(self, X):
        return _softmax(self.decision(X))

    def to_params(self):
        return {"coef": self.coef.tolist(), "intercept": self.intercept.tolist(), "ridge": self.ridge}

    @classmethod
    def from_params(cls, p):
        m = cls()
        m.coef = np.asarray(p["coef"], dtype=np.float64)
        m.intercept = np.asarray(p["intercept"], dtype=np.float64)
        m.ridge = float(p["ridge"])
        return m


# ---------------------------------------------------------------------------
# Multinomial logistic regression

def lr_loss_and_grad(W, b, X, Y, l2):
    """Mean cross-entropy plus ``l2/2 * ||W||^2`` and its gradient.

    ``Y`` is one-hot (n, K); returns (loss, dW, db).
    """
    n = X.shape[0]
    Z = X @ W + b
    Z = Z - Z.max(axis=1, keepdims=True)
    logp = Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))
    loss = -(Y * logp).sum() / n + 0.5 * l2 * float((W * W).sum())
    G = (np.exp(logp) - Y) / n
    return loss, X.T @ G + l2 * W, G.sum(axis=0)


class LogisticRegression:
    def fit(self, X, yi, K, hp):
        n, d = X.shape
        Y = np.eye(K)[yi]
        W = np.zeros((d, K))
        b = np.zeros(K)
        prev = math.inf
        self.converged = False
        for epoch in range(int(hp["epochs"])):
            loss, dW, db = lr_loss_and_grad(W, b, X, Y, hp["l2"])
            if abs(prev - loss) <= hp["tol"] * max(1.0, abs(loss)):
                self.converged = True
                break
            prev = loss
            step = hp["learning_rate"] / (1.0 + hp["decay"] * epoch)
            W -= step * dW
            b -= step * db
        self.W, self.b = W, b
        self.final_loss = float(lr_loss_and_grad(W, b, X, Y, hp["l2"])[0])
        return self

    def predict_proba(self, X):
        return _softmax(X @ self.W + self.b)

    def to_params(self):
        return {"W": self.W.tolist(), "b": self.b.tolist(),
                "converged": self.converged, "final_loss": self.final_loss}

    @classmethod
    def from_params(cls, p):
        m = cls()
        m.W = np.asarray(p["W"], dtype=np.float64)
        m.b = np.asarray(p["b"], dtype=np.float64)
        m.converged = bool(p["converged"])
        m.final_loss = float(p["final_loss"])
        return m


# ---------------------------------------------------------------------------
# KNN

class KNN:
    """Majority vote of the k nearest (Euclidean) training points.

    ``predict_proba`` is the vote share. A vote tie goes to the tied class
    whose member is nearest, so ``predict`` may differ from the plain argmax
    of the shares only on ties.
    """

    def fit(self, X, yi, K, hp):
        self.X = np.asarray(X, dtype=np.float64)
        self.yi = np.asarray(yi, dtype=np.int64)
        self.K = K
        self.k = max(1, min(int(hp["k"]), len(self.X)))
        self._tree = None
        return self

    def _neighbors(self, X):
        if self._tree is None:
            self._tree = cKDTree(self.X)
        _, idx = self._tree.query(np.asarray(X, dtype=np.float64), k=self.k)
        return idx.reshape(len(X), self.k)

    def _votes(self, idx):
        lab = self.yi[idx]
        votes = np.zeros((len(idx), self.K))
        for j in range(self.k):
            votes[np.arange(len(idx)), lab[:, j]] += 1
        return lab, votes

    def predict_proba(self, X):
        _, votes = self._votes(self._neighbors(X))
        return votes / self.k

    def predict_index(self, X):
        lab, votes = self._votes(self._neighbors(X))
        best = votes.max(axis=1, keepdims=True)
        tied = votes == best
        out = np.argmax(votes, axis=1)
        multi = tied.sum(axis=1) > 1
        for i in np.flatnonzero(multi):
            # neighbours come back nearest first
            for c in lab[i]:
                if tied[i, c]:
                    out[i] = c
                    break
        return out

    def to_params(self):
        return {"k": self.k, "n_classes": self.K, "X": self.X.tolist(), "y": self.yi.tolist()}

    @classmethod
    def from_params(cls, p):
        m = cls()
        m.X = np.asarray(p["X"], dtype=np.float64)
        m.yi = np.asarray(p["y"], dtype=np.int64)
        m.k = int(p["k"])
        m.K = int(p["n_classes"])
        if m.yi.size and (m.yi.min() < 0 or m.yi.max() >= m.K):
            raise ValueError("neighbour labels outside the class range")
        m._tree = None
        return m


# ---------------------------------------------------------------------------
# Linear SVM, one-vs-rest

class LinearSVM:
    """One-vs-rest hinge loss with L2, full-batch subgradient descent."""

    def fit(self, X, yi, K, hp):
        n, d = X.shape
        S = np.where(np.eye(K, dtype=bool)[yi], 1.0, -1.0)  # (n, K) targets
        W = np.zeros((d, K))
        b = np.zeros(K)
        lam = hp["l2"]
        prev = math.inf
        self.converged = False
        for epoch in range(int(hp["epochs"])):
            margin = S * (X @ W + b)
            active = margin < 1.0
            loss = float(np.maximum(0.0, 1.0 - margin).sum() / n + 0.5 * lam * (W * W).sum())
            if abs(prev - loss) <= hp["tol"] * max(1.0, loss):
                self.converged = True
                break
            prev = loss
            G = np.where(active, -S, 0.0) / n
            step = hp["learning_rate"] / (1.0 + hp["decay"] * epoch)
            W -= step * (X.T @ G + lam * W)
            b -= step * G.sum(axis=0)
        self.W, self.b = W, b
        margin = S * (X @ W + b)
        self.final_loss = float(np.maximum(0.0, 1.0 - margin).sum() / n + 0.5 * lam * (W * W).sum())
        return self

    def decision(self, X):
        return X @ self.W + self.b

    def predict_proba(self, X):
        return _softmax(self.decision(X))

    def to_params(self):
        return {"W": self.W.tolist(), "b": self.b.tolist(),
                "converged": self.converged, "final_loss": self.final_loss}

    @classmethod
    def from_params(cls, p):
        m = cls()
        m.W = np.asarray(p["W"], dtype=np.float64)
        m.b = np.asarray(p["b"], dtype=np.float64)
        m.converged = bool(p["converged"])
        m.final_loss = float(p["final_loss"])
        return m


# ---------------------------------------------------------------------------
# Adaboost (SAMME)

def samme_alpha(error, n_classes):
    """Round weight ln((1 - e) / e) + ln(K - 1)."""
    e = max(error, EPS_FLOOR)
    return math.log((1.0 - e) / e) + math.log(n_classes - 1)


def samme_reweight(w, miss, alpha):
    """w * exp(alpha * miss), renormalized to sum 1."""
    w = w * np.exp(alpha * miss)
    return w / w.sum()


@dataclass
class BoostRound:
    error: float
    alpha: float
    retained: bool


class Adaboost:
    """SAMME boosting of depth-limited CART trees.

    With ``record_weights`` the sample-weight vector is kept before the first
    round and after every reweighting (``weight_history``); meant for small fits.
    """

    def __init__(self, record_weights=False):
        self.record_weights = record_weights
        self.weight_history = []

    def fit(self, X, yi, K, hp):
        n = X.shape[0]
        rounds = int(hp["rounds"])
        depth = int(hp["depth"])
        w = np.full(n, 1.0 / n)
        order = Presorted(X)
        self.K = K
        self.depth = depth
        self.learners = []
        self.history = []
        self.weight_history = [w.copy()] if self.record_weights else []
        for _ in range(rounds):
            tree = DecisionTree(max_depth=depth).fit(X, yi, K, sample_weight=w, presorted=order)
            miss = (tree.predict_train() != yi).astype(np.float64)
            error = float(np.dot(w, miss))
            if error >= (K - 1) / K:
                self.history.append(BoostRound(error, samme_alpha(error, K), False))
                if not self.learners:
                    # nothing beat chance; keep that tree so the model still predicts
                    self.learners.append((tree, 1.0))
                break
            alpha = samme_alpha(error, K)
            self.learners.append((tree, alpha))
            self.history.append(BoostRound(error, alpha, True))
            if error <= 0.0:
                break
            w = samme_reweight(w, miss, alpha)
            if self.record_weights:
                self.weight_history.append(w.copy())
        return self

    def votes(self, X):
        V = np.zeros((len(X), self.K))
        rows = np.arange(len(X))
        for tree, alpha in self.learners:
            V[rows, tree.predict(X)] += alpha
        return V

    def predict_proba(self, X):
        V = self.votes(X)
        total = sum(a for _, a in self.learners)
        return V / total

    def to_params(self):
        return {
            "depth": self.depth,
            "n_classes": self.K,
            "learners": [{"alpha": a, "tree": t.to_dict()} for t, a in self.learners],
            "history": [[r.error, r.alpha, r.retained] for r in self.history],
        }

    @classmethod
    def from_params(cls, p):
        m = cls()
        m.depth = int(p["depth"])
        m.K = int(p["n_classes"])
        m.learners = [(DecisionTree.from_dict(e["tree"]), float(e["alpha"])) for e in p["learners"]]
        m.history = [BoostRound(float(e), float(a), bool(r)) for e, a, r in p.get("history", [])]
        if not m.learners:
            raise ValueError("no boosting rounds stored")
        return m


_ESTIMATORS = {"LDA": LDA, "LR": LogisticRegression, "KNN": KNN, "SVM": LinearSVM, "ADABOOST": Adaboost}


# ---------------------------------------------------------------------------
# Model

@dataclass
class TrainedModel:
    algorithm: str
    feature_names: list
    class_set: list
    estimator: object
    standardizer: Standardizer | None = None
    hyperparams: dict = field(default_factory=dict)
    seed: int = 0
    format_version: int = FORMAT_VERSION

    def _prepare(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise SchemaMismatch(f"expected {len(self.feature_names)} features {self.feature_names}, got shape {X.shape}")
        if self.standardizer is not None:
            X = self.standardizer.transform(X)
        return X

    def predict_proba(self, X):
        """Class probabilities, columns ordered as ``class_set``."""
        return self.estimator.predict_proba(self._prepare(X))

    def predict(self, X):
        """Predicted class values (argmax of probabilities, lowest class on ties)."""
        Xp = self._prepare(X)
        if hasattr(self.estimator, "predict_index"):
            idx = self.estimator.predict_index(Xp)
        else:
            idx = np.argmax(self.estimator.predict_proba(Xp), axis=1)
        return np.asarray(self.class_set, dtype=np.int64)[idx]

    @property
    def converged(self):
        return getattr(self.estimator, "converged", True)

    def to_dict(self):
        return {
            "format": MODEL_FORMAT,
            "format_version": self.format_version,
            "algorithm": self.algorithm,
            "feature_names": list(self.feature_names),
            "class_set": [int(c) for c in self.class_set],
            "standardizer": None if self.standardizer is None else self.standardizer.to_dict(),
            "hyperparams": self.hyperparams,
            "seed": self.seed,
            "params": self.estimator.to_params(),
        }


def _matrix(data):
    if isinstance(data, Dataset):
        return data.X, data.y, data.feature_names
    raise TypeError("train expects a Dataset")


def train(algorithm, data, hyperparams=None, seed=0):
    """Fit ``algorithm`` on a labeled Dataset and return a TrainedModel."""
    algorithm = algorithm.upper()
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    X, y, names = _matrix(data)
    if len(y) == 0 or np.any(y < 0):
        raise UnlabeledData("training requires every row to be labeled")
    classes = sorted(int(c) for c in np.unique(y))
    if len(classes) < 2:
        raise SingleClass(f"training data holds a single class {classes}")
    X = np.asarray(X, dtype=np.float64)
    if not np.isfinite(X).all():
        raise NonFiniteFeature("training features contain NaN or infinity")
    hp = dict(DEFAULTS[algorithm])
    unknown = set(hyperparams or {}) - set(hp)
    if unknown:
        raise ValueError(f"unknown hyperparameters for {algorithm}: {sorted(unknown)}")
    hp.update(hyperparams or {})
    yi = np.searchsorted(classes, y)
    std = None
    if algorithm in STANDARDIZED:
        std = fit_standardizer(X)
        X = std.transform(X)
    est = _ESTIMATORS[algorithm]().fit(X, yi, len(classes), hp)
    model = TrainedModel(algorithm, list(names), classes, est, std, hp, int(seed))
    if not model.converged:
        warnings.warn(
            f"{algorithm} stopped at the {hp['epochs']}-epoch cap with loss {est.final_loss:.6g}",
            ConvergenceFailure, stacklevel=2,
        )
    return model


def predict(model, values):
    """Class value for a single vector (or an array of values per row)."""
    out = model.predict(values)
    return int(out[0]) if np.ndim(values) == 1 else out


def predict_proba(model, values):
    out = model.predict_proba(values)
    return out[0] if np.ndim(values) == 1 else out


def model_from_dict(doc):
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise CorruptModel("not an hpcdetect model file")
    if doc.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(f"model format_version {doc.get('format_version')!r}, expected {FORMAT_VERSION}")
    try:
        algo = doc["algorithm"]
        est = _ESTIMATORS[algo].from_params(doc["params"])
        std = None if doc["standardizer"] is None else Standardizer.from_dict(doc["standardizer"])
        model = TrainedModel(algo, list(doc["feature_names"]), [int(c) for c in doc["class_set"]], est, std,
                             dict(doc["hyperparams"]), int(doc["seed"]))
        # smoke-check shapes with a zero vector
        probe = model.predict_proba(np.zeros(len(model.feature_names)))
        if probe.shape != (1, len(model.class_set)):
            raise ValueError("class count does not match parameters")
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise CorruptModel(f"invalid model contents: {exc}") from None
    return model


def save_model(model, path):
    text = json.dumps(model.to_dict(), sort_keys=True, separators=(",", ":"))
    Path(path).write_text(text + "\n", encoding="utf-8")
    return Path(path)


def load_model(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptModel(f"{path}: {exc}") from None
    return model_from_dict(doc)
