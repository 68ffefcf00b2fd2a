"""Confusion matrices, precision/recall/F1, k-fold cross-validation and one-vs-rest ROC."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import kfold_indices
from .errors import ClassAbsent, EmptyMatrix, SchemaMismatch, UnlabeledData
from .events import CLASS_NAMES, ClassLabel
from .learners import train

ALL_CLASSES = [int(c) for c in ClassLabel]


@dataclass
class ConfusionMatrix:
    """``counts[i][j]`` = samples of true class ``class_set[i]`` predicted as ``class_set[j]``."""

    class_set: list
    counts: np.ndarray

    def __post_init__(self):
        self.class_set = [int(c) for c in self.class_set]
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.class_set)
        if self.counts.shape != (k, k):
            raise ValueError(f"counts must be {k}x{k}")
        if np.any(self.counts < 0):
            raise ValueError("negative count")

    @classmethod
    def from_labels(cls, y_true, y_pred, class_set=None):
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if class_set is None:
            class_set = sorted(set(np.unique(y_true).tolist()) | set(np.unique(y_pred).tolist()))
        class_set = [int(c) for c in class_set]
        k = len(class_set)
        ti = np.searchsorted(class_set, y_true)
        pi = np.searchsorted(class_set, y_pred)
        counts = np.bincount(ti * k + pi, minlength=k * k).reshape(k, k)
        return cls(class_set, counts)

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        if self.class_set != other.class_set:
            raise ValueError("class sets differ")
        return ConfusionMatrix(self.class_set, self.counts + other.counts)

    def to_dict(self):
        return {"class_set": [CLASS_NAMES.get(c, str(c)) for c in self.class_set],
                "counts": self.counts.tolist()}


@dataclass
class MetricsReport:
    accuracy: float
    precision: dict
    recall: dict
    f1: dict
    support: dict
    macro_precision: float
    macro_recall: float
    macro_f1: float

    def to_dict(self):
        return dict(self.__dict__)


def metrics(cm):
    """Accuracy plus per-class and macro precision/recall/F1.

    Empty columns give precision 0, empty rows recall 0, and F1 is 0 when
    precision + recall is 0. Macro averages run over the classes that occur
    as truth or as prediction.
    """
    C = cm.counts
    total = C.sum()
    if total == 0:
        raise EmptyMatrix("confusion matrix is empty")
    diag = np.diag(C).astype(np.float64)
    col = C.sum(axis=0).astype(np.float64)
    row = C.sum(axis=1).astype(np.float64)
    prec = np.divide(diag, col, out=np.zeros_like(diag), where=col > 0)
    rec = np.divide(diag, row, out=np.zeros_like(diag), where=row > 0)
    denom = prec + rec
    f1 = np.divide(2 * prec * rec, denom, out=np.zeros_like(diag), where=denom > 0)
    present = (row > 0) | (col > 0)
    names = [CLASS_NAMES.get(c, str(c)) for c in cm.class_set]
    return MetricsReport(
        accuracy=float(diag.sum() / total),
        precision=dict(zip(names, prec.tolist())),
        recall=dict(zip(names, rec.tolist())),
        f1=dict(zip(names, f1.tolist())),
        support=dict(zip(names, row.astype(int).tolist())),
        macro_precision=float(prec[present].mean()),
        macro_recall=float(rec[present].mean()),
        macro_f1=float(f1[present].mean()),
    )


def _model_view(model, dataset):
    if dataset.feature_names == model.feature_names:
        return dataset.X
    missing = [n for n in model.feature_names if n not in dataset.feature_names]
    if missing:
        raise SchemaMismatch(f"dataset lacks model features {missing}")
    return dataset.select(model.feature_names).X


def confusion(model, dataset, class_set=None):
    if len(dataset) == 0 or np.any(dataset.y < 0):
        raise UnlabeledData("confusion needs a labeled dataset")
    pred = model.predict(_model_view(model, dataset))
    if class_set is None:
        class_set = sorted(set(model.class_set) | set(np.unique(dataset.y).tolist()))
    return ConfusionMatrix.from_labels(dataset.y, pred, class_set)


@dataclass
class CVResult:
    algorithm: str
    k: int
    seed: int
    folds: list
    confusions: list
    fold_accuracies: list = field(default_factory=list)

    @property
    def mean_accuracy(self):
        return float(np.mean(self.fold_accuracies))

    @property
    def std_accuracy(self):
        return float(np.std(self.fold_accuracies))

    @property
    def pooled(self):
        out = self.confusions[0]
        for cm in self.confusions[1:]:
            out = out + cm
        return out

    def to_dict(self):
        return {
            "algorithm": self.algorithm,
            "k": self.k,
            "seed": self.seed,
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "fold_accuracies": self.fold_accuracies,
            "folds": [f.to_dict() for f in self.folds],
            "pooled_confusion": self.pooled.to_dict(),
        }


def cross_validate(algorithm, dataset, k=10, hyperparams=None, seed=0):
    """Train on k-1 folds, score the held-out fold, k times; folds reported in index order."""
    class_set = sorted(np.unique(dataset.y).tolist())
    folds, cms = [], []
    for tr, ho in kfold_indices(len(dataset), k, seed):
        model = train(algorithm, dataset.subset(tr), hyperparams, seed)
        cm = confusion(model, dataset.subset(ho), class_set)
        cms.append(cm)
        folds.append(metrics(cm))
    return CVResult(algorithm.upper(), k, seed, folds, cms, [f.accuracy for f in folds])


@dataclass
class RocCurve:
    cls: int
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def to_dict(self):
        return {"class": CLASS_NAMES.get(self.cls, str(self.cls)), "auc": self.auc,
                "fpr": self.fpr.tolist(), "tpr": self.tpr.tolist(),
                "thresholds": self.thresholds.tolist()}


def roc_from_scores(scores, positive, cls=1):
    """ROC of ``scores`` against boolean ``positive``; tied scores form one step."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    P = int(positive.sum())
    N = int(positive.size - P)
    if P == 0 or N == 0:
        raise ClassAbsent("one-vs-rest split needs both positive and negative samples")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    pos = positive[order]
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), len(s) - 1]
    tp = np.cumsum(pos)[last]
    fp = (last + 1) - tp
    tpr = np.r_[0.0, tp / P]
    fpr = np.r_[0.0, fp / N]
    thr = np.r_[np.inf, s[last]]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(int(cls), fpr, tpr, thr, auc)


def roc(model, dataset, cls):
    """One-vs-rest ROC of class ``cls`` using the model's posterior for that class."""
    cls = int(cls)
    if cls not in model.class_set:
        raise ClassAbsent(f"model was not trained on class {cls}")
    if len(dataset) == 0 or np.any(dataset.y < 0):
        raise UnlabeledData("roc needs a labeled dataset")
    proba = model.predict_proba(_model_view(model, dataset))
    scores = proba[:, model.class_set.index(cls)]
    return roc_from_scores(scores, dataset.y == cls, cls)


def roc_all(model, dataset):
    """ROC curves for every model class with both positives and negatives in ``dataset``."""
    proba = model.predict_proba(_model_view(model, dataset))
    out = []
    for i, c in enumerate(model.class_set):
        pos = dataset.y == c
        if pos.any() and (~pos).any():
            out.append(roc_from_scores(proba[:, i], pos, c))
    return out


# Reference confusion matrices measured on hardware (rows = truth: Benign, V1, V2, Meltdown, V4).
REFERENCE_TEST_MATRIX = np.array([
    [17019, 2, 1, 3, 0],
    [0, 2243, 0, 4, 1],
    [0, 0, 2046, 1, 0],
    [0, 6, 0, 6280, 18],
    [0, 1, 0, 5, 2802],
])
REFERENCE_VALIDATION_MATRIX = np.array([
    [11047, 12, 30, 0, 0],
    [40, 23709, 0, 0, 0],
    [0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0],
])
