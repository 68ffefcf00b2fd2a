"""Labeled sample container: CSV I/O, manifests, splitting and standardization."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ClassTooSmall, MalformedTrace, MissingHeader, TooFewRows
from .events import ClassLabel, Sample
from .trace import format_header, parse_header, parse_row

UNLABELED = -1
STD_EPSILON = 1e-12
MANIFEST_SUFFIX = ".manifest.json"


class Dataset:
    """Rows of counter deltas sharing one feature header.

    Stored column-wise as numpy arrays; ``y`` uses -1 for unlabeled rows and
    ``scenarios`` optionally carries per-row provenance names.
    """

    def __init__(self, feature_names, X, y=None, timestamps=None, pids=None, scenarios=None):
        self.feature_names = list(feature_names)
        X = np.asarray(X)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, len(self.feature_names))
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise ValueError(f"X must be (n, {len(self.feature_names)}), got {X.shape}")
        n = X.shape[0]
        self.X = X
        self.y = np.full(n, UNLABELED, dtype=np.int64) if y is None else np.asarray(y, dtype=np.int64)
        self.timestamps = np.arange(n, dtype=np.int64) if timestamps is None else np.asarray(timestamps, dtype=np.int64)
        self.pids = np.zeros(n, dtype=np.int64) if pids is None else np.asarray(pids, dtype=np.int64)
        self.scenarios = None if scenarios is None else np.asarray(scenarios, dtype=object)
        for name, arr in (("y", self.y), ("timestamps", self.timestamps), ("pids", self.pids), ("scenarios", self.scenarios)):
            if arr is not None and arr.shape != (n,):
                raise ValueError(f"{name} length {arr.shape} does not match {n} rows")
        for arr in (self.X, self.y, self.timestamps, self.pids):
            arr.flags.writeable = False

    @classmethod
    def from_samples(cls, feature_names, samples, scenario=None):
        samples = list(samples)
        width = len(feature_names)
        X = np.array([s.values for s in samples], dtype=np.int64).reshape(len(samples), width)
        y = [UNLABELED if s.label is None else int(s.label) for s in samples]
        scen = None if scenario is None else [scenario] * len(samples)
        return cls(feature_names, X, y, [s.timestamp_ms for s in samples], [s.pid for s in samples], scen)

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        if not parts:
            raise ValueError("nothing to concatenate")
        names = parts[0].feature_names
        for p in parts[1:]:
            if p.feature_names != names:
                raise ValueError("cannot concatenate datasets with different feature headers")
        scen = None
        if all(p.scenarios is not None for p in parts):
            scen = np.concatenate([p.scenarios for p in parts])
        return cls(
            names,
            np.concatenate([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            np.concatenate([p.timestamps for p in parts]),
            np.concatenate([p.pids for p in parts]),
            scen,
        )

    def __len__(self):
        return self.X.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        scen_eq = (self.scenarios is None and other.scenarios is None) or (
            self.scenarios is not None and other.scenarios is not None
            and np.array_equal(self.scenarios, other.scenarios)
        )
        return (
            self.feature_names == other.feature_names
            and self.X.shape == other.X.shape
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.pids, other.pids)
            and scen_eq
        )

    __hash__ = None

    def __repr__(self):
        return f"Dataset(rows={len(self)}, features={self.feature_names})"

    @property
    def labeled(self):
        return len(self) > 0 and bool(np.all(self.y >= 0))

    @property
    def class_counts(self):
        labels, counts = np.unique(self.y[self.y >= 0], return_counts=True)
        return {ClassLabel(int(k)): int(c) for k, c in zip(labels, counts)}

    def classes(self):
        return sorted(int(c) for c in np.unique(self.y[self.y >= 0]))

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(
            self.feature_names, self.X[idx], self.y[idx], self.timestamps[idx], self.pids[idx],
            None if self.scenarios is None else self.scenarios[idx],
        )

    def select(self, names):
        """Column projection onto ``names`` (in that order)."""
        pos = {n: i for i, n in enumerate(self.feature_names)}
        missing = [n for n in names if n not in pos]
        if missing:
            raise KeyError(f"features not in dataset: {missing}")
        cols = [pos[n] for n in names]
        return Dataset(names, self.X[:, cols], self.y, self.timestamps, self.pids, self.scenarios)

    def with_X(self, X):
        return Dataset(self.feature_names, X, self.y, self.timestamps, self.pids, self.scenarios)

    def samples(self):
        for i in range(len(self)):
            label = None if self.y[i] < 0 else ClassLabel(int(self.y[i]))
            yield Sample(int(self.timestamps[i]), int(self.pids[i]), tuple(self.X[i].tolist()), label)

    def scenario_names(self):
        if self.scenarios is None:
            return []
        seen = dict.fromkeys(self.scenarios.tolist())
        return list(seen)


# --------------------------------------------------------------------------
# CSV and manifest

def manifest_path(csv_path):
    p = Path(csv_path)
    return p.with_name(p.stem + MANIFEST_SUFFIX)


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _scenario_runs(scenarios, y):
    runs = []
    start = 0
    n = len(scenarios)
    for i in range(1, n + 1):
        if i == n or scenarios[i] != scenarios[start]:
            label = int(y[start]) if y[start] >= 0 else None
            runs.append({"name": str(scenarios[start]), "label": label, "start": start, "count": i - start})
            start = i
    return runs


def save_csv(dataset, path, manifest=None, extra=None):
    """Write ``dataset`` in trace format.

    A manifest is written next to the CSV when the dataset carries scenario
    provenance (or ``manifest=True``); ``extra`` is merged into it.
    """
    path = Path(path)
    X = dataset.X
    if X.size and not np.issubdtype(X.dtype, np.integer):
        if not np.all(np.equal(np.mod(X, 1), 0)):
            raise ValueError("trace CSV holds integer counter deltas; dataset has non-integer values")
    X = X.astype(np.int64)
    y = dataset.y
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_header(dataset.feature_names) + "\n")
        lines = []
        for i in range(len(dataset)):
            label = "" if y[i] < 0 else str(int(y[i]))
            lines.append(f"{dataset.timestamps[i]},{dataset.pids[i]},{label}," + ",".join(map(str, X[i].tolist())))
            if len(lines) >= 10000:
                fh.write("\n".join(lines) + "\n")
                lines = []
        if lines:
            fh.write("\n".join(lines) + "\n")
    if manifest is None:
        manifest = dataset.scenarios is not None
    if manifest:
        write_manifest(dataset, path, extra)
    return path


def build_manifest(dataset, csv_path=None, extra=None):
    doc = {
        "format": "hpcdetect-manifest",
        "version": 1,
        "rows": len(dataset),
        "features": dataset.feature_names,
        "class_counts": {c.name: n for c, n in sorted(dataset.class_counts.items())},
        "scenarios": [] if dataset.scenarios is None else _scenario_runs(dataset.scenarios, dataset.y),
    }
    if csv_path is not None:
        doc["sha256"] = file_sha256(csv_path)
    if extra:
        doc.update(extra)
    return doc


def write_manifest(dataset, csv_path, extra=None):
    doc = build_manifest(dataset, csv_path, extra)
    mpath = manifest_path(csv_path)
    mpath.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return mpath


def read_manifest(csv_path):
    mpath = manifest_path(csv_path)
    if not mpath.exists():
        return None
    return json.loads(mpath.read_text(encoding="utf-8"))


def load_csv(path, use_manifest=True):
    """Read a trace CSV into a Dataset, attaching scenario provenance if a manifest exists."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.strip():
            raise MissingHeader()
        names = parse_header(header)
        width = len(names)
        ts, pids, ys, rows = [], [], [], []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            cols = line.rstrip("\r\n").split(",")
            if len(cols) != width + 3:
                parse_row(line, lineno, width)  # raises InconsistentWidth
            try:
                ts.append(int(cols[0]))
                pids.append(int(cols[1]))
                ys.append(int(cols[2]) if cols[2] != "" else UNLABELED)
                rows.append([int(v) for v in cols[3:]])
            except ValueError:
                parse_row(line, lineno, width)
                raise
            if ys[-1] not in (UNLABELED, 0, 1, 2, 3, 4):
                raise MalformedTrace(lineno, f"label {ys[-1]} outside 0-4")
    X = np.array(rows, dtype=np.int64).reshape(len(rows), width)
    if X.size and X.min() < 0:
        bad = int(np.argwhere(X < 0)[0][0])
        raise MalformedTrace(bad + 2, "negative counter delta")
    scenarios = None
    if use_manifest:
        man = read_manifest(path)
        if man and man.get("scenarios"):
            scenarios = np.empty(len(rows), dtype=object)
            scenarios[:] = ""
            for run in man["scenarios"]:
                scenarios[run["start"]:run["start"] + run["count"]] = run["name"]
            if man.get("rows") != len(rows):
                raise MalformedTrace(1, f"manifest lists {man.get('rows')} rows, file has {len(rows)}")
    return Dataset(names, X, ys, ts, pids, scenarios)


# --------------------------------------------------------------------------
# Splitting

@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")


def split_indices(y, spec):
    n = len(y)
    if n < 2:
        raise TooFewRows("need at least 2 rows to split")
    rng = np.random.default_rng(spec.seed)
    if not spec.stratified:
        perm = rng.permutation(n)
        n_train = min(max(int(round(spec.train_fraction * n)), 1), n - 1)
        return np.sort(perm[:n_train]), np.sort(perm[n_train:])
    train, test = [], []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if len(idx) < 2:
            raise ClassTooSmall(f"class {c} has {len(idx)} row(s); stratified split needs 2")
        idx = rng.permutation(idx)
        k = min(max(int(round(spec.train_fraction * len(idx))), 1), len(idx) - 1)
        train.append(idx[:k])
        test.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split(dataset, spec=SplitSpec()):
    """Partition into (train, test); row order within each part is preserved."""
    if len(dataset) == 0:
        raise TooFewRows("dataset is empty")
    tr, te = split_indices(dataset.y, spec)
    return dataset.subset(tr), dataset.subset(te)


def kfold_indices(n, k, seed=0):
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < k:
        raise TooFewRows(f"{n} rows cannot fill {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    holdouts = [np.sort(f) for f in np.array_split(perm, k)]
    out = []
    for h in holdouts:
        mask = np.ones(n, dtype=bool)
        mask[h] = False
        out.append((np.flatnonzero(mask), h))
    return out


def kfold(dataset, k=10, seed=0):
    """k (train, holdout) pairs; holdouts are disjoint, cover every row and differ in size by at most 1."""
    return [(dataset.subset(tr), dataset.subset(ho)) for tr, ho in kfold_indices(len(dataset), k, seed)]


# --------------------------------------------------------------------------
# Standardization

@dataclass(frozen=True)
class Standardizer:
    mean: tuple
    std: tuple

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        std = np.asarray(self.std)
        out = (X - np.asarray(self.mean)) / np.maximum(std, STD_EPSILON)
        # constant columns map to exactly zero
        out[..., std < STD_EPSILON] = 0.0
        return out

    def to_dict(self):
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(float(v) for v in d["mean"]), tuple(float(v) for v in d["std"]))


def fit_standardizer(train):
    X = train.X if isinstance(train, Dataset) else np.asarray(train)
    if len(X) == 0:
        raise TooFewRows("cannot fit a standardizer on zero rows")
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    return Standardizer(tuple(mean.tolist()), tuple(std.tolist()))


def apply(standardizer, dataset):
    return dataset.with_X(standardizer.transform(dataset.X))
