"""Weighted CART classification tree (Gini impurity, axis-aligned splits).

Trees grow level by level. Columns are argsorted once (and the sort can be
shared across fits on the same matrix, as boosting does). Each feature's
sorted rows are kept grouped by node, so a level scans only the candidate
features of each open node over that node's contiguous segment, then
regroups stably by child.
Samples go left when ``x[feature] <= threshold``; thresholds sit midway
between adjacent distinct values, so splits are exact CART splits.
"""
from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None

LEAF = -1


def _apply_py(X, feature, threshold, left, right):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        k = 0
        while feature[k] != LEAF:
            k = left[k] if X[i, feature[k]] <= threshold[k] else right[k]
        out[i] = k
    return out


_apply_jit = njit(cache=True, nogil=True)(_apply_py) if njit is not None else None


class Presorted:
    """Per-feature argsort of a matrix plus the sorted values, both (d, n)."""

    def __init__(self, X):
        X = np.asarray(X, dtype=np.float64)
        n, d = X.shape
        self.X = X
        self.order = np.empty((d, n), dtype=np.int32 if n < 2**31 else np.int64)
        self.values = np.empty((d, n), dtype=np.float64)
        for j in range(d):
            o = np.argsort(X[:, j], kind="stable")
            self.order[j] = o
            self.values[j] = X[o, j]


def presort(X):
    return Presorted(X)


def _level_scan_py(idx, vals, y, w, seg, cand, tot_w, tot_cnt, n_classes, min_leaf):
    """Best split per node of one level. Returns (score, feature, threshold) by slot.

    Rows of slot ``s`` occupy ``idx[f, seg[s]:seg[s+1]]`` for every feature ``f``,
    sorted by that feature (``vals`` holds the matching values). Only features
    with ``cand[s, f]`` are scanned. ``score`` is
    sum_k L_k^2/W_L + sum_k R_k^2/W_R (larger is purer); both sums of squares
    are updated in O(1) per row.
    """
    n_slots = cand.shape[0]
    d = cand.shape[1]
    best_score = np.full(n_slots, -np.inf)
    best_f = np.full(n_slots, -1, dtype=np.int64)
    best_thr = np.zeros(n_slots)
    left = np.zeros(n_classes)
    for s in range(n_slots):
        lo = seg[s]
        hi = seg[s + 1]
        tot_sum = 0.0
        tot_sq = 0.0
        for k in range(n_classes):
            tot_sum += tot_w[s, k]
            tot_sq += tot_w[s, k] * tot_w[s, k]
        for f in range(d):
            if not cand[s, f]:
                continue
            left[:] = 0.0
            wl = 0.0
            sql = 0.0
            sqr = tot_sq
            cntl = 0
            prev = 0.0
            for p in range(lo, hi):
                r = idx[f, p]
                v = vals[f, p]
                if cntl > 0 and prev < v:
                    wr = tot_sum - wl
                    if cntl >= min_leaf and tot_cnt[s] - cntl >= min_leaf and wl > 0.0 and wr > 0.0:
                        score = sql / wl + sqr / wr
                        if best_f[s] < 0 or score > best_score[s] + 1e-12 * abs(best_score[s]):
                            best_score[s] = score
                            best_f[s] = f
                            thr = prev + (v - prev) / 2.0
                            if thr >= v:
                                thr = prev
                            best_thr[s] = thr
                c = y[r]
                wt = w[r]
                a = left[c]
                b = tot_w[s, c] - a
                sql += wt * (2.0 * a + wt)
                sqr += wt * (wt - 2.0 * b)
                left[c] = a + wt
                wl += wt
                cntl += 1
                prev = v
    return best_score, best_f, best_thr


def _partition_py(idx, vals, node_of_row, base, keep, new_seg):
    """Stable regroup of every feature's sorted rows into slot ``node - base``
    (rows with node -1 or in a slot without ``keep`` drop out)."""
    d = idx.shape[0]
    m = new_seg[new_seg.shape[0] - 1]
    out_idx = np.empty((d, m), dtype=idx.dtype)
    out_vals = np.empty((d, m), dtype=np.float64)
    pos = np.empty(new_seg.shape[0] - 1, dtype=np.int64)
    for f in range(d):
        pos[:] = new_seg[:-1]
        for p in range(idx.shape[1]):
            r = idx[f, p]
            s = node_of_row[r]
            if s >= 0 and keep[s - base]:
                s -= base
                out_idx[f, pos[s]] = r
                out_vals[f, pos[s]] = vals[f, p]
                pos[s] += 1
    return out_idx, out_vals


def _route_py(X, y, w, node_of_row, leaf_of_row, split_f, split_t, child_l, child_r, n_nodes, n_classes):
    """Send rows of split nodes to their children and record leaves for the rest.

    Updates ``node_of_row``/``leaf_of_row`` in place; returns per-node class
    weight sums and row counts for the new nodes.
    """
    stats_w = np.zeros((n_nodes, n_classes))
    stats_n = np.zeros(n_nodes, dtype=np.int64)
    for r in range(node_of_row.shape[0]):
        nd = node_of_row[r]
        if nd < 0:
            continue
        f = split_f[nd]
        if f == LEAF:
            leaf_of_row[r] = nd
            node_of_row[r] = -1
            continue
        c = child_l[nd] if X[r, f] <= split_t[nd] else child_r[nd]
        node_of_row[r] = c
        stats_w[c, y[r]] += w[r]
        stats_n[c] += 1
    return stats_w, stats_n


if njit is not None:
    _level_scan = njit(cache=True, nogil=True)(_level_scan_py)
    _partition = njit(cache=True, nogil=True)(_partition_py)
    _route = njit(cache=True, nogil=True)(_route_py)
else:  # pragma: no cover
    _level_scan, _partition, _route = _level_scan_py, _partition_py, _route_py


def _regroup(idx, vals, node_of_row, base, counts, keep):
    seg = np.zeros(counts.shape[0] + 1, dtype=np.int64)
    np.cumsum(np.where(keep, counts, 0), out=seg[1:])
    out_idx, out_vals = _partition(idx, vals, node_of_row, base, keep, seg)
    return out_idx, out_vals, seg


def _best_split(xs, ys, ws, n_classes, min_leaf):
    """Brute-force reference: best split of one pre-sorted column.

    Returns (score, position) with the split between ``position`` and
    ``position + 1``, or None.
    """
    m = xs.shape[0]
    if m < 2 * min_leaf:
        return None
    onehot = np.zeros((m, n_classes))
    onehot[np.arange(m), ys] = ws
    left = np.cumsum(onehot, axis=0)[:-1]
    total = left[-1] + onehot[-1]
    right = total - left
    wl = left.sum(axis=1)
    wr = right.sum(axis=1)
    valid = xs[:-1] < xs[1:]
    valid[: min_leaf - 1] = False
    valid[m - min_leaf:] = False
    valid &= (wl > 0) & (wr > 0)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        score = (left**2).sum(axis=1) / wl + (right**2).sum(axis=1) / wr
    score = np.where(valid, score, -np.inf)
    i = int(np.argmax(score))
    return float(score[i]), i


class DecisionTree:
    """Depth-limited CART classifier over integer class indices ``0..n_classes-1``.

    ``max_features`` features are drawn without replacement at every node
    (``None`` considers all). Rows with zero sample weight are left out.
    """

    def __init__(self, max_depth=3, min_samples_leaf=1, max_features=None, rng=None):
        self.max_depth = max_depth
        self.min_samples_leaf = max(1, int(min_samples_leaf))
        self.max_features = max_features
        self.rng = rng
        self.n_classes = 0
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []

    def fit(self, X, y, n_classes, sample_weight=None, presorted=None):
        if presorted is None:
            presorted = Presorted(X)
        X = presorted.X
        n, d = X.shape
        K = int(n_classes)
        y = np.ascontiguousarray(y, dtype=np.int64)
        w = np.ones(n) if sample_weight is None else np.ascontiguousarray(sample_weight, dtype=np.float64)
        self.n_classes = K
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

        node_of_row = np.where(w > 0, 0, -1).astype(np.int64)
        leaf_of_row = np.full(n, -1, dtype=np.int64)
        stats_w, stats_n = self._level_stats(node_of_row, y, w, 1, K)
        if stats_n[0] == n:
            idx, vals, seg = presorted.order, presorted.values, np.array([0, n], dtype=np.int64)
        else:
            idx, vals, seg = _regroup(presorted.order, presorted.values, node_of_row, 0, stats_n,
                                      np.ones(1, dtype=np.bool_))
        self._append_nodes(1)
        base, width, depth = 0, 1, 0
        # nodes of one level are contiguous: base .. base + width - 1, slot = node - base
        while width:
            level = range(base, base + width)
            for s in range(width):
                tot = stats_w[s].sum()
                self.value[base + s] = stats_w[s] / tot if tot > 0 else np.full(K, 1.0 / K)
            is_open = self._splittable(stats_w, stats_n, depth)
            if not is_open.any():
                rows = node_of_row >= 0
                leaf_of_row[rows] = node_of_row[rows]
                break
            cand = np.zeros((width, d), dtype=np.bool_)
            for s, op in enumerate(is_open):
                if op:
                    cand[s, self._candidates(d)] = True
            score, feat, thr = _level_scan(idx, vals, y, w, seg, cand, stats_w, stats_n, K, self.min_samples_leaf)
            first_child = len(self.feature)
            split_f = np.full(first_child, LEAF, dtype=np.int64)
            split_t = np.zeros(first_child)
            child_l = np.full(first_child, -1, dtype=np.int64)
            child_r = np.full(first_child, -1, dtype=np.int64)
            for s, nd in enumerate(level):
                if feat[s] < 0:
                    continue
                # the parent's own score is W * sum(p_k^2); splitting must beat it
                if score[s] <= stats_w[s].sum() * float((self.value[nd] ** 2).sum()) * (1 + 1e-12):
                    continue
                first = self._append_nodes(2)
                self.feature[nd] = int(feat[s])
                self.threshold[nd] = float(thr[s])
                self.left[nd], self.right[nd] = first, first + 1
                split_f[nd], split_t[nd] = feat[s], thr[s]
                child_l[nd], child_r[nd] = first, first + 1
            n_nodes = len(self.feature)
            stats_w, stats_n = _route(X, y, w, node_of_row, leaf_of_row, split_f, split_t,
                                      child_l, child_r, n_nodes, K)
            base, width = first_child, n_nodes - first_child
            stats_w, stats_n = stats_w[base:], stats_n[base:]
            depth += 1
            if width and depth < self.max_depth:
                idx, vals, seg = _regroup(idx, vals, node_of_row, base, stats_n,
                                          self._splittable(stats_w, stats_n, depth))
        self.train_leaf_ = leaf_of_row
        self._cache = None
        return self

    def predict_train(self):
        """Class index for each fitted row (-1 where the row had zero weight)."""
        cls = np.argmax(self._arrays()[4], axis=1)
        return np.where(self.train_leaf_ >= 0, cls[self.train_leaf_], -1)

    def _append_nodes(self, count):
        first = len(self.feature)
        for _ in range(count):
            self.feature.append(LEAF)
            self.threshold.append(0.0)
            self.left.append(LEAF)
            self.right.append(LEAF)
            self.value.append(None)
        return first

    def _splittable(self, stats_w, stats_n, depth):
        if depth >= self.max_depth:
            return np.zeros(len(stats_n), dtype=np.bool_)
        return ((stats_w > 0).sum(axis=1) > 1) & (stats_n >= 2 * self.min_samples_leaf)

    @staticmethod
    def _level_stats(node_of_row, y, w, n_nodes, K):
        rows = node_of_row >= 0
        key = node_of_row[rows] * K + y[rows]
        sw = np.bincount(key, weights=w[rows], minlength=n_nodes * K).reshape(n_nodes, K)
        sn = np.bincount(node_of_row[rows], minlength=n_nodes).astype(np.int64)
        return sw, sn

    def _candidates(self, d):
        if self.max_features is None or self.max_features >= d:
            return np.arange(d)
        return self.rng.choice(d, size=self.max_features, replace=False)

    # -- inference -----------------------------------------------------
    def _arrays(self):
        if getattr(self, "_cache", None) is None:
            self._cache = (
                np.asarray(self.feature, dtype=np.int64),
                np.asarray(self.threshold, dtype=np.float64),
                np.asarray(self.left, dtype=np.int64),
                np.asarray(self.right, dtype=np.int64),
                np.asarray(self.value, dtype=np.float64).reshape(len(self.feature), self.n_classes),
            )
        return self._cache

    def apply(self, X):
        """Leaf index reached by every row of ``X``."""
        feature, threshold, left, right, _ = self._arrays()
        X = np.asarray(X, dtype=np.float64)
        if _apply_jit is not None:
            return _apply_jit(X, feature, threshold, left, right)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while rows.size:
            cur = node[rows]
            f = feature[cur]
            internal = f != LEAF
            rows, cur, f = rows[internal], cur[internal], f[internal]
            if not rows.size:
                break
            go_left = X[rows, f] <= threshold[cur]
            node[rows] = np.where(go_left, left[cur], right[cur])
        return node

    def predict_proba(self, X):
        return self._arrays()[4][self.apply(X)]

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    @property
    def node_count(self):
        return len(self.feature)

    @property
    def depth(self):
        def walk(i):
            if self.feature[i] == LEAF:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0) if self.feature else 0

    def used_features(self):
        return sorted({f for f in self.feature if f != LEAF})

    # -- serialization -------------------------------------------------
    def to_dict(self):
        return {
            "n_classes": self.n_classes,
            "feature": [int(f) for f in self.feature],
            "threshold": [float(t) for t in self.threshold],
            "left": [int(v) for v in self.left],
            "right": [int(v) for v in self.right],
            "value": [[float(p) for p in v] for v in self.value],
        }

    @classmethod
    def from_dict(cls, d):
        t = cls()
        t.n_classes = int(d["n_classes"])
        t.feature = [int(v) for v in d["feature"]]
        t.threshold = [float(v) for v in d["threshold"]]
        t.left = [int(v) for v in d["left"]]
        t.right = [int(v) for v in d["right"]]
        t.value = [np.asarray(v, dtype=np.float64) for v in d["value"]]
        n = len(t.feature)
        if not (n and len(t.threshold) == len(t.left) == len(t.right) == len(t.value) == n):
            raise ValueError("inconsistent tree arrays")
        for i in range(n):
            if t.feature[i] != LEAF and not (0 < t.left[i] < n and 0 < t.right[i] < n):
                raise ValueError("child index out of range")
            if len(t.value[i]) != t.n_classes:
                raise ValueError("leaf distribution has wrong width")
        t._cache = None
        return t


def sqrt_features(d):
    return max(1, math.ceil(math.sqrt(d)))
