"""One-class detectors written from scratch: isolation forest, k-th nearest
neighbour distance, CBLOF and COPOD.

All models share one contract: they are trained on normal rows only, are
immutable afterwards, and ``score`` returns one finite value per row where
larger means more anomalous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    BadPercentile,
    DimMismatch,
    EmptyCluster,
    EmptyScores,
    EmptyTrain,
    NonFinite,
    TooFewRows,
)

EULER_GAMMA = 0.5772156649
PERCENTILES = (0.001, 0.01, 0.05, 0.1, 0.2)


def _as_rows(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimMismatch(f"expected a 2-D array of rows, got shape {X.shape}")
    return X


def _check_finite(X: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(X)):
        raise NonFinite(f"{what} contains non-finite values")


class AnomalyModel:
    """Base class: a trained detector with a uniform scoring contract."""

    kind: ClassVar[str] = ""
    registry: ClassVar[dict[str, type["AnomalyModel"]]] = {}

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        if cls.kind:
            AnomalyModel.registry[cls.kind] = cls

    def __init__(self, params: dict, train_dim: int, seed: int):
        self.params = dict(params)
        self.train_dim = int(train_dim)
        self.seed = int(seed)

    def score(self, X) -> np.ndarray:
        X = _as_rows(X)
        if X.shape[1] != self.train_dim:
            raise DimMismatch(f"{self.kind} was trained on {self.train_dim} columns, got {X.shape[1]}")
        _check_finite(X, "query rows")
        return self._score(X)

    def _score(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # bundle support: every fitted parameter lives in a named array
    def arrays(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    @classmethod
    def from_arrays(cls, params: dict, train_dim: int, seed: int, arrays: dict[str, np.ndarray]):
        raise NotImplementedError


def score(model: AnomalyModel, X) -> np.ndarray:
    return model.score(X)


# ------------------------------------------------------------ isolation forest


def average_path_length(n) -> np.ndarray:
    """c(n) = 2 H(n-1) - 2 (n-1)/n with H(i) = ln i + Euler's constant; c(n<2) = 0."""
    n = np.asarray(n, dtype=np.float64)
    out = np.zeros_like(n)
    big = n >= 2
    m = n[big]
    out[big] = 2.0 * (np.log(m - 1.0) + EULER_GAMMA) - 2.0 * (m - 1.0) / m
    return out


@dataclass
class _Tree:
    feature: np.ndarray  # -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray


def _grow_tree(X: np.ndarray, rng: np.random.Generator, height_limit: int) -> _Tree:
    feature, threshold, left, right, size = [], [], [], [], []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(len(X)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        size[node] = len(idx)
        if depth >= height_limit or len(idx) <= 1:
            continue
        sub = X[idx]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if splittable.size == 0:
            continue
        q = int(splittable[rng.integers(splittable.size)])
        p = float(rng.uniform(lo[q], hi[q]))
        go_left = sub[:, q] < p
        feature[node], threshold[node] = q, p
        l, r = new_node(), new_node()
        left[node], right[node] = l, r
        # right pushed first so the left subtree is expanded first
        stack.append((r, idx[~go_left], depth + 1))
        stack.append((l, idx[go_left], depth + 1))
    return _Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(size, dtype=np.int64),
    )


def _path_lengths(tree: _Tree, X: np.ndarray) -> np.ndarray:
    m = len(X)
    node = np.zeros(m, dtype=np.int64)
    depth = np.zeros(m)
    active = np.full(m, tree.feature[0] >= 0)
    rows = np.arange(m)
    while active.any():
        a = rows[active]
        nd = node[a]
        go_left = X[a, tree.feature[nd]] < tree.threshold[nd]
        node[a] = np.where(go_left, tree.left[nd], tree.right[nd])
        depth[a] += 1.0
        active[a] = tree.feature[node[a]] >= 0
    return depth + average_path_length(tree.size[node])


class IForestModel(AnomalyModel):
    kind = "iforest"

    def __init__(self, params, train_dim, seed, trees: list[_Tree], psi: int):
        super().__init__(params, train_dim, seed)
        self.trees = trees
        self.psi = int(psi)

    def expected_path_length(self, X) -> np.ndarray:
        X = _as_rows(X)
        return np.mean([_path_lengths(t, X) for t in self.trees], axis=0)

    def _score(self, X):
        c = average_path_length(self.psi)
        return 2.0 ** (-self.expected_path_length(X) / c)

    def arrays(self):
        offsets = np.cumsum([0] + [len(t.feature) for t in self.trees]).astype(np.int64)
        cat = lambda attr: np.concatenate([getattr(t, attr) for t in self.trees])  # noqa: E731
        return {
            "offsets": offsets,
            "feature": cat("feature"),
            "threshold": cat("threshold"),
            "left": cat("left"),
            "right": cat("right"),
            "size": cat("size"),
            "psi": np.array([self.psi], dtype=np.int64),
        }

    @classmethod
    def from_arrays(cls, params, train_dim, seed, arrays):
        off = arrays["offsets"]
        trees = [
            _Tree(*(arrays[k][off[i] : off[i + 1]] for k in ("feature", "threshold", "left", "right", "size")))
            for i in range(len(off) - 1)
        ]
        return cls(params, train_dim, seed, trees, int(arrays["psi"][0]))


def train_iforest(X, n_trees: int = 100, subsample: int = 256, seed: int = 0) -> IForestModel:
    """Isolation forest of ``n_trees`` trees, each grown on ``subsample`` rows
    drawn without replacement, with height limit ``ceil(log2 psi)``."""
    X = _as_rows(X)
    if len(X) < 2:
        raise EmptyTrain(f"isolation forest needs at least 2 rows, got {len(X)}")
    _check_finite(X, "training rows")
    psi = min(int(subsample), len(X))
    height = int(math.ceil(math.log2(psi)))
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(n_trees):
        idx = rng.choice(len(X), size=psi, replace=False)
        trees.append(_grow_tree(X[idx], rng, height))
    params = {"n_trees": int(n_trees), "subsample": int(subsample)}
    return IForestModel(params, X.shape[1], seed, trees, psi)


# ---------------------------------------------------------------------- KNN


class KnnModel(AnomalyModel):
    kind = "knn"

    def __init__(self, params, train_dim, seed, train: np.ndarray):
        super().__init__(params, train_dim, seed)
        self.train = train
        self.k = int(params["k"])
        self._tree = cKDTree(train)

    def _score(self, X):
        # a query sitting exactly on a stored row is that row: skip one zero-distance match
        dist, _ = self._tree.query(X, k=[1, self.k, self.k + 1])
        return np.where(dist[:, 0] == 0.0, dist[:, 2], dist[:, 1])

    def arrays(self):
        return {"train": self.train}

    @classmethod
    def from_arrays(cls, params, train_dim, seed, arrays):
        return cls(params, train_dim, seed, arrays["train"])


def train_knn(X, k: int = 5, seed: int = 0) -> KnnModel:
    """Score = Euclidean distance to the k-th nearest training row (exact).

    A row that coincides with a training row does not count itself, so
    training rows get leave-one-out scores.
    """
    X = _as_rows(X)
    if len(X) < k + 1:
        raise TooFewRows(f"KNN with k={k} needs at least {k + 1} rows, got {len(X)}")
    _check_finite(X, "training rows")
    return KnnModel({"k": int(k)}, X.shape[1], seed, X.copy())


# -------------------------------------------------------------------- CBLOF


def _sq_dist(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return np.maximum((X**2).sum(1)[:, None] - 2.0 * X @ C.T + (C**2).sum(1)[None, :], 0.0)


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [X[rng.integers(len(X))]]
    d2 = ((X - centers[0]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        if not total > 0:
            raise EmptyCluster(f"fewer than {k} distinct rows; cannot seed {k} clusters")
        centers.append(X[rng.choice(len(X), p=d2 / total)])
        d2 = np.minimum(d2, ((X - centers[-1]) ** 2).sum(1))
    return np.array(centers)


def kmeans(X: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 300, tol: float = 1e-4):
    """Lloyd's algorithm from a k-means++ start.

    Stops once the relative inertia improvement drops to ``tol`` or after
    ``max_iter`` iterations. Raises :class:`EmptyCluster` if a cluster loses
    all of its members.
    """
    centers = _kmeans_pp(X, k, rng)
    prev = np.inf
    for _ in range(max_iter):
        d2 = _sq_dist(X, centers)
        assign = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(len(X)), assign].sum())
        counts = np.bincount(assign, minlength=k)
        if np.any(counts == 0):
            raise EmptyCluster("k-means produced an empty cluster")
        if np.isfinite(prev) and prev - inertia <= tol * prev:
            break
        prev = inertia
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, X)
        centers = sums / counts[:, None]
    assign = np.argmin(_sq_dist(X, centers), axis=1)
    if np.any(np.bincount(assign, minlength=k) == 0):
        raise EmptyCluster("k-means produced an empty cluster")
    return centers, assign


def split_large_small(sizes: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    """Boolean mask of large clusters.

    Clusters are ranked by size (descending); the boundary is the first rank
    where the cumulative size reaches ``alpha`` of all rows or where the size
    ratio to the next cluster is at least ``beta``.
    """
    order = np.argsort(-sizes, kind="stable")
    s = sizes[order]
    total = s.sum()
    cum = np.cumsum(s)
    boundary = len(s) - 1
    for i in range(len(s)):
        if cum[i] >= alpha * total:
            boundary = i
            break
        if i + 1 < len(s) and s[i] / s[i + 1] >= beta:
            boundary = i
            break
    large = np.zeros(len(sizes), dtype=bool)
    large[order[: boundary + 1]] = True
    return large


class CblofModel(AnomalyModel):
    kind = "cblof"

    def __init__(self, params, train_dim, seed, centers: np.ndarray, large: np.ndarray, sizes: np.ndarray):
        super().__init__(params, train_dim, seed)
        self.centers = centers
        self.large = large.astype(bool)
        self.sizes = sizes

    def _score(self, X):
        # exact differences (not the expanded form) so scores are reproducible; chunked for wide inputs
        step = max(1, (1 << 22) // max(1, self.centers.size))
        dist = np.empty((len(X), len(self.centers)))
        for lo in range(0, len(X), step):
            diff = X[lo : lo + step, None, :] - self.centers[None, :, :]
            dist[lo : lo + step] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        own = np.argmin(dist, axis=1)
        rows = np.arange(len(X))
        to_large = np.min(dist[:, self.large], axis=1)
        return np.where(self.large[own], dist[rows, own], to_large)

    def arrays(self):
        return {"centers": self.centers, "large": self.large.astype(np.int64), "sizes": self.sizes}

    @classmethod
    def from_arrays(cls, params, train_dim, seed, arrays):
        return cls(params, train_dim, seed, arrays["centers"], arrays["large"], arrays["sizes"])


def train_cblof(X, n_clusters: int = 8, alpha: float = 0.9, beta: float = 5.0, seed: int = 0) -> CblofModel:
    """Clustering-based local outlier factor, size weighting off."""
    X = _as_rows(X)
    if len(X) < n_clusters:
        raise TooFewRows(f"CBLOF with {n_clusters} clusters needs at least that many rows, got {len(X)}")
    _check_finite(X, "training rows")
    last = None
    for attempt in range(4):  # first try plus up to 3 re-seeded retries
        rng = np.random.default_rng([seed, attempt])
        try:
            centers, assign = kmeans(X, n_clusters, rng)
            break
        except EmptyCluster as exc:
            last = exc
    else:
        raise EmptyCluster(f"k-means failed after 3 re-seeded retries: {last}")
    sizes = np.bincount(assign, minlength=n_clusters).astype(np.int64)
    large = split_large_small(sizes, alpha, beta)
    params = {"n_clusters": int(n_clusters), "alpha": float(alpha), "beta": float(beta)}
    return CblofModel(params, X.shape[1], seed, centers, large, sizes)


# -------------------------------------------------------------------- COPOD


def _population_skew(X: np.ndarray) -> np.ndarray:
    d = X - X.mean(0)
    m2 = (d**2).mean(0)
    m3 = (d**3).mean(0)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = m3 / m2**1.5
    return np.where(m2 > 0, s, 0.0)


class CopodModel(AnomalyModel):
    kind = "copod"

    def __init__(self, params, train_dim, seed, sorted_train: np.ndarray, skew_sign: np.ndarray):
        super().__init__(params, train_dim, seed)
        self.sorted_train = sorted_train
        self.skew_sign = skew_sign

    def tail_scores(self, X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-dimension ``-ln p_left``, ``-ln p_right``, skew-corrected."""
        X = _as_rows(X)
        n, d = self.sorted_train.shape
        le = np.empty(X.shape)
        ge = np.empty(X.shape)
        for j in range(d):
            col = self.sorted_train[:, j]
            le[:, j] = np.searchsorted(col, X[:, j], side="right")
            ge[:, j] = n - np.searchsorted(col, X[:, j], side="left")
        left = -np.log(np.maximum(le, 1.0) / n)
        right = -np.log(np.maximum(ge, 1.0) / n)
        s = self.skew_sign[None, :]
        skew = np.where(s < 0, left, np.where(s > 0, right, 0.5 * (left + right)))
        return left, right, skew

    def _score(self, X):
        left, right, skew = self.tail_scores(X)
        return np.maximum(np.maximum(left.sum(1), right.sum(1)), skew.sum(1))

    def arrays(self):
        return {"sorted_train": self.sorted_train, "skew_sign": self.skew_sign}

    @classmethod
    def from_arrays(cls, params, train_dim, seed, arrays):
        return cls(params, train_dim, seed, arrays["sorted_train"], arrays["skew_sign"])


def train_copod(X, seed: int = 0) -> CopodModel:
    """Empirical-copula outlier detector (parameter free).

    Each dimension contributes its left-tail, right-tail and
    skewness-selected tail ``-ln`` probability; the score is the largest of
    the three sums over dimensions.
    """
    X = _as_rows(X)
    if len(X) < 10:
        raise TooFewRows(f"COPOD needs at least 10 rows, got {len(X)}")
    _check_finite(X, "training rows")
    return CopodModel({}, X.shape[1], seed, np.sort(X, axis=0), np.sign(_population_skew(X)))


# -------------------------------------------------------------- thresholds


@dataclass(frozen=True)
class ThresholdRule:
    k: float
    zeta: float


def fit_threshold(train_scores, k: float) -> ThresholdRule:
    """Smallest training score whose strict exceedance fraction is at most k."""
    s = np.asarray(train_scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise EmptyScores("no training scores to fit a threshold on")
    if not any(abs(k - p) < 1e-12 for p in PERCENTILES):
        raise BadPercentile(f"percentile {k} not in {PERCENTILES}")
    if not np.all(np.isfinite(s)):
        raise NonFinite("training scores contain non-finite values")
    srt = np.sort(s)
    uniq = np.unique(srt)
    greater = len(srt) - np.searchsorted(srt, uniq, side="right")
    ok = greater <= k * len(srt) + 1e-9
    return ThresholdRule(float(k), float(uniq[np.argmax(ok)]))


def classify(scores, rule: ThresholdRule) -> np.ndarray:
    return (np.asarray(scores, dtype=np.float64) > rule.zeta).astype(np.int8)
