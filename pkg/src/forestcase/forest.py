"""Bagged CART classification forests with proximity bookkeeping.

Each tree keeps its bootstrap multiplicities, the leaf every training row
routes to, and (implicitly) its out-of-bag set; the proximity module is
built entirely from these records, so a serialized forest reconstructs any
proximity matrix without retraining.

Split rule is CART with Gini impurity and midpoint thresholds. Under
``class_weighting="balanced"`` sample weights are multiplied by
``n / (L * n_class)`` inside both the impurity and the leaf vote vectors.
Leaves store two distributions: the class-weighted votes behind
``predict_proba`` and the raw bootstrap-multiplicity proportions used by
``oob_predict`` (the latter is what the GAP proximity vote reproduces
exactly, so the recovery property survives balanced weighting).
"""

from __future__ import annotations

import hashlib
import itertools
import json
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .data import Dataset
from .errors import DataError, ModelMismatchError

MODEL_VERSION = "forestcase-forest-v1"


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 300
    max_features: object = "sqrt"  # "sqrt" | "log2" | fraction in (0, 1]
    max_depth: int | None = None
    min_leaf: int = 1
    class_weighting: str = "none"  # "none" | "balanced"
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_features": self.max_features,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "class_weighting": self.class_weighting,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "ForestParams":
        return ForestParams(**d)


def resolve_max_features(max_features, n_features: int) -> int:
    """Number of candidate features per split for the given rule."""
    if max_features == "sqrt":
        return max(1, int(np.sqrt(n_features)))
    if max_features == "log2":
        return max(1, int(np.log2(n_features))) if n_features > 1 else 1
    frac = float(max_features)
    if not 0.0 < frac <= 1.0:
        raise DataError(f"fractional max_features must be in (0, 1]: {frac}")
    return max(1, int(np.ceil(frac * n_features)))


@dataclass
class TreeRecord:
    """One fitted tree plus its bagging bookkeeping.

    ``feature[v] == -1`` marks node ``v`` as a leaf. ``inbag_multiplicity``
    holds the bootstrap draw count of every training row; rows with count 0
    are this tree's out-of-bag set. ``leaf_assignment`` maps every training
    row (in-bag or not) to the leaf it routes to.
    """

    feature: np.ndarray  # (n_nodes,) int64, -1 for leaves
    threshold: np.ndarray  # (n_nodes,) float64
    left: np.ndarray  # (n_nodes,) int64
    right: np.ndarray  # (n_nodes,) int64
    votes_weighted: np.ndarray  # (n_nodes, L) class-weighted leaf distribution
    votes_raw: np.ndarray  # (n_nodes, L) multiplicity-proportional distribution
    inbag_multiplicity: np.ndarray  # (n,) int64
    leaf_assignment: np.ndarray  # (n,) int64

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def oob_flags(self) -> np.ndarray:
        return self.inbag_multiplicity == 0

    def apply(self, X: np.ndarray) -> np.ndarray:
        return kernels.apply_tree(
            self.feature, self.threshold, self.left, self.right, X
        )


@dataclass
class TrainedForest:
    trees: list[TreeRecord]
    params: ForestParams
    n_classes: int
    n_features: int
    train_row_ids: list[str]
    data_fingerprint: str

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def n_train(self) -> int:
        return len(self.train_row_ids)

    def leaf_matrix(self) -> np.ndarray:
        """(T, n) leaf assignment of every training row in every tree."""
        return np.ascontiguousarray(
            np.vstack([t.leaf_assignment for t in self.trees])
        )

    def inbag_matrix(self) -> np.ndarray:
        """(T, n) bootstrap multiplicities c_j(t)."""
        return np.ascontiguousarray(
            np.vstack([t.inbag_multiplicity for t in self.trees])
        )

    def apply_matrix(self, X: np.ndarray) -> np.ndarray:
        """(T, q) leaf ids for out-of-sample rows."""
        X = _check_features(self, X)
        return np.ascontiguousarray(np.vstack([t.apply(X) for t in self.trees]))

    def hash(self) -> str:
        """Stable content hash; keys proximity caches."""
        h = hashlib.sha256()
        h.update(json.dumps(self.params.to_dict(), sort_keys=True).encode())
        h.update(self.data_fingerprint.encode())
        for t in self.trees:
            for arr in (t.feature, t.threshold, t.left, t.right,
                        t.inbag_multiplicity, t.leaf_assignment):
                h.update(arr.tobytes())
        return h.hexdigest()


def data_fingerprint(dataset: Dataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(dataset.features).tobytes())
    h.update(np.ascontiguousarray(dataset.labels).tobytes())
    return h.hexdigest()


def _check_features(forest: TrainedForest, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != forest.n_features:
        raise DataError(
            f"feature dimension mismatch: model has {forest.n_features}, "
            f"input has {X.shape[1]}"
        )
    return np.ascontiguousarray(X)


def _grow_tree(X, y, mult, weights, n_classes, max_depth, min_leaf, k_sub, rng):
    """Grow one CART tree on the in-bag rows; returns the node arrays."""
    n, k = X.shape
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    node_rows: list[np.ndarray | None] = []

    inbag_rows = np.flatnonzero(mult > 0).astype(np.int64)

    def new_node(rows) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        node_rows.append(rows)
        return len(feature) - 1

    root = new_node(inbag_rows)
    stack = [(root, 0)]
    while stack:
        node, depth = stack.pop()
        rows = node_rows[node]
        node_rows[node] = None
        if max_depth is not None and depth >= max_depth:
            continue
        if rows.shape[0] < 2 * min_leaf:
            continue
        ys = y[rows]
        if (ys == ys[0]).all():
            continue
        feats = rng.choice(k, size=k_sub, replace=False).astype(np.int64)
        f, thr, _ = kernels.best_split_node(
            X, weights, y, rows, feats, n_classes, min_leaf
        )
        f = int(f)
        if f < 0:
            continue
        go_left = X[rows, f] <= thr
        l_node = new_node(rows[go_left])
        r_node = new_node(rows[~go_left])
        feature[node] = f
        threshold[node] = float(thr)
        left[node] = l_node
        right[node] = r_node
        stack.append((r_node, depth + 1))
        stack.append((l_node, depth + 1))

    return (
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
    )


def fit(dataset: Dataset, params: ForestParams) -> TrainedForest:
    """Train a forest; deterministic for fixed (dataset, params).

    Bootstrap size is exactly n with replacement. Every tree gets an
    independent RNG stream spawned from ``params.seed``.
    """
    if not dataset.is_encoded:
        raise DataError("fit requires an encoded dataset")
    X = np.ascontiguousarray(dataset.features, dtype=np.float64)
    y = np.ascontiguousarray(dataset.labels, dtype=np.int64)
    n, k = X.shape
    L = dataset.n_classes
    if n < 2:
        raise DataError("need at least 2 training rows")
    if k == 0:
        raise DataError("dataset has zero features")
    if L < 2 or len(np.unique(y)) < 2:
        raise DataError("single-class data cannot be fit")
    if params.n_trees < 1:
        raise DataError("n_trees must be >= 1")
    if params.min_leaf < 1:
        raise DataError("min_leaf must be >= 1")
    if params.class_weighting not in ("none", "balanced"):
        raise DataError(f"unknown class_weighting: {params.class_weighting!r}")
    if params.n_trees < 30:
        warnings.warn(
            "fewer than 30 trees: some rows may never be out-of-bag and "
            "OOB/GAP quantities will be undefined for them",
            stacklevel=2,
        )

    if params.class_weighting == "balanced":
        counts = np.bincount(y, minlength=L).astype(np.float64)
        class_weight = n / (L * counts)
    else:
        class_weight = np.ones(L)
    k_sub = resolve_max_features(params.max_features, k)

    trees: list[TreeRecord] = []
    streams = np.random.SeedSequence(params.seed).spawn(params.n_trees)
    for t in range(params.n_trees):
        rng = np.random.default_rng(streams[t])
        draws = rng.integers(0, n, size=n)
        mult = np.bincount(draws, minlength=n).astype(np.int64)
        weights = mult * class_weight[y]
        feature, threshold, left, right = _grow_tree(
            X, y, mult, weights, L,
            params.max_depth, params.min_leaf, k_sub, rng,
        )
        leaf_assignment = kernels.apply_tree(feature, threshold, left, right, X)

        n_nodes = feature.shape[0]
        votes_w = np.zeros((n_nodes, L))
        votes_r = np.zeros((n_nodes, L))
        ib = np.flatnonzero(mult > 0)
        np.add.at(votes_w, (leaf_assignment[ib], y[ib]), weights[ib])
        np.add.at(votes_r, (leaf_assignment[ib], y[ib]), mult[ib].astype(np.float64))
        for votes in (votes_w, votes_r):
            sums = votes.sum(axis=1, keepdims=True)
            np.divide(votes, sums, out=votes, where=sums > 0)

        trees.append(
            TreeRecord(
                feature=feature,
                threshold=threshold,
                left=left,
                right=right,
                votes_weighted=votes_w,
                votes_raw=votes_r,
                inbag_multiplicity=mult,
                leaf_assignment=leaf_assignment,
            )
        )

    forest = TrainedForest(
        trees=trees,
        params=params,
        n_classes=L,
        n_features=k,
        train_row_ids=list(dataset.row_ids),
        data_fingerprint=data_fingerprint(dataset),
    )
    if params.n_trees >= 30:
        never_oob = int((forest.inbag_matrix() == 0).sum(axis=0).min() == 0)
        if never_oob:
            warnings.warn(
                "at least one row is in-bag in every tree; its OOB/GAP "
                "quantities are undefined",
                stacklevel=2,
            )
    return forest


def predict_proba(forest: TrainedForest, X: np.ndarray) -> np.ndarray:
    """Mean of per-tree leaf class distributions; rows sum to 1.

    Accepts a single feature vector or a matrix; the output shape follows.
    """
    single = np.asarray(X).ndim == 1
    Xm = _check_features(forest, X)
    acc = np.zeros((Xm.shape[0], forest.n_classes))
    for t in forest.trees:
        acc += t.votes_weighted[t.apply(Xm)]
    acc /= forest.n_trees
    return acc[0] if single else acc


def predict(forest: TrainedForest, X: np.ndarray) -> np.ndarray:
    proba = np.atleast_2d(predict_proba(forest, X))
    return np.argmax(proba, axis=1)


def oob_predict(forest: TrainedForest) -> np.ndarray:
    """Out-of-bag label per training row, -1 where no tree left it out.

    Row i is voted on only by trees whose bootstrap missed it, using the
    raw multiplicity-proportional leaf distributions (not the
    class-weighted ones); this is the quantity GAP proximity votes recover.
    """
    n = forest.n_train
    acc = np.zeros((n, forest.n_classes))
    cnt = np.zeros(n)
    for t in forest.trees:
        oob = np.flatnonzero(t.inbag_multiplicity == 0)
        acc[oob] += t.votes_raw[t.leaf_assignment[oob]]
        cnt[oob] += 1.0
    labels = np.where(cnt > 0, np.argmax(acc, axis=1), -1)
    return labels.astype(np.int64)


def weighted_f1(predicted: np.ndarray, actual: np.ndarray) -> float:
    """Support-weighted mean of per-class F1 scores.

    Classes are taken from ``actual``; a class absent from ``actual``
    contributes nothing. Per-class F1 is 0 when precision + recall is 0.
    """
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    if predicted.shape != actual.shape or predicted.size == 0:
        raise DataError("weighted_f1 needs equal-length non-empty label arrays")
    classes = np.unique(actual)
    total = 0.0
    for c in classes:
        support = int((actual == c).sum())
        tp = int(((predicted == c) & (actual == c)).sum())
        fp = int(((predicted == c) & (actual != c)).sum())
        fn = int(((predicted != c) & (actual == c)).sum())
        denom = 2 * tp + fp + fn
        f1 = (2 * tp / denom) if denom > 0 else 0.0
        total += support * f1
    return total / actual.size


def expand_grid(lattice: dict) -> list[ForestParams]:
    """Cartesian product of a {field: [values]} lattice into params."""
    base = ForestParams()
    keys = list(lattice.keys())
    for key in keys:
        if key not in base.to_dict():
            raise DataError(f"unknown ForestParams field in grid: {key!r}")
    combos = []
    for values in itertools.product(*(lattice[k] for k in keys)):
        combos.append(replace(base, **dict(zip(keys, values))))
    return combos


@dataclass
class GridSearchResult:
    best: ForestParams
    grid: list[ForestParams]
    scores: np.ndarray  # (len(grid), k_folds) weighted F1 per fold
    mean_scores: np.ndarray


def _parsimony_key(p: ForestParams, n_features: int):
    depth = p.max_depth if p.max_depth is not None else np.inf
    frac = resolve_max_features(p.max_features, n_features) / n_features
    return (p.n_trees, depth, frac)


def grid_search(dataset: Dataset, grid, folds) -> GridSearchResult:
    """Pick the params with the best mean cross-validated weighted F1.

    ``grid`` is a list of :class:`ForestParams` or a ``{field: [values]}``
    lattice. Ties break toward fewer trees, then shallower depth, then a
    lower feature fraction. Per-fold seeds derive from each candidate's
    own seed so the search is reproducible.
    """
    if isinstance(grid, dict):
        grid = expand_grid(grid)
    if not grid:
        raise DataError("grid_search needs a non-empty grid")
    scores = np.zeros((len(grid), folds.k_folds))
    for gi, params in enumerate(grid):
        for f, train_rows, test_rows in folds.iter_folds():
            train = dataset.subset(train_rows)
            test = dataset.subset(test_rows)
            fold_seed = int(
                np.random.SeedSequence(params.seed, spawn_key=(f,))
                .generate_state(1)[0]
            )
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                model = fit(train, replace(params, seed=fold_seed))
            pred = predict(model, test.features)
            scores[gi, f] = weighted_f1(pred, test.labels)
    means = scores.mean(axis=1)
    order = sorted(
        range(len(grid)),
        key=lambda i: (-means[i],) + _parsimony_key(grid[i], dataset.n_features),
    )
    return GridSearchResult(
        best=grid[order[0]], grid=list(grid), scores=scores, mean_scores=means
    )


def save_forest(forest: TrainedForest, path) -> None:
    """Versioned binary serialization including all proximity bookkeeping."""
    offsets = np.zeros(forest.n_trees + 1, dtype=np.int64)
    for i, t in enumerate(forest.trees):
        offsets[i + 1] = offsets[i] + t.n_nodes
    meta = json.dumps(
        {
            "version": MODEL_VERSION,
            "params": forest.params.to_dict(),
            "n_classes": forest.n_classes,
            "n_features": forest.n_features,
            "data_fingerprint": forest.data_fingerprint,
        },
        sort_keys=True,
    )
    with open(path, "wb") as fh:  # keep the exact filename (no .npz suffix)
        np.savez(
            fh,
            meta=np.array(meta),
            offsets=offsets,
            feature=np.concatenate([t.feature for t in forest.trees]),
            threshold=np.concatenate([t.threshold for t in forest.trees]),
            left=np.concatenate([t.left for t in forest.trees]),
            right=np.concatenate([t.right for t in forest.trees]),
            votes_weighted=np.concatenate([t.votes_weighted for t in forest.trees]),
            votes_raw=np.concatenate([t.votes_raw for t in forest.trees]),
            inbag=forest.inbag_matrix(),
            leaf_assignment=forest.leaf_matrix(),
            row_ids=np.array(forest.train_row_ids, dtype=np.str_),
        )


def load_forest(path) -> TrainedForest:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("version") != MODEL_VERSION:
                raise ModelMismatchError(
                    f"unsupported model version: {meta.get('version')!r}"
                )
            offsets = z["offsets"]
            inbag = z["inbag"]
            leafasg = z["leaf_assignment"]
            trees = []
            for i in range(offsets.shape[0] - 1):
                s, e = int(offsets[i]), int(offsets[i + 1])
                trees.append(
                    TreeRecord(
                        feature=z["feature"][s:e].astype(np.int64),
                        threshold=z["threshold"][s:e].astype(np.float64),
                        left=z["left"][s:e].astype(np.int64),
                        right=z["right"][s:e].astype(np.int64),
                        votes_weighted=z["votes_weighted"][s:e],
                        votes_raw=z["votes_raw"][s:e],
                        inbag_multiplicity=inbag[i].astype(np.int64),
                        leaf_assignment=leafasg[i].astype(np.int64),
                    )
                )
            return TrainedForest(
                trees=trees,
                params=ForestParams.from_dict(meta["params"]),
                n_classes=int(meta["n_classes"]),
                n_features=int(meta["n_features"]),
                train_row_ids=[str(s) for s in z["row_ids"]],
                data_fingerprint=str(meta["data_fingerprint"]),
            )
    except FileNotFoundError:
        raise DataError(f"no such model file: {path}") from None


def check_model_dataset(forest: TrainedForest, dataset: Dataset) -> None:
    """Raise :class:`ModelMismatchError` unless the model was fit on it."""
    if forest.n_train != dataset.n_rows or forest.n_features != dataset.n_features:
        raise ModelMismatchError(
            f"model trained on {forest.n_train} rows x {forest.n_features} "
            f"features; dataset has {dataset.n_rows} x {dataset.n_features}"
        )
    if forest.data_fingerprint != data_fingerprint(dataset):
        raise ModelMismatchError("dataset content differs from training data")
