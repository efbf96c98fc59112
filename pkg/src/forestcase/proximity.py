"""Forest proximities (original, out-of-bag, GAP), their distance
conversions, the L2 baseline, and out-of-sample extension.

All three proximities are assembled from leaf-bucket accumulation over the
forest's stored bookkeeping (see ``forestcase.kernels``), never by an
O(T * n^2) per-pair tree walk. Distances are ``1 - proximity`` with the
GAP matrix symmetrized by arithmetic mean first; self-distance is forced
to 0.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from . import kernels
from .data import Dataset, ONEHOT
from .errors import DataError
from .forest import TrainedForest

MATRIX_VERSION = "forestcase-matrix-v1"

PROXIMITY_KINDS = ("original", "oob", "gap")


@dataclass
class ProximityMatrix:
    """n x n proximity values in [0, 1].

    ``defined_mask`` flags rows with a nonempty OOB tree set (always true
    for the original kind). For the oob kind, ``entry_mask`` additionally
    flags pairs that were never jointly out-of-bag; undefined values are
    stored as 0.
    """

    values: np.ndarray
    kind: str
    defined_mask: np.ndarray
    entry_mask: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass
class DistanceMatrix:
    """Symmetric non-negative distances with a zero diagonal.

    ``backend`` is ``"l2"`` or ``"forest-<kind>"``.
    """

    values: np.ndarray
    backend: str

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def validate(self) -> None:
        v = self.values
        if v.shape[0] != v.shape[1]:
            raise DataError("distance matrix must be square")
        if not np.array_equal(v, v.T):
            raise DataError("distance matrix must be symmetric")
        if np.any(np.diag(v) != 0.0):
            raise DataError("distance diagonal must be 0")
        if (v < 0).any():
            raise DataError("distances must be non-negative")


def proximity_original(forest: TrainedForest) -> ProximityMatrix:
    """Share of trees in which two rows land in the same leaf."""
    leaf = forest.leaf_matrix()
    counts = kernels.prox_original_counts(leaf)
    return ProximityMatrix(
        values=counts / forest.n_trees,
        kind="original",
        defined_mask=np.ones(forest.n_train, dtype=bool),
    )


def proximity_oob(forest: TrainedForest) -> ProximityMatrix:
    """Co-leaf share counted only over trees where both rows are OOB."""
    leaf = forest.leaf_matrix()
    inbag = forest.inbag_matrix()
    num, den = kernels.prox_oob_counts(leaf, inbag)
    defined = den > 0
    values = np.zeros_like(num)
    np.divide(num, den, out=values, where=defined)
    return ProximityMatrix(
        values=values,
        kind="oob",
        defined_mask=(inbag == 0).any(axis=0),
        entry_mask=defined,
    )


def proximity_gap(forest: TrainedForest) -> ProximityMatrix:
    """Geometry- and accuracy-preserving proximity.

    Row i averages, over the trees where i is out-of-bag, the in-bag
    multiplicity share of each co-leafed sample. Defined rows sum to 1 and
    the diagonal is 0.
    """
    leaf = forest.leaf_matrix()
    inbag = forest.inbag_matrix()
    S, s_count = kernels.prox_gap_sums(leaf, inbag)
    defined = s_count > 0
    values = np.zeros_like(S)
    np.divide(S, s_count[:, None], out=values, where=defined[:, None])
    return ProximityMatrix(values=values, kind="gap", defined_mask=defined)


def compute_proximity(forest: TrainedForest, kind: str) -> ProximityMatrix:
    if kind == "original":
        return proximity_original(forest)
    if kind == "oob":
        return proximity_oob(forest)
    if kind == "gap":
        return proximity_gap(forest)
    raise DataError(f"unknown proximity kind: {kind!r}")


def extend_gap(forest: TrainedForest, X: np.ndarray) -> np.ndarray:
    """GAP proximity rows from out-of-sample points to the training rows.

    The query is treated as out-of-bag in every tree, so each returned row
    is a probability distribution over the training rows (sums to 1).
    Accepts one vector or a matrix; returns (n,) or (q, n).
    """
    single = np.asarray(X).ndim == 1
    leaf_q = forest.apply_matrix(X)
    S = kernels.extend_gap_sums(forest.leaf_matrix(), forest.inbag_matrix(), leaf_q)
    S /= forest.n_trees
    return S[0] if single else S


def extend_proximity(forest: TrainedForest, X: np.ndarray, kind: str) -> np.ndarray:
    """Out-of-sample proximity rows for any kind; shape (q, n).

    For the oob kind, training rows that were never out-of-bag yield
    undefined entries, stored as 0.
    """
    single = np.asarray(X).ndim == 1
    if kind == "gap":
        out = np.atleast_2d(extend_gap(forest, X))
    elif kind == "original":
        leaf_q = forest.apply_matrix(X)
        out = kernels.extend_original_counts(forest.leaf_matrix(), leaf_q)
        out /= forest.n_trees
    elif kind == "oob":
        leaf_q = forest.apply_matrix(X)
        num, den = kernels.extend_oob_counts(
            forest.leaf_matrix(), forest.inbag_matrix(), leaf_q
        )
        out = np.zeros_like(num)
        np.divide(num, den[None, :], out=out, where=den[None, :] > 0)
    else:
        raise DataError(f"unknown proximity kind: {kind!r}")
    return out[0] if single else out


def to_distance(prox: ProximityMatrix) -> DistanceMatrix:
    """Distance = 1 - proximity, with GAP symmetrized first.

    Undefined rows/entries impute proximity 0 (distance 1); the diagonal
    is forced to 0 regardless.
    """
    p = prox.values
    if prox.kind == "gap":
        p = (p + p.T) / 2.0
    d = 1.0 - p
    if prox.entry_mask is not None:
        d[~prox.entry_mask] = 1.0
    undef = ~prox.defined_mask
    if undef.any():
        d[undef, :] = 1.0
        d[:, undef] = 1.0
    np.fill_diagonal(d, 0.0)
    np.clip(d, 0.0, 1.0, out=d)
    return DistanceMatrix(values=d, backend=f"forest-{prox.kind}")


class L2Standardizer:
    """Z-scores numeric columns with statistics from the training fold.

    One-hot columns pass through unscaled. Zero-variance numeric columns
    are excluded from the distance (with a warning), matching how they
    carry no information.
    """

    def __init__(self, mean, scale, use_col, onehot_mask):
        self.mean = mean
        self.scale = scale
        self.use_col = use_col
        self.onehot_mask = onehot_mask

    @classmethod
    def fit(cls, dataset: Dataset) -> "L2Standardizer":
        X = dataset.features
        onehot = np.array([m.kind == ONEHOT for m in dataset.column_meta])
        mean = X.mean(axis=0)
        sd = X.std(axis=0)
        use = np.ones(X.shape[1], dtype=bool)
        zero_var = (~onehot) & (sd == 0.0)
        if zero_var.any():
            names = [dataset.column_meta[j].name for j in np.flatnonzero(zero_var)]
            warnings.warn(
                f"excluding zero-variance numeric columns from L2: {names}",
                stacklevel=2,
            )
            use[zero_var] = False
        mean = np.where(onehot, 0.0, mean)
        scale = np.where(onehot | (sd == 0.0), 1.0, sd)
        return cls(mean=mean, scale=scale, use_col=use, onehot_mask=onehot)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Z = (X - self.mean) / self.scale
        return Z[:, self.use_col]


def l2_distance(dataset: Dataset, standardizer: L2Standardizer | None = None) -> DistanceMatrix:
    """Pairwise Euclidean distance on standardized features.

    With no explicit standardizer the statistics come from the dataset
    itself; pass one fit on the training fold to avoid leakage when the
    dataset is a held-out split.
    """
    if not dataset.is_encoded:
        raise DataError("l2_distance requires an encoded dataset")
    std = standardizer or L2Standardizer.fit(dataset)
    Z = std.transform(dataset.features)
    d = cdist(Z, Z, metric="euclidean")
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix(values=d, backend="l2")


def pairwise_l2(standardizer: L2Standardizer, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Cross distances between two row sets under one standardizer."""
    return cdist(standardizer.transform(A), standardizer.transform(B), "euclidean")


def matrix_to_csv(values: np.ndarray, row_ids, path) -> None:
    """Write a square matrix as CSV with row/column ids in the header."""
    n = values.shape[0]
    if len(row_ids) != n:
        raise DataError("row_ids length does not match matrix size")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + list(row_ids))
        for i in range(n):
            writer.writerow([row_ids[i]] + [repr(v) for v in values[i]])


def save_matrix(obj, path, forest_hash: str = "") -> None:
    """Versioned binary cache of a proximity or distance matrix."""
    if isinstance(obj, ProximityMatrix):
        meta = {"version": MATRIX_VERSION, "type": "proximity",
                "kind": obj.kind, "forest_hash": forest_hash}
        arrays = {"values": obj.values, "defined_mask": obj.defined_mask}
        if obj.entry_mask is not None:
            arrays["entry_mask"] = obj.entry_mask
    elif isinstance(obj, DistanceMatrix):
        meta = {"version": MATRIX_VERSION, "type": "distance",
                "backend": obj.backend, "forest_hash": forest_hash}
        arrays = {"values": obj.values}
    else:
        raise DataError(f"cannot cache object of type {type(obj).__name__}")
    with open(path, "wb") as fh:  # keep the exact filename (no .npz suffix)
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_matrix(path, expect_forest_hash: str | None = None):
    """Load a cached matrix; optionally verify the forest hash key."""
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("version") != MATRIX_VERSION:
                raise DataError(
                    f"unsupported matrix cache version: {meta.get('version')!r}"
                )
            if (
                expect_forest_hash is not None
                and meta.get("forest_hash") != expect_forest_hash
            ):
                raise DataError("matrix cache was built from a different forest")
            if meta["type"] == "proximity":
                return ProximityMatrix(
                    values=z["values"],
                    kind=meta["kind"],
                    defined_mask=z["defined_mask"],
                    entry_mask=z["entry_mask"] if "entry_mask" in z.files else None,
                )
            return DistanceMatrix(values=z["values"], backend=meta["backend"])
    except FileNotFoundError:
        raise DataError(f"no such matrix file: {path}") from None
