"""Evaluation metrics for explanation points.

Distance-dependent metrics are meant to be computed twice, once per
distance backend (L2 and the forest-derived one); the pipeline owns that
dual bookkeeping, these functions just score. Metrics that cannot be
evaluated (zero feature changes, zero proximity mass, zero-distance
neighbour with a different prediction) return ``None`` — masked, never
infinity — and :func:`masked_mean` aggregates around the gaps.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset, ONEHOT
from .errors import DataError
from .explain import (
    PrototypeSet,
    distance_view,
    nearest_prototype_predict,
    proximity_view,
)
from .forest import weighted_f1


def masked_mean(values) -> tuple[float | None, int]:
    """Mean of the unmasked values plus the masked count."""
    values = list(values)
    vals = [v for v in values if v is not None]
    n_masked = len(values) - len(vals)
    if not vals:
        return None, n_masked
    return float(np.mean(vals)), n_masked


def pair_distance(q: int, e: int, dist) -> float:
    return float(distance_view(dist)[q, e])


def sparsity(
    q_vec: np.ndarray, e_vec: np.ndarray, dataset: Dataset,
    numeric_tol: float = 0.0,
) -> float | None:
    """Reciprocal of the number of changed features.

    One-hot groups count as a single feature (changed when any member
    differs); numeric features count as changed when they differ by more
    than ``numeric_tol``. Identical vectors return ``None`` (masked).
    """
    q_vec = np.asarray(q_vec, dtype=np.float64)
    e_vec = np.asarray(e_vec, dtype=np.float64)
    if q_vec.shape != e_vec.shape or q_vec.shape[0] != dataset.n_features:
        raise DataError("sparsity needs two vectors matching the dataset width")
    changed = 0
    seen_groups: set[str] = set()
    for j, m in enumerate(dataset.column_meta):
        if m.kind == ONEHOT:
            if m.group in seen_groups:
                continue
            seen_groups.add(m.group)
            cols = [
                jj for jj, mm in enumerate(dataset.column_meta)
                if mm.kind == ONEHOT and mm.group == m.group
            ]
            if not np.array_equal(q_vec[cols], e_vec[cols]):
                changed += 1
        else:
            if abs(q_vec[j] - e_vec[j]) > numeric_tol:
                changed += 1
    if changed == 0:
        return None
    return 1.0 / changed


def ood_distance(
    e: int, dist, reference=None, exclude_self: bool = True
) -> float:
    """Distance from the explanans to the nearest training instance."""
    d = distance_view(dist)
    ref = np.arange(d.shape[0]) if reference is None else np.asarray(reference)
    if exclude_self:
        ref = ref[ref != e]
    if ref.size == 0:
        raise DataError("ood_distance has an empty reference set")
    return float(d[e, ref].min())


def outlier_score(e: int, prox, labels: np.ndarray) -> float | None:
    """In-class count over summed squared same-class proximities.

    The explanans itself is excluded from both the count and the sum. A
    zero denominator (no proximity mass to the class) returns ``None``.
    """
    p = proximity_view(prox)
    labels = np.asarray(labels)
    same = np.flatnonzero((labels == labels[e]) & (np.arange(labels.size) != e))
    if same.size == 0:
        raise DataError(f"row {e} has no same-class rows to score against")
    den = float((p[e, same] ** 2).sum())
    if den == 0.0:
        return None
    return same.size / den


def confusability(e: int, prox, labels: np.ndarray) -> float | None:
    score = outlier_score(e, prox, labels)
    return None if score is None else 1.0 - score


def diversity(indices, dist) -> float:
    """Mean pairwise distance among the explanation points (0 for one)."""
    idx = np.asarray(list(indices), dtype=np.int64)
    if idx.size == 0:
        raise DataError("diversity of an empty set is undefined")
    if idx.size == 1:
        return 0.0
    d = distance_view(dist)
    sub = d[np.ix_(idx, idx)]
    m = idx.size
    return float(sub[np.triu_indices(m, k=1)].mean())


def robustness(
    q: int, probs: np.ndarray, dist,
    k: int | None = 10, radius: float | None = None,
) -> float | None:
    """Local Lipschitz estimate of the model around row ``q``.

    ``probs`` holds the forest probability vector of every training row.
    The neighbourhood is the ``k`` nearest training rows (or all rows
    within ``radius``). Zero-distance neighbours with an identical
    prediction are skipped; with a differing prediction the metric is
    masked (``None``). Returns 0 when every neighbour was skipped.
    """
    if (k is None) == (radius is None):
        raise DataError("robustness needs exactly one of k or radius")
    d = distance_view(dist)
    n = d.shape[0]
    others = np.flatnonzero(np.arange(n) != q)
    if radius is not None:
        nbrs = others[d[q, others] <= radius]
    else:
        order = np.argsort(d[q, others], kind="stable")
        nbrs = others[order[:k]]
    if nbrs.size == 0:
        raise DataError(f"row {q} has an empty neighbourhood")
    best = 0.0
    for i in nbrs:
        dq = d[q, i]
        df = float(np.linalg.norm(probs[q] - probs[i]))
        if dq == 0.0:
            if df == 0.0:
                continue
            return None
        best = max(best, df / dq)
    return best


def prototype_assignments(
    prototypes: PrototypeSet, dist, labels: np.ndarray
) -> dict[int, np.ndarray]:
    """Rows represented by each prototype: same-class rows whose nearest
    same-class prototype it is (ties go to the earlier prototype)."""
    d = distance_view(dist)
    labels = np.asarray(labels)
    out: dict[int, np.ndarray] = {}
    for c, protos in prototypes.per_class.items():
        rows = np.flatnonzero(labels == c)
        if not protos:
            continue
        sub = d[np.ix_(rows, protos)]
        owner = np.argmin(sub, axis=1)
        for j, p in enumerate(protos):
            out[int(p)] = rows[owner == j]
    return out


def compactness(prototype: int, assigned, dist) -> float:
    """Mean distance from a prototype to the rows it represents
    (itself excluded); 0 when it represents only itself."""
    d = distance_view(dist)
    assigned = np.asarray(assigned)
    assigned = assigned[assigned != prototype]
    if assigned.size == 0:
        return 0.0
    return float(d[prototype, assigned].mean())


def nearest_prototype_f1(
    dist_to_protos: np.ndarray, prototypes: PrototypeSet, y_true: np.ndarray
) -> float:
    """Weighted F1 of the nearest-prototype predictor on a held-out set."""
    pred = nearest_prototype_predict(dist_to_protos, prototypes)
    return weighted_f1(pred, np.asarray(y_true))
