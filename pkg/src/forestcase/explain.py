"""Selection of the four explanation point types from training data:
high-density prototypes, k-medoid prototypes, witness-function critics,
and per-query semi-/counter-factuals.

Every selector works against either a proximity matrix or a distance
matrix backend; proximity-consuming selectors read a distance matrix as
``1 - d``. All ties break toward the lower row index so repeated runs are
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .proximity import DistanceMatrix, ProximityMatrix


def proximity_view(mat) -> np.ndarray:
    """Proximity values from either matrix type (distance becomes 1 - d)."""
    if isinstance(mat, ProximityMatrix):
        return mat.values
    if isinstance(mat, DistanceMatrix):
        return 1.0 - mat.values
    raise DataError(f"expected a proximity or distance matrix, got {type(mat)}")


def distance_view(mat) -> np.ndarray:
    """Distance values from either matrix type (proximity becomes 1 - p)."""
    if isinstance(mat, DistanceMatrix):
        return mat.values
    if isinstance(mat, ProximityMatrix):
        return 1.0 - mat.values
    raise DataError(f"expected a proximity or distance matrix, got {type(mat)}")


@dataclass
class PrototypeSet:
    """Per-class ordered prototype row indices."""

    per_class: dict[int, list[int]]
    method: str  # "hdp" | "kmedoids"
    backend: str
    short_classes: list[int] = field(default_factory=list)  # quota not met

    def flatten(self) -> tuple[np.ndarray, np.ndarray]:
        """(indices, labels) in class order; defines prototype tie order."""
        idx: list[int] = []
        lab: list[int] = []
        for c in sorted(self.per_class):
            for p in self.per_class[c]:
                idx.append(p)
                lab.append(c)
        return np.asarray(idx, dtype=np.int64), np.asarray(lab, dtype=np.int64)

    @property
    def total(self) -> int:
        return sum(len(v) for v in self.per_class.values())

    def counts(self) -> dict[int, int]:
        return {c: len(v) for c, v in self.per_class.items()}


@dataclass
class CriticSet:
    """Non-prototype rows ordered by descending witness value."""

    indices: np.ndarray
    witness_values: np.ndarray


@dataclass(frozen=True)
class FactualPair:
    query: int
    semi_factual: int
    counter_factual: int
    backend: str


def _normalize_quota(labels: np.ndarray, n_per_class) -> dict[int, int]:
    classes = np.unique(labels)
    if isinstance(n_per_class, dict):
        quota = {int(c): int(n_per_class.get(int(c), 0)) for c in classes}
    else:
        quota = {int(c): int(n_per_class) for c in classes}
    for c, q in quota.items():
        if q < 1:
            raise DataError(f"need at least one prototype for class {c}")
    return quota


def hdp_prototypes(
    mat, labels: np.ndarray, n_per_class, k_neighbors: int | None = None
) -> PrototypeSet:
    """High-density prototypes.

    Iteratively picks the class member with the largest summed proximity
    to its ``k_neighbors`` nearest same-class neighbours still in the
    pool, then drops the pick and those neighbours, until the quota is
    reached or the class runs out (short classes are flagged, not fatal).
    ``k_neighbors`` defaults per class to ``ceil(size / (2 * quota))``.
    """
    if k_neighbors is not None and k_neighbors < 1:
        raise DataError("k_neighbors must be >= 1")
    prox = proximity_view(mat)
    labels = np.asarray(labels)
    quota = _normalize_quota(labels, n_per_class)
    per_class: dict[int, list[int]] = {}
    short: list[int] = []
    for c in sorted(quota):
        rows = np.flatnonzero(labels == c)
        k = k_neighbors or max(1, int(np.ceil(rows.size / (2.0 * quota[c]))))
        pool = list(rows)
        chosen: list[int] = []
        while len(chosen) < quota[c] and pool:
            sub = prox[np.ix_(pool, pool)].copy()
            np.fill_diagonal(sub, -np.inf)
            kk = min(k, len(pool) - 1)
            if kk == 0:
                chosen.append(pool.pop(0))
                continue
            # top-kk neighbour proximity sum per pool member
            part = -np.partition(-sub, kk - 1, axis=1)[:, :kk]
            scores = part.sum(axis=1)
            best = int(np.argmax(scores))
            order = np.argsort(-sub[best], kind="stable")[:kk]
            winner = pool[best]
            removed = {winner} | {pool[j] for j in order}
            chosen.append(winner)
            pool = [r for r in pool if r not in removed]
        if len(chosen) < quota[c]:
            short.append(c)
        per_class[c] = chosen
    backend = mat.backend if isinstance(mat, DistanceMatrix) else f"prox-{mat.kind}"
    return PrototypeSet(per_class=per_class, method="hdp",
                        backend=backend, short_classes=short)


def _pam_objective(D: np.ndarray, medoids: list[int]) -> float:
    return float(D[:, medoids].min(axis=1).sum())


def _pam_build(D: np.ndarray, k: int) -> list[int]:
    m = D.shape[0]
    first = int(np.argmin(D.sum(axis=0)))
    medoids = [first]
    nearest = D[:, first].copy()
    while len(medoids) < k:
        gains = np.maximum(nearest[None, :] - D, 0.0).sum(axis=1)
        gains[medoids] = -np.inf
        nxt = int(np.argmax(gains))
        medoids.append(nxt)
        nearest = np.minimum(nearest, D[:, nxt])
    return medoids


def _pam_swap(D: np.ndarray, medoids: list[int], max_swaps: int) -> list[int]:
    m = D.shape[0]
    medoids = list(medoids)
    objective = _pam_objective(D, medoids)
    for _ in range(max_swaps):
        med = np.asarray(medoids)
        dist_to_med = D[:, med]  # (m, k)
        order = np.argsort(dist_to_med, axis=1, kind="stable")
        nearest_j = order[:, 0]
        nearest = dist_to_med[np.arange(m), nearest_j]
        second = (
            dist_to_med[np.arange(m), order[:, 1]]
            if med.size > 1
            else np.full(m, np.inf)
        )
        non_med = np.setdiff1d(np.arange(m), med)
        if non_med.size == 0:
            break
        # delta[j, o]: objective change when medoid j is replaced by o
        d_po = D[:, non_med]  # (m, q)
        best_delta = 0.0
        best_swap = None
        for j in range(med.size):
            served = nearest_j == j
            alt = np.where(
                served[:, None],
                np.minimum(d_po, second[:, None]),
                np.minimum(d_po, nearest[:, None]),
            )
            deltas = alt.sum(axis=0) - nearest.sum()
            o = int(np.argmin(deltas))
            if deltas[o] < best_delta:
                best_delta = float(deltas[o])
                best_swap = (j, int(non_med[o]))
        if best_swap is None:
            break
        trial = list(medoids)
        trial[best_swap[0]] = best_swap[1]
        trial_obj = _pam_objective(D, trial)
        if trial_obj >= objective:
            break  # fp-noise delta; keep the current medoids
        medoids, objective = trial, trial_obj
    return sorted(medoids)


def kmedoids_prototypes(
    dist: DistanceMatrix, labels: np.ndarray, n_per_class,
    seed: int = 0, max_swaps: int = 200,
) -> PrototypeSet:
    """Per-class PAM medoids: greedy build then swap descent.

    The objective (summed distance of class members to their nearest
    same-class medoid) is non-increasing across swaps and the search stops
    at a local optimum or after ``max_swaps``. Deterministic; ``seed`` is
    accepted for interface stability but the greedy build uses no
    randomness.
    """
    del seed
    D = distance_view(dist)
    labels = np.asarray(labels)
    quota = _normalize_quota(labels, n_per_class)
    per_class: dict[int, list[int]] = {}
    short: list[int] = []
    for c in sorted(quota):
        rows = np.flatnonzero(labels == c)
        if rows.size == 0:
            raise DataError(f"class {c} has no rows")
        k = min(quota[c], rows.size)
        if k < quota[c]:
            short.append(c)
        sub = D[np.ix_(rows, rows)]
        local = _pam_swap(sub, _pam_build(sub, k), max_swaps)
        per_class[c] = [int(rows[j]) for j in local]
    backend = dist.backend if isinstance(dist, DistanceMatrix) else "matrix"
    return PrototypeSet(per_class=per_class, method="kmedoids",
                        backend=backend, short_classes=short)


def kmedoids_objective(dist, labels, prototypes: PrototypeSet) -> float:
    """Summed within-class nearest-medoid distance (for verification)."""
    D = distance_view(dist)
    total = 0.0
    for c, meds in prototypes.per_class.items():
        rows = np.flatnonzero(np.asarray(labels) == c)
        total += float(D[np.ix_(rows, meds)].min(axis=1).sum())
    return total


def witness_values(prototypes: PrototypeSet, mat) -> np.ndarray:
    """Witness value of every row: mean proximity to all training rows
    minus mean proximity to the pooled prototypes."""
    prox = proximity_view(mat)
    proto_idx, _ = prototypes.flatten()
    if proto_idx.size == 0:
        raise DataError("witness needs a non-empty prototype set")
    return prox.mean(axis=1) - prox[:, proto_idx].mean(axis=1)


def witness(row: int, prototypes: PrototypeSet, mat) -> float:
    return float(witness_values(prototypes, mat)[row])


def select_critics(
    prototypes: PrototypeSet, mat, m_critics: int,
    labels: np.ndarray | None = None, per_class: bool = False,
) -> CriticSet:
    """Top witness-value rows outside the prototype set, descending.

    With ``per_class`` the quota applies within each class (labels
    required); the default pools candidates globally.
    """
    if m_critics < 1:
        raise DataError("m_critics must be >= 1")
    w = witness_values(prototypes, mat)
    proto_idx, _ = prototypes.flatten()
    is_proto = np.zeros(w.shape[0], dtype=bool)
    is_proto[proto_idx] = True
    order = np.argsort(-w, kind="stable")
    order = order[~is_proto[order]]
    if per_class:
        if labels is None:
            raise DataError("per-class critics need labels")
        labels = np.asarray(labels)
        picked: list[int] = []
        for c in np.unique(labels):
            members = order[labels[order] == c]
            if members.size < m_critics:
                raise DataError(
                    f"class {c} has only {members.size} non-prototype rows, "
                    f"fewer than m_critics={m_critics}"
                )
            picked.extend(members[:m_critics].tolist())
        chosen = np.asarray(picked, dtype=np.int64)
        # keep global witness ordering within the pooled per-class picks
        chosen = chosen[np.argsort(-w[chosen], kind="stable")]
    else:
        if order.size < m_critics:
            raise DataError(
                f"only {order.size} non-prototype rows available, "
                f"fewer than m_critics={m_critics}"
            )
        chosen = order[:m_critics]
    return CriticSet(indices=chosen, witness_values=w[chosen])


def semi_factual(q: int, dist, labels: np.ndarray) -> int:
    """Same-label row farthest from the query (ties: lower index)."""
    d = distance_view(dist)
    labels = np.asarray(labels)
    cand = np.flatnonzero((labels == labels[q]) & (np.arange(labels.size) != q))
    if cand.size == 0:
        raise DataError(f"row {q} is the only member of its class")
    return int(cand[np.argmax(d[q, cand])])


def counter_factual(q: int, dist, labels: np.ndarray) -> int:
    """Different-label row nearest to the query (ties: lower index)."""
    d = distance_view(dist)
    labels = np.asarray(labels)
    cand = np.flatnonzero(labels != labels[q])
    if cand.size == 0:
        raise DataError("counter-factual needs at least one other class")
    return int(cand[np.argmin(d[q, cand])])


def factual_pairs(dist, labels: np.ndarray, queries=None) -> list[FactualPair]:
    """Semi- and counter-factual for each query row (default: all rows)."""
    labels = np.asarray(labels)
    if queries is None:
        queries = range(labels.size)
    backend = dist.backend if isinstance(dist, DistanceMatrix) else "matrix"
    return [
        FactualPair(
            query=int(q),
            semi_factual=semi_factual(int(q), dist, labels),
            counter_factual=counter_factual(int(q), dist, labels),
            backend=backend,
        )
        for q in queries
    ]


def nearest_prototype_predict(
    dist_to_protos: np.ndarray, prototypes: PrototypeSet
) -> np.ndarray:
    """Label of the globally nearest prototype per query row.

    ``dist_to_protos`` columns must align with ``prototypes.flatten()``;
    ties resolve to the lower flattened prototype index.
    """
    _, proto_labels = prototypes.flatten()
    d = np.atleast_2d(dist_to_protos)
    if d.shape[1] != proto_labels.size:
        raise DataError("distance columns do not match prototype count")
    return proto_labels[np.argmin(d, axis=1)]


@dataclass
class ExplanationBundle:
    """Everything selected for one (method, backend) configuration."""

    prototypes: PrototypeSet
    critics: CriticSet
    factuals: list[FactualPair]

    def to_json_obj(self, row_ids: list[str]) -> dict:
        return {
            "prototypes": {
                str(c): [row_ids[i] for i in self.prototypes.per_class[c]]
                for c in sorted(self.prototypes.per_class)
            },
            "method": self.prototypes.method,
            "backend": self.prototypes.backend,
            "critics": [
                {"row_id": row_ids[int(i)], "witness": float(w)}
                for i, w in zip(self.critics.indices, self.critics.witness_values)
            ],
            "factuals": [
                {
                    "query_id": row_ids[p.query],
                    "semi_id": row_ids[p.semi_factual],
                    "counter_id": row_ids[p.counter_factual],
                }
                for p in self.factuals
            ],
        }
