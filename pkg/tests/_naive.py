"""Independent naive implementations used as test oracles.

Everything here recomputes results from first principles with plain
Python loops: tree routing walks the node arrays directly, proximities
follow their defining formulas pair by pair, selections do exhaustive
scans. Nothing imports the package's kernels, so agreement between these
and the library is a genuine dual-route check.
"""

import itertools

import numpy as np


def naive_apply(tree, x):
    """Route one feature vector through a tree's node arrays."""
    v = 0
    while tree.feature[v] >= 0:
        if x[tree.feature[v]] <= tree.threshold[v]:
            v = tree.left[v]
        else:
            v = tree.right[v]
    return v


def naive_leaf_matrix(forest, X):
    return np.array(
        [[naive_apply(t, X[i]) for i in range(X.shape[0])] for t in forest.trees]
    )


def naive_original(forest, X):
    """Eq.-by-eq original proximity: share of trees co-leafing i and j."""
    leaf = naive_leaf_matrix(forest, X)
    T, n = leaf.shape
    P = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            hits = 0
            for t in range(T):
                if leaf[t, i] == leaf[t, j]:
                    hits += 1
            P[i, j] = hits / T
    return P


def naive_oob(forest, X):
    """OOB proximity with per-entry undefined mask (None -> 0, mask)."""
    leaf = naive_leaf_matrix(forest, X)
    inbag = np.array([t.inbag_multiplicity for t in forest.trees])
    T, n = leaf.shape
    P = np.zeros((n, n))
    defined = np.zeros((n, n), dtype=bool)
    for i in range(n):
        s_i = [t for t in range(T) if inbag[t, i] == 0]
        for j in range(n):
            num = sum(
                1 for t in s_i if inbag[t, j] == 0 and leaf[t, i] == leaf[t, j]
            )
            den = sum(1 for t in s_i if inbag[t, j] == 0)
            if den > 0:
                P[i, j] = num / den
                defined[i, j] = True
    return P, defined


def naive_gap(forest, X):
    """GAP proximity straight from its definition."""
    leaf = naive_leaf_matrix(forest, X)
    inbag = np.array([t.inbag_multiplicity for t in forest.trees])
    T, n = leaf.shape
    P = np.zeros((n, n))
    row_defined = np.zeros(n, dtype=bool)
    for i in range(n):
        s_i = [t for t in range(T) if inbag[t, i] == 0]
        if not s_i:
            continue
        row_defined[i] = True
        for j in range(n):
            acc = 0.0
            for t in s_i:
                in_leaf = [
                    jj for jj in range(n)
                    if leaf[t, jj] == leaf[t, i] and inbag[t, jj] > 0
                ]
                M = sum(int(inbag[t, jj]) for jj in in_leaf)
                if inbag[t, j] > 0 and leaf[t, j] == leaf[t, i] and M > 0:
                    acc += inbag[t, j] / M
            P[i, j] = acc / len(s_i)
    return P, row_defined


def brute_semi_factual(q, d, labels):
    """Exhaustive same-label argmax scan (ties: lowest index)."""
    best, best_d = None, -np.inf
    for x in range(len(labels)):
        if x == q or labels[x] != labels[q]:
            continue
        if d[q, x] > best_d:
            best, best_d = x, d[q, x]
    return best


def brute_counter_factual(q, d, labels):
    """Exhaustive different-label argmin scan (ties: lowest index)."""
    best, best_d = None, np.inf
    for x in range(len(labels)):
        if labels[x] == labels[q]:
            continue
        if d[q, x] < best_d:
            best, best_d = x, d[q, x]
    return best


def exhaustive_kmedoids_objective(D, k):
    """Global optimum of the k-medoids objective by full enumeration."""
    m = D.shape[0]
    best = np.inf
    for combo in itertools.combinations(range(m), min(k, m)):
        obj = sum(min(D[p, c] for c in combo) for p in range(m))
        best = min(best, obj)
    return best


def brute_nearest_prototype(dist_rows, proto_labels):
    """Per row: label of the nearest prototype, first index on ties."""
    out = []
    for row in dist_rows:
        best_j = 0
        for j in range(1, len(row)):
            if row[j] < row[best_j]:
                best_j = j
        out.append(proto_labels[best_j])
    return np.array(out)


def brute_hdp_first_score(prox, labels, cls, k):
    """Score every member of a class by its top-k same-class proximity sum."""
    rows = [i for i in range(len(labels)) if labels[i] == cls]
    scores = {}
    for x in rows:
        others = sorted(
            (prox[x, j] for j in rows if j != x), reverse=True
        )
        scores[x] = sum(others[:k])
    return scores
