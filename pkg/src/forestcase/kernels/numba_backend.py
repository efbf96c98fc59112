"""Numba-compiled twins of the ``numpy_backend`` kernels.

Same signatures, same arithmetic order, bit-identical results; see the
docstrings there. ``fastmath`` stays off everywhere: reassociation would
break the exact equivalence the tests assert.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def best_split_node(X, w, y, idx, feats, n_classes, min_leaf):
    m = idx.shape[0]
    best_feat = np.int64(-1)
    best_thr = 0.0
    best_score = np.inf
    if m < 2 * min_leaf:
        return best_feat, best_thr, best_score
    lo = min_leaf - 1
    hi = m - 1 - min_leaf

    col = np.empty(m)
    ws = np.empty(m)
    ys = np.empty(m, dtype=np.int64)
    cwm = np.empty((m, n_classes))

    for fi in range(feats.shape[0]):
        f = feats[fi]
        for r in range(m):
            col[r] = X[idx[r], f]
        order = np.argsort(col, kind="mergesort")
        if col[order[0]] == col[order[m - 1]]:
            continue
        for r in range(m):
            ws[r] = w[idx[order[r]]]
            ys[r] = y[idx[order[r]]]
        for c in range(n_classes):
            cwm[0, c] = 0.0
        cwm[0, ys[0]] = ws[0]
        for r in range(1, m):
            for c in range(n_classes):
                cwm[r, c] = cwm[r - 1, c]
            cwm[r, ys[r]] += ws[r]

        wtot = 0.0
        for c in range(n_classes):
            wtot += cwm[m - 1, c]

        for i in range(lo, hi + 1):
            if col[order[i]] == col[order[i + 1]]:
                continue
            wl = 0.0
            ssql = 0.0
            ssqr = 0.0
            for c in range(n_classes):
                cc = cwm[i, c]
                wl += cc
                ssql += cc * cc
                rc = cwm[m - 1, c] - cc
                ssqr += rc * rc
            wr = wtot - wl
            score = (wl - ssql / wl) + (wr - ssqr / wr)
            if score < best_score:
                best_score = score
                best_feat = f
                best_thr = (col[order[i]] + col[order[i + 1]]) / 2.0
    return best_feat, best_thr, best_score


@njit(cache=True)
def apply_tree(feature, threshold, left, right, X):
    q = X.shape[0]
    node = np.zeros(q, dtype=np.int64)
    for r in range(q):
        v = np.int64(0)
        while feature[v] >= 0:
            if X[r, feature[v]] <= threshold[v]:
                v = left[v]
            else:
                v = right[v]
        node[r] = v
    return node


@njit(cache=True)
def _sorted_runs(lf):
    """Stable sort of leaf ids; returns (order, run start offsets incl. end)."""
    n = lf.shape[0]
    order = np.argsort(lf, kind="mergesort")
    starts = np.empty(n + 1, dtype=np.int64)
    n_runs = 0
    starts[0] = 0
    for r in range(1, n):
        if lf[order[r]] != lf[order[r - 1]]:
            n_runs += 1
            starts[n_runs] = r
    n_runs += 1
    starts[n_runs] = n
    return order, starts[: n_runs + 1]


@njit(cache=True)
def prox_original_counts(leaf):
    T, n = leaf.shape
    C = np.zeros((n, n))
    for t in range(T):
        order, starts = _sorted_runs(leaf[t])
        for b in range(starts.shape[0] - 1):
            s, e = starts[b], starts[b + 1]
            for ii in range(s, e):
                i = order[ii]
                for jj in range(s, e):
                    C[i, order[jj]] += 1.0
    return C


@njit(cache=True)
def prox_oob_counts(leaf, inbag):
    T, n = leaf.shape
    num = np.zeros((n, n))
    den = np.zeros((n, n))
    oob = np.empty(n, dtype=np.int64)
    for t in range(T):
        n_oob = 0
        for r in range(n):
            if inbag[t, r] == 0:
                oob[n_oob] = r
                n_oob += 1
        if n_oob == 0:
            continue
        for ii in range(n_oob):
            i = oob[ii]
            for jj in range(n_oob):
                den[i, oob[jj]] += 1.0
        order, starts = _sorted_runs(leaf[t][oob[:n_oob]].copy())
        for b in range(starts.shape[0] - 1):
            s, e = starts[b], starts[b + 1]
            for ii in range(s, e):
                i = oob[order[ii]]
                for jj in range(s, e):
                    num[i, oob[order[jj]]] += 1.0
    return num, den


@njit(cache=True)
def prox_gap_sums(leaf, inbag):
    T, n = leaf.shape
    S = np.zeros((n, n))
    s_count = np.zeros(n, dtype=np.int64)
    for r in range(n):
        for t in range(T):
            if inbag[t, r] == 0:
                s_count[r] += 1
    for t in range(T):
        order, starts = _sorted_runs(leaf[t])
        for b in range(starts.shape[0] - 1):
            s, e = starts[b], starts[b + 1]
            M = 0.0
            has_oob = False
            for jj in range(s, e):
                cj = inbag[t, order[jj]]
                if cj > 0:
                    M += cj
                else:
                    has_oob = True
            if M == 0.0 or not has_oob:
                continue
            for ii in range(s, e):
                i = order[ii]
                if inbag[t, i] != 0:
                    continue
                for jj in range(s, e):
                    j = order[jj]
                    cj = inbag[t, j]
                    if cj > 0:
                        S[i, j] += cj / M
    return S, s_count


@njit(cache=True)
def extend_original_counts(leaf_train, leaf_q):
    T, n = leaf_train.shape
    q = leaf_q.shape[1]
    C = np.zeros((q, n))
    for t in range(T):
        for x in range(q):
            lq = leaf_q[t, x]
            for j in range(n):
                if leaf_train[t, j] == lq:
                    C[x, j] += 1.0
    return C


@njit(cache=True)
def extend_oob_counts(leaf_train, inbag, leaf_q):
    T, n = leaf_train.shape
    q = leaf_q.shape[1]
    num = np.zeros((q, n))
    den = np.zeros(n)
    for j in range(n):
        for t in range(T):
            if inbag[t, j] == 0:
                den[j] += 1.0
    for t in range(T):
        for x in range(q):
            lq = leaf_q[t, x]
            for j in range(n):
                if inbag[t, j] == 0 and leaf_train[t, j] == lq:
                    num[x, j] += 1.0
    return num, den


@njit(cache=True)
def extend_gap_sums(leaf_train, inbag, leaf_q):
    T, n = leaf_train.shape
    q = leaf_q.shape[1]
    S = np.zeros((q, n))
    n_nodes_hint = np.int64(1)
    for t in range(T):
        for j in range(n):
            if leaf_train[t, j] + 1 > n_nodes_hint:
                n_nodes_hint = leaf_train[t, j] + 1
    mleaf = np.empty(n_nodes_hint)
    for t in range(T):
        mleaf[:] = 0.0
        for j in range(n):
            mleaf[leaf_train[t, j]] += inbag[t, j]
        for x in range(q):
            lq = leaf_q[t, x]
            M = mleaf[lq]
            for j in range(n):
                if leaf_train[t, j] == lq and inbag[t, j] > 0:
                    S[x, j] += inbag[t, j] / M
    return S
