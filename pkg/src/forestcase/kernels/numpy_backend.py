"""Pure numpy implementations of the hot kernels.

Every function has a twin of the same name in ``numba_backend``. The two
must stay bit-identical: accumulation order matters for the weighted
cumulative sums in ``best_split_node`` (sequential scans, class loop in
ascending order), while the proximity kernels only ever sum integers and
single-quotient terms, which are order-free in float64.
"""

import numpy as np


def best_split_node(X, w, y, idx, feats, n_classes, min_leaf):
    """Best Gini split for one tree node.

    Parameters
    ----------
    X : (n, k) float64
        Full feature matrix.
    w : (n,) float64
        Per-row weights (bootstrap multiplicity times class weight).
    y : (n,) int64
        Dense class ids.
    idx : (m,) int64
        Rows in this node (in-bag rows only).
    feats : (F,) int64
        Candidate feature columns, scanned in the given order.
    min_leaf : int
        Minimum number of distinct rows required in each child.

    Returns
    -------
    (feat, threshold, score) : feat is -1 when no valid split exists.
        Score is the summed child weight-Gini ``W*(1 - sum_c p_c^2)``;
        lower is better. Ties keep the earlier feature / lower threshold.
    """
    m = idx.shape[0]
    best_feat = -1
    best_thr = 0.0
    best_score = np.inf
    if m < 2 * min_leaf:
        return best_feat, best_thr, best_score
    ysub = y[idx]
    wsub = w[idx]
    lo = min_leaf - 1
    hi = m - 1 - min_leaf
    for f in feats:
        col = X[idx, f]
        order = np.argsort(col, kind="stable")
        xs = col[order]
        if xs[0] == xs[m - 1]:
            continue
        ws = wsub[order]
        ys = ysub[order]
        cwm = np.zeros((m, n_classes))
        cwm[np.arange(m), ys] = ws
        np.cumsum(cwm, axis=0, out=cwm)
        tc = cwm[m - 1]

        wl = np.zeros(m - 1)
        ssql = np.zeros(m - 1)
        ssqr = np.zeros(m - 1)
        wtot = 0.0
        for c in range(n_classes):
            cc = cwm[: m - 1, c]
            wl += cc
            ssql += cc * cc
            rc = tc[c] - cc
            ssqr += rc * rc
            wtot += tc[c]
        wr = wtot - wl

        score = (wl - ssql / wl) + (wr - ssqr / wr)
        valid = xs[:-1] < xs[1:]
        if lo > 0:
            valid[:lo] = False
        if hi < m - 2:
            valid[hi + 1 :] = False
        if not valid.any():
            continue
        score[~valid] = np.inf
        j = int(np.argmin(score))
        if score[j] < best_score:
            best_score = score[j]
            best_feat = int(f)
            best_thr = (xs[j] + xs[j + 1]) / 2.0
    return best_feat, best_thr, best_score


def apply_tree(feature, threshold, left, right, X):
    """Route rows of X to leaf node ids. ``x <= threshold`` goes left."""
    q = X.shape[0]
    node = np.zeros(q, dtype=np.int64)
    active = np.flatnonzero(feature[node] >= 0)
    while active.size:
        nd = node[active]
        f = feature[nd]
        go_left = X[active, f] <= threshold[nd]
        node[active] = np.where(go_left, left[nd], right[nd])
        active = active[feature[node[active]] >= 0]
    return node


def _leaf_buckets(lf):
    """Group row indices by leaf id; returns a list of index arrays."""
    order = np.argsort(lf, kind="stable")
    sv = lf[order]
    cuts = np.flatnonzero(sv[1:] != sv[:-1]) + 1
    return np.split(order, cuts)


def prox_original_counts(leaf):
    """Co-leaf counts over trees: C[i, j] = #{t : leaf[t,i] == leaf[t,j]}."""
    T, n = leaf.shape
    C = np.zeros((n, n))
    for t in range(T):
        for b in _leaf_buckets(leaf[t]):
            C[np.ix_(b, b)] += 1.0
    return C


def prox_oob_counts(leaf, inbag):
    """Counts for the out-of-bag proximity.

    num[i, j] = #{t : i and j both OOB and co-leafed in t}
    den[i, j] = #{t : i and j both OOB in t}
    """
    T, n = leaf.shape
    num = np.zeros((n, n))
    den = np.zeros((n, n))
    for t in range(T):
        oob = np.flatnonzero(inbag[t] == 0)
        if oob.size == 0:
            continue
        den[np.ix_(oob, oob)] += 1.0
        for b in _leaf_buckets(leaf[t, oob]):
            ro = oob[b]
            num[np.ix_(ro, ro)] += 1.0
    return num, den


def prox_gap_sums(leaf, inbag):
    """Unnormalized GAP sums and per-row OOB tree counts.

    S[i, j] accumulates, over trees where i is OOB, the in-bag multiplicity
    of j divided by the total in-bag multiplicity of i's leaf. Dividing row
    i by s_count[i] afterwards yields the GAP proximity.
    """
    T, n = leaf.shape
    S = np.zeros((n, n))
    s_count = np.sum(inbag == 0, axis=0).astype(np.int64)
    for t in range(T):
        c_t = inbag[t]
        for b in _leaf_buckets(leaf[t]):
            c = c_t[b]
            pos = c > 0
            ib = b[pos]
            ob = b[~pos]
            if ib.size == 0 or ob.size == 0:
                continue
            M = float(c[pos].sum())
            S[np.ix_(ob, ib)] += (c[pos] / M)[None, :]
    return S, s_count


def extend_original_counts(leaf_train, leaf_q):
    """Co-leaf counts between query rows and training rows: (q, n)."""
    T, n = leaf_train.shape
    q = leaf_q.shape[1]
    C = np.zeros((q, n))
    for t in range(T):
        C += leaf_q[t][:, None] == leaf_train[t][None, :]
    return C


def extend_oob_counts(leaf_train, inbag, leaf_q):
    """OOB-proximity counts for query rows (queries are OOB everywhere).

    num[x, j] = #{t : j OOB in t, co-leafed with x}
    den[j]    = #{t : j OOB in t}
    """
    T, n = leaf_train.shape
    q = leaf_q.shape[1]
    num = np.zeros((q, n))
    for t in range(T):
        oobmask = inbag[t] == 0
        num += (leaf_q[t][:, None] == leaf_train[t][None, :]) & oobmask[None, :]
    den = np.sum(inbag == 0, axis=0).astype(np.float64)
    return num, den


def extend_gap_sums(leaf_train, inbag, leaf_q):
    """Unnormalized GAP rows for query points; divide by T afterwards."""
    T, n = leaf_train.shape
    q = leaf_q.shape[1]
    S = np.zeros((q, n))
    n_nodes_hint = int(leaf_train.max()) + 1 if leaf_train.size else 1
    for t in range(T):
        mleaf = np.bincount(
            leaf_train[t], weights=inbag[t], minlength=n_nodes_hint
        )
        match = leaf_q[t][:, None] == leaf_train[t][None, :]
        denom = mleaf[leaf_q[t]]
        # a leaf with zero in-bag weight contributes nothing (numerator is 0)
        denom[denom == 0.0] = 1.0
        S += (match * inbag[t][None, :]) / denom[:, None]
    return S
