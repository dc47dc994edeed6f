"""Compiled kernels for regression-tree growth and inference.

Features are coded once per fit: ``codes[f, r]`` is the rank of ``X[r, f]``
among the sorted distinct values ``values[f, :n_bins[f]]``.  A node then finds
its best split on feature ``f`` from per-code sums of weight and target, which
is exact: candidate thresholds are still midpoints between consecutive distinct
values present in the node.  Rows carry integer weights, so a bootstrap sample
is its multiplicity vector rather than an expanded copy.
"""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def code_features(X):
    n, p = X.shape
    codes = np.empty((p, n), dtype=np.int32)
    n_bins = np.empty(p, dtype=np.int64)
    uniq = []
    for f in range(p):
        u = np.unique(X[:, f])
        uniq.append(u)
        n_bins[f] = u.size
        codes[f] = np.searchsorted(u, X[:, f]).astype(np.int32)
    values = np.zeros((p, n_bins.max()))
    for f in range(p):
        values[f, : n_bins[f]] = uniq[f]
    return codes, values, n_bins


@njit(cache=True, nogil=True)
def grow_tree(codes, values, n_bins, y, w, rows, mtry, max_depth, min_leaf, seed):
    """Grow a weighted least-squares regression tree depth first.

    ``rows`` lists the training rows with positive weight ``w[row]``.  Node
    sizes (and ``min_leaf``) count rows with their weights.  Returns the node
    arrays and, for every row of ``y``, the leaf it ends in (-1 when the row is
    not in ``rows``).
    """
    np.random.seed(seed)
    m = rows.size
    p = codes.shape[0]
    cap = 2 * m + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    n_samples = np.zeros(cap, dtype=np.int64)
    gain = np.zeros(cap)
    leaf_of = np.full(y.size, -1, dtype=np.int64)

    idx = rows.copy()
    tmp = np.empty(m, dtype=np.int64)
    buf = np.empty(m, dtype=np.int32)
    pool = np.arange(p)
    chosen = np.arange(p)
    n_chosen = p if mtry >= p else mtry
    hist_w = np.zeros(values.shape[1])
    hist_s = np.zeros(values.shape[1])

    st_node = np.empty(cap, dtype=np.int64)
    st_lo = np.empty(cap, dtype=np.int64)
    st_hi = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = m
    st_depth[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        depth = st_depth[top]

        cnt = 0.0
        total = 0.0
        sq = 0.0
        for k in range(lo, hi):
            r = idx[k]
            wy = w[r] * y[r]
            cnt += w[r]
            total += wy
            sq += wy * y[r]
        mean = total / cnt
        # a pure node can leave rounding residue here; the gain test below stops it
        sse = max(sq - total * mean, 0.0)
        value[node] = mean
        n_samples[node] = int(cnt)

        best_f = -1
        best_a = -1
        best_b = -1
        best_score = -np.inf
        parent_score = total * total / cnt
        if depth < max_depth and cnt >= 2 * min_leaf and sse > 0.0:
            if n_chosen < p:
                for i in range(n_chosen):
                    j = i + np.random.randint(p - i)
                    t = pool[i]
                    pool[i] = pool[j]
                    pool[j] = t
                chosen[:n_chosen] = np.sort(pool[:n_chosen])
            for ci in range(n_chosen):
                f = chosen[ci]
                cf = codes[f]
                b_lo = n_bins[f]
                b_hi = -1
                for k in range(lo, hi):
                    r = idx[k]
                    b = cf[r]
                    hist_w[b] += w[r]
                    hist_s[b] += w[r] * y[r]
                    if b < b_lo:
                        b_lo = b
                    if b > b_hi:
                        b_hi = b
                nl = 0.0
                sl = 0.0
                prev = -1
                if b_hi - b_lo < 4 * (hi - lo):
                    # dense: walk the occupied code range
                    for b in range(b_lo, b_hi + 1):
                        hw = hist_w[b]
                        if hw == 0.0:
                            continue
                        if prev >= 0 and nl >= min_leaf and cnt - nl >= min_leaf:
                            score = sl * sl / nl + (total - sl) * (total - sl) / (cnt - nl)
                            if score > best_score:
                                best_score = score
                                best_f = f
                                best_a = prev
                                best_b = b
                        nl += hw
                        sl += hist_s[b]
                        prev = b
                        hist_w[b] = 0.0
                        hist_s[b] = 0.0
                else:
                    # sparse: visit the node's distinct codes in sorted order
                    nb = hi - lo
                    for k in range(nb):
                        buf[k] = cf[idx[lo + k]]
                    srt = np.sort(buf[:nb])
                    for k in range(nb):
                        b = srt[k]
                        if b == prev:
                            continue
                        if prev >= 0 and nl >= min_leaf and cnt - nl >= min_leaf:
                            score = sl * sl / nl + (total - sl) * (total - sl) / (cnt - nl)
                            if score > best_score:
                                best_score = score
                                best_f = f
                                best_a = prev
                                best_b = b
                        nl += hist_w[b]
                        sl += hist_s[b]
                        prev = b
                        hist_w[b] = 0.0
                        hist_s[b] = 0.0

        improvement = best_score - parent_score
        if best_f < 0 or improvement <= 1e-13 * (sse + parent_score):
            for k in range(lo, hi):
                leaf_of[idx[k]] = node
            continue

        xa = values[best_f, best_a]
        xb = values[best_f, best_b]
        thr = 0.5 * (xa + xb)
        if thr >= xb or thr < xa:
            thr = xa
        feature[node] = best_f
        threshold[node] = thr
        gain[node] = improvement

        cf = codes[best_f]
        li = lo
        ri = 0
        for k in range(lo, hi):
            r = idx[k]
            if cf[r] <= best_a:
                idx[li] = r
                li += 1
            else:
                tmp[ri] = r
                ri += 1
        for k in range(ri):
            idx[li + k] = tmp[k]
        mid = li

        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        # right first so the left subtree is expanded next
        st_node[top] = rc
        st_lo[top] = mid
        st_hi[top] = hi
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = lc
        st_lo[top] = lo
        st_hi[top] = mid
        st_depth[top] = depth + 1
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        n_samples[:n_nodes].copy(),
        gain[:n_nodes].copy(),
        leaf_of,
    )


@njit(cache=True, nogil=True)
def apply_tree(X, feature, threshold, left, right):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True, nogil=True)
def predict_tree(X, feature, threshold, left, right, value):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out
