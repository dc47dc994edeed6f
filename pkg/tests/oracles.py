"""Slow, obviously-correct reference computations used as test oracles."""
from fractions import Fraction

import numpy as np


def exact_sse(values) -> Fraction:
    ys = [Fraction(float(v)) for v in values]
    if not ys:
        return Fraction(0)
    s = sum(ys)
    return sum(y * y for y in ys) - s * s / len(ys)


def best_root_split(X, y, min_leaf=1):
    """Minimum summed child SSE over every (feature, midpoint) pair, in exact arithmetic.

    Leaving the root unsplit counts as a candidate, so the result is
    (root sse, None, None) when no split strictly lowers the SSE.
    """
    best = (exact_sse(y), None, None)
    for f in range(X.shape[1]):
        u = np.unique(X[:, f])
        for a, b in zip(u[:-1], u[1:]):
            thr = (a + b) / 2
            left = X[:, f] <= thr
            if left.sum() < min_leaf or (~left).sum() < min_leaf:
                continue
            sse = exact_sse(y[left]) + exact_sse(y[~left])
            if sse < best[0]:
                best = (sse, f, thr)
    return best


def root_sse(tree, X, y) -> Fraction:
    """Exact training SSE of a tree cut back to its root split."""
    if tree.feature[0] < 0:
        return exact_sse(y)
    return split_sse(X, y, tree.feature[0], tree.threshold[0])


def split_sse(X, y, feature, threshold) -> Fraction:
    left = X[:, feature] <= threshold
    return exact_sse(y[left]) + exact_sse(y[~left])


def grow_reference(X, y, w, max_depth, min_leaf, depth=0):
    """Recursive CART on weighted rows, scanning every row for every candidate.

    Uses the score ``sl^2/nl + sr^2/nr`` with ties going to the earliest
    (feature, threshold), so on integer data it must match the fast grower node
    for node.  Returns a nested dict.
    """
    cnt = w.sum()
    total = (w * y).sum()
    node = {"value": total / cnt, "n": cnt}
    sse = (w * y * y).sum() - total * total / cnt
    if depth >= max_depth or cnt < 2 * min_leaf or sse <= 0:
        return node
    best = None
    for f in range(X.shape[1]):
        u = np.unique(X[:, f])
        for a, b in zip(u[:-1], u[1:]):
            left = X[:, f] <= a
            nl, sl = w[left].sum(), (w * y)[left].sum()
            nr, sr = cnt - nl, total - sl
            if nl < min_leaf or nr < min_leaf:
                continue
            score = sl * sl / nl + sr * sr / nr
            if best is None or score > best[0]:
                best = (score, f, a, b)
    if best is None or best[0] - total * total / cnt <= 1e-13 * (sse + total * total / cnt):
        return node
    _, f, a, b = best
    left = X[:, f] <= a
    node.update(
        feature=f,
        threshold=(a + b) / 2,
        left=grow_reference(X[left], y[left], w[left], max_depth, min_leaf, depth + 1),
        right=grow_reference(X[~left], y[~left], w[~left], max_depth, min_leaf, depth + 1),
    )
    return node


def predict_reference(node, x):
    while "feature" in node:
        node = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
    return node["value"]


def metrics_by_loop(pred_log, actual):
    """MAE and MaxAE in bikes with an explicit loop over pairs."""
    import math

    total, worst = 0.0, 0.0
    for p, a in zip(pred_log, actual):
        bikes = max(math.expm1(p), 0.0)
        err = abs(bikes - a)
        total += err
        worst = max(worst, err)
    return total / len(actual), worst
