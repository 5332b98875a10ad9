"""Pure numpy tree kernels.

Reference implementation of the compiled kernels in ``_ckernels.pyx``.  Both
build identical trees bit for bit: they draw from the same SplitMix64 stream
in the same order, accumulate sums sequentially in the same order and break
ties the same way (first maximum over features in candidate order, then over
split positions in ascending value order, equal values by sample position).
"""
from __future__ import annotations

import numpy as np

from ..rng import SplitMix64

NAME = "python"
LEAF = -1


def _seq_sum(a: np.ndarray) -> float:
    # np.sum is pairwise; the kernels are defined with a sequential sum
    return float(np.cumsum(a)[-1])


def presort(X, idx):
    """Per-feature sample positions ordered by value, ties by position; shape (F, m)."""
    Xs = np.asarray(X, dtype=np.float64)[np.asarray(idx, dtype=np.int64)]
    return np.ascontiguousarray(np.argsort(Xs, axis=0, kind="stable").T, dtype=np.int64)


def build_tree(X, g, h, idx, max_depth, min_leaf, max_features, reg_lambda,
               random_splits, seed, presorted=None):
    """Grow one regression tree depth-first.

    ``g``/``h`` are per-sample first- and second-order statistics (for a
    least-squares fit: the target and ones).  Leaves hold ``sum(g) /
    (sum(h) + reg_lambda)`` and a split maximizes ``GL²/(HL+λ) + GR²/(HR+λ)``.
    ``idx`` selects the training rows (repeats allowed, as for bootstraps).

    ``presorted`` is accepted for signature parity with the compiled kernel
    and ignored; this implementation sorts at every node.

    Returns ``(feature, threshold, left, right, value, n_samples)`` arrays with
    ``feature == -1`` marking leaves.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("cannot grow a tree on zero samples")
    n_features = X.shape[1]
    lam = float(reg_lambda)
    max_features = min(max(int(max_features), 1), n_features)
    rng = SplitMix64(seed)

    feature = [LEAF]
    threshold = [0.0]
    left = [LEAF]
    right = [LEAF]
    value = [0.0]
    n_samples = [0]

    stack = [(0, idx, 0)]
    while stack:
        node, rows, depth = stack.pop()
        n = rows.size
        gi = g[rows]
        hi = h[rows]
        sg = _seq_sum(gi)
        sh = _seq_sum(hi)
        value[node] = sg / (sh + lam)
        n_samples[node] = n
        if depth >= max_depth or n < 2 * min_leaf:
            continue

        if max_features < n_features:
            perm = list(range(n_features))
            for j in range(max_features):
                r = j + int(rng.random() * (n_features - j))
                perm[j], perm[r] = perm[r], perm[j]
            candidates = perm[:max_features]
        else:
            candidates = range(n_features)

        parent = sg * sg / (sh + lam)
        best = -np.inf
        best_f = LEAF
        best_thr = 0.0
        for f in candidates:
            x = X[rows, f]
            if random_splits:
                lo = float(x.min())
                hi_x = float(x.max())
                if not lo < hi_x:
                    continue
                thr = lo + rng.random() * (hi_x - lo)
                if thr >= hi_x:
                    thr = lo
                mask = x <= thr
                nl = int(mask.sum())
                if nl < min_leaf or n - nl < min_leaf:
                    continue
                gl = _seq_sum(gi[mask])
                hl = _seq_sum(hi[mask])
                gr = sg - gl
                hr = sh - hl
                score = gl * gl / (hl + lam) + gr * gr / (hr + lam)
                if score > best:
                    best, best_f, best_thr = score, f, thr
            else:
                order = np.argsort(x, kind="stable")
                xs = x[order]
                gl = np.cumsum(gi[order])[:-1]
                hl = np.cumsum(hi[order])[:-1]
                nl = np.arange(1, n)
                valid = (nl >= min_leaf) & (n - nl >= min_leaf) & (xs[:-1] < xs[1:])
                if not valid.any():
                    continue
                gr = sg - gl
                hr = sh - hl
                score = gl * gl / (hl + lam) + gr * gr / (hr + lam)
                score = np.where(valid, score, -np.inf)
                i = int(np.argmax(score))
                if score[i] > best:
                    a = float(xs[i])
                    b = float(xs[i + 1])
                    thr = (a + b) * 0.5
                    if thr >= b:
                        thr = a
                    best, best_f, best_thr = float(score[i]), f, thr

        if best_f == LEAF or not best > parent + 1e-12 * abs(parent):
            continue

        mask = X[rows, best_f] <= best_thr
        lid = len(feature)
        rid = lid + 1
        for _ in range(2):
            feature.append(LEAF)
            threshold.append(0.0)
            left.append(LEAF)
            right.append(LEAF)
            value.append(0.0)
            n_samples.append(0)
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = lid
        right[node] = rid
        stack.append((rid, rows[~mask], depth + 1))
        stack.append((lid, rows[mask], depth + 1))

    return (
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=np.float64),
        np.asarray(n_samples, dtype=np.int64),
    )


def predict_tree(X, feature, threshold, left, right, value):
    X = np.asarray(X, dtype=np.float64)
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    while rows.size:
        f = feature[node[rows]]
        inner = f >= 0
        rows = rows[inner]
        if not rows.size:
            break
        cur = node[rows]
        go_left = X[rows, f[inner]] <= threshold[cur]
        node[rows] = np.where(go_left, left[cur], right[cur])
    return value[node].astype(np.float64, copy=True)
