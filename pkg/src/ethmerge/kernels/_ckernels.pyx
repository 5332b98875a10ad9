# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tree kernels. Same contract and output as ``_pykernels``."""
import numpy as np

from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport malloc, free

NAME = "cython"

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL
cdef uint64_t MIX1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t MIX2 = 0x94D049BB133111EBULL
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline double _next_double(uint64_t* state) noexcept nogil:
    cdef uint64_t z
    state[0] = state[0] + GAMMA
    z = state[0]
    z = (z ^ (z >> 30)) * MIX1
    z = (z ^ (z >> 27)) * MIX2
    z = z ^ (z >> 31)
    return <double>(z >> 11) * INV_2_53


cdef struct Frame:
    int64_t node
    int64_t start
    int64_t end
    int64_t depth


cdef void _stable_split(int64_t* seg, int64_t n, const char* goes_left, int64_t* tmp) noexcept nogil:
    cdef int64_t i, j = 0
    for i in range(n):
        if goes_left[seg[i]]:
            tmp[j] = seg[i]
            j += 1
    for i in range(n):
        if not goes_left[seg[i]]:
            tmp[j] = seg[i]
            j += 1
    for i in range(n):
        seg[i] = tmp[i]


cdef int64_t _grow(const double[:, ::1] X, const double[::1] g, const double[::1] h,
                   const int64_t* rows, int64_t* order, int64_t* sorted_pos, int64_t m,
                   int64_t max_depth, int64_t min_leaf, int64_t max_features, double lam,
                   bint random_splits, uint64_t seed,
                   int64_t* feature, double* threshold, int64_t* left, int64_t* right,
                   double* value, int64_t* n_samples) noexcept nogil:
    # order: sample positions in node order, one segment per node.
    # sorted_pos[f*m:(f+1)*m]: positions sorted by (X[rows[pos], f], pos), same segments.
    cdef int64_t n_features = X.shape[1]
    cdef uint64_t state = seed
    cdef int64_t n_nodes = 1
    cdef int64_t top = 0
    cdef Frame* stack = <Frame*>malloc((m + 1) * sizeof(Frame))
    cdef int64_t* tmp = <int64_t*>malloc(m * sizeof(int64_t))
    cdef int64_t* perm = <int64_t*>malloc(n_features * sizeof(int64_t))
    cdef char* goes_left = <char*>malloc(m * sizeof(char))
    cdef int64_t* seg
    cdef Frame fr
    cdef int64_t node, start, end, depth, n, i, j, r, k, f, best_f, nl, nc, lpos, t, row
    cdef double sg, sh, gl, hl, gr, hr, score, best, parent, thr, best_thr, lo, hi, a, b, x

    feature[0] = -1
    threshold[0] = 0.0
    left[0] = -1
    right[0] = -1
    stack[0].node = 0
    stack[0].start = 0
    stack[0].end = m
    stack[0].depth = 0
    top = 1

    while top > 0:
        top -= 1
        fr = stack[top]
        node = fr.node
        start = fr.start
        end = fr.end
        depth = fr.depth
        n = end - start

        sg = 0.0
        sh = 0.0
        for i in range(start, end):
            row = rows[order[i]]
            sg += g[row]
            sh += h[row]
        value[node] = sg / (sh + lam)
        n_samples[node] = n
        if depth >= max_depth or n < 2 * min_leaf:
            continue

        nc = n_features
        for j in range(n_features):
            perm[j] = j
        if max_features < n_features:
            for j in range(max_features):
                r = j + <int64_t>(_next_double(&state) * (n_features - j))
                t = perm[j]
                perm[j] = perm[r]
                perm[r] = t
            nc = max_features

        parent = sg * sg / (sh + lam)
        best = -1.0 / 0.0
        best_f = -1
        best_thr = 0.0
        for k in range(nc):
            f = perm[k]
            if random_splits:
                seg = sorted_pos + f * m + start
                lo = X[rows[seg[0]], f]
                hi = X[rows[seg[n - 1]], f]
                if not lo < hi:
                    continue
                thr = lo + _next_double(&state) * (hi - lo)
                if thr >= hi:
                    thr = lo
                gl = 0.0
                hl = 0.0
                nl = 0
                for i in range(start, end):
                    row = rows[order[i]]
                    if X[row, f] <= thr:
                        gl += g[row]
                        hl += h[row]
                        nl += 1
                if nl < min_leaf or n - nl < min_leaf:
                    continue
                gr = sg - gl
                hr = sh - hl
                score = gl * gl / (hl + lam) + gr * gr / (hr + lam)
                if score > best:
                    best = score
                    best_f = f
                    best_thr = thr
            else:
                seg = sorted_pos + f * m + start
                gl = 0.0
                hl = 0.0
                for i in range(n - 1):
                    row = rows[seg[i]]
                    gl += g[row]
                    hl += h[row]
                    nl = i + 1
                    if nl < min_leaf:
                        continue
                    if n - nl < min_leaf:
                        break
                    a = X[row, f]
                    b = X[rows[seg[i + 1]], f]
                    if not a < b:
                        continue
                    gr = sg - gl
                    hr = sh - hl
                    score = gl * gl / (hl + lam) + gr * gr / (hr + lam)
                    if score > best:
                        best = score
                        best_f = f
                        thr = (a + b) * 0.5
                        if thr >= b:
                            thr = a
                        best_thr = thr

        if best_f < 0 or not best > parent + 1e-12 * (parent if parent >= 0 else -parent):
            continue

        lpos = 0
        for i in range(start, end):
            if X[rows[order[i]], best_f] <= best_thr:
                goes_left[order[i]] = 1
                lpos += 1
            else:
                goes_left[order[i]] = 0
        _stable_split(order + start, n, goes_left, tmp)
        for f in range(n_features):
            _stable_split(sorted_pos + f * m + start, n, goes_left, tmp)

        for j in range(2):
            feature[n_nodes + j] = -1
            threshold[n_nodes + j] = 0.0
            left[n_nodes + j] = -1
            right[n_nodes + j] = -1
            value[n_nodes + j] = 0.0
            n_samples[n_nodes + j] = 0
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1

        stack[top].node = n_nodes + 1
        stack[top].start = start + lpos
        stack[top].end = end
        stack[top].depth = depth + 1
        top += 1
        stack[top].node = n_nodes
        stack[top].start = start
        stack[top].end = start + lpos
        stack[top].depth = depth + 1
        top += 1
        n_nodes += 2

    free(stack)
    free(tmp)
    free(perm)
    free(goes_left)
    return n_nodes


def presort(X, idx):
    """Per-feature sample positions ordered by value, ties by position; shape (F, m)."""
    Xs = np.asarray(X, dtype=np.float64)[np.asarray(idx, dtype=np.int64)]
    return np.ascontiguousarray(np.argsort(Xs, axis=0, kind="stable").T, dtype=np.int64)


def build_tree(X, g, h, idx, max_depth, min_leaf, max_features, reg_lambda,
               random_splits, seed, presorted=None):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef const double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    rows_arr = np.ascontiguousarray(idx, dtype=np.int64)
    cdef int64_t m = rows_arr.shape[0]
    if m == 0:
        raise ValueError("cannot grow a tree on zero samples")
    cdef int64_t n_features = Xv.shape[1]
    if presorted is None:
        presorted = presort(X, rows_arr)
    sorted_arr = np.array(presorted, dtype=np.int64, order="C", copy=True)
    if sorted_arr.shape[0] != n_features or sorted_arr.shape[1] != m:
        raise ValueError("presorted has the wrong shape")
    order_arr = np.arange(m, dtype=np.int64)
    cdef int64_t mf = min(max(int(max_features), 1), n_features)
    cdef int64_t cap = 2 * m + 1
    feature = np.empty(cap, dtype=np.int64)
    threshold = np.empty(cap, dtype=np.float64)
    left = np.empty(cap, dtype=np.int64)
    right = np.empty(cap, dtype=np.int64)
    value = np.empty(cap, dtype=np.float64)
    n_samples = np.empty(cap, dtype=np.int64)
    cdef const int64_t[::1] rv = rows_arr
    cdef int64_t[::1] ov = order_arr
    cdef int64_t[:, ::1] sv = sorted_arr
    cdef int64_t[::1] fv = feature
    cdef double[::1] tv = threshold
    cdef int64_t[::1] lv = left
    cdef int64_t[::1] rtv = right
    cdef double[::1] vv = value
    cdef int64_t[::1] nv = n_samples
    cdef int64_t md = max_depth
    cdef int64_t ml = min_leaf
    cdef double lam = reg_lambda
    cdef bint rs = bool(random_splits)
    cdef uint64_t sd = int(seed) & 0xFFFFFFFFFFFFFFFF
    cdef int64_t n_nodes
    with nogil:
        n_nodes = _grow(Xv, gv, hv, &rv[0], &ov[0], &sv[0, 0], m, md, ml, mf, lam, rs, sd,
                        &fv[0], &tv[0], &lv[0], &rtv[0], &vv[0], &nv[0])
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), n_samples[:n_nodes].copy())


def predict_tree(X, feature, threshold, left, right, value):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const int64_t[::1] fv = np.ascontiguousarray(feature, dtype=np.int64)
    cdef const double[::1] tv = np.ascontiguousarray(threshold, dtype=np.float64)
    cdef const int64_t[::1] lv = np.ascontiguousarray(left, dtype=np.int64)
    cdef const int64_t[::1] rv = np.ascontiguousarray(right, dtype=np.int64)
    cdef const double[::1] vv = np.ascontiguousarray(value, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    cdef int64_t node
    with nogil:
        for i in range(n):
            node = 0
            while fv[node] >= 0:
                if Xv[i, fv[node]] <= tv[node]:
                    node = lv[node]
                else:
                    node = rv[node]
            ov[i] = vv[node]
    return out
