"""Compiled CART growing and routing.

Trees are stored as flat node arrays.  For node ``v``: ``feature[v] >= 0``
and ``threshold[v]`` describe the split (``x <= threshold`` goes left),
``left[v]``/``right[v]`` are child node ids, and ``leaf[v]`` is the local
leaf number (``-1`` for internal nodes).
"""

import numba as nb
import numpy as np

_NJIT = dict(nogil=True, cache=True)


@nb.njit(**_NJIT)
def _sample_features(d, k):
    # partial Fisher-Yates; candidates returned in increasing order
    pool = np.arange(d)
    for a in range(k):
        b = a + np.random.randint(0, d - a)
        t = pool[a]
        pool[a] = pool[b]
        pool[b] = t
    return np.sort(pool[:k])


@nb.njit(**_NJIT)
def _capacity(counts, m, min_samples_leaf, by_multiplicity):
    # node array size: every leaf holds at least min_samples_leaf distinct
    # rows, or that much multiplicity, and at least one row
    if by_multiplicity:
        total = 0
        for c in counts:
            total += c
        return 2 * min(m, total // min_samples_leaf) + 1
    return 2 * (m // min_samples_leaf) + 1


@nb.njit(**_NJIT)
def _grow(X, y, xorder, counts, min_samples_leaf, max_features, seed, by_multiplicity):
    """Grow one tree on the rows with ``counts > 0`` (multiplicities as weights).

    ``min_samples_leaf`` bounds the number of distinct bootstrap rows in each
    child, or their total multiplicity when ``by_multiplicity`` is set.  ``xorder`` is a stable argsort of the first column; with a single
    feature the rows are visited in that order and stay sorted through the
    stable partitions.  Feature candidates are drawn from numba's generator
    seeded with ``seed``.  Returns the node arrays and the number of leaves.
    """
    np.random.seed(seed)
    n, d = X.shape
    m = 0
    for j in range(n):
        if counts[j] > 0:
            m += 1
    samples = np.empty(m, dtype=np.int64)
    p = 0
    for a in range(n):
        j = xorder[a] if d == 1 else a
        if counts[j] > 0:
            samples[p] = j
            p += 1

    cap = _capacity(counts, m, min_samples_leaf, by_multiplicity)
    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    leaf = np.full(cap, -1, dtype=np.int32)
    n_nodes = 1
    n_leaves = 0

    stack_node = np.empty(cap, dtype=np.int64)
    stack_lo = np.empty(cap, dtype=np.int64)
    stack_hi = np.empty(cap, dtype=np.int64)
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = m
    top = 1
    order = np.empty(m, dtype=np.int64)
    xs = np.empty(m, dtype=np.float64)
    buf = np.empty(m, dtype=np.int64)

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        size = hi - lo

        W = 0.0
        S = 0.0
        Q = 0.0
        ymin = np.inf
        ymax = -np.inf
        for a in range(lo, hi):
            j = samples[a]
            c = counts[j]
            W += c
            S += c * y[j]
            Q += c * y[j] * y[j]
            if y[j] < ymin:
                ymin = y[j]
            if y[j] > ymax:
                ymax = y[j]

        best_f = -1
        best_thr = 0.0
        room = W if by_multiplicity else size
        if room >= 2 * min_samples_leaf and ymax > ymin:
            parent = S * S / W
            best_proxy = -np.inf
            if max_features < d:
                cands = _sample_features(d, max_features)
            else:
                cands = np.arange(d)
            for f in cands:
                if d == 1:
                    off = lo
                    src = samples
                else:
                    for a in range(size):
                        xs[a] = X[samples[lo + a], f]
                    perm = np.argsort(xs[:size], kind="mergesort")
                    for a in range(size):
                        order[a] = samples[lo + perm[a]]
                    off = 0
                    src = order
                WL = 0.0
                SL = 0.0
                for a in range(size - 1):
                    j = src[off + a]
                    WL += counts[j]
                    SL += counts[j] * y[j]
                    nl = WL if by_multiplicity else a + 1
                    if nl < min_samples_leaf:
                        continue
                    if room - nl < min_samples_leaf:
                        break
                    x0 = X[j, f]
                    x1 = X[src[off + a + 1], f]
                    if x1 <= x0:
                        continue
                    WR = W - WL
                    SR = S - SL
                    proxy = SL * SL / WL + SR * SR / WR
                    if proxy > best_proxy:
                        best_proxy = proxy
                        best_f = f
                        thr = x0 / 2.0 + x1 / 2.0
                        if thr >= x1 or thr < x0:
                            thr = x0
                        best_thr = thr
            # the split must reduce the weighted squared error
            sse = Q - parent
            if best_f >= 0 and best_proxy - parent <= 1e-12 * sse:
                best_f = -1

        if best_f < 0:
            leaf[node] = n_leaves
            n_leaves += 1
            continue

        # stable partition of samples[lo:hi]
        nl = 0
        nr = 0
        for a in range(lo, hi):
            j = samples[a]
            if X[j, best_f] <= best_thr:
                samples[lo + nl] = j
                nl += 1
            else:
                buf[nr] = j
                nr += 1
        for a in range(nr):
            samples[lo + nl + a] = buf[a]

        lchild = n_nodes
        rchild = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = lchild
        right[node] = rchild
        # right pushed first so the left subtree is numbered first
        stack_node[top] = rchild
        stack_lo[top] = lo + nl
        stack_hi[top] = hi
        top += 1
        stack_node[top] = lchild
        stack_lo[top] = lo
        stack_hi[top] = lo + nl
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        leaf[:n_nodes].copy(),
        n_leaves,
    )


@nb.njit(**_NJIT)
def _grow_1d(x, y, xorder, counts, min_samples_leaf, by_multiplicity):
    """Single-feature variant of :func:`_grow` with identical output.

    In-bag rows are gathered in ``x`` order once; every node is then a
    contiguous range and a split is a cut position inside it.
    """
    n = x.shape[0]
    m = 0
    for j in range(n):
        if counts[j] > 0:
            m += 1
    xg = np.empty(m)
    yg = np.empty(m)
    cg = np.empty(m)
    p = 0
    for a in range(n):
        j = xorder[a]
        if counts[j] > 0:
            xg[p] = x[j]
            yg[p] = y[j]
            cg[p] = counts[j]
            p += 1

    cap = _capacity(counts, m, min_samples_leaf, by_multiplicity)
    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    leaf = np.full(cap, -1, dtype=np.int32)
    n_nodes = 1
    n_leaves = 0
    stack_node = np.empty(cap, dtype=np.int64)
    stack_lo = np.empty(cap, dtype=np.int64)
    stack_hi = np.empty(cap, dtype=np.int64)
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = m
    top = 1

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        size = hi - lo
        W = 0.0
        S = 0.0
        Q = 0.0
        ymin = np.inf
        ymax = -np.inf
        for a in range(lo, hi):
            c = cg[a]
            W += c
            S += c * yg[a]
            Q += c * yg[a] * yg[a]
            ymin = min(ymin, yg[a])
            ymax = max(ymax, yg[a])

        cut = -1
        best_thr = 0.0
        room = W if by_multiplicity else size
        if room >= 2 * min_samples_leaf and ymax > ymin:
            parent = S * S / W
            best_proxy = -np.inf
            WL = 0.0
            SL = 0.0
            if by_multiplicity:
                start = lo
                stop = hi - 1
            else:
                start = lo + min_samples_leaf - 1
                stop = hi - min_samples_leaf
                for a in range(lo, start):
                    WL += cg[a]
                    SL += cg[a] * yg[a]
            for a in range(start, stop):
                WL += cg[a]
                SL += cg[a] * yg[a]
                if by_multiplicity:
                    if WL < min_samples_leaf:
                        continue
                    if W - WL < min_samples_leaf:
                        break
                x0 = xg[a]
                x1 = xg[a + 1]
                if x1 <= x0:
                    continue
                SR = S - SL
                proxy = SL * SL / WL + SR * SR / (W - WL)
                if proxy > best_proxy:
                    best_proxy = proxy
                    cut = a + 1
                    thr = x0 / 2.0 + x1 / 2.0
                    if thr >= x1 or thr < x0:
                        thr = x0
                    best_thr = thr
            if cut >= 0 and best_proxy - parent <= 1e-12 * (Q - parent):
                cut = -1

        if cut < 0:
            leaf[node] = n_leaves
            n_leaves += 1
            continue
        lchild = n_nodes
        rchild = n_nodes + 1
        n_nodes += 2
        feature[node] = 0
        threshold[node] = best_thr
        left[node] = lchild
        right[node] = rchild
        stack_node[top] = rchild
        stack_lo[top] = cut
        stack_hi[top] = hi
        top += 1
        stack_node[top] = lchild
        stack_lo[top] = lo
        stack_hi[top] = cut
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        leaf[:n_nodes].copy(),
        n_leaves,
    )


@nb.njit(**_NJIT)
def _apply_forest(X, feature, threshold, left, right, leaf, node_offset, leaf_offset):
    """Global leaf id of every row of ``X`` in every tree, shape ``(q, k)``."""
    q = X.shape[0]
    k = node_offset.shape[0] - 1
    out = np.empty((q, k), dtype=np.int32)
    for t in range(k):
        base = node_offset[t]
        lbase = leaf_offset[t]
        for r in range(q):
            v = 0
            while leaf[base + v] < 0:
                if X[r, feature[base + v]] <= threshold[base + v]:
                    v = left[base + v]
                else:
                    v = right[base + v]
            out[r, t] = lbase + leaf[base + v]
    return out


@nb.njit(**_NJIT)
def _sorted_thresholds(threshold, leaf, node_offset):
    """Per-tree sorted split thresholds of single-feature trees (CSR layout)."""
    k = node_offset.shape[0] - 1
    m = 0
    for v in range(node_offset[-1]):
        if leaf[v] < 0:
            m += 1
    thr = np.empty(m)
    off = np.zeros(k + 1, dtype=np.int64)
    p = 0
    for t in range(k):
        for v in range(node_offset[t], node_offset[t + 1]):
            if leaf[v] < 0:
                thr[p] = threshold[v]
                p += 1
        off[t + 1] = p
        thr[off[t]:p] = np.sort(thr[off[t]:p])
    return thr, off


@nb.njit(**_NJIT)
def _apply_1d(x, xorder, thr, thr_offset, leaf_offset):
    """Leaf ids of single-feature trees, shape ``(k, q)``.

    Leaves of such a tree are numbered from left to right, so the leaf of
    ``x`` is the number of thresholds strictly below it.  Queries are visited
    in sorted order (``xorder``) and merged against each tree's thresholds.
    """
    q = x.shape[0]
    k = thr_offset.shape[0] - 1
    out = np.empty((k, q), dtype=np.int32)
    for t in range(k):
        lo = thr_offset[t]
        hi = thr_offset[t + 1]
        p = lo
        base = leaf_offset[t]
        for a in range(q):
            r = xorder[a]
            while p < hi and thr[p] < x[r]:
                p += 1
            out[t, r] = base + (p - lo)
    return out
