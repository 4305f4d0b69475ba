"""Leaf membership index and compiled weighted-quantile kernels.

For one weighting scheme, every leaf of the forest stores its members as
``(rank, weight)`` pairs where ``rank`` is the position of the member's
response in the sorted training responses and ``weight`` is 1 (original
sample) or the bootstrap multiplicity.  Members are sorted by rank, so a
leaf is a sorted sparse histogram over response ranks.

Block tables hold, for each leaf, prefix sums of the weights (and of
weight times response) at every multiple of a block size.  A query is a set
of leaves, one per tree, whose normalized histograms are averaged; its
weighted quantile is located by bisection over blocks followed by a scan
inside one block, so the cost does not grow with the leaf sizes.
"""

import numba as nb
import numpy as np

_NJIT = dict(nogil=True, cache=True)

# cumulative weights within this distance of alpha count as reaching it;
# absorbs the rounding of sums of 1/N terms
ALPHA_TOL = 1e-12


@nb.njit(**_NJIT)
def build_members(train_leaf, counts, order, n_leaves, bootstrap):
    """CSR membership lists sorted by response rank.

    ``train_leaf`` and ``counts`` have shape ``(k, n)``; ``order`` maps rank
    to training index.  Also returns ``slot[t, j]``, the position of row
    ``j`` inside its leaf of tree ``t`` (``-1`` when not a member).
    """
    k, n = train_leaf.shape
    size = np.zeros(n_leaves + 1, dtype=np.int64)
    for t in range(k):
        for j in range(n):
            if bootstrap and counts[t, j] == 0:
                continue
            size[train_leaf[t, j] + 1] += 1
    ptr = np.cumsum(size)
    fill = ptr[:-1].copy()
    total = ptr[-1]
    mem_rank = np.empty(total, dtype=np.int32)
    mem_w = np.empty(total, dtype=np.float64)
    slot = np.full((k, n), -1, dtype=np.int32)
    for t in range(k):
        for r in range(n):
            j = order[r]
            if bootstrap:
                c = counts[t, j]
                if c == 0:
                    continue
                w = float(c)
            else:
                w = 1.0
            g = train_leaf[t, j]
            mem_rank[fill[g]] = r
            mem_w[fill[g]] = w
            slot[t, j] = fill[g] - ptr[g]
            fill[g] += 1
    return ptr, mem_rank, mem_w, slot


@nb.njit(**_NJIT)
def leaf_sums(ptr, mem_rank, mem_w, y_sorted):
    L = ptr.shape[0] - 1
    lw = np.zeros(L)
    lwy = np.zeros(L)
    for g in range(L):
        for p in range(ptr[g], ptr[g + 1]):
            lw[g] += mem_w[p]
            lwy[g] += mem_w[p] * y_sorted[mem_rank[p]]
    return lw, lwy


@nb.njit(**_NJIT)
def build_blocks(ptr, mem_rank, mem_w, y_sorted, bs, nb_):
    L = ptr.shape[0] - 1
    cum_w = np.empty((L, nb_ + 1))
    cum_wy = np.empty((L, nb_ + 1))
    pos = np.empty((L, nb_ + 1), dtype=np.int32)
    for g in range(L):
        p = ptr[g]
        e = ptr[g + 1]
        cw = 0.0
        cwy = 0.0
        for b in range(nb_ + 1):
            bound = b * bs
            while p < e and mem_rank[p] < bound:
                cw += mem_w[p]
                cwy += mem_w[p] * y_sorted[mem_rank[p]]
                p += 1
            cum_w[g, b] = cw
            cum_wy[g, b] = cwy
            pos[g, b] = p
    return cum_w, cum_wy, pos


@nb.njit(**_NJIT)
def _mass(gl, inv, T, cum_w, b, rm, bs):
    """Mixture weight of ranks below ``b * bs``, optionally without rank ``rm``."""
    ex = 1.0 if (rm >= 0 and rm < b * bs) else 0.0
    G = 0.0
    for u in range(T):
        G += inv[u] * (cum_w[gl[u], b] - ex)
    return G


@nb.njit(**_NJIT)
def _find_block(gl, inv, T, cum_w, thr, rm, bs, nb_, hint):
    """Smallest ``b`` in ``1..nb_`` whose prefix mass reaches ``thr``.

    ``hint`` (0 for none) is the answer for a similar query; the guess and
    its predecessor are checked first and the bisection range is narrowed
    around it.
    """
    lo = 1
    hi = nb_
    if hint > 0:
        b = hint
        Gb = _mass(gl, inv, T, cum_w, b, rm, bs)
        if Gb >= thr:
            if b == 1 or _mass(gl, inv, T, cum_w, b - 1, rm, bs) < thr:
                return b
            hi = b - 1
            lo = max(1, b - 8)
            if lo > 1 and _mass(gl, inv, T, cum_w, lo - 1, rm, bs) >= thr:
                lo = 1
        else:
            lo = b + 1
            hi = min(nb_, b + 8)
            if hi < nb_ and _mass(gl, inv, T, cum_w, hi, rm, bs) < thr:
                hi = nb_
    while lo < hi:
        mid = (lo + hi) // 2
        if _mass(gl, inv, T, cum_w, mid, rm, bs) >= thr:
            hi = mid
        else:
            lo = mid + 1
    return lo


@nb.njit(**_NJIT)
def mixture_quantiles(
    leaves, excl_rank, alphas, mem_rank, mem_w, leaf_w, leaf_wy, y_sorted,
    y_out, cum_w, cum_wy, pos, bs, nb_, visit,
):
    """Weighted quantiles and minimal weighted contrasts of forest mixtures.

    Row ``r`` of ``leaves`` lists one global leaf per tree (``-1`` drops the
    tree).  The conditional distribution is the average over used trees of
    each leaf's normalized histogram.  When ``excl_rank[r] >= 0`` the member
    with that rank is removed from every used leaf (it must belong to each
    of them) and the leaf totals shrink accordingly.

    Returns ``(quantile, contrast, n_used)``.  ``quantile[r, a]`` is the
    smallest response whose cumulative weight reaches ``alphas[a]``;
    ``contrast[r, a]`` is the weighted pinball risk at that point, which is
    the minimum of the weighted contrast over all candidate responses.
    Sums use ``y_sorted``; reported quantiles are read from ``y_out`` (the
    same responses before any shift).  Rows with no usable tree get NaN.
    Rows are processed in the order ``visit``; neighbouring rows with
    similar leaves make the block search cheaper.
    """
    q, k = leaves.shape
    na = alphas.shape[0]
    n = y_sorted.shape[0]
    qv = np.full((q, na), np.nan)
    cv = np.full((q, na), np.nan)
    used = np.zeros(q, dtype=np.int64)
    gl = np.empty(k, dtype=np.int64)
    inv = np.empty(k)
    acc = np.zeros(bs)
    hint = np.zeros(na, dtype=np.int64)
    for r in visit:
        rm = excl_rank[r]
        ym = y_sorted[rm] if rm >= 0 else 0.0
        T = 0
        for t in range(k):
            g = leaves[r, t]
            if g < 0:
                continue
            N = leaf_w[g] - (1.0 if rm >= 0 else 0.0)
            if N <= 0.0:
                continue
            gl[T] = g
            inv[T] = N
            T += 1
        used[r] = T
        if T == 0:
            continue
        St = 0.0
        Wt = 0.0
        for u in range(T):
            inv[u] = 1.0 / (T * inv[u])
            g = gl[u]
            if rm >= 0:
                St += inv[u] * (leaf_wy[g] - ym)
                Wt += inv[u] * (leaf_w[g] - 1.0)
            else:
                St += inv[u] * leaf_wy[g]
                Wt += inv[u] * leaf_w[g]
        for a in range(na):
            alpha = alphas[a]
            thr = alpha - ALPHA_TOL
            top = _find_block(gl, inv, T, cum_w, thr, rm, bs, nb_, hint[a])
            hint[a] = top
            b = top - 1
            base = b * bs
            ex = 1.0 if (rm >= 0 and rm < base) else 0.0
            cum = 0.0
            sy = 0.0
            for u in range(T):
                cum += inv[u] * (cum_w[gl[u], b] - ex)
                sy += inv[u] * (cum_wy[gl[u], b] - ex * ym)
            width = min(bs, n - base)
            for s in range(width):
                acc[s] = 0.0
            for u in range(T):
                g = gl[u]
                for p in range(pos[g, b], pos[g, b + 1]):
                    rr = mem_rank[p]
                    if rr == rm:
                        continue
                    acc[rr - base] += inv[u] * mem_w[p]
            hit = -1
            last = -1
            for s in range(width):
                if acc[s] == 0.0:
                    continue
                last = s
                cum += acc[s]
                sy += acc[s] * y_sorted[base + s]
                if cum >= thr:
                    hit = s
                    break
            if hit < 0:
                # rounding left the block total just below alpha
                hit = last
            theta = y_sorted[base + hit]
            qv[r, a] = y_out[base + hit]
            cv[r, a] = alpha * (St - theta * Wt) - (sy - theta * cum)
    return qv, cv, used


@nb.njit(**_NJIT)
def leaf_quantiles(ptr, mem_rank, mem_w, leaf_w, leaf_wy, y_sorted, y_out, alphas):
    """Per-leaf weighted quantile and minimal contrast, shape ``(L, na)``.

    Leaves with zero total weight get NaN.
    """
    L = ptr.shape[0] - 1
    na = alphas.shape[0]
    qv = np.full((L, na), np.nan)
    cv = np.full((L, na), np.nan)
    for g in range(L):
        N = leaf_w[g]
        if N <= 0.0:
            continue
        St = leaf_wy[g] / N
        for a in range(na):
            alpha = alphas[a]
            thr = alpha - ALPHA_TOL
            cum = 0.0
            sy = 0.0
            theta = np.nan
            for p in range(ptr[g], ptr[g + 1]):
                w = mem_w[p] / N
                yy = y_sorted[mem_rank[p]]
                cum += w
                sy += w * yy
                theta = yy
                qv[g, a] = y_out[mem_rank[p]]
                if cum >= thr:
                    break
            cv[g, a] = alpha * (St - theta) - (sy - theta * cum)
    return qv, cv


@nb.njit(**_NJIT)
def dense_scan(acc, y_sorted, y_out, alphas, out_q, out_c, row):
    """Quantile and minimal contrast of a dense weight vector over ranks."""
    n = y_sorted.shape[0]
    Wt = 0.0
    St = 0.0
    for s in range(n):
        Wt += acc[s]
        St += acc[s] * y_sorted[s]
    cum = 0.0
    sy = 0.0
    s = 0
    last = -1
    for a in range(alphas.shape[0]):
        alpha = alphas[a]
        thr = alpha - ALPHA_TOL
        hit = -1
        while True:
            if cum >= thr and last >= 0:
                hit = last
                break
            if s >= n:
                hit = last
                break
            if acc[s] != 0.0:
                cum += acc[s]
                sy += acc[s] * y_sorted[s]
                last = s
            s += 1
        theta = y_sorted[hit]
        out_q[row, a] = y_out[hit]
        out_c[row, a] = alpha * (St - theta * Wt) - (sy - theta * cum)


@nb.njit(**_NJIT)
def leaf_quantile_without(ptr, mem_rank, y_sorted, g, slot, alpha):
    """Unweighted inf-quantile of leaf ``g`` with the member at ``slot`` removed."""
    N = ptr[g + 1] - ptr[g] - 1
    if N <= 0:
        return np.nan
    kk = int(np.ceil(N * (alpha - ALPHA_TOL)))
    if kk < 1:
        kk = 1
    idx = kk - 1
    if idx >= slot:
        idx += 1
    return y_sorted[mem_rank[ptr[g] + idx]]


@nb.njit(**_NJIT)
def oob_in_leaf(leaves, rows, slot, excl, table, ptr, mem_rank, y_sorted, alphas):
    """Average over used trees of per-leaf quantiles for OOB queries.

    ``leaves[r, t] < 0`` drops tree ``t`` for query ``r``.  With ``excl``
    the query's own training row (``rows[r]``) is removed from each leaf
    before taking the quantile; otherwise ``table`` is read directly.
    """
    q, k = leaves.shape
    na = alphas.shape[0]
    out = np.full((q, na), np.nan)
    used = np.zeros(q, dtype=np.int64)
    for r in range(q):
        acc = np.zeros(na)
        T = 0
        for t in range(k):
            g = leaves[r, t]
            if g < 0:
                continue
            if excl:
                s = slot[t, rows[r]]
                if ptr[g + 1] - ptr[g] <= 1:
                    continue
                for a in range(na):
                    acc[a] += leaf_quantile_without(ptr, mem_rank, y_sorted, g, s, alphas[a])
            else:
                if np.isnan(table[g, 0]):
                    continue
                for a in range(na):
                    acc[a] += table[g, a]
            T += 1
        used[r] = T
        if T > 0:
            for a in range(na):
                out[r, a] = acc[a] / T
    return out, used


@nb.njit(**_NJIT)
def tree_average(leaves, table):
    """Mean over trees of ``table[leaves[r, t]]``, skipping NaN entries."""
    q, k = leaves.shape
    na = table.shape[1]
    out = np.full((q, na), np.nan)
    for r in range(q):
        for a in range(na):
            s = 0.0
            T = 0
            for t in range(k):
                g = leaves[r, t]
                if g < 0:
                    continue
                v = table[g, a]
                if np.isnan(v):
                    continue
                s += v
                T += 1
            if T > 0:
                out[r, a] = s / T
    return out


@nb.njit(**_NJIT)
def dense_weights(leaves, ptr, mem_rank, mem_w, leaf_w, n):
    """Forest weights over response ranks, averaged over the query rows.

    Each row of ``leaves`` yields one weight vector (mean over its used
    trees of the normalized leaf histograms); the rows are averaged.
    """
    q, k = leaves.shape
    out = np.zeros(n)
    for r in range(q):
        T = 0
        for t in range(k):
            if leaves[r, t] >= 0 and leaf_w[leaves[r, t]] > 0.0:
                T += 1
        if T == 0:
            continue
        for t in range(k):
            g = leaves[r, t]
            if g < 0 or leaf_w[g] <= 0.0:
                continue
            c = 1.0 / (q * T * leaf_w[g])
            for p in range(ptr[g], ptr[g + 1]):
                out[mem_rank[p]] += c * mem_w[p]
    return out


@nb.njit(**_NJIT)
def shadow_counts(S, i, feature, threshold, left, right, leaf, node_offset, leaf_offset, n_leaves):
    """Number of shadow rows inside each leaf's box with coordinate ``i`` ignored.

    A row is routed normally except at splits on feature ``i``, where it
    follows both children.
    """
    q = S.shape[0]
    k = node_offset.shape[0] - 1
    cnt = np.zeros(n_leaves, dtype=np.int64)
    stack = np.empty(node_offset[-1] + 1, dtype=np.int64)
    for t in range(k):
        base = node_offset[t]
        lbase = leaf_offset[t]
        for r in range(q):
            top = 1
            stack[0] = 0
            while top > 0:
                top -= 1
                v = stack[top]
                if leaf[base + v] >= 0:
                    cnt[lbase + leaf[base + v]] += 1
                    continue
                f = feature[base + v]
                if f == i:
                    stack[top] = left[base + v]
                    stack[top + 1] = right[base + v]
                    top += 2
                elif S[r, f] <= threshold[base + v]:
                    stack[top] = left[base + v]
                    top += 1
                else:
                    stack[top] = right[base + v]
                    top += 1
    return cnt


@nb.njit(**_NJIT)
def averaged_mixture(
    xi, i, n_shadow, cnt, feature, threshold, left, right, leaf, node_offset,
    leaf_offset, ptr, mem_rank, mem_w, leaf_w, y_sorted, y_out, alphas,
):
    """Quantile and minimal contrast under shadow-averaged weights.

    For each value ``xi[r]`` of input ``i`` the weight of a training row is
    the forest weight averaged over the shadow rows completed with
    ``xi[r]``.  Leaves compatible with ``xi[r]`` on coordinate ``i`` receive
    the fraction ``cnt / n_shadow`` of shadow rows that reach them.
    """
    q = xi.shape[0]
    k = node_offset.shape[0] - 1
    n = y_sorted.shape[0]
    na = alphas.shape[0]
    out_q = np.full((q, na), np.nan)
    out_c = np.full((q, na), np.nan)
    acc = np.zeros(n)
    stack = np.empty(node_offset[-1] + 1, dtype=np.int64)
    for r in range(q):
        acc[:] = 0.0
        for t in range(k):
            base = node_offset[t]
            lbase = leaf_offset[t]
            top = 1
            stack[0] = 0
            while top > 0:
                top -= 1
                v = stack[top]
                lf = leaf[base + v]
                if lf >= 0:
                    g = lbase + lf
                    if cnt[g] > 0 and leaf_w[g] > 0.0:
                        c = cnt[g] / (n_shadow * k * leaf_w[g])
                        for p in range(ptr[g], ptr[g + 1]):
                            acc[mem_rank[p]] += c * mem_w[p]
                    continue
                if feature[base + v] != i:
                    stack[top] = left[base + v]
                    stack[top + 1] = right[base + v]
                    top += 2
                elif xi[r] <= threshold[base + v]:
                    stack[top] = left[base + v]
                    top += 1
                else:
                    stack[top] = right[base + v]
                    top += 1
        dense_scan(acc, y_sorted, y_out, alphas, out_q, out_c, r)
    return out_q, out_c
