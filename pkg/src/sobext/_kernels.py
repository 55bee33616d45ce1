"""Numba kernels for the per-point sweeps.

Everything here operates on raw arrays: points (n, d) float64 with d <= 3,
weights (n,), plus a uniform cell hash for range queries.  All kernels write
one output slot per point (no shared reductions), so results are bitwise
deterministic regardless of thread count.

The cell hash is built on the Python side (`build_hash`); queries inside the
kernels do a count pass and a fill pass over the cell window, so the only
per-iteration allocations are ball-sized.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


def build_hash(pts: np.ndarray, cell: float):
    """Uniform cell hash over `pts` with the given cell side.

    Returns (lo, dims, strides, cell, order, starts): points sorted by linear
    cell id, with starts[c]:starts[c+1] slicing `order` for cell c.
    """
    n, d = pts.shape
    lo = pts.min(axis=0)
    ij = np.floor((pts - lo) / cell).astype(np.int64)
    np.clip(ij, 0, None, out=ij)
    dims = ij.max(axis=0) + 1
    strides = np.ones(d, dtype=np.int64)
    for k in range(d - 2, -1, -1):
        strides[k] = strides[k + 1] * dims[k + 1]
    lin = (ij * strides).sum(axis=1)
    order = np.argsort(lin, kind="stable").astype(np.int64)
    ncell = int(dims.prod())
    starts = np.searchsorted(lin[order], np.arange(ncell + 1)).astype(np.int64)
    return lo, dims.astype(np.int64), strides, float(cell), order, starts


@njit(cache=True)
def _count_in_ball(pts, x, rad2, lo, dims, strides, cell, order, starts):
    d = pts.shape[1]
    rad = np.sqrt(rad2)
    lo0 = np.empty(3, dtype=np.int64)
    hi0 = np.empty(3, dtype=np.int64)
    span = np.empty(3, dtype=np.int64)
    total = 1
    for k in range(d):
        a = int(np.floor((x[k] - rad - lo[k]) / cell))
        b = int(np.floor((x[k] + rad - lo[k]) / cell))
        if a < 0:
            a = 0
        if b > dims[k] - 1:
            b = dims[k] - 1
        if b < a:
            return 0
        lo0[k] = a
        hi0[k] = b
        span[k] = b - a + 1
        total *= span[k]
    cnt = 0
    for t in range(total):
        rem = t
        c = 0
        for k in range(d):
            off = rem % span[k]
            rem //= span[k]
            c += (lo0[k] + off) * strides[k]
        for q in range(starts[c], starts[c + 1]):
            j = order[q]
            d2 = 0.0
            for k in range(d):
                dd = pts[j, k] - x[k]
                d2 += dd * dd
            if d2 < rad2:
                cnt += 1
    return cnt


@njit(cache=True)
def _fill_ball(pts, x, rad2, lo, dims, strides, cell, order, starts, idx, dist):
    d = pts.shape[1]
    rad = np.sqrt(rad2)
    lo0 = np.empty(3, dtype=np.int64)
    hi0 = np.empty(3, dtype=np.int64)
    span = np.empty(3, dtype=np.int64)
    total = 1
    for k in range(d):
        a = int(np.floor((x[k] - rad - lo[k]) / cell))
        b = int(np.floor((x[k] + rad - lo[k]) / cell))
        if a < 0:
            a = 0
        if b > dims[k] - 1:
            b = dims[k] - 1
        if b < a:
            return 0
        lo0[k] = a
        hi0[k] = b
        span[k] = b - a + 1
        total *= span[k]
    cnt = 0
    for t in range(total):
        rem = t
        c = 0
        for k in range(d):
            off = rem % span[k]
            rem //= span[k]
            c += (lo0[k] + off) * strides[k]
        for q in range(starts[c], starts[c + 1]):
            j = order[q]
            d2 = 0.0
            for k in range(d):
                dd = pts[j, k] - x[k]
                d2 += dd * dd
            if d2 < rad2:
                idx[cnt] = j
                dist[cnt] = np.sqrt(d2)
                cnt += 1
    return cnt


# -- sharp functional ---------------------------------------------------------

@njit(cache=True)
def _fenwick_add(tree, i, wv, vv):
    # tree holds (weight, weight*value) prefix sums over value ranks
    n = tree.shape[1]
    i += 1
    while i <= n:
        tree[0, i - 1] += wv
        tree[1, i - 1] += vv
        i += i & (-i)


@njit(cache=True)
def _fenwick_sum(tree, i):
    # inclusive prefix [0..i]
    sw = 0.0
    sv = 0.0
    i += 1
    while i > 0:
        sw += tree[0, i - 1]
        sv += tree[1, i - 1]
        i -= i & (-i)
    return sw, sv


@njit(cache=True, parallel=True)
def sharp_multi(pts, w, u, s_arr, lo, dims, strides, cell, order, starts):
    """u_sharp at every point for each scale in s_arr (ascending).

    For each point the sup runs over t in {realized radii < s} plus t = s,
    with open balls {d < t}.  The double average of |u(y)-u(z)| over the
    weighted prefix is maintained exactly with a Fenwick tree over value
    ranks (Gini mean difference), so the result is exact for scalar fields.
    """
    n = pts.shape[0]
    ns = s_arr.shape[0]
    s_max = s_arr[ns - 1]
    out = np.zeros((ns, n))
    for i in prange(n):
        x = pts[i]
        m = _count_in_ball(pts, x, s_max * s_max, lo, dims, strides, cell,
                           order, starts)
        idx = np.empty(m, dtype=np.int64)
        dst = np.empty(m, dtype=np.float64)
        _fill_ball(pts, x, s_max * s_max, lo, dims, strides, cell,
                   order, starts, idx, dst)
        ordd = np.argsort(dst, kind="mergesort")
        vals = np.empty(m)
        for k in range(m):
            vals[k] = u[idx[ordd[k]]]
        dsort = dst[ordd]
        # value ranks within the ball
        ordv = np.argsort(vals, kind="mergesort")
        rank = np.empty(m, dtype=np.int64)
        for k in range(m):
            rank[ordv[k]] = k
        tree = np.zeros((2, m))
        best = np.zeros(ns)
        S = 0.0   # sum over unordered pairs of w_i w_j |v_i - v_j|
        W = 0.0
        js = 0
        k = 0
        while k < m:
            delta = dsort[k]
            while js < ns and s_arr[js] <= delta:
                # close scale s_js: its full prefix is the current set {d < s}
                if W > 0.0 and S > 0.0:
                    v = (2.0 * S / (W * W)) / s_arr[js]
                    if v > best[js]:
                        best[js] = v
                js += 1
            if js >= ns:
                break
            if W > 0.0 and delta > 0.0 and S > 0.0:
                v = (2.0 * S / (W * W)) / delta
                for j in range(js, ns):
                    if v > best[j]:
                        best[j] = v
            # insert the tie group at distance delta
            while k < m and dsort[k] == delta:
                r = rank[k]
                wk = w[idx[ordd[k]]]
                vk = vals[k]
                if r > 0:
                    swb, svb = _fenwick_sum(tree, r - 1)
                else:
                    swb, svb = 0.0, 0.0
                swa, sva = _fenwick_sum(tree, m - 1)
                swab = swa - swb
                svab = sva - svb
                # pairs against everything below / at-or-above rank r
                S += wk * (vk * swb - svb) + wk * (svab - vk * swab)
                _fenwick_add(tree, r, wk, wk * vk)
                W += wk
                k += 1
        while js < ns:
            if W > 0.0 and S > 0.0:
                v = (2.0 * S / (W * W)) / s_arr[js]
                if v > best[js]:
                    best[js] = v
            js += 1
        for j in range(ns):
            out[j, i] = best[j]
    return out


@njit(cache=True, parallel=True)
def sharp_vector_direct(pts, w, u2, s_arr, lo, dims, strides, cell, order,
                        starts, qnorm):
    """Sharp functional for vector fields by direct O(m^2) pair sums.

    qnorm <= 0 selects the sup norm, otherwise the ell_q norm.  Intended for
    moderate ball sizes; the caller enforces the size threshold.
    """
    n = pts.shape[0]
    N = u2.shape[1]
    ns = s_arr.shape[0]
    s_max = s_arr[ns - 1]
    out = np.zeros((ns, n))
    for i in prange(n):
        x = pts[i]
        m = _count_in_ball(pts, x, s_max * s_max, lo, dims, strides, cell,
                           order, starts)
        idx = np.empty(m, dtype=np.int64)
        dst = np.empty(m, dtype=np.float64)
        _fill_ball(pts, x, s_max * s_max, lo, dims, strides, cell,
                   order, starts, idx, dst)
        ordd = np.argsort(dst, kind="mergesort")
        dsort = dst[ordd]
        # row[k] = sum_{l<k} w_l w_k |u_k - u_l| in distance order
        S = 0.0
        W = 0.0
        best = np.zeros(ns)
        js = 0
        k = 0
        while k < m:
            delta = dsort[k]
            while js < ns and s_arr[js] <= delta:
                if W > 0.0 and S > 0.0:
                    v = (2.0 * S / (W * W)) / s_arr[js]
                    if v > best[js]:
                        best[js] = v
                js += 1
            if js >= ns:
                break
            if W > 0.0 and delta > 0.0 and S > 0.0:
                v = (2.0 * S / (W * W)) / delta
                for j in range(js, ns):
                    if v > best[j]:
                        best[j] = v
            while k < m and dsort[k] == delta:
                jk = idx[ordd[k]]
                wk = w[jk]
                acc = 0.0
                for l in range(k):
                    jl = idx[ordd[l]]
                    if qnorm <= 0.0:
                        dv = 0.0
                        for c in range(N):
                            t = abs(u2[jk, c] - u2[jl, c])
                            if t > dv:
                                dv = t
                    else:
                        dv = 0.0
                        for c in range(N):
                            dv += abs(u2[jk, c] - u2[jl, c]) ** qnorm
                        dv = dv ** (1.0 / qnorm)
                    acc += w[jl] * dv
                S += wk * acc
                W += wk
                k += 1
        while js < ns:
            if W > 0.0 and S > 0.0:
                v = (2.0 * S / (W * W)) / s_arr[js]
                if v > best[js]:
                    best[js] = v
            js += 1
        for j in range(ns):
            out[j, i] = best[j]
    return out


# -- maximal operator ---------------------------------------------------------

@njit(cache=True, parallel=True)
def maximal_capped(pts, w, absu, R, lo, dims, strides, cell, order, starts):
    """Restricted maximal function: sup over r in (0, R) of avg |u| on B(x,r)."""
    n = pts.shape[0]
    out = np.zeros(n)
    for i in prange(n):
        x = pts[i]
        m = _count_in_ball(pts, x, R * R, lo, dims, strides, cell, order,
                           starts)
        idx = np.empty(m, dtype=np.int64)
        dst = np.empty(m, dtype=np.float64)
        _fill_ball(pts, x, R * R, lo, dims, strides, cell, order, starts,
                   idx, dst)
        ordd = np.argsort(dst, kind="mergesort")
        best = 0.0
        cw = 0.0
        cwu = 0.0
        k = 0
        while k < m:
            delta = dst[ordd[k]]
            while k < m and dst[ordd[k]] == delta:
                j = idx[ordd[k]]
                cw += w[j]
                cwu += w[j] * absu[j]
                k += 1
            # the prefix {d <= delta} is B(x, r) for r in (delta, next)
            if delta < R:
                v = cwu / cw
                if v > best:
                    best = v
        out[i] = best
    return out


@njit(cache=True, parallel=True)
def maximal_full(pts, w, absu):
    """Unrestricted maximal function (R = inf): brute force over all points."""
    n = pts.shape[0]
    d = pts.shape[1]
    out = np.zeros(n)
    for i in prange(n):
        dst = np.empty(n)
        for j in range(n):
            d2 = 0.0
            for k in range(d):
                dd = pts[j, k] - pts[i, k]
                d2 += dd * dd
            dst[j] = d2
        ordd = np.argsort(dst, kind="mergesort")
        best = 0.0
        cw = 0.0
        cwu = 0.0
        k = 0
        while k < n:
            delta = dst[ordd[k]]
            while k < n and dst[ordd[k]] == delta:
                j = ordd[k]
                cw += w[j]
                cwu += w[j] * absu[j]
                k += 1
            v = cwu / cw
            if v > best:
                best = v
        out[i] = best
    return out


# -- measure density ----------------------------------------------------------

@njit(cache=True, parallel=True)
def density_scan(pts, w, inmask, members, r_max, lo, dims, strides, cell,
                 order, starts):
    """Per member point: min over realized radii <= r_max of mu(B & Omega)/mu(B).

    Returns (min ratio, witness radius) per member.
    """
    nm = members.shape[0]
    ratios = np.ones(nm)
    wit = np.zeros(nm)
    for q in prange(nm):
        i = members[q]
        x = pts[i]
        m = _count_in_ball(pts, x, r_max * r_max * (1.0 + 1e-12), lo, dims,
                           strides, cell, order, starts)
        idx = np.empty(m, dtype=np.int64)
        dst = np.empty(m, dtype=np.float64)
        _fill_ball(pts, x, r_max * r_max * (1.0 + 1e-12), lo, dims, strides,
                   cell, order, starts, idx, dst)
        ordd = np.argsort(dst, kind="mergesort")
        cw = 0.0
        cwo = 0.0
        best = 1.0
        br = 0.0
        k = 0
        while k < m:
            delta = dst[ordd[k]]
            if delta > r_max:
                break
            while k < m and dst[ordd[k]] == delta:
                j = idx[ordd[k]]
                cw += w[j]
                if inmask[j]:
                    cwo += w[j]
                k += 1
            # B(x, r) equals this prefix for r slightly above delta; the
            # radius r = min(next realized, r_max) realizes it within (0, r_max]
            if delta < r_max or delta == r_max:
                v = cwo / cw
                if v < best:
                    best = v
                    if k < m and dst[ordd[k]] <= r_max:
                        br = dst[ordd[k]]
                    else:
                        br = r_max
        ratios[q] = best
        wit[q] = br
    return ratios, wit


# -- ball counting (doubling) -------------------------------------------------

@njit(cache=True, parallel=True)
def ball_measures(pts, w, centers, r, lo, dims, strides, cell, order, starts):
    nc = centers.shape[0]
    out = np.empty(nc)
    for q in prange(nc):
        x = pts[centers[q]]
        m = _count_in_ball(pts, x, r * r, lo, dims, strides, cell, order,
                           starts)
        idx = np.empty(m, dtype=np.int64)
        dst = np.empty(m, dtype=np.float64)
        _fill_ball(pts, x, r * r, lo, dims, strides, cell, order, starts,
                   idx, dst)
        s = 0.0
        for k in range(m):
            s += w[idx[k]]
        out[q] = s
    return out


# -- Poincare sweep -----------------------------------------------------------

@njit(cache=True, parallel=True)
def pi_radius_sweep(pts, w, U, RHOP, r, lam, p, diam_cap, lo, dims, strides,
                    cell, order, starts):
    """One radius of the Poincare sweep over all centers.

    U is (nf, n) field values, RHOP is (nf, n) gradient values already raised
    to the p-th power.  Returns (lhs, rhs) of shape (nf, n) and a per-center
    diam flag (1 where the double-sweep heuristic was used).
    """
    n = pts.shape[0]
    d = pts.shape[1]
    nf = U.shape[0]
    lhs = np.zeros((nf, n))
    rhs = np.zeros((nf, n))
    flag = np.zeros(n, dtype=np.uint8)
    for i in prange(n):
        x = pts[i]
        m = _count_in_ball(pts, x, r * r, lo, dims, strides, cell, order,
                           starts)
        idx = np.empty(m, dtype=np.int64)
        dst = np.empty(m, dtype=np.float64)
        _fill_ball(pts, x, r * r, lo, dims, strides, cell, order, starts,
                   idx, dst)
        # diameter of the ball set
        diam = 0.0
        if m <= diam_cap:
            for a in range(m):
                ja = idx[a]
                for b in range(a + 1, m):
                    jb = idx[b]
                    d2 = 0.0
                    for k in range(d):
                        dd = pts[ja, k] - pts[jb, k]
                        d2 += dd * dd
                    if d2 > diam:
                        diam = d2
            diam = np.sqrt(diam)
        else:
            flag[i] = 1
            # double sweep: farthest from center, then farthest from that
            besta = -1.0
            a0 = 0
            for a in range(m):
                if dst[a] > besta:
                    besta = dst[a]
                    a0 = a
            for _ in range(2):
                bestb = -1.0
                b0 = 0
                ja = idx[a0]
                for b in range(m):
                    jb = idx[b]
                    d2 = 0.0
                    for k in range(d):
                        dd = pts[ja, k] - pts[jb, k]
                        d2 += dd * dd
                    if d2 > bestb:
                        bestb = d2
                        b0 = b
                if np.sqrt(bestb) > diam:
                    diam = np.sqrt(bestb)
                a0 = b0
        # lambda-ball
        rl = lam * r
        ml = _count_in_ball(pts, x, rl * rl, lo, dims, strides, cell, order,
                            starts)
        idxl = np.empty(ml, dtype=np.int64)
        dstl = np.empty(ml, dtype=np.float64)
        _fill_ball(pts, x, rl * rl, lo, dims, strides, cell, order, starts,
                   idxl, dstl)
        wb = 0.0
        for k in range(m):
            wb += w[idx[k]]
        wl = 0.0
        for k in range(ml):
            wl += w[idxl[k]]
        for f in range(nf):
            mu = 0.0
            for k in range(m):
                j = idx[k]
                mu += w[j] * U[f, j]
            mu /= wb
            acc = 0.0
            for k in range(m):
                j = idx[k]
                acc += w[j] * abs(U[f, j] - mu)
            lhs[f, i] = acc / wb
            accr = 0.0
            for k in range(ml):
                j = idxl[k]
                accr += w[j] * RHOP[f, j]
            rhs[f, i] = diam * (accr / wl) ** (1.0 / p)
    return lhs, rhs, flag


# -- pairwise Hajlasz checks --------------------------------------------------

@njit(cache=True, parallel=True)
def pair_excess_local(pts, u2, g, thresh, qnorm, lo, dims, strides, cell,
                      order, starts):
    """Max over pairs with 0 < d < thresh of |u(x)-u(y)| - d (g(x)+g(y)).

    Returns per-point (excess, partner index); reduce on the Python side.
    """
    n = pts.shape[0]
    N = u2.shape[1]
    exc = np.full(n, -np.inf)
    par = np.full(n, -1, dtype=np.int64)
    for i in prange(n):
        x = pts[i]
        m = _count_in_ball(pts, x, thresh * thresh, lo, dims, strides, cell,
                           order, starts)
        idx = np.empty(m, dtype=np.int64)
        dst = np.empty(m, dtype=np.float64)
        _fill_ball(pts, x, thresh * thresh, lo, dims, strides, cell, order,
                   starts, idx, dst)
        best = -np.inf
        bj = -1
        for k in range(m):
            j = idx[k]
            if j <= i or dst[k] == 0.0:
                continue
            if qnorm <= 0.0:
                dv = 0.0
                for c in range(N):
                    t = abs(u2[i, c] - u2[j, c])
                    if t > dv:
                        dv = t
            else:
                dv = 0.0
                for c in range(N):
                    dv += abs(u2[i, c] - u2[j, c]) ** qnorm
                dv = dv ** (1.0 / qnorm)
            e = dv - dst[k] * (g[i] + g[j])
            if e > best:
                best = e
                bj = j
        exc[i] = best
        par[i] = bj
    return exc, par


@njit(cache=True, parallel=True)
def pair_excess_global(pts, u2, g, qnorm):
    """Same as pair_excess_local with no distance threshold (all pairs)."""
    n = pts.shape[0]
    d = pts.shape[1]
    N = u2.shape[1]
    exc = np.full(n, -np.inf)
    par = np.full(n, -1, dtype=np.int64)
    for i in prange(n):
        best = -np.inf
        bj = -1
        for j in range(i + 1, n):
            d2 = 0.0
            for k in range(d):
                dd = pts[j, k] - pts[i, k]
                d2 += dd * dd
            if d2 == 0.0:
                continue
            if qnorm <= 0.0:
                dv = 0.0
                for c in range(N):
                    t = abs(u2[i, c] - u2[j, c])
                    if t > dv:
                        dv = t
            else:
                dv = 0.0
                for c in range(N):
                    dv += abs(u2[i, c] - u2[j, c]) ** qnorm
                dv = dv ** (1.0 / qnorm)
            e = dv - np.sqrt(d2) * (g[i] + g[j])
            if e > best:
                best = e
                bj = j
        exc[i] = best
        par[i] = bj
    return exc, par


@njit(cache=True, parallel=True)
def pair_fit_constant(pts, u2, base, thresh, qnorm, lo, dims, strides, cell,
                      order, starts):
    """Smallest C with |u(x)-u(y)| <= d(x,y) C (base(x)+base(y)) on pairs
    with 0 < d < thresh.

    Returns per-point (max ratio, count of pairs with zero denominator but
    nonzero oscillation); the fitted constant is the max over finite ratios.
    """
    n = pts.shape[0]
    N = u2.shape[1]
    fit = np.zeros(n)
    badc = np.zeros(n, dtype=np.int64)
    for i in prange(n):
        x = pts[i]
        m = _count_in_ball(pts, x, thresh * thresh, lo, dims, strides, cell,
                           order, starts)
        idx = np.empty(m, dtype=np.int64)
        dst = np.empty(m, dtype=np.float64)
        _fill_ball(pts, x, thresh * thresh, lo, dims, strides, cell, order,
                   starts, idx, dst)
        best = 0.0
        bad = 0
        for k in range(m):
            j = idx[k]
            if j <= i or dst[k] == 0.0:
                continue
            if qnorm <= 0.0:
                dv = 0.0
                for c in range(N):
                    t = abs(u2[i, c] - u2[j, c])
                    if t > dv:
                        dv = t
            else:
                dv = 0.0
                for c in range(N):
                    dv += abs(u2[i, c] - u2[j, c]) ** qnorm
                dv = dv ** (1.0 / qnorm)
            if dv == 0.0:
                continue
            den = dst[k] * (base[i] + base[j])
            if den == 0.0:
                bad += 1
            else:
                v = dv / den
                if v > best:
                    best = v
        fit[i] = best
        badc[i] = bad
    return fit, badc


# -- pair enumeration ----------------------------------------------------------

@njit(cache=True)
def count_pairs_within(pts, thresh, lo, dims, strides, cell, order, starts):
    n = pts.shape[0]
    total = 0
    for i in range(n):
        m = _count_in_ball(pts, pts[i], thresh * thresh, lo, dims, strides,
                           cell, order, starts)
        idx = np.empty(m, dtype=np.int64)
        dst = np.empty(m, dtype=np.float64)
        _fill_ball(pts, pts[i], thresh * thresh, lo, dims, strides, cell,
                   order, starts, idx, dst)
        for k in range(m):
            if idx[k] > i and dst[k] > 0.0:
                total += 1
    return total


@njit(cache=True)
def fill_pairs_within(pts, thresh, lo, dims, strides, cell, order, starts,
                      I, J, D):
    n = pts.shape[0]
    t = 0
    for i in range(n):
        m = _count_in_ball(pts, pts[i], thresh * thresh, lo, dims, strides,
                           cell, order, starts)
        idx = np.empty(m, dtype=np.int64)
        dst = np.empty(m, dtype=np.float64)
        _fill_ball(pts, pts[i], thresh * thresh, lo, dims, strides, cell,
                   order, starts, idx, dst)
        for k in range(m):
            if idx[k] > i and dst[k] > 0.0:
                I[t] = i
                J[t] = idx[k]
                D[t] = dst[k]
                t += 1
    return t


# -- inf-convolution -----------------------------------------------------------

@njit(cache=True, parallel=True)
def inf_convolution(pts, u, L):
    """McShane-type approximant: u_L(x) = min_y (u(y) + L d(x,y))."""
    n = pts.shape[0]
    d = pts.shape[1]
    out = np.empty(n)
    for i in prange(n):
        best = u[i]
        for j in range(n):
            d2 = 0.0
            for k in range(d):
                dd = pts[j, k] - pts[i, k]
                d2 += dd * dd
            v = u[j] + L * np.sqrt(d2)
            if v < best:
                best = v
        out[i] = best
    return out
