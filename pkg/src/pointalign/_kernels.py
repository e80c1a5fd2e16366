"""Compiled inner loops for the anchored alignment search.

Per anchor k the objective is a piecewise-linear function of the scale
whose breakpoints are the residual ratios; its value at any breakpoint is
evaluated in O(1) from prefix sums of the weighted arrays accumulated in
the three sorted breakpoint orders (ratios and the two truncation
boundaries). Channels that are not anchor-shifted are shared by every
anchor, so their sorted arrays are built once per call. Anchors are
processed in chunks that reuse scratch buffers, keeping allocator traffic
off the parallel path; breakpoint orders come from an LSD radix argsort.

The per-anchor loop is data-parallel (prange) with results written to
index-addressed slots and reduced sequentially afterwards, so outputs are
bitwise-identical regardless of thread count. A tau value <= 0 selects the
untruncated objective. Prefix-sum evaluation only steers the argmin; the
winning objective is re-evaluated exactly by the caller.

The default numba threading layer (workqueue) is not reentrant; callers in
solver.py serialize entry into these kernels with a module lock.
"""

import numpy as np
from numba import config, njit, prange

# Pin the portable threading layer; entry is serialized by solver.py anyway.
config.THREADING_LAYER = "workqueue"

NO_TAU = -1.0

_CHUNKS = 64
_SIGN = np.uint64(0x8000000000000000)
_RADIX_BITS = 11
_RADIX_SIZE = 1 << _RADIX_BITS
_RADIX_MASK = np.uint64(_RADIX_SIZE - 1)
_RADIX_PASSES = (64 + _RADIX_BITS - 1) // _RADIX_BITS


@njit(cache=True, nogil=True)
def _radix_argsort(keys, n, u0, u1, idx0, idx1, hist):
    """Stable ascending argsort of keys[:n] (float64, no NaN).

    The permutation lands in idx0[:n]. Floats map to unsigned keys that
    preserve order (sign-flip transform); digit passes whose bucket is
    constant are skipped.
    """
    bits = keys.view(np.uint64)
    for i in range(n):
        u = bits[i]
        if u & _SIGN:
            u0[i] = ~u
        else:
            u0[i] = u | _SIGN
        idx0[i] = i
    src_u, dst_u = u0, u1
    src_i, dst_i = idx0, idx1
    in_primary = True
    for p in range(_RADIX_PASSES):
        shift = np.uint64(p * _RADIX_BITS)
        for d in range(_RADIX_SIZE):
            hist[d] = 0
        for i in range(n):
            hist[(src_u[i] >> shift) & _RADIX_MASK] += 1
        single_bucket = False
        for d in range(_RADIX_SIZE):
            if hist[d] > 0:
                single_bucket = hist[d] == n
                break
        if single_bucket:
            continue  # this digit is constant: order already correct
        total = 0
        for d in range(_RADIX_SIZE):
            c = hist[d]
            hist[d] = total
            total += c
        for i in range(n):
            d = (src_u[i] >> shift) & _RADIX_MASK
            pos = hist[d]
            hist[d] = pos + 1
            dst_u[pos] = src_u[i]
            dst_i[pos] = src_i[i]
        src_u, dst_u = dst_u, src_u
        src_i, dst_i = dst_i, src_i
        in_primary = not in_primary
    if not in_primary:
        for i in range(n):
            idx0[i] = idx1[i]


@njit(cache=True, nogil=True)
def _sort_into(keys, n, vals_h, vals_x, prefix_h, prefix_x, u0, u1, idx0, idx1, hist, tmp):
    """Sort keys[:n] in place; fill prefix sums of the weighted payloads
    (vals_h / vals_x) accumulated in the sorted order."""
    _radix_argsort(keys, n, u0, u1, idx0, idx1, hist)
    for j in range(n):
        tmp[j] = keys[idx0[j]]
    for j in range(n):
        keys[j] = tmp[j]
    prefix_h[0] = 0.0
    prefix_x[0] = 0.0
    for j in range(n):
        src = idx0[j]
        prefix_h[j + 1] = prefix_h[j] + vals_h[src]
        prefix_x[j + 1] = prefix_x[j] + vals_x[src]


@njit(cache=True, nogil=True)
def _build_part(xhat, x, w, m, tau, keys_a, keys_b, keys_c, pa_h, pa_x, pb_h,
                pb_x, pc_h, pc_x, vals_h, vals_x, u0, u1, idx0, idx1, hist, tmp):
    """Canonicalize one channel group and fill its sorted breakpoint data.

    Consumes xhat/x/w[:m]; leaves sorted ratio keys in keys_a[:n] and, when
    truncated, the lower/upper boundary keys in keys_b / keys_c, with
    prefix sums of w*xhat and w*x in the matching orders. Returns
    (const, n) where const collects the s-independent contribution of
    zero-xhat entries.
    """
    n = 0
    const = 0.0
    trunc = tau > 0.0
    for i in range(m):
        v = xhat[i]
        if v == 0.0:
            r = w[i] * abs(x[i])
            if trunc and r > tau:
                r = tau
            const += r
            continue
        if v < 0.0:
            xh = -v
            xt = -x[i]
        else:
            xh = v
            xt = x[i]
        ratio = xt / xh
        wxh = w[i] * xh
        keys_a[n] = ratio
        vals_h[n] = wxh
        vals_x[n] = w[i] * xt
        if trunc:
            halfwidth = tau / wxh
            keys_b[n] = ratio - halfwidth
            keys_c[n] = ratio + halfwidth
        n += 1
    if trunc:
        _sort_into(keys_b, n, vals_h, vals_x, pb_h, pb_x, u0, u1, idx0, idx1, hist, tmp)
        _sort_into(keys_c, n, vals_h, vals_x, pc_h, pc_x, u0, u1, idx0, idx1, hist, tmp)
    _sort_into(keys_a, n, vals_h, vals_x, pa_h, pa_x, u0, u1, idx0, idx1, hist, tmp)
    return const, n


@njit(cache=True, nogil=True)
def _sweep_min(
    tau,
    sa_keys, sb_keys, sc_keys, s_pa_h, s_pa_x, s_pb_h, s_pb_x, s_pc_h, s_pc_x, s_n,
    da_keys, db_keys, dc_keys, d_pa_h, d_pa_x, d_pb_h, d_pb_x, d_pc_h, d_pc_x, d_n,
    const,
):
    """Minimum of the combined objective over all ratio breakpoints.

    Sweeps the merged static/dynamic ratio values in ascending order and
    evaluates each candidate in O(1) with strict-below prefix counters.
    """
    trunc = tau > 0.0
    s_tot_h = s_pa_h[s_n]
    s_tot_x = s_pa_x[s_n]
    d_tot_h = d_pa_h[d_n]
    d_tot_x = d_pa_x[d_n]

    best_l = np.inf
    best_s = 1.0
    ia = 0
    ja = 0
    sA = 0
    sB = 0
    sC = 0
    dA = 0
    dB = 0
    dC = 0
    while ia < s_n or ja < d_n:
        if ia < s_n and (ja >= d_n or sa_keys[ia] <= da_keys[ja]):
            v = sa_keys[ia]
        else:
            v = da_keys[ja]
        while ia < s_n and sa_keys[ia] == v:
            ia += 1
        while ja < d_n and da_keys[ja] == v:
            ja += 1
        while sA < s_n and sa_keys[sA] < v:
            sA += 1
        while dA < d_n and da_keys[dA] < v:
            dA += 1
        if trunc:
            while sB < s_n and sb_keys[sB] < v:
                sB += 1
            while sC < s_n and sc_keys[sC] < v:
                sC += 1
            while dB < d_n and db_keys[dB] < v:
                dB += 1
            while dC < d_n and dc_keys[dC] < v:
                dC += 1
            l = (
                s_pb_x[sB] - 2.0 * s_pa_x[sA] + s_pc_x[sC]
                + v * (2.0 * s_pa_h[sA] - s_pb_h[sB] - s_pc_h[sC])
                + tau * (s_n - sB + sC)
                + d_pb_x[dB] - 2.0 * d_pa_x[dA] + d_pc_x[dC]
                + v * (2.0 * d_pa_h[dA] - d_pb_h[dB] - d_pc_h[dC])
                + tau * (d_n - dB + dC)
            )
        else:
            l = (
                v * (2.0 * s_pa_h[sA] - s_tot_h) - (2.0 * s_pa_x[sA] - s_tot_x)
                + v * (2.0 * d_pa_h[dA] - d_tot_h) - (2.0 * d_pa_x[dA] - d_tot_x)
            )
        if l < best_l:
            best_l = l
            best_s = v
    if best_l == np.inf:
        # No breakpoints anywhere: objective is constant in s.
        return 1.0, const
    return best_s, best_l + const


@njit(cache=True, nogil=True, parallel=True)
def _align_anchored(stat_xhat, stat_x, stat_w, dyn_phat, dyn_p, w, tau):
    """Per-anchor subproblem sweep.

    stat_*: flattened channel entries shared by all anchors. dyn_phat /
    dyn_p hold the (N, C) channels that get the anchor's value subtracted;
    w are the per-point weights. Returns per-anchor (scale, objective).
    """
    n_pts, n_dyn = dyn_phat.shape
    m = n_pts * n_dyn
    ms = stat_xhat.shape[0]

    sa_keys = np.empty(ms)
    sb_keys = np.empty(ms)
    sc_keys = np.empty(ms)
    s_pa_h = np.empty(ms + 1)
    s_pa_x = np.empty(ms + 1)
    s_pb_h = np.empty(ms + 1)
    s_pb_x = np.empty(ms + 1)
    s_pc_h = np.empty(ms + 1)
    s_pc_x = np.empty(ms + 1)
    s_vals_h = np.empty(ms)
    s_vals_x = np.empty(ms)
    s_u0 = np.empty(ms, np.uint64)
    s_u1 = np.empty(ms, np.uint64)
    s_i0 = np.empty(ms, np.int64)
    s_i1 = np.empty(ms, np.int64)
    s_hist = np.empty(_RADIX_SIZE, np.int64)
    s_tmp = np.empty(ms)
    s_const, s_n = _build_part(
        stat_xhat, stat_x, stat_w, ms, tau, sa_keys, sb_keys, sc_keys,
        s_pa_h, s_pa_x, s_pb_h, s_pb_x, s_pc_h, s_pc_x, s_vals_h, s_vals_x,
        s_u0, s_u1, s_i0, s_i1, s_hist, s_tmp,
    )

    ww = np.empty(m)
    for i in range(n_pts):
        for c in range(n_dyn):
            ww[i * n_dyn + c] = w[i]

    s_arr = np.empty(n_pts)
    l_arr = np.empty(n_pts)
    n_chunks = min(n_pts, _CHUNKS)
    for chunk in prange(n_chunks):
        lo = chunk * n_pts // n_chunks
        hi = (chunk + 1) * n_pts // n_chunks
        xhat = np.empty(m)
        x = np.empty(m)
        da_keys = np.empty(m)
        db_keys = np.empty(m)
        dc_keys = np.empty(m)
        d_pa_h = np.empty(m + 1)
        d_pa_x = np.empty(m + 1)
        d_pb_h = np.empty(m + 1)
        d_pb_x = np.empty(m + 1)
        d_pc_h = np.empty(m + 1)
        d_pc_x = np.empty(m + 1)
        d_vals_h = np.empty(m)
        d_vals_x = np.empty(m)
        d_u0 = np.empty(m, np.uint64)
        d_u1 = np.empty(m, np.uint64)
        d_i0 = np.empty(m, np.int64)
        d_i1 = np.empty(m, np.int64)
        d_hist = np.empty(_RADIX_SIZE, np.int64)
        d_tmp = np.empty(m)
        for k in range(lo, hi):
            for i in range(n_pts):
                for c in range(n_dyn):
                    xhat[i * n_dyn + c] = dyn_phat[i, c] - dyn_phat[k, c]
                    x[i * n_dyn + c] = dyn_p[i, c] - dyn_p[k, c]
            d_const, d_n = _build_part(
                xhat, x, ww, m, tau, da_keys, db_keys, dc_keys,
                d_pa_h, d_pa_x, d_pb_h, d_pb_x, d_pc_h, d_pc_x,
                d_vals_h, d_vals_x, d_u0, d_u1, d_i0, d_i1, d_hist, d_tmp,
            )
            s_k, l_k = _sweep_min(
                tau,
                sa_keys, sb_keys, sc_keys, s_pa_h, s_pa_x, s_pb_h, s_pb_x,
                s_pc_h, s_pc_x, s_n,
                da_keys, db_keys, dc_keys, d_pa_h, d_pa_x, d_pb_h, d_pb_x,
                d_pc_h, d_pc_x, d_n,
                s_const + d_const,
            )
            s_arr[k] = s_k
            l_arr[k] = l_k
    return s_arr, l_arr
