"""Numba kernels for tile binning and ray-space compositing.

Every kernel walks tiles with ``prange``; a tile owns its pixels and its
slice of the flattened candidate list, so writes never overlap and the
per-pixel accumulation order is the candidate order.
"""

import math

import numba
import numpy as np
from numba import prange

from .camera import cap_bounds_raw

# omp is safe when several Python threads launch kernels (service jobs)
numba.config.THREADING_LAYER = "omp"

TWO_PI = 2.0 * math.pi
N_ENTRY_GRADS = 19  # d o_loc (3), d M (9), d opacity (1), d color (3), d normal axis (3)


@numba.njit(cache=True)
def _column_spans(lon_lo, lon_hi, W):
    """Pixel-column spans (inclusive) whose centers may fall in [lon_lo, lon_hi].

    Returns (n_spans, a0, a1, b0, b1); one pixel of slack on each side.
    """
    u0 = math.ceil(W * (lon_lo + math.pi) / TWO_PI - 0.5) - 1
    u1 = math.floor(W * (lon_hi + math.pi) / TWO_PI - 0.5) + 1
    if u1 - u0 + 1 >= W:
        return 1, 0, W - 1, 0, -1
    if u0 < 0:
        return 2, u0 + W, W - 1, 0, u1
    if u1 >= W:
        return 2, u0, W - 1, 0, u1 - W
    return 1, u0, u1, 0, -1


@numba.njit(cache=True)
def gaussian_tile_rects(cam_means, radius, active, W, H, ts):
    """Tile rectangles per Gaussian: (N, 2, 4) of (tx0, tx1, ty0, ty1); -1 marks an empty slot."""
    n = cam_means.shape[0]
    rects = np.full((n, 2, 4), -1, dtype=np.int64)
    ntx = (W + ts - 1) // ts
    nty = (H + ts - 1) // ts
    for i in range(n):
        if not active[i]:
            continue
        cx = cam_means[i, 0]
        cy = cam_means[i, 1]
        cz = cam_means[i, 2]
        dist = math.sqrt(cx * cx + cy * cy + cz * cz)
        full_sphere, full_lon, lat_lo, lat_hi, lon_lo, lon_hi = cap_bounds_raw(cx, cy, cz, dist, radius[i])
        if full_sphere:
            rects[i, 0, 0] = 0
            rects[i, 0, 1] = ntx - 1
            rects[i, 0, 2] = 0
            rects[i, 0, 3] = nty - 1
            continue
        v0 = math.ceil(0.5 * H - H * lat_hi / math.pi - 0.5) - 1
        v1 = math.floor(0.5 * H - H * lat_lo / math.pi - 0.5) + 1
        v0 = max(v0, 0)
        v1 = min(v1, H - 1)
        if v1 < v0:
            continue
        if full_lon:
            nspan, a0, a1, b0, b1 = 1, 0, W - 1, 0, -1
        else:
            nspan, a0, a1, b0, b1 = _column_spans(lon_lo, lon_hi, W)
        rects[i, 0, 0] = a0 // ts
        rects[i, 0, 1] = a1 // ts
        rects[i, 0, 2] = v0 // ts
        rects[i, 0, 3] = v1 // ts
        if nspan == 2 and b1 >= b0:
            tb0 = b0 // ts
            tb1 = b1 // ts
            # merge overlapping tile spans so no tile lists a Gaussian twice
            if tb1 >= rects[i, 0, 0]:
                rects[i, 0, 0] = 0
                rects[i, 0, 1] = ntx - 1
            else:
                rects[i, 1, 0] = tb0
                rects[i, 1, 1] = tb1
                rects[i, 1, 2] = rects[i, 0, 2]
                rects[i, 1, 3] = rects[i, 0, 3]
    return rects


@numba.njit(cache=True)
def fill_tiles(rects, order, ntx, nty):
    """CSR tile lists; Gaussians are inserted in ``order`` so each list is sorted."""
    n_tiles = ntx * nty
    counts = np.zeros(n_tiles + 1, dtype=np.int64)
    for i in range(rects.shape[0]):
        for r in range(2):
            if rects[i, r, 0] < 0:
                continue
            for ty in range(rects[i, r, 2], rects[i, r, 3] + 1):
                for tx in range(rects[i, r, 0], rects[i, r, 1] + 1):
                    counts[ty * ntx + tx + 1] += 1
    offsets = np.cumsum(counts)
    ids = np.empty(offsets[-1], dtype=np.int64)
    cursor = offsets[:-1].copy()
    for k in range(order.shape[0]):
        i = order[k]
        for r in range(2):
            if rects[i, r, 0] < 0:
                continue
            for ty in range(rects[i, r, 2], rects[i, r, 3] + 1):
                for tx in range(rects[i, r, 0], rects[i, r, 1] + 1):
                    t = ty * ntx + tx
                    ids[cursor[t]] = i
                    cursor[t] += 1
    return offsets, ids


@numba.njit(cache=True)
def _candidate_order(rays, py, px, M, oloc, ids, lo, hi):
    """Per-ray exact ordering of a tile's candidates by peak depth (debug mode)."""
    n = hi - lo
    tv = np.empty(n)
    dx = rays[py, px, 0]
    dy = rays[py, px, 1]
    dz = rays[py, px, 2]
    for k in range(n):
        g = ids[lo + k]
        r0 = M[g, 0, 0] * dx + M[g, 0, 1] * dy + M[g, 0, 2] * dz
        r1 = M[g, 1, 0] * dx + M[g, 1, 1] * dy + M[g, 1, 2] * dz
        r2 = M[g, 2, 0] * dx + M[g, 2, 1] * dy + M[g, 2, 2] * dz
        A = r0 * r0 + r1 * r1 + r2 * r2
        B = oloc[g, 0] * r0 + oloc[g, 1] * r1 + oloc[g, 2] * r2
        tv[k] = -B / A
    return np.argsort(tv, kind="mergesort") + lo


@numba.njit(cache=True)
def _taper(q, q0, q1):
    # C1 fade of the response between q0 and the support edge q1
    if q <= q0:
        return 1.0
    x = (q - q0) / (q1 - q0)
    return 1.0 - x * x * (3.0 - 2.0 * x)


@numba.njit(cache=True)
def _taper_dq(q, q0, q1):
    if q <= q0:
        return 0.0
    x = (q - q0) / (q1 - q0)
    return -6.0 * x * (1.0 - x) / (q1 - q0)


@numba.njit(parallel=True, cache=True)
def forward_kernel(
    rays, M, oloc, Cq, opac, color, naxis, offsets, ids, ts, ntx,
    t_near, cutoff2, q_taper, alpha_min, alpha_max, t_min, per_ray_sort,
):
    H, W = rays.shape[0], rays.shape[1]
    rgb = np.zeros((H, W, 3))
    alpha = np.zeros((H, W))
    depth = np.full((H, W), np.nan)
    exp_depth = np.full((H, W), np.nan)
    normal = np.zeros((H, W, 3))
    count = np.zeros((H, W), dtype=np.int32)
    n_tiles = offsets.shape[0] - 1
    for tile in prange(n_tiles):
        ty = tile // ntx
        tx = tile - ty * ntx
        lo = offsets[tile]
        hi = offsets[tile + 1]
        for py in range(ty * ts, min((ty + 1) * ts, H)):
            for px in range(tx * ts, min((tx + 1) * ts, W)):
                dx = rays[py, px, 0]
                dy = rays[py, px, 1]
                dz = rays[py, px, 2]
                order = np.empty(0, dtype=np.int64)
                if per_ray_sort:
                    order = _candidate_order(rays, py, px, M, oloc, ids, lo, hi)
                T = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                n0 = 0.0
                n1 = 0.0
                n2 = 0.0
                wd = 0.0
                med = np.nan
                last_t = np.nan
                crossed = False
                cnt = 0
                for k in range(lo, hi):
                    e = order[k - lo] if per_ray_sort else k
                    g = ids[e]
                    r0 = M[g, 0, 0] * dx + M[g, 0, 1] * dy + M[g, 0, 2] * dz
                    r1 = M[g, 1, 0] * dx + M[g, 1, 1] * dy + M[g, 1, 2] * dz
                    r2 = M[g, 2, 0] * dx + M[g, 2, 1] * dy + M[g, 2, 2] * dz
                    A = r0 * r0 + r1 * r1 + r2 * r2
                    B = oloc[g, 0] * r0 + oloc[g, 1] * r1 + oloc[g, 2] * r2
                    t = -B / A
                    if t <= t_near:
                        continue
                    q = Cq[g] - B * B / A
                    if q < 0.0:
                        q = 0.0
                    if q > cutoff2:
                        continue
                    a = opac[g] * math.exp(-0.5 * q) * _taper(q, q_taper, cutoff2)
                    if a <= alpha_min:
                        continue
                    if a > alpha_max:
                        a = alpha_max
                    w = a * T
                    c0 += w * color[g, 0]
                    c1 += w * color[g, 1]
                    c2 += w * color[g, 2]
                    n0 += w * naxis[g, 0]
                    n1 += w * naxis[g, 1]
                    n2 += w * naxis[g, 2]
                    wd += w * t
                    T = T * (1.0 - a)
                    cnt += 1
                    last_t = t
                    if not crossed and T < 0.5:
                        med = t
                        crossed = True
                    if T < t_min:
                        break
                rgb[py, px, 0] = c0
                rgb[py, px, 1] = c1
                rgb[py, px, 2] = c2
                acc = 1.0 - T
                alpha[py, px] = acc
                count[py, px] = cnt
                if acc >= 0.01:
                    depth[py, px] = med if crossed else last_t
                    exp_depth[py, px] = wd / acc
                nn = math.sqrt(n0 * n0 + n1 * n1 + n2 * n2)
                if nn > 0.0:
                    normal[py, px, 0] = n0 / nn
                    normal[py, px, 1] = n1 / nn
                    normal[py, px, 2] = n2 / nn
    return rgb, alpha, depth, exp_depth, normal, count


@numba.njit(parallel=True, cache=True)
def backward_kernel(
    rays, M, oloc, Cq, opac, color, naxis, offsets, ids, ts, ntx,
    t_near, cutoff2, q_taper, alpha_min, alpha_max, t_min,
    g_rgb, g_depth, g_normal, g_alpha,
):
    """Per-entry gradients, shape (len(ids), N_ENTRY_GRADS), for one view."""
    H, W = rays.shape[0], rays.shape[1]
    out = np.zeros((ids.shape[0], N_ENTRY_GRADS))
    n_tiles = offsets.shape[0] - 1
    for tile in prange(n_tiles):
        ty = tile // ntx
        tx = tile - ty * ntx
        lo = offsets[tile]
        hi = offsets[tile + 1]
        n = hi - lo
        if n == 0:
            continue
        ce = np.empty(n, dtype=np.int64)
        ca = np.empty(n)
        cg = np.empty(n)
        cdq = np.empty(n)
        cT = np.empty(n)
        cr = np.empty((n, 3))
        cA = np.empty(n)
        cB = np.empty(n)
        capped = np.empty(n, dtype=np.bool_)
        for py in range(ty * ts, min((ty + 1) * ts, H)):
            for px in range(tx * ts, min((tx + 1) * ts, W)):
                dx = rays[py, px, 0]
                dy = rays[py, px, 1]
                dz = rays[py, px, 2]
                # forward replay
                T = 1.0
                m = 0
                med_idx = -1
                n0 = 0.0
                n1 = 0.0
                n2 = 0.0
                for e in range(lo, hi):
                    g = ids[e]
                    r0 = M[g, 0, 0] * dx + M[g, 0, 1] * dy + M[g, 0, 2] * dz
                    r1 = M[g, 1, 0] * dx + M[g, 1, 1] * dy + M[g, 1, 2] * dz
                    r2 = M[g, 2, 0] * dx + M[g, 2, 1] * dy + M[g, 2, 2] * dz
                    A = r0 * r0 + r1 * r1 + r2 * r2
                    B = oloc[g, 0] * r0 + oloc[g, 1] * r1 + oloc[g, 2] * r2
                    t = -B / A
                    if t <= t_near:
                        continue
                    q = Cq[g] - B * B / A
                    if q < 0.0:
                        q = 0.0
                    if q > cutoff2:
                        continue
                    gv = math.exp(-0.5 * q)
                    psi = _taper(q, q_taper, cutoff2)
                    a = opac[g] * gv * psi
                    if a <= alpha_min:
                        continue
                    cap = a > alpha_max
                    if cap:
                        a = alpha_max
                    w = a * T
                    n0 += w * naxis[g, 0]
                    n1 += w * naxis[g, 1]
                    n2 += w * naxis[g, 2]
                    ce[m] = e
                    ca[m] = a
                    cg[m] = gv * psi
                    cdq[m] = gv * (_taper_dq(q, q_taper, cutoff2) - 0.5 * psi)
                    cT[m] = T
                    cr[m, 0] = r0
                    cr[m, 1] = r1
                    cr[m, 2] = r2
                    cA[m] = A
                    cB[m] = B
                    capped[m] = cap
                    T = T * (1.0 - a)
                    if med_idx < 0 and T < 0.5:
                        med_idx = m
                    m += 1
                    if T < t_min:
                        break
                if m == 0:
                    continue
                T_final = T
                if med_idx < 0:
                    med_idx = m - 1
                gd = 0.0
                if 1.0 - T_final >= 0.01:
                    gd = g_depth[py, px]
                # normalized-normal upstream
                nn = math.sqrt(n0 * n0 + n1 * n1 + n2 * n2)
                gn0 = 0.0
                gn1 = 0.0
                gn2 = 0.0
                if nn > 0.0:
                    h0 = n0 / nn
                    h1 = n1 / nn
                    h2 = n2 / nn
                    u0 = g_normal[py, px, 0]
                    u1 = g_normal[py, px, 1]
                    u2 = g_normal[py, px, 2]
                    dot = h0 * u0 + h1 * u1 + h2 * u2
                    gn0 = (u0 - h0 * dot) / nn
                    gn1 = (u1 - h1 * dot) / nn
                    gn2 = (u2 - h2 * dot) / nn
                gr0 = g_rgb[py, px, 0]
                gr1 = g_rgb[py, px, 1]
                gr2 = g_rgb[py, px, 2]
                ga = g_alpha[py, px]
                # suffix sums of later contributions
                sc0 = 0.0
                sc1 = 0.0
                sc2 = 0.0
                sn0 = 0.0
                sn1 = 0.0
                sn2 = 0.0
                for j in range(m - 1, -1, -1):
                    e = ce[j]
                    g = ids[e]
                    a = ca[j]
                    Tj = cT[j]
                    w = a * Tj
                    nx = naxis[g, 0]
                    ny = naxis[g, 1]
                    nz = naxis[g, 2]
                    # color and normal-axis gradients
                    out[e, 13] += gr0 * w
                    out[e, 14] += gr1 * w
                    out[e, 15] += gr2 * w
                    out[e, 16] += gn0 * w
                    out[e, 17] += gn1 * w
                    out[e, 18] += gn2 * w
                    inv = 1.0 / (1.0 - a)
                    da = (
                        gr0 * (color[g, 0] * Tj - sc0 * inv)
                        + gr1 * (color[g, 1] * Tj - sc1 * inv)
                        + gr2 * (color[g, 2] * Tj - sc2 * inv)
                        + gn0 * (nx * Tj - sn0 * inv)
                        + gn1 * (ny * Tj - sn1 * inv)
                        + gn2 * (nz * Tj - sn2 * inv)
                        + ga * T_final * inv
                    )
                    sc0 += color[g, 0] * w
                    sc1 += color[g, 1] * w
                    sc2 += color[g, 2] * w
                    sn0 += nx * w
                    sn1 += ny * w
                    sn2 += nz * w
                    gq = 0.0
                    if not capped[j]:
                        out[e, 12] += da * cg[j]
                        gq = da * opac[g] * cdq[j]
                    gt = gd if j == med_idx else 0.0
                    if gq == 0.0 and gt == 0.0:
                        continue
                    A = cA[j]
                    B = cB[j]
                    gA = (gq * B * B + gt * B) / (A * A)
                    gB = -(2.0 * gq * B + gt) / A
                    r0 = cr[j, 0]
                    r1 = cr[j, 1]
                    r2 = cr[j, 2]
                    o0 = oloc[g, 0]
                    o1 = oloc[g, 1]
                    o2 = oloc[g, 2]
                    # C = |o_loc|^2 folds into the o_loc gradient
                    out[e, 0] += gB * r0 + 2.0 * gq * o0
                    out[e, 1] += gB * r1 + 2.0 * gq * o1
                    out[e, 2] += gB * r2 + 2.0 * gq * o2
                    grr0 = 2.0 * gA * r0 + gB * o0
                    grr1 = 2.0 * gA * r1 + gB * o1
                    grr2 = 2.0 * gA * r2 + gB * o2
                    out[e, 3] += grr0 * dx
                    out[e, 4] += grr0 * dy
                    out[e, 5] += grr0 * dz
                    out[e, 6] += grr1 * dx
                    out[e, 7] += grr1 * dy
                    out[e, 8] += grr1 * dz
                    out[e, 9] += grr2 * dx
                    out[e, 10] += grr2 * dy
                    out[e, 11] += grr2 * dz
    return out


@numba.njit(cache=True)
def reduce_entries(entry_grads, ids, n):
    """Sum per-entry gradients into per-Gaussian rows in a fixed order."""
    out = np.zeros((n, entry_grads.shape[1]))
    for e in range(ids.shape[0]):
        g = ids[e]
        for k in range(entry_grads.shape[1]):
            out[g, k] += entry_grads[e, k]
    return out
