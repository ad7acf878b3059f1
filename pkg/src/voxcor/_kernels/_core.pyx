# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled implementations of the hot kernels.

The trilinear sampler accumulates corners in the same fixed order as the
numpy backend (bz, by, bx ascending, weights multiplied as (wz*wy)*wx) so
resampled volumes agree bitwise between backends.  Compiled with
-ffp-contract=off so the compiler cannot fuse those multiply-adds.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

BACKEND = "cython"


def box_mean_3d(float[:, :, ::1] vol, int r):
    """Mean filter over a (2r+1)^3 window with replicated edges."""
    cdef Py_ssize_t D = vol.shape[0], H = vol.shape[1], W = vol.shape[2]
    cdef Py_ssize_t i, j, l, t, lo, hi
    cdef double s
    cdef double w = 2.0 * r + 1.0
    if r == 0:
        return np.asarray(vol).astype(np.float32, copy=True)
    acc_arr = np.empty((D, H, W), dtype=np.float64)
    tmp_arr = np.empty((D, H, W), dtype=np.float64)
    cdef double[:, :, ::1] acc = acc_arr
    cdef double[:, :, ::1] tmp = tmp_arr

    # axis 0, sliding window with clamped (edge-replicated) indices
    for j in range(H):
        for l in range(W):
            s = 0.0
            for t in range(-r, r + 1):
                s += vol[_clamp(t, D), j, l]
            acc[0, j, l] = s
            for i in range(1, D):
                hi = _clamp(i + r, D)
                lo = _clamp(i - 1 - r, D)
                s += vol[hi, j, l] - vol[lo, j, l]
                acc[i, j, l] = s
    # axis 1
    for i in range(D):
        for l in range(W):
            s = 0.0
            for t in range(-r, r + 1):
                s += acc[i, _clamp(t, H), l]
            tmp[i, 0, l] = s
            for j in range(1, H):
                hi = _clamp(j + r, H)
                lo = _clamp(j - 1 - r, H)
                s += acc[i, hi, l] - acc[i, lo, l]
                tmp[i, j, l] = s
    # axis 2
    for i in range(D):
        for j in range(H):
            s = 0.0
            for t in range(-r, r + 1):
                s += tmp[i, j, _clamp(t, W)]
            acc[i, j, 0] = s
            for l in range(1, W):
                hi = _clamp(l + r, W)
                lo = _clamp(l - 1 - r, W)
                s += tmp[i, j, hi] - tmp[i, j, lo]
                acc[i, j, l] = s

    out = acc_arr / (w * w * w)
    return out.astype(np.float32)


cdef inline Py_ssize_t _clamp(Py_ssize_t v, Py_ssize_t n) nogil:
    if v < 0:
        return 0
    if v > n - 1:
        return n - 1
    return v


cdef inline void _sample_point(
    const float[:, :, :, ::1] src,
    double cz, double cy, double cx,
    bint nearest,
    double* acc,
    Py_ssize_t C,
) nogil:
    cdef Py_ssize_t D = src.shape[0], H = src.shape[1], W = src.shape[2]
    cdef Py_ssize_t c, zi, yi, xi, zic, yic, xic
    cdef double z0, y0, x0, fz, fy, fx, wz, wy, wx, wgt
    cdef Py_ssize_t iz0, iy0, ix0
    cdef int bz, by, bx

    if nearest:
        z0 = floor(cz + 0.5)
        y0 = floor(cy + 0.5)
        x0 = floor(cx + 0.5)
        if (z0 >= 0 and z0 <= D - 1 and y0 >= 0 and y0 <= H - 1
                and x0 >= 0 and x0 <= W - 1):
            zi = <Py_ssize_t> z0
            yi = <Py_ssize_t> y0
            xi = <Py_ssize_t> x0
            for c in range(C):
                acc[c] = src[zi, yi, xi, c]
        else:
            for c in range(C):
                acc[c] = 0.0
        return

    z0 = floor(cz)
    y0 = floor(cy)
    x0 = floor(cx)
    fz = cz - z0
    fy = cy - y0
    fx = cx - x0
    iz0 = <Py_ssize_t> z0
    iy0 = <Py_ssize_t> y0
    ix0 = <Py_ssize_t> x0
    for c in range(C):
        acc[c] = 0.0
    for bz in range(2):
        zi = iz0 + bz
        wz = (fz if bz else 1.0 - fz) if (0 <= zi <= D - 1) else 0.0
        zic = _clamp(zi, D)
        for by in range(2):
            yi = iy0 + by
            wy = (fy if by else 1.0 - fy) if (0 <= yi <= H - 1) else 0.0
            yic = _clamp(yi, H)
            for bx in range(2):
                xi = ix0 + bx
                wx = (fx if bx else 1.0 - fx) if (0 <= xi <= W - 1) else 0.0
                xic = _clamp(xi, W)
                wgt = (wz * wy) * wx
                if wgt == 0.0:
                    continue
                for c in range(C):
                    acc[c] += wgt * <double> src[zic, yic, xic, c]


def sample_at(src, cz, cy, cx, nearest):
    """Sample a channel-last volume at fractional voxel coordinates."""
    cdef const float[:, :, :, ::1] sv = np.ascontiguousarray(src, dtype=np.float32)
    shape = np.shape(cz)
    czf = np.ascontiguousarray(cz, dtype=np.float64).ravel()
    cyf = np.ascontiguousarray(cy, dtype=np.float64).ravel()
    cxf = np.ascontiguousarray(cx, dtype=np.float64).ravel()
    cdef const double[::1] zv = czf, yv = cyf, xv = cxf
    cdef Py_ssize_t n = zv.shape[0], C = sv.shape[3]
    cdef Py_ssize_t p
    cdef bint near = bool(nearest)
    acc_arr = np.empty((n, C), dtype=np.float64)
    cdef double[:, ::1] acc = acc_arr
    with nogil:
        for p in range(n):
            _sample_point(sv, zv[p], yv[p], xv[p], near, &acc[p, 0], C)
    return acc_arr.astype(np.float32).reshape(shape + (C,))


def resample_affine(src, sigma, delta, nearest):
    """Per-axis affine resample: output voxel i samples sigma*i + delta."""
    cdef const float[:, :, :, ::1] sv = np.ascontiguousarray(src, dtype=np.float32)
    cdef Py_ssize_t D = sv.shape[0], H = sv.shape[1], W = sv.shape[2]
    cdef Py_ssize_t C = sv.shape[3]
    cdef double s0 = sigma[0], s1 = sigma[1], s2 = sigma[2]
    cdef double d0 = delta[0], d1 = delta[1], d2 = delta[2]
    cdef Py_ssize_t i, j, l
    cdef double cz, cy, cx
    cdef bint near = bool(nearest)
    acc_arr = np.empty((D, H, W, C), dtype=np.float64)
    cdef double[:, :, :, ::1] acc = acc_arr
    with nogil:
        for i in range(D):
            cz = s0 * i + d0
            for j in range(H):
                cy = s1 * j + d1
                for l in range(W):
                    cx = s2 * l + d2
                    _sample_point(sv, cz, cy, cx, near, &acc[i, j, l, 0], C)
    return acc_arr.astype(np.float32)


def flood_fill_6(bg):
    """Voxels reachable from the volume boundary through `bg`, 6-connected."""
    bgu = np.ascontiguousarray(bg, dtype=np.uint8)
    cdef const unsigned char[:, :, ::1] b = bgu
    cdef Py_ssize_t D = b.shape[0], H = b.shape[1], W = b.shape[2]
    out_arr = np.zeros((D, H, W), dtype=np.uint8)
    cdef unsigned char[:, :, ::1] seen = out_arr
    queue_arr = np.empty(D * H * W, dtype=np.int64)
    cdef long long[::1] queue = queue_arr
    cdef Py_ssize_t head = 0, tail = 0
    cdef Py_ssize_t i, j, l, idx

    with nogil:
        for i in range(D):
            for j in range(H):
                for l in range(W):
                    if (i == 0 or i == D - 1 or j == 0 or j == H - 1
                            or l == 0 or l == W - 1):
                        if b[i, j, l] and not seen[i, j, l]:
                            seen[i, j, l] = 1
                            queue[tail] = (i * H + j) * W + l
                            tail += 1
        while head < tail:
            idx = <Py_ssize_t> queue[head]
            head += 1
            i = idx // (H * W)
            j = (idx // W) % H
            l = idx % W
            if i > 0 and b[i - 1, j, l] and not seen[i - 1, j, l]:
                seen[i - 1, j, l] = 1
                queue[tail] = idx - H * W
                tail += 1
            if i < D - 1 and b[i + 1, j, l] and not seen[i + 1, j, l]:
                seen[i + 1, j, l] = 1
                queue[tail] = idx + H * W
                tail += 1
            if j > 0 and b[i, j - 1, l] and not seen[i, j - 1, l]:
                seen[i, j - 1, l] = 1
                queue[tail] = idx - W
                tail += 1
            if j < H - 1 and b[i, j + 1, l] and not seen[i, j + 1, l]:
                seen[i, j + 1, l] = 1
                queue[tail] = idx + W
                tail += 1
            if l > 0 and b[i, j, l - 1] and not seen[i, j, l - 1]:
                seen[i, j, l - 1] = 1
                queue[tail] = idx - 1
                tail += 1
            if l < W - 1 and b[i, j, l + 1] and not seen[i, j, l + 1]:
                seen[i, j, l + 1] = 1
                queue[tail] = idx + 1
                tail += 1
    return out_arr.view(np.bool_)


def topk_desc(sims, int k):
    """Indices of the k largest entries per row, ties to the lower index."""
    simc = np.ascontiguousarray(sims, dtype=np.float32)
    cdef const float[:, ::1] s = simc
    cdef Py_ssize_t B = s.shape[0], K = s.shape[1]
    out_arr = np.empty((B, k), dtype=np.int64)
    cdef long long[:, ::1] out = out_arr
    topv_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] topv = topv_arr
    cdef Py_ssize_t b, i, m, p
    cdef double v
    with nogil:
        for b in range(B):
            m = 0  # filled slots, kept sorted desc value / asc index
            for i in range(K):
                v = s[b, i]
                if m == k and v <= topv[k - 1]:
                    continue
                p = m if m < k else k - 1
                # shift strictly smaller entries right; equals keep the
                # earlier index first, matching a stable descending sort
                while p > 0 and topv[p - 1] < v:
                    if p < k:
                        topv[p] = topv[p - 1]
                        out[b, p] = out[b, p - 1]
                    p -= 1
                if p < k:
                    topv[p] = v
                    out[b, p] = i
                if m < k:
                    m += 1
    return out_arr


def vote_majority(labels, sims):
    """Majority vote over neighbor columns already sorted by preference."""
    labc = np.ascontiguousarray(labels, dtype=np.int64)
    simc = np.ascontiguousarray(sims, dtype=np.float32)
    cdef const long long[:, ::1] lab = labc
    cdef const float[:, ::1] sim = simc
    cdef Py_ssize_t B = lab.shape[0], k = lab.shape[1]
    out_arr = np.empty(B, dtype=np.int64)
    cdef long long[::1] out = out_arr
    uniq_arr = np.empty(k, dtype=np.int64)
    cnt_arr = np.empty(k, dtype=np.int64)
    best_arr = np.empty(k, dtype=np.float64)
    cdef long long[::1] uniq = uniq_arr
    cdef long long[::1] cnt = cnt_arr
    cdef double[::1] best = best_arr
    cdef Py_ssize_t b, j, u, m, win
    cdef long long L
    cdef bint found, better
    with nogil:
        for b in range(B):
            m = 0
            for j in range(k):
                L = lab[b, j]
                found = False
                for u in range(m):
                    if uniq[u] == L:
                        cnt[u] += 1
                        found = True
                        break
                if not found:
                    uniq[m] = L
                    cnt[m] = 1
                    best[m] = sim[b, j]
                    m += 1
            win = 0
            for u in range(1, m):
                better = False
                if cnt[u] > cnt[win]:
                    better = True
                elif cnt[u] == cnt[win]:
                    if best[u] > best[win]:
                        better = True
                    elif best[u] == best[win] and uniq[u] < uniq[win]:
                        better = True
                if better:
                    win = u
            out[b] = uniq[win]
    return out_arr
