"""Numpy/scipy implementations of the hot kernels.

Used when the compiled extension is unavailable or disabled.  Floating-point
accumulation orders mirror the compiled loops where cheap (resampling), so the
two backends agree bitwise on those outputs; box filtering uses cumulative
sums and only agrees to rounding error.
"""

import numpy as np
from scipy import ndimage

BACKEND = "numpy"


def box_mean_3d(vol, r):
    """Mean filter over a (2r+1)^3 window with replicated edges.

    vol: float32 (D, H, W).  Returns float32.
    """
    if r == 0:
        return vol.astype(np.float32, copy=True)
    acc = vol.astype(np.float64)
    # separable: window sum along each axis in turn
    for axis in range(3):
        pad = [(0, 0)] * 3
        pad[axis] = (r, r)
        xp = np.pad(acc, pad, mode="edge")
        c = np.cumsum(xp, axis=axis)
        n = acc.shape[axis]
        w = 2 * r + 1
        hi = [slice(None)] * 3
        hi[axis] = slice(w - 1, w - 1 + n)
        hi_c = c[tuple(hi)]
        lo = [slice(None)] * 3
        lo[axis] = slice(0, n - 1)
        res = hi_c.copy()
        sub = [slice(None)] * 3
        sub[axis] = slice(1, n)
        res[tuple(sub)] = hi_c[tuple(sub)] - c[tuple(lo)]
        acc = res
    acc /= float((2 * r + 1) ** 3)
    return acc.astype(np.float32)


def _gather(src, zi, yi, xi):
    D, H, W, C = src.shape
    flat = (zi.astype(np.int64) * H + yi) * W + xi
    return src.reshape(-1, C)[flat.ravel()].reshape(zi.shape + (C,))


def sample_at(src, cz, cy, cx, nearest):
    """Sample a channel-last volume at fractional voxel coordinates.

    src: float32 (D, H, W, C); cz/cy/cx: float64 arrays of a common shape.
    Out-of-range samples are zero.  Returns float32, shape coords + (C,).
    """
    D, H, W, C = src.shape
    if nearest:
        zi = np.floor(cz + 0.5)
        yi = np.floor(cy + 0.5)
        xi = np.floor(cx + 0.5)
        ok = (
            (zi >= 0) & (zi <= D - 1)
            & (yi >= 0) & (yi <= H - 1)
            & (xi >= 0) & (xi <= W - 1)
        )
        zi = np.clip(zi, 0, D - 1).astype(np.int64)
        yi = np.clip(yi, 0, H - 1).astype(np.int64)
        xi = np.clip(xi, 0, W - 1).astype(np.int64)
        out = _gather(src, zi, yi, xi)
        out[~ok] = 0.0
        return out

    z0 = np.floor(cz)
    y0 = np.floor(cy)
    x0 = np.floor(cx)
    fz = cz - z0
    fy = cy - y0
    fx = cx - x0
    z0 = z0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    acc = np.zeros(cz.shape + (C,), dtype=np.float64)
    # fixed corner order (bz, by, bx) = 000, 001, 010, ... 111; the compiled
    # backend accumulates in the same order so results match bitwise
    for bz in (0, 1):
        zi = z0 + bz
        wz = (fz if bz else 1.0 - fz) * ((zi >= 0) & (zi <= D - 1))
        zic = np.clip(zi, 0, D - 1)
        for by in (0, 1):
            yi = y0 + by
            wy = (fy if by else 1.0 - fy) * ((yi >= 0) & (yi <= H - 1))
            yic = np.clip(yi, 0, H - 1)
            for bx in (0, 1):
                xi = x0 + bx
                wx = (fx if bx else 1.0 - fx) * ((xi >= 0) & (xi <= W - 1))
                xic = np.clip(xi, 0, W - 1)
                w = (wz * wy) * wx
                acc += w[..., None] * _gather(src, zic, yic, xic)
    return acc.astype(np.float32)


def resample_affine(src, sigma, delta, nearest):
    """Per-axis affine resample: output voxel i samples sigma*i + delta.

    src: float32 (D, H, W, C).  Output has the same shape.
    """
    D, H, W, _ = src.shape
    cz = (sigma[0] * np.arange(D, dtype=np.float64) + delta[0])[:, None, None]
    cy = (sigma[1] * np.arange(H, dtype=np.float64) + delta[1])[None, :, None]
    cx = (sigma[2] * np.arange(W, dtype=np.float64) + delta[2])[None, None, :]
    cz, cy, cx = np.broadcast_arrays(cz, cy, cx)
    return sample_at(src, cz, cy, cx, nearest)


def flood_fill_6(bg):
    """Voxels reachable from the volume boundary through `bg`, 6-connected."""
    seed = np.zeros_like(bg)
    seed[0, :, :] = bg[0, :, :]
    seed[-1, :, :] = bg[-1, :, :]
    seed[:, 0, :] = bg[:, 0, :]
    seed[:, -1, :] = bg[:, -1, :]
    seed[:, :, 0] = bg[:, :, 0]
    seed[:, :, -1] = bg[:, :, -1]
    if not seed.any():
        return np.zeros_like(bg)
    structure = ndimage.generate_binary_structure(3, 1)
    return ndimage.binary_propagation(seed, mask=bg, structure=structure)


def topk_desc(sims, k):
    """Indices of the k largest entries per row, ties to the lower index.

    sims: float32 (B, K).  Returns int64 (B, k) ordered by descending
    similarity, ascending index among equals.
    """
    order = np.argsort(-sims, axis=1, kind="stable")
    return order[:, :k].astype(np.int64)


def vote_majority(labels, sims):
    """Majority vote over neighbor columns already sorted by preference.

    labels: int64 (B, k); sims: float32 (B, k) non-increasing along columns.
    Vote ties go to the label with the most similar contributing neighbor,
    then to the smaller label id.
    """
    B, k = labels.shape
    out = np.empty(B, dtype=np.int64)
    for b in range(B):
        counts = {}
        best = {}
        for j in range(k):
            lab = int(labels[b, j])
            counts[lab] = counts.get(lab, 0) + 1
            if lab not in best:
                best[lab] = float(sims[b, j])
        win = None
        for lab, cnt in counts.items():
            key = (cnt, best[lab], -lab)
            if win is None or key > win[0]:
                win = (key, lab)
        out[b] = win[1]
    return out
