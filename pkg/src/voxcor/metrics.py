"""Overlap, surface-distance, and deformation-regularity metrics."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import NumericalError, ParameterError
from .grid import require_same_dims


def _dice_bool(a, b):
    na, nb = int(a.sum()), int(b.sum())
    if na == 0 and nb == 0:
        return 1.0
    inter = int((a & b).sum())
    return 2.0 * inter / (na + nb)


def dice(a, b):
    """Dice overlap of two masks; two empty masks count as perfect (1.0)."""
    require_same_dims(a, b, "masks")
    return _dice_bool(a.data, b.data)


def label_dice(pred, truth, labels=None):
    """Per-label Dice, scored only where the truth has a non-background label.

    labels defaults to the sorted non-zero labels present in the truth.
    Returns (per-label dict, unweighted mean over labels).
    """
    require_same_dims(pred, truth, "label volumes")
    scored = truth.data > 0
    if labels is None:
        labels = sorted(int(v) for v in np.unique(truth.data) if v != 0)
    if not labels:
        raise ParameterError("no labels to score")
    per = {}
    for lab in labels:
        per[lab] = _dice_bool((pred.data == lab) & scored, truth.data == lab)
    return per, float(np.mean(list(per.values())))


def boundary_voxels(mask):
    """Foreground voxels with at least one 6-connected background neighbor;
    positions outside the volume count as background."""
    m = mask.data
    padded = np.pad(m, 1, constant_values=False)
    core = np.ones_like(m)
    core &= padded[:-2, 1:-1, 1:-1]
    core &= padded[2:, 1:-1, 1:-1]
    core &= padded[1:-1, :-2, 1:-1]
    core &= padded[1:-1, 2:, 1:-1]
    core &= padded[1:-1, 1:-1, :-2]
    core &= padded[1:-1, 1:-1, 2:]
    boundary = m & ~core
    return np.argwhere(boundary)


def hd95(a, b):
    """95th percentile (linear interpolation) of the pooled directed
    boundary-to-boundary distances, in mm."""
    require_same_dims(a, b, "masks")
    ba = boundary_voxels(a)
    bb = boundary_voxels(b)
    if len(ba) == 0 or len(bb) == 0:
        raise ParameterError("hd95 needs non-empty boundaries on both masks")
    sp = np.asarray(a.spacing, dtype=np.float64)
    pa = ba * sp
    pb = bb * sp
    d_ab = cKDTree(pb).query(pa)[0]
    d_ba = cKDTree(pa).query(pb)[0]
    return float(np.percentile(np.concatenate([d_ab, d_ba]), 95.0))


@dataclass
class SdLogJResult:
    value: float           # std of log det J over interior voxels with det > 0
    fold_fraction: float   # fraction of interior voxels with det <= 0
    n_interior: int


def sd_log_j(disp):
    """Deformation regularity of x -> x + psi(x).

    The Jacobian uses central differences of psi (mm) over interior voxels,
    divided by the spacing.  Non-positive determinants are excluded from the
    standard deviation and reported as the fold fraction.
    """
    d, h, w = disp.dims
    if min(d, h, w) < 3:
        raise ParameterError(f"need at least 3 voxels per axis, got {(d, h, w)}")
    psi = disp.data.astype(np.float64)
    sp = np.asarray(disp.spacing, dtype=np.float64)
    jac = np.empty((d - 2, h - 2, w - 2, 3, 3), dtype=np.float64)
    for j in range(3):
        lo = [slice(1, -1)] * 3
        hi = [slice(1, -1)] * 3
        lo[j] = slice(0, -2)
        hi[j] = slice(2, None)
        grad = (psi[tuple(hi)] - psi[tuple(lo)]) / (2.0 * sp[j])
        for i in range(3):
            jac[..., i, j] = grad[..., i]
        jac[..., j, j] += 1.0
    det = (
        jac[..., 0, 0] * (jac[..., 1, 1] * jac[..., 2, 2] - jac[..., 1, 2] * jac[..., 2, 1])
        - jac[..., 0, 1] * (jac[..., 1, 0] * jac[..., 2, 2] - jac[..., 1, 2] * jac[..., 2, 0])
        + jac[..., 0, 2] * (jac[..., 1, 0] * jac[..., 2, 1] - jac[..., 1, 1] * jac[..., 2, 0])
    ).ravel()
    pos = det > 0
    n = det.size
    if not pos.any():
        raise NumericalError("all Jacobian determinants are non-positive")
    value = float(np.log(det[pos]).std())
    return SdLogJResult(value, float((~pos).sum() / n), n)


def dice_range_over_k(dices):
    """Spread (max - min) of Dice scores across neighborhood sizes."""
    if not dices:
        raise ParameterError("empty Dice table")
    vals = list(dices.values())
    return float(max(vals) - min(vals))
