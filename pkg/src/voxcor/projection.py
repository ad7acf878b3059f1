"""Feature projections: per-axis joint PCA and the coarse-grid second stage.

The second stage has two variants fitted on pooled coarse-grid voxels:

* a correspondence-weighted cross-covariance model: voxel weights from the
  fixed-role feature gradient magnitude, per-channel standardization of both
  roles (same weights), thin SVD of the standardized cross-covariance, one
  projection per role;
* an unweighted joint PCA over the pooled foreground voxels of both roles,
  a single projection, needing no correspondences.

Both store float64 parameters so save/load round trips are lossless.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ParameterError
from .grid import FeatureVolume, Mask, require_same_dims

HYBRID_VIT_CHANNELS = 16
HYBRID_VIT_SCALE = 0.1


def _fix_signs(vecs):
    """Flip each column so its largest-magnitude entry is positive."""
    for j in range(vecs.shape[1]):
        i = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[i, j] < 0:
            vecs[:, j] = -vecs[:, j]
    return vecs


def _pca_core(rows, k):
    """Mean, top-k eigenvectors (sign-fixed), and explained variances."""
    m, c = rows.shape
    if m < 2:
        raise ParameterError(f"PCA needs at least 2 rows, got {m}")
    if not 1 <= k <= c:
        raise ParameterError(f"k must be in [1, {c}], got {k}")
    mean = rows.mean(axis=0)
    x = rows - mean
    if m >= c:
        cov = x.T @ x / (m - 1)
        evals, evecs = np.linalg.eigh(cov)
        evals = evals[::-1]
        evecs = evecs[:, ::-1]
    else:
        _, s, vt = np.linalg.svd(x, full_matrices=False)
        evals = np.zeros(c)
        evals[: len(s)] = s**2 / (m - 1)
        evecs = np.zeros((c, c))
        evecs[:, : vt.shape[0]] = vt.T
    evals = np.maximum(evals, 0.0)
    rank = int((evals > evals[0] * 1e-9).sum()) if evals[0] > 0 else 0
    if k > rank:
        raise NumericalError(
            f"requested {k} components but the data rank is only {rank}"
        )
    w = _fix_signs(evecs[:, :k].copy())
    return mean, w, evals[:k].copy()


@dataclass
class AxisPcaModel:
    """Per-axis token projection: tokens map to (t - mean) @ projection."""

    axis: int
    mean: np.ndarray              # (C,) float64
    projection: np.ndarray        # (C, k) float64, orthonormal columns
    explained_variance: np.ndarray  # (k,) float64

    @property
    def k(self):
        return self.projection.shape[1]


def fit_axis_pca(rows, k, axis=0):
    """Joint PCA over pooled token rows from both modalities.

    rows: (M, C) with M = total pooled tokens; covariance divisor M - 1.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ParameterError(f"rows must be 2-d, got shape {rows.shape}")
    mean, w, ev = _pca_core(rows, k)
    return AxisPcaModel(axis, mean, w, ev)


def apply_axis_pca(tokens, model):
    """Project tokens (..., C) to (..., k)."""
    t = np.asarray(tokens, dtype=np.float64)
    if t.shape[-1] != model.mean.shape[0]:
        raise ParameterError(
            f"token channels {t.shape[-1]} do not match model ({model.mean.shape[0]})"
        )
    return ((t - model.mean) @ model.projection).astype(np.float32)


@dataclass
class WeightField:
    """Per-voxel fitting weights on the coarse grid, zero outside the valid mask."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ParameterError(f"weights must be 3-d, got {self.data.shape}")
        if (self.data < 0).any():
            raise ParameterError("weights must be non-negative")

    @property
    def dims(self):
        return self.data.shape


def gradient_weights(feat, valid):
    """Gradient-magnitude weights: phi = sqrt(sum_c ||grad Z_c||^2).

    Central differences per channel and axis (one-sided at faces), evaluated
    on the coarse grid in voxel units.  Weights are zeroed outside `valid`;
    if everything is (numerically) flat, the valid region gets uniform
    weights instead.
    """
    require_same_dims(feat, valid, "features and valid mask")
    v = valid.data
    if not v.any():
        raise ParameterError("valid mask is empty")
    z = feat.data.astype(np.float64)
    sq = np.zeros(z.shape[:3], dtype=np.float64)
    for axis in range(3):
        if z.shape[axis] < 2:
            continue
        g = np.gradient(z, axis=axis)
        sq += (g * g).sum(axis=-1)
    phi = np.sqrt(sq)
    phi[~v] = 0.0
    if phi.sum() < 1e-12:
        phi = np.where(v, 1.0, 0.0)
    return WeightField(phi.astype(np.float32), feat.spacing)


@dataclass
class FitPair:
    """One training pair on the coarse grid: fixed-role features, moving-role
    features already warped into the fixed frame, and the valid-overlap mask.

    Role-specific foreground masks (used for mean estimation) default to the
    valid mask when not supplied.
    """

    fixed: FeatureVolume
    moving: FeatureVolume
    valid: Mask
    fg_fixed: Mask = None
    fg_moving: Mask = None

    def __post_init__(self):
        require_same_dims(self.fixed, self.moving, "fixed and moving features")
        require_same_dims(self.fixed, self.valid, "features and valid mask")
        if self.fixed.channels != self.moving.channels:
            raise ParameterError("fixed and moving features disagree on channels")
        if self.fg_fixed is None:
            self.fg_fixed = self.valid
        if self.fg_moving is None:
            self.fg_moving = self.valid
        require_same_dims(self.fixed, self.fg_fixed, "features and fg mask")
        require_same_dims(self.fixed, self.fg_moving, "features and fg mask")
        if not self.valid.data.any():
            raise NumericalError("valid-overlap mask is empty")


@dataclass
class FitDataset:
    pairs: list

    def __post_init__(self):
        if not self.pairs:
            raise ParameterError("fit dataset has no pairs")
        c = self.pairs[0].fixed.channels
        if any(p.fixed.channels != c for p in self.pairs):
            raise ParameterError("pairs disagree on feature channels")

    @property
    def channels(self):
        return self.pairs[0].fixed.channels


@dataclass
class WplsModel:
    """Correspondence-weighted two-sided projection.

    W_fixed / W_moving hold the orthonormal singular vectors; the transform
    standardizes channels by the recorded sigmas (plus eps) before projecting,
    so the fitted map is (z - mu) @ diag(1/(sigma+eps)) @ W.
    """

    mu_fixed: np.ndarray       # (m,) float64
    mu_moving: np.ndarray
    w_fixed: np.ndarray        # (m, k_proj) float64, orthonormal columns
    w_moving: np.ndarray
    sigma_fixed: np.ndarray    # (m,) weighted standard deviations
    sigma_moving: np.ndarray
    eps: float
    singular_values: np.ndarray = None

    @property
    def k_proj(self):
        return self.w_fixed.shape[1]

    def effective_projection(self, role):
        if role == "fixed":
            return self.w_fixed / (self.sigma_fixed + self.eps)[:, None]
        if role == "moving":
            return self.w_moving / (self.sigma_moving + self.eps)[:, None]
        raise ParameterError(f"role must be fixed or moving, got {role!r}")

    def transform(self, feat, role):
        mu = self.mu_fixed if role == "fixed" else self.mu_moving
        return apply_projection(feat, mu, self.effective_projection(role))


def _pooled_rows(ds, which):
    rows = []
    for p in ds.pairs:
        if which == "fixed":
            rows.append(p.fixed.data[p.fg_fixed.data].astype(np.float64))
        else:
            rows.append(p.moving.data[p.fg_moving.data].astype(np.float64))
    return np.concatenate(rows, axis=0)


def fit_wpls(ds, weights=None, k_proj=24, eps=1e-6):
    """Fit the weighted cross-covariance projection on a fit dataset.

    weights: one WeightField per pair (gradient weights computed from the
    fixed-role features when omitted).
    """
    m = ds.channels
    if not 1 <= k_proj <= m:
        raise ParameterError(f"k_proj must be in [1, {m}], got {k_proj}")
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    if weights is None:
        weights = [gradient_weights(p.fixed, p.valid) for p in ds.pairs]
    if len(weights) != len(ds.pairs):
        raise ParameterError("need one weight field per pair")

    zi_parts, zj_parts, phi_parts = [], [], []
    for p, w in zip(ds.pairs, weights):
        require_same_dims(p.fixed, w, "features and weights")
        sel = p.valid.data
        zi_parts.append(p.fixed.data[sel].astype(np.float64))
        zj_parts.append(p.moving.data[sel].astype(np.float64))
        phi_parts.append(w.data[sel].astype(np.float64))
    zi = np.concatenate(zi_parts, axis=0)
    zj = np.concatenate(zj_parts, axis=0)
    phi = np.concatenate(phi_parts, axis=0)
    if zi.shape[0] < 2:
        raise ParameterError("need at least 2 pooled valid voxels")
    total = phi.sum()
    if not total > 0:
        raise NumericalError("degenerate fitting weights (sum is zero)")

    # role means from each role's own foreground, estimated separately
    mu_i = _pooled_rows(ds, "fixed").mean(axis=0)
    mu_j = _pooled_rows(ds, "moving").mean(axis=0)
    zi = zi - mu_i
    zj = zj - mu_j

    cross = (phi[:, None] * zi).T @ zj / total
    sig_i = np.sqrt((phi[:, None] * zi**2).sum(axis=0) / total)
    sig_j = np.sqrt((phi[:, None] * zj**2).sum(axis=0) / total)
    scaled = cross / (sig_i + eps)[:, None] / (sig_j + eps)[None, :]

    u, s, vt = np.linalg.svd(scaled, full_matrices=False)
    rank = int((s > s[0] * 1e-10).sum()) if s[0] > 0 else 0
    if k_proj > rank:
        raise NumericalError(
            f"requested {k_proj} components but the scaled cross-covariance "
            f"rank is only {rank}"
        )
    u = u[:, :k_proj].copy()
    v = vt.T[:, :k_proj].copy()
    # joint sign convention: anchor on the left vector, flip pairs together
    for j in range(k_proj):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]
    return WplsModel(mu_i, mu_j, u, v, sig_i, sig_j, float(eps), s[:k_proj].copy())


@dataclass
class Pca3dModel:
    """Correspondence-free pooled PCA over coarse-grid foreground voxels."""

    mean: np.ndarray              # (m,) float64
    projection: np.ndarray        # (m, k_proj) float64
    explained_variance: np.ndarray

    @property
    def k_proj(self):
        return self.projection.shape[1]

    def transform(self, feat):
        return apply_projection(feat, self.mean, self.projection)


def fit_pca3d(ds, k_proj=24):
    """Unweighted PCA over the pooled foreground voxels of both roles."""
    m = ds.channels
    if not 1 <= k_proj <= m:
        raise ParameterError(f"k_proj must be in [1, {m}], got {k_proj}")
    rows = np.concatenate(
        [_pooled_rows(ds, "fixed"), _pooled_rows(ds, "moving")], axis=0
    )
    mean, w, ev = _pca_core(rows, k_proj)
    return Pca3dModel(mean, w, ev)


def apply_projection(feat, mean, w):
    """Dense per-voxel projection (z - mean) @ w; no masks involved."""
    mean = np.asarray(mean, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if feat.channels != mean.shape[0] or w.shape[0] != mean.shape[0]:
        raise ParameterError(
            f"projection expects {mean.shape[0]} channels, features have "
            f"{feat.channels}"
        )
    out = (feat.data.astype(np.float64) - mean) @ w
    return FeatureVolume(out.astype(np.float32), feat.spacing)


def l2_normalize_voxels(feat):
    """Scale each voxel's channel vector to unit length; zero vectors stay zero."""
    norms = np.linalg.norm(feat.data.astype(np.float64), axis=-1, keepdims=True)
    out = np.divide(
        feat.data.astype(np.float64),
        norms,
        out=np.zeros_like(feat.data, dtype=np.float64),
        where=norms > 0,
    )
    return FeatureVolume(out.astype(np.float32), feat.spacing)


def concat_mind_hybrid(feat, desc):
    """Hybrid features: the first 16 projected channels scaled by 0.1,
    concatenated with the 12 descriptor channels."""
    require_same_dims(feat, desc, "features and descriptor")
    if feat.channels < HYBRID_VIT_CHANNELS:
        raise ParameterError(
            f"need at least {HYBRID_VIT_CHANNELS} feature channels, "
            f"got {feat.channels}"
        )
    if desc.channels != 12:
        raise ParameterError(f"descriptor must have 12 channels, got {desc.channels}")
    head = feat.data[..., :HYBRID_VIT_CHANNELS] * HYBRID_VIT_SCALE
    return FeatureVolume(
        np.concatenate([head, desc.data], axis=-1), feat.spacing
    )
