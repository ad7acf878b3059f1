"""Per-axis affine slice alignment from feature similarity.

For one axis, every slice of each feature volume is flattened to a vector;
cosine similarities are symmetrically normalized (mean of row-stochastic and
column-stochastic shares) and a 1-d affine slice map j = sigma*i + delta is
found by exhaustive search over a log-uniform sigma grid and a uniform delta
grid, scored by the mean similarity along the rounded line plus a scale
regularizer weighted by eta.  Candidates covering fewer than rho * n_i rows
are rejected.  Rounds iterate over the axes, resampling the moving volume
with the accumulated map before each search.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ParameterError
from .grid import AXIS_A, AXIS_C, AXIS_S, resample_affine


@dataclass
class BandSliceConfig:
    sigma_min: float = 0.8
    sigma_max: float = 1.25
    sigma_steps: int = 41
    delta_step: float = 1.0
    rho: float = 0.5
    eta: float = 0.99
    rounds: int = 3
    axis_order: tuple = (AXIS_A, AXIS_C, AXIS_S)

    def validate(self):
        if not 0 < self.sigma_min <= self.sigma_max:
            raise ParameterError(
                f"need 0 < sigma_min <= sigma_max, got [{self.sigma_min}, {self.sigma_max}]"
            )
        if self.sigma_steps < 1:
            raise ParameterError(f"sigma_steps must be >= 1, got {self.sigma_steps}")
        if self.delta_step <= 0:
            raise ParameterError(f"delta_step must be positive, got {self.delta_step}")
        if not 0 < self.rho <= 1:
            raise ParameterError(f"rho must be in (0, 1], got {self.rho}")
        if not 0 <= self.eta <= 1:
            raise ParameterError(f"eta must be in [0, 1], got {self.eta}")
        if self.rounds < 1:
            raise ParameterError(f"rounds must be >= 1, got {self.rounds}")
        if sorted(self.axis_order) != [0, 1, 2]:
            raise ParameterError(
                f"axis_order must be a permutation of (0, 1, 2), got {self.axis_order}"
            )


@dataclass
class LineFit:
    sigma: float
    delta: float
    score: float


@dataclass
class BandSliceResult:
    """Cumulative per-axis affine map from fixed to moving slice indices."""

    params: dict          # axis -> (sigma, delta)
    scores: dict          # axis -> score of the final search on that axis

    def as_resample_params(self):
        return [self.params[a] for a in (0, 1, 2)]


def sigma_grid(cfg):
    """Log-uniform scale grid; the point nearest 1.0 is snapped to exactly 1.0."""
    if cfg.sigma_steps == 1:
        return np.array([cfg.sigma_min])
    g = np.exp(
        np.linspace(math.log(cfg.sigma_min), math.log(cfg.sigma_max), cfg.sigma_steps)
    )
    if cfg.sigma_min <= 1.0 <= cfg.sigma_max:
        g[int(np.argmin(np.abs(np.log(g))))] = 1.0
    return g


def delta_grid(n_j, cfg):
    """Offsets from -n_j to n_j inclusive, spaced by delta_step."""
    n = int(math.floor(2 * n_j / cfg.delta_step + 0.5))
    g = -float(n_j) + cfg.delta_step * np.arange(n + 1)
    return g[g <= n_j + 1e-9]


def slice_features(feat, axis):
    """Flatten each slice along `axis` into one row (fixed voxel order)."""
    if axis not in (0, 1, 2):
        raise ParameterError(f"axis must be 0, 1 or 2, got {axis}")
    moved = np.moveaxis(feat.data, axis, 0)
    return np.ascontiguousarray(moved.reshape(moved.shape[0], -1))


def similarity_matrix(yi, yj):
    """Symmetrically normalized cosine similarities.

    S = (S_row + S_col) / 2 where S_row divides each cosine row by its sum
    and S_col each column by its sum; rows/columns whose sum has magnitude
    below 1e-12 contribute zero.  Zero-norm slice vectors get cosine 0.
    """
    yi = np.asarray(yi, dtype=np.float64)
    yj = np.asarray(yj, dtype=np.float64)
    if yi.ndim != 2 or yj.ndim != 2 or yi.shape[1] != yj.shape[1]:
        raise ParameterError(
            f"slice feature shapes are incompatible: {yi.shape} vs {yj.shape}"
        )
    ni = np.linalg.norm(yi, axis=1, keepdims=True)
    nj = np.linalg.norm(yj, axis=1, keepdims=True)
    yi = np.divide(yi, ni, out=np.zeros_like(yi), where=ni > 0)
    yj = np.divide(yj, nj, out=np.zeros_like(yj), where=nj > 0)
    cos = yi @ yj.T
    rs = cos.sum(axis=1, keepdims=True)
    cs = cos.sum(axis=0, keepdims=True)
    row = np.divide(cos, rs, out=np.zeros_like(cos), where=np.abs(rs) >= 1e-12)
    col = np.divide(cos, cs, out=np.zeros_like(cos), where=np.abs(cs) >= 1e-12)
    return 0.5 * (row + col)


def _reg_norm(cfg):
    return max(abs(math.log(cfg.sigma_min)), abs(math.log(cfg.sigma_max)))


def search_line(s_mat, cfg=None):
    """Exhaustive (sigma, delta) search over the rounded line j = sigma*i + delta.

    Score: (1 - eta) * mean similarity along the line + eta * (1 - |log sigma|
    normalized by the grid bounds).  Ties break toward smaller |log sigma|,
    then smaller |delta|, then smaller sigma, then smaller delta.
    """
    if cfg is None:
        cfg = BandSliceConfig()
    cfg.validate()
    s_mat = np.asarray(s_mat, dtype=np.float64)
    n_i, n_j = s_mat.shape
    if n_i < 1 or n_j < 1:
        raise ParameterError("similarity matrix must be non-empty")
    i_arr = np.arange(n_i, dtype=np.float64)
    rows = np.arange(n_i)
    norm = _reg_norm(cfg)
    best = None
    best_key = None
    for sigma in sigma_grid(cfg):
        base = sigma * i_arr
        log_s = abs(math.log(sigma))
        reg = 1.0 if norm == 0.0 else 1.0 - log_s / norm
        for delta in delta_grid(n_j, cfg):
            j = np.floor(base + delta + 0.5).astype(np.int64)
            ok = (j >= 0) & (j < n_j)
            cnt = int(ok.sum())
            if cnt < cfg.rho * n_i:
                continue
            gamma = np.sum(s_mat[rows[ok], j[ok]]) / cnt
            score = (1.0 - cfg.eta) * gamma + cfg.eta * reg
            key = (score, -log_s, -abs(delta), -sigma, -delta)
            if best_key is None or key > best_key:
                best_key = key
                best = LineFit(float(sigma), float(delta), float(score))
    if best is None:
        raise NumericalError(
            f"no (sigma, delta) candidate covers rho={cfg.rho} of {n_i} slices"
        )
    return best


def bandslice_align(f_fixed, f_moving, cfg=None):
    """Iterative per-axis alignment; returns the cumulative maps.

    Each step resamples the moving features with the current cumulative map
    (trilinear, from the original volume), searches the axis, and composes
    the increment: applying (sigma_prev, delta_prev) after the increment
    gives sigma = sigma_prev * sigma_inc, delta = sigma_prev * delta_inc +
    delta_prev along the searched axis.
    """
    if cfg is None:
        cfg = BandSliceConfig()
    cfg.validate()
    if f_fixed.channels != f_moving.channels:
        raise ParameterError("feature volumes disagree on channels")
    cum = {0: (1.0, 0.0), 1: (1.0, 0.0), 2: (1.0, 0.0)}
    scores = {}
    for _ in range(cfg.rounds):
        for axis in cfg.axis_order:
            other = [a for a in range(3) if a != axis]
            for a in other:
                if f_fixed.dims[a] != f_moving.dims[a]:
                    raise ParameterError(
                        f"dims must match on non-searched axes, got "
                        f"{f_fixed.dims} vs {f_moving.dims} searching axis {axis}"
                    )
            moved = resample_affine(
                f_moving, [cum[0], cum[1], cum[2]], "trilinear"
            )
            s_mat = similarity_matrix(
                slice_features(f_fixed, axis), slice_features(moved, axis)
            )
            fit = search_line(s_mat, cfg)
            sp, dp = cum[axis]
            cum[axis] = (sp * fit.sigma, sp * fit.delta + dp)
            scores[axis] = fit.score
    return BandSliceResult(cum, scores)
