"""Fit/transform orchestration.

Fitting walks each training pair through: intensity normalization, descriptor
foreground masking, per-axis slice encoding, joint per-axis PCA (pooled
foreground patch tokens from both roles), masked unpatchify + triplanar
concatenation, average pooling to the coarse grid, warping of the moving role
into the fixed frame (identity or a supplied displacement field), and finally
the second-stage fit(s).  Transforming a new volume replays the dense part of
that chain (no masks, no pairing) and applies the fitted projection.
"""

from dataclasses import dataclass

import numpy as np

from . import __version__
from .bundle import ProjectionBundle
from .config import PipelineConfig, config_from_dict
from .encoder import (
    PatchFeatureStack,
    dense_tokens,
    extract_axis_features,
    patch_foreground,
    triplanar_concat,
    unpatchify,
)
from .errors import ParameterError
from .grid import NORMALIZERS, Mask, avg_pool, warp_displacement
from .mask import foreground_mask, mask_intersection, pool_mask, warp_mask
from .projection import (
    FitDataset,
    FitPair,
    apply_axis_pca,
    fit_axis_pca,
    fit_pca3d,
    fit_wpls,
)

METHODS = ("wpls", "pca3d", "both")


@dataclass
class VolumePair:
    """A fixed/moving training pair with an optional correspondence field."""

    fixed: object
    moving: object
    disp: object = None


def _full_mask(vol):
    return Mask(np.ones(vol.dims, dtype=bool), vol.spacing)


def _role_foreground(vol, cfg):
    if not cfg.mask_enabled:
        return _full_mask(vol)
    return foreground_mask(vol, cfg.mask_config())


def _encode_all_axes(vol, spec, stride):
    return {a: extract_axis_features(vol, spec, a, stride) for a in range(3)}


def _axis_feature_volume(stack, model, vol, patch_mask=None):
    """Project a token stack and paint it back onto the voxel grid."""
    z = apply_axis_pca(stack.tokens, model)
    if patch_mask is not None:
        z = z * patch_mask[..., None]
    zstack = PatchFeatureStack(
        stack.axis, z, stack.slice_indices, stack.patch, stack.scale
    )
    dense = dense_tokens(zstack, vol.dims[stack.axis])
    return unpatchify(
        dense, vol.dims, stack.axis, stack.patch, stack.scale, vol.spacing
    )


def _triplanar(stacks, models, vol, patch_masks=None):
    per_axis = [
        _axis_feature_volume(
            stacks[a], models[a], vol, None if patch_masks is None else patch_masks[a]
        )
        for a in range(3)
    ]
    return triplanar_concat(*per_axis)


def fit_models(cfg, pairs, method="both", sign_fixed=1, sign_moving=1,
               source_fixed="", source_moving=""):
    """Fit axis PCAs plus the requested second-stage model(s) on volume pairs.

    Returns a ProjectionBundle whose metadata records everything a later
    transform needs (config echo, encoder signs, channel counts).
    """
    cfg.validate()
    if method not in METHODS:
        raise ParameterError(f"method must be one of {METHODS}, got {method!r}")
    if not pairs:
        raise ParameterError("need at least one training pair")
    if cfg.encoder_kind == "precomputed" and len(pairs) != 1:
        raise ParameterError("precomputed features support a single training pair")

    norm_f = NORMALIZERS[cfg.normalize_fixed]
    norm_m = NORMALIZERS[cfg.normalize_moving]
    spec_f = cfg.encoder_spec(sign=sign_fixed, source=source_fixed)
    spec_m = cfg.encoder_spec(sign=sign_moving, source=source_moving)

    prepped = []
    for pair in pairs:
        vf = norm_f(pair.fixed)
        vm = norm_m(pair.moving)
        fg_f = _role_foreground(vf, cfg)
        fg_m = _role_foreground(vm, cfg)
        stacks_f = _encode_all_axes(vf, spec_f, cfg.stride)
        stacks_m = _encode_all_axes(vm, spec_m, cfg.stride)
        pm_f = {
            a: patch_foreground(fg_f, a, stacks_f[a].slice_indices,
                                stacks_f[a].patch, stacks_f[a].scale)
            for a in range(3)
        }
        pm_m = {
            a: patch_foreground(fg_m, a, stacks_m[a].slice_indices,
                                stacks_m[a].patch, stacks_m[a].scale)
            for a in range(3)
        }
        prepped.append((pair, vf, vm, fg_f, fg_m, stacks_f, stacks_m, pm_f, pm_m))

    axis_models = {}
    for a in range(3):
        rows = []
        for _, _, _, _, _, stacks_f, stacks_m, pm_f, pm_m in prepped:
            rows.append(stacks_f[a].tokens[pm_f[a]])
            rows.append(stacks_m[a].tokens[pm_m[a]])
        pooled = np.concatenate(rows, axis=0)
        axis_models[a] = fit_axis_pca(pooled, cfg.k, axis=a)

    fit_pairs = []
    for pair, vf, vm, fg_f, fg_m, stacks_f, stacks_m, pm_f, pm_m in prepped:
        zf = _triplanar(stacks_f, axis_models, vf, pm_f)
        zm = _triplanar(stacks_m, axis_models, vm, pm_m)
        if pair.disp is not None:
            zm = warp_displacement(zm, pair.disp, "trilinear")
            fg_m = warp_mask(fg_m, disp=pair.disp)
        zf_c = avg_pool(zf, cfg.grid_sp)
        zm_c = avg_pool(zm, cfg.grid_sp)
        fgc_f = pool_mask(fg_f, cfg.grid_sp)
        fgc_m = pool_mask(fg_m, cfg.grid_sp)
        valid = mask_intersection(fgc_f, fgc_m)
        fit_pairs.append(FitPair(zf_c, zm_c, valid, fgc_f, fgc_m))

    ds = FitDataset(fit_pairs)
    wpls = fit_wpls(ds, None, cfg.k_proj, cfg.eps) if method in ("wpls", "both") else None
    pca3d = fit_pca3d(ds, cfg.k_proj) if method in ("pca3d", "both") else None

    meta = {
        "format": "voxcor-bundle",
        "version": __version__,
        "config": cfg.to_dict(),
        "sign_fixed": sign_fixed,
        "sign_moving": sign_moving,
        "n_pairs": len(pairs),
        "channels": 3 * cfg.k,
    }
    return ProjectionBundle(axis_models, wpls, pca3d, meta)


def _config_from_bundle(bundle):
    cfg_dict = bundle.meta.get("config")
    if not cfg_dict:
        raise ParameterError("bundle metadata is missing the fit configuration")
    return config_from_dict(cfg_dict)


def triplanar_transform(bundle, vol, role="fixed", source=""):
    """Dense triplanar features of a new volume under a fitted bundle
    (normalization + encoding + per-axis PCA + unpatchify + concat)."""
    if role not in ("fixed", "moving"):
        raise ParameterError(f"role must be fixed or moving, got {role!r}")
    cfg = _config_from_bundle(bundle)
    if len(bundle.axis_models) != 3:
        raise ParameterError("bundle is missing per-axis PCA models")
    norm = NORMALIZERS[
        cfg.normalize_fixed if role == "fixed" else cfg.normalize_moving
    ]
    sign = bundle.meta.get(
        "sign_fixed" if role == "fixed" else "sign_moving", 1
    )
    spec = cfg.encoder_spec(sign=sign, source=source)
    v = norm(vol)
    stacks = _encode_all_axes(v, spec, cfg.stride)
    return _triplanar(stacks, bundle.axis_models, v)


def transform_volume(bundle, vol, role="fixed", method=None, source=""):
    """Project a new volume to the fitted feature space.

    Needs only the bundle and the volume: no masks, pairs, or correspondences.
    method defaults to the weighted model when present, else the pooled PCA.
    """
    z = triplanar_transform(bundle, vol, role, source)
    if method is None:
        method = "wpls" if bundle.wpls is not None else "pca3d"
    if method == "wpls":
        if bundle.wpls is None:
            raise ParameterError("bundle has no weighted second-stage model")
        return bundle.wpls.transform(z, role)
    if method == "pca3d":
        if bundle.pca3d is None:
            raise ParameterError("bundle has no pooled-PCA second-stage model")
        return bundle.pca3d.transform(z)
    raise ParameterError(f"method must be wpls or pca3d, got {method!r}")
