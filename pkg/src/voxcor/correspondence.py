"""Voxel-feature correspondence tasks: kNN label transfer and landmark
localization, plus the query/key pairing categories.

All key candidates are ordered by their linear (row-major) voxel index;
similarity ties resolve toward the lower index, vote ties toward the label
whose most similar contributing neighbor wins, then the smaller label id.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ParameterError
from .grid import LabelVolume, require_same_dims

CATEGORIES = ("SC", "DS", "DM", "G")


def categorize(query_subject, query_modality, key_subject, key_modality):
    """SC = same subject & modality, DS = different subject only,
    DM = different modality only, G = both differ."""
    same_sub = query_subject == key_subject
    same_mod = query_modality == key_modality
    if same_sub and same_mod:
        return "SC"
    if same_mod:
        return "DS"
    if same_sub:
        return "DM"
    return "G"


def _normalize_rows(rows):
    rows = rows.astype(np.float64)
    n = np.linalg.norm(rows, axis=1, keepdims=True)
    return np.divide(rows, n, out=np.zeros_like(rows), where=n > 0)


def knn_segment(
    query_feat, key_feat, key_labels, query_roi, key_roi, k=7, exclude_self=False
):
    """Transfer labels to every query ROI voxel by cosine-kNN majority vote.

    exclude_self removes the key candidate at the query's own linear index
    (for same-volume queries).  Voxels outside the query ROI get label 0.
    """
    require_same_dims(query_feat, query_roi, "query features and ROI")
    require_same_dims(key_feat, key_labels, "key features and labels")
    require_same_dims(key_feat, key_roi, "key features and ROI")
    if query_feat.channels != key_feat.channels:
        raise ParameterError("query and key features disagree on channels")
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")

    key_lin = np.flatnonzero(key_roi.data.ravel())
    n_key = len(key_lin)
    avail = n_key - (1 if exclude_self else 0)
    if k > avail:
        raise ParameterError(f"k={k} exceeds the {avail} available key voxels")

    kn = _normalize_rows(key_feat.data.reshape(-1, key_feat.channels)[key_lin])
    key_label_flat = key_labels.data.ravel()[key_lin].astype(np.int64)

    pos_of_lin = None
    if exclude_self:
        pos_of_lin = {int(l): i for i, l in enumerate(key_lin)}

    q_lin = np.flatnonzero(query_roi.data.ravel())
    out = np.zeros(int(np.prod(query_feat.dims)), dtype=np.int64)
    qf = query_feat.data.reshape(-1, query_feat.channels)

    block = max(1, (1 << 22) // max(n_key, 1))
    for lo in range(0, len(q_lin), block):
        sel = q_lin[lo : lo + block]
        qn = _normalize_rows(qf[sel])
        sims = (qn @ kn.T).astype(np.float32)
        if exclude_self:
            for r, lin in enumerate(sel):
                col = pos_of_lin.get(int(lin))
                if col is not None:
                    sims[r, col] = -np.inf
        top = _kernels.topk_desc(sims, k)
        neigh_sims = np.take_along_axis(sims, top, axis=1)
        neigh_labels = key_label_flat[top]
        out[sel] = _kernels.vote_majority(neigh_labels, neigh_sims)

    return LabelVolume(
        out.reshape(query_feat.dims).astype(np.int32), query_feat.spacing
    )


@dataclass
class Landmark:
    label: int
    voxel: tuple          # rounded half-up voxel coordinate
    mm: tuple             # voxel * spacing


def center_of_mass(labels, label_id):
    """Centroid of a label's voxels, rounded half-up per axis."""
    hits = np.nonzero(labels.data == label_id)
    if len(hits[0]) == 0:
        raise ParameterError(f"label {label_id} is absent from the volume")
    voxel = tuple(
        int(np.floor(c.astype(np.float64).mean() + 0.5)) for c in hits
    )
    mm = tuple(v * s for v, s in zip(voxel, labels.spacing))
    return Landmark(int(label_id), voxel, mm)


@dataclass
class LocalizeResult:
    voxel: tuple
    distance_mm: float = None


def localize(query_feat, query_point, key_feat, key_roi, exclude=None, reference=None):
    """Find the key ROI voxel whose features are L2-nearest to the feature at
    `query_point`; ties go to the lower linear index.

    exclude: a voxel coordinate to drop from the candidates (self-matching).
    reference: when given, the Euclidean mm distance from the matched voxel
    to this voxel (via the key spacing) is reported.
    """
    require_same_dims(key_feat, key_roi, "key features and ROI")
    if query_feat.channels != key_feat.channels:
        raise ParameterError("query and key features disagree on channels")
    qp = tuple(int(c) for c in query_point)
    if len(qp) != 3 or any(
        not 0 <= c < d for c, d in zip(qp, query_feat.dims)
    ):
        raise ParameterError(f"query point {qp} outside volume {query_feat.dims}")
    q = query_feat.data[qp].astype(np.float64)

    key_lin = np.flatnonzero(key_roi.data.ravel())
    if exclude is not None:
        ex = int(np.ravel_multi_index(tuple(int(c) for c in exclude), key_feat.dims))
        key_lin = key_lin[key_lin != ex]
    if len(key_lin) == 0:
        raise ParameterError("no key candidates remain in the ROI")

    rows = key_feat.data.reshape(-1, key_feat.channels)[key_lin].astype(np.float64)
    d2 = ((rows - q) ** 2).sum(axis=1)
    best = int(np.argmin(d2))  # first minimum = lowest linear index
    voxel = tuple(int(c) for c in np.unravel_index(key_lin[best], key_feat.dims))
    dist = None
    if reference is not None:
        diff = [
            (v - int(r)) * s for v, r, s in zip(voxel, reference, key_feat.spacing)
        ]
        dist = float(np.sqrt(sum(d * d for d in diff)))
    return LocalizeResult(voxel, dist)


@dataclass
class AggregateResult:
    mode: str
    mean: float
    sd: float
    n: int


def aggregate_landmark_errors(errors, mode="median-pair"):
    """Summarize per-(landmark, pair) errors.

    errors: mapping landmark id -> list of errors, or iterable of
    (landmark id, error) records.

    median-pair: median over pairs per landmark, then mean +- sd over
    landmarks.  pooled-mean: mean +- sd over all records.
    """
    if mode not in ("median-pair", "pooled-mean"):
        raise ParameterError(f"unknown aggregation mode {mode!r}")
    if hasattr(errors, "items"):
        groups = {k: list(v) for k, v in errors.items()}
    else:
        groups = {}
        for lid, err in errors:
            groups.setdefault(lid, []).append(err)
    if not groups or any(len(v) == 0 for v in groups.values()):
        raise ParameterError("no landmark errors to aggregate")
    if mode == "median-pair":
        per = np.array([np.median(v) for v in groups.values()], dtype=np.float64)
        return AggregateResult(mode, float(per.mean()), float(per.std()), len(per))
    pooled = np.concatenate([np.asarray(v, dtype=np.float64) for v in groups.values()])
    return AggregateResult(mode, float(pooled.mean()), float(pooled.std()), len(pooled))
