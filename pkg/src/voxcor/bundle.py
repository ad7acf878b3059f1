"""Projection bundle container (.vxproj).

Little-endian layout: magic b"VXP1", u32 version, then a sequence of
sections, each (u32 id, u64 payload length, payload).  Section ids:

    1, 2, 3   per-axis PCA for S, C, A:
              u32 C, u32 k, f64 mean[C], f64 W[C*k], f64 evar[k]
    4         weighted cross-covariance model:
              u32 m, u32 kp, f64 eps, f64 mu_fixed[m], f64 mu_moving[m],
              f64 sigma_fixed[m], f64 sigma_moving[m], f64 W_fixed[m*kp],
              f64 W_moving[m*kp], f64 svals[kp]
    5         pooled PCA model:
              u32 m, u32 kp, f64 mean[m], f64 W[m*kp], f64 evar[kp]
    6         UTF-8 JSON metadata

Matrices are float64 row-major, so save/load round trips are lossless.
Unknown section ids are skipped.
"""

import io
import json
import struct

import numpy as np

from .errors import FormatError
from .projection import AxisPcaModel, Pca3dModel, WplsModel

MAGIC = b"VXP1"
VERSION = 1

_SEC_AXIS = {0: 1, 1: 2, 2: 3}
_SEC_WPLS = 4
_SEC_PCA3D = 5
_SEC_META = 6


class ProjectionBundle:
    """Everything a transform needs: per-axis PCAs, the fitted second-stage
    model(s), and free-form metadata (encoder spec, config echo)."""

    def __init__(self, axis_models=None, wpls=None, pca3d=None, meta=None):
        self.axis_models = dict(axis_models or {})
        self.wpls = wpls
        self.pca3d = pca3d
        self.meta = dict(meta or {})


def _f64(arr):
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _pack_axis(model):
    c, k = model.projection.shape
    return (
        struct.pack("<2I", c, k)
        + _f64(model.mean)
        + _f64(model.projection)
        + _f64(model.explained_variance)
    )


def _pack_wpls(model):
    m, kp = model.w_fixed.shape
    sv = model.singular_values
    if sv is None:
        sv = np.zeros(kp)
    return (
        struct.pack("<2I", m, kp)
        + struct.pack("<d", model.eps)
        + _f64(model.mu_fixed)
        + _f64(model.mu_moving)
        + _f64(model.sigma_fixed)
        + _f64(model.sigma_moving)
        + _f64(model.w_fixed)
        + _f64(model.w_moving)
        + _f64(sv)
    )


def _pack_pca3d(model):
    m, kp = model.projection.shape
    return (
        struct.pack("<2I", m, kp)
        + _f64(model.mean)
        + _f64(model.projection)
        + _f64(model.explained_variance)
    )


def save_bundle(path, bundle):
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", VERSION))

    def section(sid, payload):
        out.write(struct.pack("<IQ", sid, len(payload)))
        out.write(payload)

    for axis in sorted(bundle.axis_models):
        section(_SEC_AXIS[axis], _pack_axis(bundle.axis_models[axis]))
    if bundle.wpls is not None:
        section(_SEC_WPLS, _pack_wpls(bundle.wpls))
    if bundle.pca3d is not None:
        section(_SEC_PCA3D, _pack_pca3d(bundle.pca3d))
    section(_SEC_META, json.dumps(bundle.meta, sort_keys=True).encode("utf-8"))

    with open(path, "wb") as f:
        f.write(out.getvalue())


class _Cursor:
    def __init__(self, buf, path):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, n, what):
        if self.off + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated {what}")
        chunk = self.buf[self.off : self.off + n]
        self.off += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def f64s(self, n, what):
        raw = self.take(8 * n, what)
        return np.frombuffer(raw, dtype="<f8").copy()


def _unpack_axis(payload, axis, path):
    cur = _Cursor(payload, path)
    c = cur.u32("axis section header")
    k = cur.u32("axis section header")
    mean = cur.f64s(c, "axis mean")
    w = cur.f64s(c * k, "axis projection").reshape(c, k)
    ev = cur.f64s(k, "axis variances")
    return AxisPcaModel(axis, mean, w, ev)


def _unpack_wpls(payload, path):
    cur = _Cursor(payload, path)
    m = cur.u32("wpls header")
    kp = cur.u32("wpls header")
    (eps,) = struct.unpack("<d", cur.take(8, "wpls eps"))
    mu_i = cur.f64s(m, "wpls mean")
    mu_j = cur.f64s(m, "wpls mean")
    sig_i = cur.f64s(m, "wpls sigma")
    sig_j = cur.f64s(m, "wpls sigma")
    w_i = cur.f64s(m * kp, "wpls projection").reshape(m, kp)
    w_j = cur.f64s(m * kp, "wpls projection").reshape(m, kp)
    sv = cur.f64s(kp, "wpls singular values")
    return WplsModel(mu_i, mu_j, w_i, w_j, sig_i, sig_j, eps, sv)


def _unpack_pca3d(payload, path):
    cur = _Cursor(payload, path)
    m = cur.u32("pca3d header")
    kp = cur.u32("pca3d header")
    mean = cur.f64s(m, "pca3d mean")
    w = cur.f64s(m * kp, "pca3d projection").reshape(m, kp)
    ev = cur.f64s(kp, "pca3d variances")
    return Pca3dModel(mean, w, ev)


def load_bundle(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")

    bundle = ProjectionBundle()
    off = 8
    axis_of_sec = {v: k for k, v in _SEC_AXIS.items()}
    while off < len(raw):
        if off + 12 > len(raw):
            raise FormatError(f"{path}: truncated section header")
        sid, length = struct.unpack("<IQ", raw[off : off + 12])
        off += 12
        if off + length > len(raw):
            raise FormatError(f"{path}: truncated section {sid}")
        payload = raw[off : off + length]
        off += length
        if sid in axis_of_sec:
            axis = axis_of_sec[sid]
            bundle.axis_models[axis] = _unpack_axis(payload, axis, path)
        elif sid == _SEC_WPLS:
            bundle.wpls = _unpack_wpls(payload, path)
        elif sid == _SEC_PCA3D:
            bundle.pca3d = _unpack_pca3d(payload, path)
        elif sid == _SEC_META:
            try:
                bundle.meta = json.loads(payload.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                raise FormatError(f"{path}: bad metadata JSON: {e}") from e
        # unknown ids are tolerated for forward compatibility
    return bundle
