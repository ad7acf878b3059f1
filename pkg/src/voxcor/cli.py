"""Command-line interface.

Subcommands: fit, transform, bandslice, knn, landmark, metrics, mind, mask,
phantom, bundle-inspect.  Exit codes: 0 success, 2 validation error,
3 numerical failure, 4 file-format error.

Report CSVs share the schema (query_id, key_id, category, metric, value);
summary CSVs carry (mode, metric, mean, sd, n).
"""

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, bundle as bundle_io, vxio
from .bandslice import bandslice_align
from .config import PipelineConfig, config_from_dict
from .correspondence import (
    aggregate_landmark_errors,
    categorize,
    center_of_mass,
    knn_segment,
    localize,
)
from .errors import ParameterError, VoxcorError
from .grid import AXIS_NAMES, NORMALIZERS, resample_affine
from .mask import foreground_mask
from .metrics import dice, hd95, label_dice, sd_log_j
from .mind import MindConfig, mind_descriptor
from .phantom import PhantomSpec, generate_phantom
from .pipeline import VolumePair, fit_models, transform_volume
from .projection import concat_mind_hybrid, l2_normalize_voxels

log = logging.getLogger("voxcor")


def _jobs_default():
    env = os.environ.get("VXC_JOBS")
    if env is None:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise ParameterError(f"VXC_JOBS must be an integer, got {env!r}")
    if n < 1:
        raise ParameterError(f"VXC_JOBS must be >= 1, got {n}")
    return n


def _pool_map(fn, items, jobs):
    """Run fn over items, preserving input order in the results."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _write_report(path, rows):
    """rows: (query_id, key_id, category, metric, value)."""
    f = sys.stdout if path in (None, "-") else open(path, "w", newline="")
    try:
        w = csv.writer(f)
        w.writerow(["query_id", "key_id", "category", "metric", "value"])
        for row in rows:
            w.writerow(row)
    finally:
        if f is not sys.stdout:
            f.close()


def _build_config(args):
    d = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            try:
                loaded = json.load(f)
            except json.JSONDecodeError as e:
                raise ParameterError(f"{args.config}: invalid JSON: {e}") from e
        if not isinstance(loaded, dict):
            raise ParameterError(f"{args.config}: config must be a JSON object")
        d.update(loaded)
    if getattr(args, "preset", None):
        d["preset"] = args.preset
    overrides = (
        "k", "k_proj", "grid_sp", "eps", "stride", "tau", "eta", "knn_k",
        "normalize_fixed", "normalize_moving", "encoder_kind",
        "encoder_channels", "encoder_patch", "encoder_scale", "encoder_seed",
    )
    for name in overrides:
        val = getattr(args, name, None)
        if val is not None:
            d[name] = val
    if getattr(args, "no_mask", False):
        d["mask_enabled"] = False
    return config_from_dict(d)


def _add_config_flags(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", help="named preset (abdomen-like, hcp-like)")
    p.add_argument("--k", type=int, help="per-axis PCA channels")
    p.add_argument("--k-proj", dest="k_proj", type=int, help="output channels")
    p.add_argument("--grid-sp", dest="grid_sp", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--stride", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--knn-k", dest="knn_k", type=int)
    p.add_argument("--normalize-fixed", dest="normalize_fixed",
                   choices=sorted(NORMALIZERS))
    p.add_argument("--normalize-moving", dest="normalize_moving",
                   choices=sorted(NORMALIZERS))
    p.add_argument("--encoder-kind", dest="encoder_kind",
                   choices=("synthetic", "precomputed"))
    p.add_argument("--encoder-channels", dest="encoder_channels", type=int)
    p.add_argument("--encoder-patch", dest="encoder_patch", type=int)
    p.add_argument("--encoder-scale", dest="encoder_scale", type=float)
    p.add_argument("--encoder-seed", dest="encoder_seed", type=int)
    p.add_argument("--no-mask", action="store_true",
                   help="treat everything as foreground during fitting")


def cmd_fit(args):
    cfg = _build_config(args)
    pairs = []
    for spec in args.pair:
        if len(spec) not in (2, 3):
            raise ParameterError(
                "--pair takes FIXED MOVING [DISPLACEMENT], got " + " ".join(spec)
            )
        fixed = vxio.load_volume(spec[0])
        moving = vxio.load_volume(spec[1])
        disp = vxio.load_displacement(spec[2]) if len(spec) == 3 else None
        pairs.append(VolumePair(fixed, moving, disp))
    bundle = fit_models(
        cfg,
        pairs,
        method=args.method,
        sign_fixed=args.sign_fixed,
        sign_moving=args.sign_moving,
        source_fixed=args.source_fixed,
        source_moving=args.source_moving,
    )
    bundle_io.save_bundle(args.out, bundle)
    log.info("wrote %s (%d pair(s), method=%s)", args.out, len(pairs), args.method)
    return 0


def _transform_out_path(out, inputs, i):
    if len(inputs) == 1 and not os.path.isdir(out):
        return out
    os.makedirs(out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(inputs[i]))[0]
    return os.path.join(out, f"{stem}_feat.vxvol")


def cmd_transform(args):
    bundle = bundle_io.load_bundle(args.bundle)

    def run(i):
        vol = vxio.load_volume(args.volume[i])
        feat = transform_volume(
            bundle, vol, role=args.role, method=args.method, source=args.source
        )
        if args.mind_hybrid:
            cfg = config_from_dict(bundle.meta.get("config", {}))
            norm = NORMALIZERS[
                cfg.normalize_fixed if args.role == "fixed" else cfg.normalize_moving
            ]
            desc = mind_descriptor(norm(vol), cfg.hybrid_mind_config())
            feat = concat_mind_hybrid(feat, desc)
        if args.l2_normalize:
            feat = l2_normalize_voxels(feat)
        return feat

    feats = _pool_map(run, list(range(len(args.volume))), args.jobs)
    for i, feat in enumerate(feats):
        path = _transform_out_path(args.out, args.volume, i)
        vxio.save_feature(path, feat)
        log.info("wrote %s (%d channels)", path, feat.channels)
    return 0


def cmd_bandslice(args):
    f_fixed = vxio.load_feature(args.fixed)
    f_moving = vxio.load_feature(args.moving)
    cfg = _build_config(args).bandslice_config()
    if args.rounds is not None:
        cfg.rounds = args.rounds
        cfg.validate()
    result = bandslice_align(f_fixed, f_moving, cfg)
    payload = [
        {
            "axis": AXIS_NAMES[a],
            "sigma": result.params[a][0],
            "delta": result.params[a][1],
            "score": result.scores[a],
        }
        for a in (0, 1, 2)
    ]
    text = json.dumps(payload, indent=2)
    if args.out_json in (None, "-"):
        print(text)
    else:
        with open(args.out_json, "w") as f:
            f.write(text + "\n")
    if args.emit_resampled:
        moved = resample_affine(f_moving, result.as_resample_params(), "trilinear")
        vxio.save_feature(args.emit_resampled, moved)
        log.info("wrote %s", args.emit_resampled)
    return 0


def _category(args):
    if args.category:
        return args.category
    if args.query_subject and args.key_subject:
        return categorize(
            args.query_subject,
            args.query_modality or "",
            args.key_subject,
            args.key_modality or "",
        )
    return "-"


def cmd_knn(args):
    query = vxio.load_feature(args.query)
    key = vxio.load_feature(args.key)
    key_labels = vxio.load_labels(args.key_labels)
    query_roi = vxio.load_mask(args.query_roi)
    key_roi = vxio.load_mask(args.key_roi)
    pred = knn_segment(
        query, key, key_labels, query_roi, key_roi,
        k=args.k, exclude_self=args.exclude_self,
    )
    if args.out_labels:
        vxio.save_labels(args.out_labels, pred)
        log.info("wrote %s", args.out_labels)
    if args.truth:
        truth = vxio.load_labels(args.truth)
        per, fg = label_dice(pred, truth)
        cat = _category(args)
        rows = [(args.query_id, args.key_id, cat, "dice_fg", f"{fg:.6f}")]
        rows += [
            (args.query_id, args.key_id, cat, f"dice_label_{lab}", f"{v:.6f}")
            for lab, v in sorted(per.items())
        ]
        _write_report(args.csv, rows)
    elif args.csv:
        raise ParameterError("--csv needs --truth to score against")
    return 0


def cmd_landmark(args):
    query = vxio.load_feature(args.query)
    key = vxio.load_feature(args.key)
    q_labels = vxio.load_labels(args.query_labels)
    k_labels = vxio.load_labels(args.key_labels)
    key_roi = vxio.load_mask(args.key_roi)
    shared = sorted(
        set(int(v) for v in np.unique(q_labels.data) if v != 0)
        & set(int(v) for v in np.unique(k_labels.data) if v != 0)
    )
    if not shared:
        raise ParameterError("no shared non-background labels between the volumes")
    cat = _category(args)
    rows = []
    for lab in shared:
        lm_q = center_of_mass(q_labels, lab)
        lm_k = center_of_mass(k_labels, lab)
        res = localize(
            query,
            lm_q.voxel,
            key,
            key_roi,
            exclude=lm_q.voxel if args.exclude_self else None,
            reference=lm_k.voxel,
        )
        rows.append(
            (args.query_id, args.key_id, cat, f"landmark_{lab}",
             f"{res.distance_mm:.6f}")
        )
    _write_report(args.csv, rows)
    return 0


def cmd_metrics(args):
    modes = [m for m in (args.labels, args.masks, args.disp, args.aggregate) if m]
    if len(modes) != 1:
        raise ParameterError(
            "choose exactly one of --labels, --masks, --disp, --aggregate"
        )
    rows = []
    if args.labels:
        pred = vxio.load_labels(args.labels[0])
        truth = vxio.load_labels(args.labels[1])
        per, fg = label_dice(pred, truth)
        rows.append((args.labels[0], args.labels[1], "-", "dice_fg", f"{fg:.6f}"))
        for lab, v in sorted(per.items()):
            rows.append(
                (args.labels[0], args.labels[1], "-", f"dice_label_{lab}", f"{v:.6f}")
            )
        if args.with_hd95:
            from .grid import Mask

            for lab in sorted(per):
                a = Mask(pred.data == lab, pred.spacing)
                b = Mask(truth.data == lab, truth.spacing)
                v = hd95(a, b)
                rows.append(
                    (args.labels[0], args.labels[1], "-", f"hd95_label_{lab}",
                     f"{v:.6f}")
                )
    elif args.masks:
        a = vxio.load_mask(args.masks[0])
        b = vxio.load_mask(args.masks[1])
        rows.append((args.masks[0], args.masks[1], "-", "dice", f"{dice(a, b):.6f}"))
        if args.with_hd95:
            rows.append(
                (args.masks[0], args.masks[1], "-", "hd95", f"{hd95(a, b):.6f}")
            )
    elif args.disp:
        disp = vxio.load_displacement(args.disp)
        res = sd_log_j(disp)
        rows.append((args.disp, "-", "-", "sd_log_j", f"{res.value:.6f}"))
        rows.append((args.disp, "-", "-", "fold_fraction", f"{res.fold_fraction:.6f}"))
    else:
        errors = []
        with open(args.aggregate, newline="") as f:
            for rec in csv.DictReader(f):
                metric = rec.get("metric", "")
                if metric.startswith("landmark_"):
                    errors.append((metric[len("landmark_"):], float(rec["value"])))
        if not errors:
            raise ParameterError(f"{args.aggregate}: no landmark_* rows found")
        agg = aggregate_landmark_errors(errors, args.mode)
        f = sys.stdout if args.csv in (None, "-") else open(args.csv, "w", newline="")
        try:
            w = csv.writer(f)
            w.writerow(["mode", "metric", "mean", "sd", "n"])
            w.writerow([agg.mode, "landmark_mm", f"{agg.mean:.6f}",
                        f"{agg.sd:.6f}", agg.n])
        finally:
            if f is not sys.stdout:
                f.close()
        return 0
    _write_report(args.csv, rows)
    return 0


def cmd_mind(args):
    cfg = MindConfig(args.radius, args.dilation)

    def run(path):
        vol = vxio.load_volume(path)
        if args.normalize != "none":
            vol = NORMALIZERS[args.normalize](vol)
        return mind_descriptor(vol, cfg)

    descs = _pool_map(run, args.volume, args.jobs)
    for i, desc in enumerate(descs):
        path = _transform_out_path(args.out, args.volume, i)
        vxio.save_feature(path, desc)
        log.info("wrote %s", path)
    return 0


def cmd_mask(args):
    from .mask import MaskConfig

    cfg = MaskConfig(args.tau, MindConfig(args.radius, args.dilation))

    def run(path):
        vol = vxio.load_volume(path)
        if args.normalize != "none":
            vol = NORMALIZERS[args.normalize](vol)
        return foreground_mask(vol, cfg)

    masks = _pool_map(run, args.volume, args.jobs)
    for i, m in enumerate(masks):
        path = _transform_out_path(args.out, args.volume, i)
        vxio.save_mask(path, m)
        log.info("wrote %s (%d fg voxels)", path, int(m.data.sum()))
    return 0


def cmd_phantom(args):
    spec = PhantomSpec(
        dims=tuple(args.dims),
        seed=args.seed,
        n_structures=args.n_structures,
        spacing=tuple(args.spacing),
        remap=args.remap,
        gamma=args.gamma,
        noise=args.noise,
        flip=args.flip,
    )
    pair = generate_phantom(spec)
    os.makedirs(args.out, exist_ok=True)
    tag = f"s{args.seed}"
    paths = {
        "modality_a": os.path.join(args.out, f"{tag}_A.vxvol"),
        "modality_b": os.path.join(args.out, f"{tag}_B.vxvol"),
        "labels": os.path.join(args.out, f"{tag}_labels.vxvol"),
        "roi": os.path.join(args.out, f"{tag}_roi.vxvol"),
    }
    vxio.save_volume(paths["modality_a"], pair.modality_a)
    vxio.save_volume(paths["modality_b"], pair.modality_b)
    vxio.save_labels(paths["labels"], pair.labels)
    vxio.save_mask(paths["roi"], pair.roi)
    manifest = {
        "seed": args.seed,
        "dims": list(spec.dims),
        "spacing": list(spec.spacing),
        "n_structures": spec.n_structures,
        "remap": spec.remap,
        "gamma": spec.gamma,
        "noise": spec.noise,
        "flip": spec.flip,
        "sign_b": pair.sign_b,
        "files": {k: os.path.basename(v) for k, v in paths.items()},
    }
    with open(os.path.join(args.out, f"{tag}_manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    log.info("wrote phantom %s to %s", tag, args.out)
    return 0


def cmd_bundle_inspect(args):
    b = bundle_io.load_bundle(args.bundle)
    print(f"bundle: {args.bundle}")
    for a in sorted(b.axis_models):
        m = b.axis_models[a]
        print(
            f"  axis {AXIS_NAMES[a]}: PCA {m.projection.shape[0]} -> {m.k}, "
            f"explained variance {np.array2string(m.explained_variance, precision=4)}"
        )
    if b.wpls is not None:
        w = b.wpls
        print(
            f"  weighted model: {w.w_fixed.shape[0]} -> {w.k_proj}, eps={w.eps:g}, "
            f"singular values {np.array2string(w.singular_values, precision=4)}"
        )
    if b.pca3d is not None:
        p = b.pca3d
        print(f"  pooled PCA: {p.projection.shape[0]} -> {p.k_proj}")
    if b.meta:
        print("  metadata:")
        print("    " + json.dumps(b.meta, indent=2).replace("\n", "\n    "))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(
        prog="vxc",
        description="Modality-stable voxelwise features: fit, transform, evaluate.",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit projections on training pairs")
    _add_config_flags(p)
    p.add_argument("--pair", action="append", nargs="+", required=True,
                   metavar="FILE", help="FIXED MOVING [DISPLACEMENT]")
    p.add_argument("--method", choices=("wpls", "pca3d", "both"), default="both")
    p.add_argument("--sign-fixed", dest="sign_fixed", type=int, default=1,
                   choices=(-1, 1))
    p.add_argument("--sign-moving", dest="sign_moving", type=int, default=1,
                   choices=(-1, 1))
    p.add_argument("--source-fixed", dest="source_fixed", default="",
                   help="precomputed .vxfeat directory for the fixed role")
    p.add_argument("--source-moving", dest="source_moving", default="")
    p.add_argument("--out", required=True, help="output .vxproj bundle")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("transform", help="project volumes with a fitted bundle")
    p.add_argument("volume", nargs="+")
    p.add_argument("--bundle", required=True)
    p.add_argument("--role", choices=("fixed", "moving"), default="fixed")
    p.add_argument("--method", choices=("wpls", "pca3d"), default=None)
    p.add_argument("--source", default="", help="precomputed .vxfeat directory")
    p.add_argument("--mind-hybrid", dest="mind_hybrid", action="store_true",
                   help="append descriptor channels to the projected features")
    p.add_argument("--l2-normalize", dest="l2_normalize", action="store_true")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out", required=True,
                   help="output file (single input) or directory")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("bandslice", help="per-axis affine slice alignment")
    _add_config_flags(p)
    p.add_argument("--fixed", required=True, help="fixed feature volume (.vxvol)")
    p.add_argument("--moving", required=True, help="moving feature volume (.vxvol)")
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--out-json", dest="out_json", default=None)
    p.add_argument("--emit-resampled", dest="emit_resampled", default=None)
    p.set_defaults(func=cmd_bandslice)

    def add_pair_ids(p):
        p.add_argument("--query-id", dest="query_id", default="query")
        p.add_argument("--key-id", dest="key_id", default="key")
        p.add_argument("--category", default=None,
                       choices=("SC", "DS", "DM", "G"))
        p.add_argument("--query-subject", dest="query_subject", default=None)
        p.add_argument("--query-modality", dest="query_modality", default=None)
        p.add_argument("--key-subject", dest="key_subject", default=None)
        p.add_argument("--key-modality", dest="key_modality", default=None)

    p = sub.add_parser("knn", help="kNN label transfer between feature volumes")
    p.add_argument("--query", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--key-labels", dest="key_labels", required=True)
    p.add_argument("--query-roi", dest="query_roi", required=True)
    p.add_argument("--key-roi", dest="key_roi", required=True)
    p.add_argument("--k", type=int, default=7)
    p.add_argument("--exclude-self", dest="exclude_self", action="store_true")
    p.add_argument("--out-labels", dest="out_labels", default=None)
    p.add_argument("--truth", default=None, help="truth labels for Dice rows")
    p.add_argument("--csv", default=None)
    add_pair_ids(p)
    p.set_defaults(func=cmd_knn)

    p = sub.add_parser("landmark", help="landmark localization errors")
    p.add_argument("--query", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--query-labels", dest="query_labels", required=True)
    p.add_argument("--key-labels", dest="key_labels", required=True)
    p.add_argument("--key-roi", dest="key_roi", required=True)
    p.add_argument("--exclude-self", dest="exclude_self", action="store_true")
    p.add_argument("--csv", default=None)
    add_pair_ids(p)
    p.set_defaults(func=cmd_landmark)

    p = sub.add_parser("metrics", help="overlap / distance / regularity metrics")
    p.add_argument("--labels", nargs=2, metavar=("PRED", "TRUTH"))
    p.add_argument("--masks", nargs=2, metavar=("A", "B"))
    p.add_argument("--disp", default=None)
    p.add_argument("--aggregate", default=None,
                   help="summarize landmark_* rows of a report CSV")
    p.add_argument("--mode", choices=("median-pair", "pooled-mean"),
                   default="median-pair")
    p.add_argument("--with-hd95", dest="with_hd95", action="store_true")
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("mind", help="12-channel self-similarity descriptor")
    p.add_argument("volume", nargs="+")
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--dilation", type=int, default=2)
    p.add_argument("--normalize", choices=sorted(NORMALIZERS), default="none")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mind)

    p = sub.add_parser("mask", help="descriptor-based foreground mask")
    p.add_argument("volume", nargs="+")
    p.add_argument("--tau", type=float, default=0.99)
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--dilation", type=int, default=2)
    p.add_argument("--normalize", choices=sorted(NORMALIZERS), default="none")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("phantom", help="generate a synthetic two-modality pair")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", type=int, nargs=3, default=(32, 32, 32))
    p.add_argument("--spacing", type=float, nargs=3, default=(1.0, 1.0, 1.0))
    p.add_argument("--n-structures", dest="n_structures", type=int, default=4)
    p.add_argument("--remap", choices=("gamma", "none"), default="gamma")
    p.add_argument("--gamma", type=float, default=0.6)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--flip", action="store_true",
                   help="modality-B features are sign-flipped at encode time")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("bundle-inspect", help="describe a .vxproj bundle")
    p.add_argument("bundle")
    p.set_defaults(func=cmd_bundle_inspect)

    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    try:
        if getattr(args, "jobs", None) is None and hasattr(args, "jobs"):
            args.jobs = _jobs_default()
        return args.func(args)
    except VoxcorError as e:
        log.error("%s", e)
        return e.exit_code
    except FileNotFoundError as e:
        log.error("%s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
