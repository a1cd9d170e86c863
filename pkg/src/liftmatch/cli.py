"""Command-line interface.

Settings resolve as: built-in defaults, then ``--config`` file, then flags.
``LIFTMATCH_THREADS`` (or ``--threads``) caps BLAS threads; outputs do not
depend on it. Exit codes: 0 ok, 2 usage, 3 data/format, 4 estimation failure.
"""

import argparse
import csv
import dataclasses
import io
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import formats
from .backbone import NetWeights, net_weight_shapes
from .errors import LiftMatchError, ParameterError
from .geometry import (
    AUC_THRESHOLDS,
    MHA_THRESHOLDS,
    corner_error,
    estimate_pose,
    pose_auc,
    pose_error_deg,
    rotation_error_deg,
    translation_error_deg,
)
from .keypoints import FeatureBundle
from .lifting import LiftWeights, train_lift
from .losses import MatchGroundTruth
from .normals import normals_from_depth
from .pipeline import PipelineConfig, extract, match_pair, parse_config_text
from .render import render_matches
from .synth import DEPTH_SCENES, TEXTURES, LiftBatch, gen_depth_scene, gen_lift_batch, gen_pair, gen_pose_scene

log = logging.getLogger("liftmatch")


# ------------------------------------------------------------------ helpers


def load_model(path, seed):
    """Backbone/head weights and lift weights from an LFW1 file, or seeded random ones."""
    if path is None:
        return NetWeights.random(seed), LiftWeights.random(seed)
    tensors = formats.load_weights(path)
    net = NetWeights(dict(tensors))
    if all(name in tensors for name in net_weight_shapes()):
        net.validate()
    else:
        log.warning("%s has no backbone tensors; using seeded random backbone", path)
        net = NetWeights.random(seed)
    if any(name.startswith("lift.") for name in tensors):
        lw = LiftWeights.from_dict(tensors)
    else:
        log.warning("%s has no lift tensors; using seeded random lifting weights", path)
        lw = LiftWeights.random(seed)
    return net, lw


def _thresholds(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ParameterError(f"bad threshold list {text!r}") from None


def _bundle_to_json(b):
    return {
        "keypoints": b.keypoints, "scores": b.scores, "descriptors": b.descriptors,
        "normals": b.normals, "image_dims": list(b.image_dims),
    }


def _bundle_from_json(d):
    return FeatureBundle(np.asarray(d["keypoints"], float).reshape(-1, 2), np.asarray(d["scores"], float),
                         np.asarray(d["descriptors"], float).reshape(-1, 64),
                         np.asarray(d["normals"], float).reshape(-1, 3), tuple(d["image_dims"]))


def load_lift_batches(directory):
    files = sorted(Path(directory).glob("lift_*.json"))
    if not files:
        raise formats.FormatError(f"no lift_*.json batches in {directory}")
    out = []
    for f in files:
        d = formats.read_report(f)
        a, b = _bundle_from_json(d["a"]), _bundle_from_json(d["b"])
        gt = MatchGroundTruth(np.asarray(d["gt_pairs"], int), len(a), len(b))
        out.append(LiftBatch(a, b, gt, np.asarray(d["ambiguous"], bool)))
    return out


# ------------------------------------------------------------------ commands


def cmd_detect(args, cfg):
    net, _ = load_model(args.weights, cfg.seed)
    image = formats.load_image(args.image)
    ex = extract(image, net, cfg)
    b = ex.bundle
    report = {
        "schema": 1,
        "image": str(args.image),
        "dims": list(b.image_dims),
        "keypoints": [[float(x), float(y), float(s)] for (x, y), s in zip(b.keypoints, b.scores)],
        "normals": b.normals,
    }
    if args.with_descriptors:
        report["descriptors"] = b.descriptors
    formats.write_report(args.out, report)
    log.info("detect: %d keypoints -> %s", len(b), args.out)


def cmd_normals(args, cfg):
    depth = formats.load_depth(args.depth)
    formats.save_pfm(args.out, normals_from_depth(depth))


def cmd_match(args, cfg):
    net, lw = load_model(args.weights, cfg.seed)
    ia, ib = formats.load_image(args.image_a), formats.load_image(args.image_b)
    H_gt = None
    if args.gt:
        H_gt = np.asarray(formats.read_report(args.gt)["H_gt"], dtype=np.float64)
    report = match_pair(ia, ib, net, lw, cfg, H_gt)
    report = {"schema": 1, "image_a": str(args.image_a), "image_b": str(args.image_b),
              **{k: v for k, v in report.items() if k != "schema"}}
    formats.write_report(args.out, report)
    if args.viz:
        formats.save_image(args.viz, _render_report(report, ia, ib))
    return 0


def _render_report(report, ia=None, ib=None):
    ia = formats.load_image(report["image_a"]) if ia is None else ia
    ib = formats.load_image(report["image_b"]) if ib is None else ib
    ka = np.asarray(report["keypoints_a"], dtype=np.float64).reshape(-1, 3)[:, :2]
    kb = np.asarray(report["keypoints_b"], dtype=np.float64).reshape(-1, 3)[:, :2]
    m = np.asarray(report["matches"], dtype=np.float64).reshape(-1, 3)[:, :2].astype(np.int64)
    return render_matches(ia, ib, ka, kb, m, report["correct"])


def cmd_draw(args, cfg):
    formats.save_image(args.out, _render_report(formats.read_report(args.report)))


def cmd_synth(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dims = (args.height, args.width)
    for k in range(args.count):
        seed = cfg.seed + k
        stem = out / f"{args.scene}_{k:04d}"
        if args.scene in TEXTURES:
            p = gen_pair(seed, dims, args.scene, args.warp)
            depth, normals = gen_depth_scene(seed, dims, "plane")
            formats.save_image(f"{stem}_a.pgm", p.imageA[:, :, 0])
            formats.save_image(f"{stem}_b.pgm", p.imageB[:, :, 0])
            formats.save_pfm(f"{stem}_depth.pfm", depth)
            formats.write_report(f"{stem}.json", {
                "schema": 1, "kind": "homography", "seed": seed, "texture": args.scene,
                "image_a": f"{stem.name}_a.pgm", "image_b": f"{stem.name}_b.pgm",
                "depth_a": f"{stem.name}_depth.pfm", "dims": list(dims),
                "H_gt": p.H_gt, "correspondences": p.correspondences,
            })
        elif args.scene in DEPTH_SCENES:
            depth, normals = gen_depth_scene(seed, dims, args.scene)
            formats.save_pfm(f"{stem}_depth.pfm", depth)
            formats.save_pfm(f"{stem}_normals.pfm", normals)
        elif args.scene == "lift":
            b = gen_lift_batch(seed, args.points, args.ambiguity)
            formats.write_report(out / f"lift_{k:04d}.json", {
                "schema": 1, "kind": "lift", "seed": seed, "a": _bundle_to_json(b.a), "b": _bundle_to_json(b.b),
                "gt_pairs": b.gt.pairs, "ambiguous": b.ambiguous,
            })
        elif args.scene == "pose":
            s = gen_pose_scene(seed, args.points, args.outliers, args.noise)
            formats.write_report(f"{stem}.json", {
                "schema": 1, "kind": "pose", "seed": seed, "dims": list(s.dims), "K_a": s.K, "K_b": s.K,
                "R_gt": s.R, "t_gt": s.t, "points_a": s.ptsA, "points_b": s.ptsB, "inliers_gt": s.inliers,
            })


def cmd_train_lift(args, cfg):
    batches = load_lift_batches(args.data)
    weights, trace = train_lift(batches, lr=args.lr, iterations=args.iters, seed=cfg.seed,
                                temperature=cfg.temperature)
    tensors = {}
    if args.weights:
        tensors = {k: v for k, v in formats.load_weights(args.weights).items() if not k.startswith("lift.")}
    tensors.update(weights.to_dict())
    formats.save_weights(args.out, tensors)
    if args.trace:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "loss"])
        for i, loss in enumerate(trace):
            w.writerow([i, repr(float(loss))])
        Path(args.trace).write_text(buf.getvalue())
    log.info("train-lift: loss %.4f -> %.4f", trace[0], trace[-1])


def _pair_files(directory, kind):
    files = []
    for f in sorted(Path(directory).glob("*.json")):
        d = formats.read_report(f)
        if isinstance(d, dict) and d.get("kind") == kind:
            files.append((f, d))
    if not files:
        raise formats.FormatError(f"no {kind} pairs found in {directory}")
    return files


def cmd_eval_homography(args, cfg):
    net, lw = load_model(args.weights, cfg.seed)
    thresholds = _thresholds(args.thresholds)
    rows = []
    for f, d in _pair_files(args.pairs, "homography"):
        H_gt = np.asarray(d["H_gt"], dtype=np.float64)
        ia = formats.load_image(f.parent / d["image_a"])
        ib = formats.load_image(f.parent / d["image_b"])
        r = match_pair(ia, ib, net, lw, cfg, H_gt)
        H = None if r["homography"] is None else np.asarray(r["homography"])
        err = corner_error(H, H_gt, tuple(d["dims"]))
        rows.append({"pair": f.name, "matches": len(r["matches"]), "corner_error": err,
                     "accuracy": [float(err <= t) for t in thresholds]})
    acc = np.array([r["accuracy"] for r in rows])
    formats.write_report(args.out, {
        "schema": 1, "metric": "MHA", "thresholds": thresholds, "lift": cfg.use_lift,
        "pairs": rows, "mha": acc.mean(axis=0).tolist(),
    })


def cmd_eval_pose(args, cfg):
    rows = []
    for f, d in _pair_files(args.pairs, "pose"):
        pa, pb = np.asarray(d["points_a"], float), np.asarray(d["points_b"], float)
        R_gt, t_gt = np.asarray(d["R_gt"]), np.asarray(d["t_gt"])
        try:
            pose = estimate_pose(pa, pb, np.asarray(d["K_a"]), np.asarray(d["K_b"]), cfg.pose_iters,
                                 cfg.pose_px, cfg.seed)
            rot, trans = rotation_error_deg(pose.R, R_gt), translation_error_deg(pose.t, t_gt)
            err = pose_error_deg(pose, R_gt, t_gt)
        except LiftMatchError as exc:
            log.warning("%s: %s", f.name, exc)
            rot = trans = err = float("inf")
        rows.append({"pair": f.name, "rotation_error": rot, "translation_error": trans, "pose_error": err})
    errors = [r["pose_error"] if np.isfinite(r["pose_error"]) else np.inf for r in rows]
    formats.write_report(args.out, {
        "schema": 1, "metric": "pose_auc", "thresholds": list(AUC_THRESHOLDS), "pairs": rows,
        "auc": pose_auc(errors, AUC_THRESHOLDS),
    })


# ------------------------------------------------------------------ parser


def build_parser():
    p = argparse.ArgumentParser(prog="liftmatch", description="Geometry-aware local feature matching.")
    p.add_argument("--config", help="flat 'key = value' file; flags override it")
    p.add_argument("--threads", type=int, help="cap kernel threads (default: $LIFTMATCH_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, weights=True):
        sp.add_argument("--seed", type=int, help="seed for random weights and RANSAC")
        if weights:
            sp.add_argument("--weights", help="LFW1 weight file (random init when omitted)")
        return sp

    def pipeline_flags(sp):
        sp.add_argument("--top-k", dest="top_k", type=int)
        sp.add_argument("--nms-radius", dest="nms_radius", type=int)
        sp.add_argument("--nms-threshold", dest="nms_threshold", type=float)
        sp.add_argument("--min-sim", dest="min_sim", type=float)
        sp.add_argument("--no-lift", dest="use_lift", action="store_const", const=False)
        sp.add_argument("--freeze-normals", dest="freeze_normals", action="store_const", const=True)
        sp.add_argument("--ransac-iters", dest="ransac_iters", type=int)
        sp.add_argument("--ransac-px", dest="ransac_px", type=float)

    sp = common(sub.add_parser("detect", help="detect keypoints in one image"))
    sp.add_argument("--image", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--with-descriptors", action="store_true")
    pipeline_flags(sp)
    sp.set_defaults(func=cmd_detect)

    sp = common(sub.add_parser("normals", help="pseudo normals from a depth PFM"), weights=False)
    sp.add_argument("--depth", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_normals)

    sp = common(sub.add_parser("match", help="match two images"))
    sp.add_argument("--image-a", dest="image_a", required=True)
    sp.add_argument("--image-b", dest="image_b", required=True)
    sp.add_argument("--gt", help="synth pair JSON providing H_gt for the correctness mask")
    sp.add_argument("--out", required=True)
    sp.add_argument("--viz")
    pipeline_flags(sp)
    sp.set_defaults(func=cmd_match)

    sp = common(sub.add_parser("synth", help="write synthetic data"), weights=False)
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--scene", required=True, choices=TEXTURES + DEPTH_SCENES + ("lift", "pose"))
    sp.add_argument("--out", required=True)
    sp.add_argument("--height", type=int, default=256)
    sp.add_argument("--width", type=int, default=256)
    sp.add_argument("--warp", type=float, default=0.1)
    sp.add_argument("--points", type=int, default=128)
    sp.add_argument("--ambiguity", type=float, default=0.5)
    sp.add_argument("--outliers", type=float, default=0.3)
    sp.add_argument("--noise", type=float, default=0.5)
    sp.set_defaults(func=cmd_synth)

    sp = common(sub.add_parser("train-lift", help="train the lifting module on lift batches"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--iters", type=int, default=200)
    sp.add_argument("--lr", type=float, default=1e-4)
    sp.add_argument("--out", required=True)
    sp.add_argument("--trace")
    sp.set_defaults(func=cmd_train_lift)

    sp = common(sub.add_parser("eval-homography", help="MHA over a directory of synthetic pairs"))
    sp.add_argument("--pairs", required=True)
    sp.add_argument("--thresholds", default=",".join(str(t) for t in MHA_THRESHOLDS))
    sp.add_argument("--out", required=True)
    pipeline_flags(sp)
    sp.set_defaults(func=cmd_eval_homography)

    sp = common(sub.add_parser("eval-pose", help="pose AUC over a directory of pose scenes"))
    # pose scenes store correspondences, so --weights is accepted but unused
    sp.add_argument("--pairs", required=True)
    sp.add_argument("--pose-iters", dest="pose_iters", type=int)
    sp.add_argument("--pose-px", dest="pose_px", type=float)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval_pose)

    sp = common(sub.add_parser("draw", help="render a match report"), weights=False)
    sp.add_argument("--report", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_draw)
    return p


def resolve_config(args):
    values = {}
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ParameterError(f"cannot read config {args.config}: {exc}") from None
        values.update(parse_config_text(text))
    cfg = PipelineConfig.from_mapping(values)
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(PipelineConfig)
                 if getattr(args, f.name, None) is not None}
    return dataclasses.replace(cfg, **overrides)


def thread_limit(args):
    n = args.threads
    if n is None and os.environ.get("LIFTMATCH_THREADS"):
        try:
            n = int(os.environ["LIFTMATCH_THREADS"])
        except ValueError:
            raise ParameterError("LIFTMATCH_THREADS must be an integer") from None
    return threadpool_limits(limits=n) if n else nullcontext()


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        with thread_limit(args):
            args.func(args, cfg)
    except LiftMatchError as exc:
        print(f"liftmatch {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"liftmatch {args.command}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
