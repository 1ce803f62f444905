"""Command-line entry point: ``pointmap4d <command> ...``.

Exit status: 0 success, 1 usage error, 2 input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from . import io as pio
from .errors import DimensionMismatch, MissingInput, Pointmap4DError
from .evaluation import bullet_time_fuse, depth_metrics, epe, pnp_from_pointmap, pointmap_to_flow, pose_errors
from .fit import dynamic_residual, fit_pointmaps, masked_rmse
from .geom import DepthMap, Pointmap, camera_induced_flow, pixel_grid, pointmap_in_frame, relative_pose
from .losses import DEFAULT_ALPHA, PairPrediction, SupervisionBundle
from .masks import DEFAULT_T_OCC, DEFAULT_TAU, bilinear_sample, dynamic_mask, occlusion_mask
from .synth import make_pair, random_scene

# file names inside a pair directory
CAMERAS = "cameras.json"
SCENE = "scene.json"
MANIFEST = "manifest.json"
DEPTH1, DEPTH2 = "depth1.pfm", "depth2.pfm"
FLOW_F, FLOW_B = "flow_fwd.flo", "flow_bwd.flo"
GT_MASKS = {"Mocc1": "gt_occ1.pgm", "Mocc2": "gt_occ2.pgm", "Mdyn1": "gt_dyn1.pgm", "Mdyn2": "gt_dyn2.pgm"}
SUP_MASKS = {"Mocc1": "occ1.pgm", "Mocc2": "occ2.pgm", "Mdyn1": "dyn1.pgm", "Mdyn2": "dyn2.pgm"}
POINTMAPS = ("X11", "X21", "X22", "X12")
CONFIDENCES = ("C11", "C21", "C22", "C12")
SUPERVISION_DIR = "supervision"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- helpers


def _positive(kind):
    def parse(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a {kind.__name__}, got {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text!r}")
        return v

    return parse


def _strides(text):
    try:
        vals = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"strides must be comma-separated integers, got {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError(f"strides must be positive integers, got {text!r}")
    return vals


def _radius(text):
    if text == "auto":
        return None
    if text == "inf":
        return float("inf")
    return _positive(float)(text)


def _path(pair_dir, name):
    return os.path.join(pair_dir, name)


def _require(pair_dir, name):
    p = _path(pair_dir, name)
    if not os.path.exists(p):
        raise MissingInput(f"{p}: required file is missing")
    return p


def _rel_pose(cams, src, dst):
    _, P1, P2, _, _ = cams
    P = {1: P1, 2: P2}
    return relative_pose(P[src], P[dst])


def _load_pm(pair_dir, name, tag="cam"):
    return pio.load_pointmap(_require(pair_dir, name), tag)


def _check_shape(path, got, want):
    if tuple(got) != tuple(want):
        raise DimensionMismatch(f"{path}: shape {tuple(got)} does not match {tuple(want)}")


def _mask_fraction(m):
    return float(np.mean(m))


def _iou(a, b):
    union = np.logical_or(a, b).sum()
    return 1.0 if union == 0 else float(np.logical_and(a, b).sum() / union)


def _run_pairs(fn, items, threads):
    """Apply ``fn`` to every item; results come back in input order."""
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _with_pair(fn):
    """Tag library errors raised for one pair with the pair's identity."""

    def wrapped(item):
        try:
            return fn(item)
        except Pointmap4DError as exc:
            exc.args = (f"pair {item[1] if isinstance(item, tuple) else item}: {exc}",)
            raise

    return wrapped


def _record(pair, metrics, params, seed):
    return {"pair": pair, "metrics": metrics, "params": params, "seed": seed, "version": __version__}


def _write_report(args, records, columns):
    lines = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(lines)
    table = _summary_table(records, columns)
    if args.summary:
        with open(args.summary, "w", encoding="utf-8") as fh:
            fh.write(table)
    if not args.quiet:
        sys.stdout.write(table)


def _summary_table(records, columns):
    """Per-pair rows followed by mean and median rows."""
    names = [os.path.basename(os.path.normpath(str(r["pair"]))) or str(r["pair"]) for r in records]
    width = max([len("median")] + [len(n) for n in names])
    head = "pair".ljust(width) + "".join(f"  {c:>12}" for c in columns)
    rows = [head, "-" * len(head)]
    values = np.array([[float(r["metrics"][c]) for c in columns] for r in records], dtype=np.float64)
    for n, v in zip(names, values):
        rows.append(n.ljust(width) + "".join(f"  {x:12.6g}" for x in v))
    rows.append("-" * len(head))
    if len(records):
        rows.append("mean".ljust(width) + "".join(f"  {x:12.6g}" for x in values.mean(axis=0)))
        rows.append("median".ljust(width) + "".join(f"  {x:12.6g}" for x in np.median(values, axis=0)))
    return "\n".join(rows) + "\n"


# ---------------------------------------------------------------- synth-gen


def _scene_from_source(args):
    if args.random_seed is not None:
        return random_scene(args.random_seed, args.width, args.height, shapes=args.shapes)
    if args.source is None:
        raise UsageError("give a scene config path, 'demo', or --random-seed")
    if args.source == "demo":
        return pio.read_scene(_bundled_demo())
    return pio.read_scene(args.source)


def _bundled_demo():
    return os.path.join(os.path.dirname(__file__), "data", "demo_scene.json")


def write_pair(out_dir, scene):
    """Render ``scene`` and write every artifact of the pair into ``out_dir``."""
    rp = make_pair(scene)
    os.makedirs(out_dir, exist_ok=True)
    sup = rp.bundle
    files = {}

    def put(name, writer, payload):
        writer(_path(out_dir, name), payload)
        files[name] = name

    pio.write_scene(_path(out_dir, SCENE), scene)
    pio.write_cameras(_path(out_dir, CAMERAS), scene.K, scene.P1, scene.P2, scene.width, scene.height)
    put(DEPTH1, pio.save_depth, rp.D1)
    put(DEPTH2, pio.save_depth, rp.D2)
    put(FLOW_F, pio.write_flo, rp.f)
    put(FLOW_B, pio.write_flo, rp.b)
    for key, name in GT_MASKS.items():
        put(name, pio.write_pgm, getattr(rp, "gt" + key))
    for key, valid in (("X11", sup.valid1), ("X21", sup.valid2), ("X22", sup.valid2), ("X12", sup.valid1)):
        put(key + ".pfm", pio.save_pointmap, Pointmap(getattr(sup, "gt" + key), valid))
    put("X21_rigid.pfm", pio.save_pointmap, rp.rigidX21)
    put("X12_rigid.pfm", pio.save_pointmap, rp.rigidX12)
    for key in ("target21", "target12"):
        arr = getattr(sup, key)
        put(key + ".pfm", pio.save_pointmap, Pointmap(arr, np.all(np.isfinite(arr), axis=-1)))
    manifest = {
        "version": __version__,
        "seed": int(scene.seed),
        "width": scene.width,
        "height": scene.height,
        "cameras": CAMERAS,
        "scene": SCENE,
        "files": sorted(files),
    }
    with open(_path(out_dir, MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return rp


def cmd_synth_gen(args):
    scene = _scene_from_source(args)
    write_pair(args.out_dir, scene)
    if not args.quiet:
        print(f"wrote pair to {args.out_dir}")
    return 0


# ---------------------------------------------------------------- supervise


def _load_inputs(pair_dir):
    cams = pio.read_cameras(_require(pair_dir, CAMERAS))
    K, _, _, W, H = cams
    D1 = pio.load_depth(_require(pair_dir, DEPTH1))
    D2 = pio.load_depth(_require(pair_dir, DEPTH2))
    f = pio.load_flow(_require(pair_dir, FLOW_F))
    b = pio.load_flow(_require(pair_dir, FLOW_B))
    for name, arr in ((DEPTH1, D1), (DEPTH2, D2), (FLOW_F, f), (FLOW_B, b)):
        _check_shape(_path(pair_dir, name), arr.shape, (H, W))
    return cams, D1, D2, f, b


def supervise_pair(pair_dir, t_occ=DEFAULT_T_OCC, tau=DEFAULT_TAU):
    """Masks and GT pointmaps from depths, flows and cameras alone."""
    cams, D1, D2, f, b = _load_inputs(pair_dir)
    K, P1, P2, _, _ = cams
    rel12, rel21 = _rel_pose(cams, 1, 2), _rel_pose(cams, 2, 1)
    fcam1 = camera_induced_flow(D1, K, rel12.R, rel12.T)
    fcam2 = camera_induced_flow(D2, K, rel21.R, rel21.T)
    out = {
        "Mocc1": occlusion_mask(f, b, t_occ),
        "Mocc2": occlusion_mask(b, f, t_occ),
        "Mdyn1": dynamic_mask(f, fcam1, tau),
        "Mdyn2": dynamic_mask(b, fcam2, tau),
    }
    X11 = pointmap_in_frame(D1, K, P1, P1)
    X22 = pointmap_in_frame(D2, K, P2, P2)
    grid = pixel_grid(*D1.shape)
    t21, ok21 = bilinear_sample(X11.points, X11.valid, grid + np.nan_to_num(b.vectors))
    t12, ok12 = bilinear_sample(X22.points, X22.valid, grid + np.nan_to_num(f.vectors))
    out.update(
        X11=X11,
        X22=X22,
        X21_rigid=pointmap_in_frame(D2, K, P2, P1),
        X12_rigid=pointmap_in_frame(D1, K, P1, P2),
        target21=Pointmap(t21, ok21 & b.valid),
        target12=Pointmap(t12, ok12 & f.valid),
    )
    return out


def cmd_supervise(args):
    def one(pair_dir):
        res = supervise_pair(pair_dir, args.t_occ, args.tau)
        out_dir = _path(pair_dir, args.out_name)
        os.makedirs(out_dir, exist_ok=True)
        for key, name in SUP_MASKS.items():
            pio.write_pgm(_path(out_dir, name), res[key])
        for key in ("X11", "X22", "X21_rigid", "X12_rigid", "target21", "target12"):
            pio.save_pointmap(_path(out_dir, key + ".pfm"), res[key])
        metrics = {k: _mask_fraction(res[k]) for k in SUP_MASKS}
        for key, name in GT_MASKS.items():
            gp = _path(pair_dir, name)
            if os.path.exists(gp):
                metrics["iou_" + key] = _iou(res[key], pio.read_pgm(gp))
        return _record(pair_dir, metrics, {"t_occ": args.t_occ, "tau": args.tau}, None)

    records = _run_pairs(_with_pair(one), args.pairs, args.threads)
    cols = list(SUP_MASKS) + [c for c in ("iou_Mocc1", "iou_Mocc2", "iou_Mdyn1", "iou_Mdyn2") if all(c in r["metrics"] for r in records)]
    _write_report(args, records, cols)
    return 0


# ---------------------------------------------------------------- fit


def load_bundle(pair_dir, masks="oracle"):
    """Supervision bundle for a synthesized pair directory.

    ``masks`` selects the oracle masks written by ``synth-gen`` or the
    estimated ones written by ``supervise``.  Exact flow-endpoint targets are
    used when present.
    """
    cams, D1, D2, f, b = _load_inputs(pair_dir)
    pms = {k: _load_pm(pair_dir, k + ".pfm") for k in POINTMAPS}
    if masks == "oracle":
        mk = {k: pio.read_pgm(_require(pair_dir, name)) for k, name in GT_MASKS.items()}
    else:
        sub = _path(pair_dir, SUPERVISION_DIR)
        mk = {k: pio.read_pgm(_require(sub, name)) for k, name in SUP_MASKS.items()}
    targets = {}
    for key in ("target21", "target12"):
        p = _path(pair_dir, key + ".pfm")
        targets[key] = pio.read_pfm(p).astype(np.float64) if os.path.exists(p) else None
    return SupervisionBundle(
        gtX11=pms["X11"].points,
        gtX21=pms["X21"].points,
        gtX22=pms["X22"].points,
        gtX12=pms["X12"].points,
        f=f,
        b=b,
        valid1=D1.valid,
        valid2=D2.valid,
        **mk,
        **targets,
    )


def _init_prediction(pair_dir, sup, init, noise, rng):
    pred = PairPrediction.from_bundle(sup)
    if init == "rigid":
        rig21 = _load_pm(pair_dir, "X21_rigid.pfm")
        rig12 = _load_pm(pair_dir, "X12_rigid.pfm")
        pred.X21 = np.nan_to_num(rig21.points)
        pred.X12 = np.nan_to_num(rig12.points)
    elif init == "gt-noise":
        scale = float(np.mean(np.linalg.norm(sup.gtX11[sup.valid1], axis=-1)))
        for k in POINTMAPS:
            arr = getattr(pred, k)
            setattr(pred, k, arr + rng.normal(scale=noise * scale, size=arr.shape))
    return pred


def cmd_fit(args):
    def one(item):
        index, pair_dir = item
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, index]))
        sup = load_bundle(pair_dir, args.masks)
        init = _init_prediction(pair_dir, sup, args.init, args.noise, rng)
        res = fit_pointmaps(sup, init, steps=args.steps, step_size=args.step_size, alpha=args.alpha)
        pred = res.prediction
        out_dir = _path(pair_dir, args.out_name)
        os.makedirs(out_dir, exist_ok=True)
        valid = {"X11": sup.valid1, "X21": sup.valid2, "X22": sup.valid2, "X12": sup.valid1}
        for k in POINTMAPS:
            pio.save_pointmap(_path(out_dir, k + ".pfm"), Pointmap(getattr(pred, k), valid[k]))
        for k in CONFIDENCES:
            pio.write_pfm(_path(out_dir, k + ".pfm"), getattr(pred, k))
        metrics = {
            "loss_init": res.trace[0],
            "loss_final": res.trace[-1],
            "rmse_init": masked_rmse(init, sup),
            "rmse_final": masked_rmse(pred, sup),
            "dyn_residual_init": dynamic_residual(init, sup),
            "dyn_residual_final": dynamic_residual(pred, sup),
        }
        params = {"steps": args.steps, "step_size": args.step_size, "alpha": args.alpha, "init": args.init,
                  "noise": args.noise, "masks": args.masks}
        return _record(pair_dir, metrics, params, args.seed)

    records = _run_pairs(_with_pair(one), list(enumerate(args.pairs)), args.threads)
    _write_report(args, records, ["loss_final", "rmse_final", "dyn_residual_final"])
    return 0


# ---------------------------------------------------------------- eval-*


def _load_depth_like(path):
    raw = pio.read_pfm(path).astype(np.float64)
    if raw.ndim == 3:
        z = raw[..., 2]
        return DepthMap(z, np.isfinite(z))
    return DepthMap(raw, np.isfinite(raw))


def cmd_eval_depth(args):
    def one(pair_dir):
        pred = _load_depth_like(_require(pair_dir, args.pred))
        gt = _load_depth_like(_require(pair_dir, args.gt))
        _check_shape(_path(pair_dir, args.pred), pred.shape, gt.shape)
        m = depth_metrics(pred, gt, align=not args.no_align)
        metrics = {"abs_rel": m.abs_rel, "delta1": m.delta1, "n_valid": m.n_valid}
        return _record(pair_dir, metrics, {"pred": args.pred, "gt": args.gt, "align": not args.no_align}, None)

    records = _run_pairs(_with_pair(one), args.pairs, args.threads)
    _write_report(args, records, ["abs_rel", "delta1"])
    return 0


def cmd_eval_pose(args):
    def one(pair_dir):
        cams = pio.read_cameras(_require(pair_dir, CAMERAS))
        K = cams[0]
        X21 = _load_pm(pair_dir, args.pointmap)
        exclude = None
        if args.exclude_dynamic:
            exclude = pio.read_pgm(_require(pair_dir, args.dynamic_mask))
            _check_shape(_path(pair_dir, args.dynamic_mask), exclude.shape, X21.shape)
        pose, inl = pnp_from_pointmap(
            X21, K, exclude=exclude, iterations=args.iterations, threshold=args.threshold, seed=args.seed
        )
        err = pose_errors(pose, _rel_pose(cams, 1, 2))
        metrics = {"rot_deg": err.rot_deg, "trans_err": err.trans_err, "inliers": int(inl.sum())}
        params = {"pointmap": args.pointmap, "iterations": args.iterations, "threshold": args.threshold,
                  "exclude_dynamic": bool(args.exclude_dynamic)}
        return _record(pair_dir, metrics, params, args.seed)

    records = _run_pairs(_with_pair(one), args.pairs, args.threads)
    _write_report(args, records, ["rot_deg", "trans_err"])
    return 0


def cmd_eval_flow(args):
    def one(pair_dir):
        X11 = _load_pm(pair_dir, args.x11)
        X21 = _load_pm(pair_dir, args.x21)
        gt = pio.load_flow(_require(pair_dir, FLOW_F))
        _check_shape(_path(pair_dir, args.x21), X21.shape, X11.shape)
        _check_shape(_path(pair_dir, FLOW_F), gt.shape, X11.shape)
        flow = pointmap_to_flow(X11, X21, reject_radius=args.reject_radius, subpixel=not args.integer)
        mask = ~pio.read_pgm(_require(pair_dir, GT_MASKS["Mocc1"]))
        metrics = {"epe": epe(flow, gt, mask), "matched": float(np.mean(flow.valid[X11.valid]))}
        dyn_path = _path(pair_dir, GT_MASKS["Mdyn1"])
        if os.path.exists(dyn_path):
            dyn = pio.read_pgm(dyn_path) & mask
            metrics["epe_dynamic"] = epe(flow, gt, dyn) if (dyn & flow.valid & gt.valid).any() else 0.0
        if args.save_flow:
            pio.write_flo(_path(pair_dir, args.save_flow), flow)
        r = args.reject_radius
        params = {"x11": args.x11, "x21": args.x21, "reject_radius": "auto" if r is None else repr(r),
                  "subpixel": not args.integer}
        return _record(pair_dir, metrics, params, None)

    records = _run_pairs(_with_pair(one), args.pairs, args.threads)
    cols = ["epe"] + (["epe_dynamic"] if all("epe_dynamic" in r["metrics"] for r in records) else [])
    _write_report(args, records, cols)
    return 0


def _write_ply(path, cloud):
    header = (
        "ply\nformat ascii 1.0\n"
        f"element vertex {len(cloud)}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "property double confidence\nproperty int source\nend_header\n"
    )
    with open(path, "w", encoding="ascii") as fh:
        fh.write(header)
        for p, c, s in zip(cloud.points, cloud.confidences, cloud.sources):
            x, y, z = (float(t) for t in p)
            fh.write(f"{x!r} {y!r} {z!r} {float(c)!r} {int(s)}\n")


def cmd_fuse(args):
    def one(pair_dir):
        pm = _load_pm(pair_dir, args.pointmap, tag=args.frame)
        conf = None
        if args.confidence:
            conf = pio.read_pfm(_require(pair_dir, args.confidence)).astype(np.float64)
            _check_shape(_path(pair_dir, args.confidence), conf.shape, pm.shape)
        return pm, conf

    loaded = _run_pairs(_with_pair(one), args.pairs, args.threads)
    pms = [pm for pm, _ in loaded]
    confs = [c if c is not None else np.ones(pm.shape) for pm, c in loaded]
    cloud = bullet_time_fuse(pms, confs, args.min_conf)
    _write_ply(args.cloud, cloud)
    counts = np.bincount(cloud.sources, minlength=len(pms))
    records = [
        _record(p, {"points": int(n)}, {"pointmap": args.pointmap, "min_conf": args.min_conf}, None)
        for p, n in zip(args.pairs, counts)
    ]
    _write_report(args, records, ["points"])
    return 0


# ---------------------------------------------------------------- pairs


def sample_pairs(n_frames, strides):
    """Ordered ``(a, a + s)`` frame pairs for each stride."""
    return [(a, a + s, s) for s in strides for a in range(n_frames - s)]


def cmd_pairs(args):
    pairs = sample_pairs(args.frames, args.strides)
    text = "".join(json.dumps({"frame_a": a, "frame_b": b, "stride": s}) + "\n" for a, b, s in pairs)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    if not args.quiet:
        sys.stdout.write(text)
        print(f"{len(pairs)} pairs")
    return 0


# ---------------------------------------------------------------- parser


def build_parser():
    p = _Parser(prog="pointmap4d", description="Dynamic 4D pointmap supervision and evaluation toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp, report=True):
        sp.add_argument("--threads", type=_positive(int), default=1, help="worker threads over pairs")
        sp.add_argument("-q", "--quiet", action="store_true")
        if report:
            sp.add_argument("--out", help="JSON-lines report path")
            sp.add_argument("--summary", help="write the summary table here as well")

    sp = sub.add_parser("synth-gen", help="render an oracle scene pair")
    sp.add_argument("source", nargs="?", help="scene config JSON path, or 'demo'")
    sp.add_argument("out_dir")
    sp.add_argument("--random-seed", type=int, help="generate a seeded random scene instead")
    sp.add_argument("--width", type=_positive(int), default=64)
    sp.add_argument("--height", type=_positive(int), default=48)
    sp.add_argument("--shapes", choices=("mixed", "spheres", "planes", "cards"), default="mixed")
    sp.add_argument("-q", "--quiet", action="store_true")
    sp.set_defaults(func=cmd_synth_gen)

    sp = sub.add_parser("supervise", help="occlusion/dynamic masks and GT pointmaps from depth, flow and cameras")
    sp.add_argument("pairs", nargs="+")
    sp.add_argument("--t-occ", type=_positive(float), default=DEFAULT_T_OCC)
    sp.add_argument("--tau", type=_positive(float), default=DEFAULT_TAU)
    sp.add_argument("--out-name", default=SUPERVISION_DIR, help="output subdirectory inside each pair")
    common(sp)
    sp.set_defaults(func=cmd_supervise)

    sp = sub.add_parser("fit", help="fit pointmaps and confidences to a pair's supervision")
    sp.add_argument("pairs", nargs="+")
    sp.add_argument("--steps", type=_positive(int), default=2000)
    sp.add_argument("--step-size", type=_positive(float), default=1e-2)
    sp.add_argument("--alpha", type=_positive(float), default=DEFAULT_ALPHA)
    sp.add_argument("--init", choices=("gt", "gt-noise", "rigid"), default="gt-noise")
    sp.add_argument("--noise", type=float, default=0.02, help="noise std as a fraction of the mean point norm")
    sp.add_argument("--masks", choices=("oracle", "supervised"), default="oracle")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-name", default="fit", help="output subdirectory inside each pair")
    common(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("eval-depth", help="AbsRel and delta_1 with affine alignment")
    sp.add_argument("pairs", nargs="+")
    sp.add_argument("--pred", default="fit/X11.pfm", help="predicted depth or pointmap PFM inside each pair")
    sp.add_argument("--gt", default=DEPTH1)
    sp.add_argument("--no-align", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_eval_depth)

    sp = sub.add_parser("eval-pose", help="camera-2 pose by PnP-RANSAC from a view-2 pointmap")
    sp.add_argument("pairs", nargs="+")
    sp.add_argument("--pointmap", default="X21_rigid.pfm")
    sp.add_argument("--iterations", type=_positive(int), default=1000)
    sp.add_argument("--threshold", type=_positive(float), default=2.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--exclude-dynamic", action="store_true", help="drop dynamic pixels from the correspondences")
    sp.add_argument("--dynamic-mask", default=GT_MASKS["Mdyn2"])
    common(sp)
    sp.set_defaults(func=cmd_eval_pose)

    sp = sub.add_parser("eval-flow", help="EPE of flow derived from a pair of pointmaps")
    sp.add_argument("pairs", nargs="+")
    sp.add_argument("--x11", default="X11.pfm")
    sp.add_argument("--x21", default="X21.pfm")
    sp.add_argument("--reject-radius", type=_radius, default=None, help="'auto', 'inf' or a distance")
    sp.add_argument("--integer", action="store_true", help="skip sub-pixel refinement")
    sp.add_argument("--save-flow", help="also write the derived flow (.flo) inside each pair")
    common(sp)
    sp.set_defaults(func=cmd_eval_flow)

    sp = sub.add_parser("fuse", help="bullet-time fusion of pointmaps sharing a reference frame")
    sp.add_argument("pairs", nargs="+")
    sp.add_argument("--cloud", required=True, help="output ASCII PLY path")
    sp.add_argument("--pointmap", default="X21.pfm")
    sp.add_argument("--confidence", help="confidence PFM inside each pair")
    sp.add_argument("--min-conf", type=float, default=1.0)
    sp.add_argument("--frame", default="cam1@t1", help="reference frame tag shared by the inputs")
    common(sp)
    sp.set_defaults(func=cmd_fuse)

    sp = sub.add_parser("pairs", help="list evaluation pairs for a frame sequence")
    sp.add_argument("--frames", type=_positive(int), required=True)
    sp.add_argument("--strides", type=_strides, default=[1, 3, 5, 7, 9])
    sp.add_argument("--out")
    sp.add_argument("-q", "--quiet", action="store_true")
    sp.set_defaults(func=cmd_pairs)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"pointmap4d: error: {exc}", file=sys.stderr)
        return 1
    except Pointmap4DError as exc:
        print(f"pointmap4d: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"pointmap4d: input error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
