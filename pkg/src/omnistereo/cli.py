"""Command-line interface for the omnidirectional depth pipeline."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import formats, pipeline, synth
from .calibration import calibrate_rig
from .camera import ProjectionError
from .cost import (PairSelection, fuse, fuse_pair_volumes, load_external_cost_maps,
                   zncc_cost)
from .lm import ConvergenceError, LMConfig
from .sgm import SgmParams, compute_metrics, error_map
from .sweep import SphereGrid, build_rig_frame

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERIC = 2


def _add_grid_args(p):
    p.add_argument("--width", type=int, default=400, help="spherical image width")
    p.add_argument("--height", type=int, default=100, help="spherical image height")
    p.add_argument("--n-spheres", type=int, default=64, help="number of sweep spheres")
    p.add_argument("--d-min", type=float, default=1.2, help="minimum depth in meters")
    p.add_argument("--phi-min", type=float, default=-45.0, help="min elevation (degrees)")
    p.add_argument("--phi-max", type=float, default=45.0, help="max elevation (degrees)")


def _grid_from_args(args):
    return SphereGrid(width=args.width, height=args.height, n_spheres=args.n_spheres,
                      d_min=args.d_min, phi_min=np.deg2rad(args.phi_min),
                      phi_max=np.deg2rad(args.phi_max))


def _parse_pairs(spec_str, n_cams, min_overlap):
    if spec_str == "all":
        return PairSelection.all_pairs(n_cams, min_overlap)
    pairs = []
    for token in spec_str.split(","):
        a, b = token.split("-")
        pairs.append((int(a), int(b)))
    return PairSelection(pairs, min_overlap)


def _load_rig(path):
    intrinsics, poses, frame = formats.read_rig(path)
    if frame is None:
        frame = build_rig_frame(poses)
    return intrinsics, poses, frame


def _load_images(paths, intrinsics):
    if len(paths) != len(intrinsics):
        raise ValueError(f"{len(paths)} images given for {len(intrinsics)} cameras")
    images = []
    for p, intr in zip(paths, intrinsics):
        img = formats.load_image(p)
        if img.shape != (intr.height, intr.width):
            raise ValueError(f"{p}: image is {img.shape[::-1]}, intrinsics expect "
                             f"{(intr.width, intr.height)}")
        images.append(img)
    return images


def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = _grid_from_args(args)
    intr = synth.default_intrinsics()
    intrinsics = [intr] * 4
    poses = synth.square_rig(side=args.rig_side)
    scene = synth.ConcentricScene.scaled(args.scene_scale, ground_y=args.ground_y)
    ext = "pgm" if args.pgm else "png"
    for i, pose in enumerate(poses):
        img, _ = synth.render_fisheye(scene, intr, pose)
        formats.save_image(out / f"cam{i}.{ext}", img, bits=16)
    frame = build_rig_frame(poses)
    formats.write_rig(out / "rig.json", intrinsics, poses, rig_frame=frame)
    gt = synth.gt_depth_map(scene, grid, origin=frame.origin)
    formats.write_depth(out / "gt_depth.ocsv", gt, grid)
    print(f"wrote {out}/cam0..3.{ext}, rig.json, gt_depth.ocsv")
    return EXIT_OK


def cmd_calibrate(args):
    board, obs = formats.read_corners(args.corners)
    intrinsics = formats.read_intrinsics(args.intrinsics)
    config = LMConfig(max_iters=args.max_iters)
    calib = calibrate_rig(obs, board, intrinsics, config,
                          refine_intrinsics=not args.no_refine_intrinsics,
                          huber_px=args.huber)
    frame = build_rig_frame(calib.poses)
    formats.write_rig(args.out, calib.intrinsics, calib.poses, rig_frame=frame,
                      report=calib.report)
    print(json.dumps({
        "rmse_px": calib.report.rmse_px,
        "per_camera_rmse_px": {str(k): v for k, v in calib.report.per_camera_rmse_px.items()},
        "iterations": calib.report.iterations,
        "converged": calib.report.converged,
    }, indent=2))
    if not calib.report.converged:
        print("warning: bundle adjustment hit the iteration limit", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args):
    intrinsics, _, frame = _load_rig(args.rig)
    images = _load_images(args.images, intrinsics)
    if not args.no_normalize:
        images = pipeline.normalize_inputs(images, intrinsics)
    grid = _grid_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    count = 0
    for i, n, sph in pipeline.sweep_all(images, intrinsics, frame, grid):
        formats.write_osph(out / f"sphere_{i:02d}_{n:04d}.osph", sph)
        count += 1
    with open(out / "grid.json", "w") as f:
        json.dump({"format": "omnistereo-grid", "version": 1, "grid": grid.to_dict()},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote {count} spherical images to {out}")
    return EXIT_OK


def cmd_cost(args):
    if args.cost == "external":
        if not args.external_dir:
            raise ValueError("--external-dir is required with --cost external")
        grid = _read_grid_sidecar(args.sweep_dir) if args.sweep_dir else None
        if grid is None:
            grid = _grid_from_args(args)
        maps = load_external_cost_maps(args.external_dir, grid)
        volume = fuse_pair_volumes(maps, grid)
    elif args.sweep_dir:
        volume = _volume_from_osph_dir(args.sweep_dir, args.window, args.pairs,
                                       args.min_overlap)
    else:
        if not (args.rig and args.images):
            raise ValueError("either --sweep-dir or --rig with --images is required")
        intrinsics, _, frame = _load_rig(args.rig)
        images = _load_images(args.images, intrinsics)
        grid = _grid_from_args(args)
        pairs = _parse_pairs(args.pairs, len(images), args.min_overlap)
        volume = pipeline.zncc_volume(images, intrinsics, frame, grid,
                                      window=args.window, pairs=pairs,
                                      normalize=not args.no_normalize)
    formats.write_volume(args.out, volume)
    print(f"wrote cost volume {args.out} "
          f"({volume.data.shape[2]}x{volume.data.shape[1]}x{volume.data.shape[0]})")
    return EXIT_OK


def _read_grid_sidecar(path):
    sidecar = Path(path) / "grid.json"
    if not sidecar.exists():
        return None
    with open(sidecar) as f:
        doc = json.load(f)
    if doc.get("format") != "omnistereo-grid":
        raise formats.FormatError(f"{sidecar} is not a grid descriptor")
    return SphereGrid.from_dict(doc["grid"])


def _volume_from_osph_dir(path, window, pairs_spec, min_overlap):
    from .cost import CostVolume
    files = sorted(Path(path).glob("sphere_*.osph"))
    if not files:
        raise ValueError(f"no sphere_*.osph files in {path}")
    by_key = {}
    for f in files:
        sph = formats.read_osph(f)
        by_key[(sph.camera_id, sph.sphere_index)] = sph
    cams = sorted({c for c, _ in by_key})
    spheres = sorted({n for _, n in by_key})
    H, W = next(iter(by_key.values())).data.shape
    pairs = _parse_pairs(pairs_spec, len(cams), min_overlap)
    data = np.zeros((len(spheres), H, W), dtype=np.float32)
    mask = np.zeros((len(spheres), H, W), dtype=bool)
    npix = float(H * W)
    for n in spheres:
        maps = []
        for (i, j) in pairs.pairs:
            a, b = by_key.get((i, n)), by_key.get((j, n))
            if a is None or b is None:
                raise ValueError(f"missing spherical image for camera {i if a is None else j} "
                                 f"sphere {n}")
            if np.count_nonzero(a.mask & b.mask) / npix < pairs.min_overlap:
                continue
            maps.append(zncc_cost(a, b, window))
        if maps:
            fused = fuse(maps)
            data[n] = fused.data.astype(np.float32)
            mask[n] = fused.mask
    grid = _read_grid_sidecar(path)
    if grid is None:
        # OSPH headers carry no sweep geometry; indices still evaluate correctly
        grid = SphereGrid(width=W, height=H, n_spheres=len(spheres), d_min=1.0)
    return CostVolume(data=data, mask=mask, grid=grid)


def cmd_depth(args):
    volume = formats.read_volume(args.volume)
    if args.no_aggregate:
        depth = pipeline.depth_from_volume(volume, aggregate=False)
    else:
        params = SgmParams(p1=args.p1, p2=args.p2, paths=args.paths,
                           wrap_horizontal=not args.no_wrap)
        depth = pipeline.depth_from_volume(volume, params)
    formats.write_depth(args.out, depth, volume.grid)
    valid = int(np.count_nonzero(depth.mask))
    print(f"wrote {args.out}: {valid} valid pixels "
          f"of {depth.mask.size} ({100.0 * valid / depth.mask.size:.1f}%)")
    return EXIT_OK


def cmd_eval(args):
    pred, grid_p = formats.read_depth(args.pred)
    gt, grid_g = formats.read_depth(args.gt)
    if grid_p.to_dict() != grid_g.to_dict():
        raise ValueError("prediction and ground truth grids differ")
    errors, mask = error_map(pred, gt, grid_p.n_spheres)
    metrics = compute_metrics(errors, mask)
    doc = metrics.to_dict()
    doc["valid_pixels"] = int(np.count_nonzero(mask))
    text = json.dumps(doc, indent=2)
    print(text)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    return EXIT_OK


def cmd_panorama(args):
    intrinsics, _, frame = _load_rig(args.rig)
    images = _load_images(args.images, intrinsics)
    depth, grid = formats.read_depth(args.depth)
    pano, mask = pipeline.render_panorama(depth, images, intrinsics, frame, grid)
    formats.save_image(args.out, np.where(mask, pano, 0.0), bits=args.bits)
    print(f"wrote {args.out} ({np.count_nonzero(mask)} valid pixels)")
    return EXIT_OK


def cmd_cloud(args):
    depth, grid = formats.read_depth(args.depth)
    intensity = formats.load_image(args.intensity) if args.intensity else None
    pts, inten = pipeline.point_cloud(depth, grid, intensity)
    formats.write_ply(args.out, pts, inten, binary=not args.ascii)
    print(f"wrote {args.out} ({pts.shape[0]} points)")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="omnistereo",
                                 description="360-degree fisheye rig depth pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the analytic test scene")
    p.add_argument("--out", required=True)
    p.add_argument("--rig-side", type=float, default=0.3)
    p.add_argument("--ground-y", type=float, default=-1.6)
    p.add_argument("--scene-scale", type=float, default=1.0,
                   help="uniform scale applied to the scene geometry")
    p.add_argument("--pgm", action="store_true", help="write PGM instead of PNG")
    _add_grid_args(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="bundle-adjust a rig from corner observations")
    p.add_argument("--corners", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-refine-intrinsics", action="store_true")
    p.add_argument("--huber", type=float, default=None,
                   help="Huber threshold in pixels (default: plain squared error)")
    p.add_argument("--max-iters", type=int, default=200)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", help="warp input images onto the sweep spheres")
    p.add_argument("--rig", required=True)
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-normalize", action="store_true")
    _add_grid_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("cost", help="build the fused matching cost volume")
    p.add_argument("--rig")
    p.add_argument("--images", nargs="+")
    p.add_argument("--sweep-dir", help="directory of OSPH files from `sweep`")
    p.add_argument("--cost", choices=("zncc", "external"), default="zncc")
    p.add_argument("--external-dir", help="directory of pair_<i>_<j>.ocsv files")
    p.add_argument("--window", type=int, default=9)
    p.add_argument("--pairs", default="all", help='"all" or pairs like "0-1,0-2"')
    p.add_argument("--min-overlap", type=float, default=0.05)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--out", required=True)
    _add_grid_args(p)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("depth", help="aggregate the volume and extract inverse depth")
    p.add_argument("--volume", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--p1", type=float, default=0.1)
    p.add_argument("--p2", type=float, default=12.0)
    p.add_argument("--paths", type=int, choices=(4, 8), default=8)
    p.add_argument("--no-wrap", action="store_true")
    p.add_argument("--no-aggregate", action="store_true",
                   help="winner-takes-all on the raw volume (skip SGM)")
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("eval", help="compare two depth maps")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("panorama", help="reproject input images through the depth map")
    p.add_argument("--depth", required=True)
    p.add_argument("--rig", required=True)
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bits", type=int, choices=(8, 16), default=8)
    p.set_defaults(func=cmd_panorama)

    p = sub.add_parser("cloud", help="export the depth map as a PLY point cloud")
    p.add_argument("--depth", required=True)
    p.add_argument("--intensity", help="image sampled for point intensities")
    p.add_argument("--out", required=True)
    p.add_argument("--ascii", action="store_true")
    p.set_defaults(func=cmd_cloud)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConvergenceError, ProjectionError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (formats.FormatError, FileNotFoundError, NotADirectoryError, KeyError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
