import json

import numpy as np
import pytest

from omnistereo.cli import main as cli_main
from omnistereo.formats import read_depth, read_ply, read_volume
from omnistereo.pipeline import point_cloud, render_panorama
from omnistereo.sgm import InverseDepthMap
from omnistereo.sweep import SphereGrid, build_rig_frame, inverse_depth
from omnistereo.synth import (ConcentricScene, SphereScene, gt_depth_map,
                              render_fisheye)


def make_depth(index, grid, mask=None):
    index = np.asarray(index, dtype=np.int32)
    inv = np.asarray(inverse_depth(index, grid), dtype=float)
    if mask is None:
        mask = np.ones(index.shape, dtype=bool)
    return InverseDepthMap(index=index, inv_depth=inv, depth=1.0 / inv, mask=mask)


class TestPanorama:
    def test_ground_truth_depth_reproduces_texture(self, intr220, rig4):
        # sphere painted exactly at a sweep radius: the ground-truth depth map
        # carries no quantization, so the panorama must match the texture up
        # to bilinear sampling error
        grid = SphereGrid(width=200, height=60, n_spheres=48, d_min=1.2)
        n_true = 9
        scene = SphereScene(radius=1.0 / inverse_depth(n_true, grid))
        frame = build_rig_frame(rig4)
        images = [render_fisheye(scene, intr220, p)[0] for p in rig4]
        gt = gt_depth_map(scene, grid, origin=frame.origin)
        assert (gt.index == n_true).all()
        pano, mask = render_panorama(gt, images, [intr220] * 4, frame, grid)
        want = scene.texture(grid.ray_grid())
        assert mask.mean() > 0.9
        assert np.abs(pano - want)[mask].max() < 2e-3

    def test_quantized_depth_panorama_close_on_room_scene(self, intr220, rig4):
        grid = SphereGrid(width=200, height=60, n_spheres=48, d_min=1.2)
        scene = ConcentricScene()
        frame = build_rig_frame(rig4)
        images = [render_fisheye(scene, intr220, p)[0] for p in rig4]
        gt = gt_depth_map(scene, grid, origin=frame.origin)
        pano, mask = render_panorama(gt, images, [intr220] * 4, frame, grid)
        dirs = grid.ray_grid()
        t = scene.distances(frame.origin, dirs)
        want = scene.shade(frame.origin, dirs, t)
        assert mask.mean() > 0.9
        # index quantization moves the sample point slightly off the surface
        assert np.abs(pano - want)[mask].mean() < 5e-3

    def test_infinity_pixels_sample_along_ray(self, intr220, rig4):
        grid = SphereGrid(width=120, height=40, n_spheres=8, d_min=1.0)
        scene = SphereScene(radius=np.inf)
        frame = build_rig_frame(rig4)
        images = [render_fisheye(scene, intr220, p)[0] for p in rig4]
        depth = make_depth(np.zeros((40, 120), dtype=np.int32), grid)
        pano, mask = render_panorama(depth, images, [intr220] * 4, frame, grid)
        want = scene.texture(grid.ray_grid())
        assert mask.mean() > 0.95
        assert np.abs(pano - want)[mask].max() < 1e-3

    def test_all_invalid_depth_gives_invalid_panorama(self, intr220, rig4):
        grid = SphereGrid(width=30, height=10, n_spheres=4, d_min=1.0)
        frame = build_rig_frame(rig4)
        images = [np.ones((intr220.height, intr220.width))] * 4
        depth = make_depth(np.ones((10, 30), dtype=np.int32), grid,
                           mask=np.zeros((10, 30), dtype=bool))
        pano, mask = render_panorama(depth, images, [intr220] * 4, frame, grid)
        assert not mask.any()


class TestPointCloud:
    # odd sizes put a pixel exactly on (theta, phi) = (0, 0)
    GRID = SphereGrid(width=5, height=3, n_spheres=8, d_min=1.0)

    def test_single_pixel_along_x_axis(self):
        index = np.zeros((3, 5), dtype=np.int32)
        mask = np.zeros((3, 5), dtype=bool)
        # theta=0 at column (W-1)/2, phi=0 at row (H-1)/2
        index[1, 2] = 4  # inverse depth 4/7 -> depth 1.75 m... use exact value
        mask[1, 2] = True
        depth = make_depth(index, self.GRID, mask)
        pts, inten = point_cloud(depth, self.GRID)
        assert pts.shape == (1, 3)
        d = 1.0 / inverse_depth(4, self.GRID)
        assert np.allclose(pts[0], [d, 0.0, 0.0], atol=1e-12)

    def test_count_excludes_infinity_and_invalid(self):
        rng = np.random.default_rng(0)
        index = rng.integers(0, 8, size=(3, 5)).astype(np.int32)
        mask = rng.uniform(size=(3, 5)) > 0.3
        depth = make_depth(index, self.GRID, mask)
        pts, _ = point_cloud(depth, self.GRID)
        assert pts.shape[0] == int(np.count_nonzero(mask & (index > 0)))

    def test_ply_reprojects_to_original_pixels(self, tmp_path):
        from omnistereo.formats import write_ply
        grid = SphereGrid(width=64, height=32, n_spheres=16, d_min=1.0,
                          phi_min=-0.7, phi_max=0.7)
        rng = np.random.default_rng(1)
        index = rng.integers(1, 16, size=(32, 64)).astype(np.int32)
        depth = make_depth(index, grid)
        pts, inten = point_cloud(depth, grid)
        p = tmp_path / "c.ply"
        write_ply(p, pts, inten)
        pts2, _ = read_ply(p)
        # map back to grid coordinates
        theta = np.arctan2(pts2[:, 2], pts2[:, 0])
        phi = np.arcsin(np.clip(pts2[:, 1] / np.linalg.norm(pts2, axis=1), -1, 1))
        cols = (theta + np.pi) / (2 * np.pi / grid.width) - 0.5
        rows = (grid.phi_max - phi) / ((grid.phi_max - grid.phi_min) / grid.height) - 0.5
        want_rows, want_cols = np.nonzero(np.ones((32, 64), dtype=bool))
        assert np.abs(cols - want_cols).max() < 1e-6
        assert np.abs(rows - want_rows).max() < 1e-6


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    """synth -> sweep -> cost -> depth -> eval on a small grid."""
    root = tmp_path_factory.mktemp("cli")
    scene_dir = root / "scene"
    grid_flags = ["--width", "160", "--height", "48", "--n-spheres", "24",
                  "--d-min", "1.2"]
    assert cli_main(["synth", "--out", str(scene_dir)] + grid_flags) == 0
    images = [str(scene_dir / f"cam{i}.png") for i in range(4)]
    rig = str(scene_dir / "rig.json")
    return root, scene_dir, images, rig, grid_flags


class TestCli:
    def test_full_pipeline(self, cli_workspace):
        root, scene_dir, images, rig, grid_flags = cli_workspace
        sweep_dir = root / "sweep"
        assert cli_main(["sweep", "--rig", rig, "--images", *images,
                         "--out", str(sweep_dir)] + grid_flags) == 0
        osph = sorted(sweep_dir.glob("*.osph"))
        assert len(osph) == 4 * 24

        vol_path = root / "vol.ocsv"
        assert cli_main(["cost", "--rig", rig, "--images", *images,
                         "--out", str(vol_path)] + grid_flags) == 0
        vol = read_volume(vol_path)
        assert vol.data.shape == (24, 48, 160)

        # the same volume built from the OSPH files must match
        vol2_path = root / "vol2.ocsv"
        assert cli_main(["cost", "--sweep-dir", str(sweep_dir),
                         "--out", str(vol2_path)] + grid_flags) == 0
        vol2 = read_volume(vol2_path)
        assert np.array_equal(vol2.mask, vol.mask)
        # the OSPH path stores warps as float32 before matching
        assert np.abs(vol2.data - vol.data)[vol.mask].max() < 1e-6

        depth_path = root / "depth.ocsv"
        assert cli_main(["depth", "--volume", str(vol_path), "--out",
                         str(depth_path), "--p1", "0.1", "--p2", "12"]) == 0
        metrics_path = root / "metrics.json"
        assert cli_main(["eval", "--pred", str(depth_path),
                         "--gt", str(scene_dir / "gt_depth.ocsv"),
                         "--out", str(metrics_path)]) == 0
        metrics = json.loads(metrics_path.read_text())
        assert metrics["mae"] < 3.0
        assert metrics["valid_pixels"] > 0.8 * 48 * 160

        pano_path = root / "pano.png"
        assert cli_main(["panorama", "--depth", str(depth_path), "--rig", rig,
                         "--images", *images, "--out", str(pano_path)]) == 0
        assert pano_path.exists()

        cloud_path = root / "cloud.ply"
        assert cli_main(["cloud", "--depth", str(depth_path),
                         "--intensity", str(pano_path),
                         "--out", str(cloud_path)]) == 0
        pts, _ = read_ply(cloud_path)
        depth_map, grid = read_depth(depth_path)
        assert pts.shape[0] == int(np.count_nonzero(depth_map.mask & (depth_map.index > 0)))

    def test_depth_deterministic_bytes(self, cli_workspace):
        root, scene_dir, images, rig, grid_flags = cli_workspace
        vol_path = root / "det_vol.ocsv"
        assert cli_main(["cost", "--rig", rig, "--images", *images,
                         "--out", str(vol_path)] + grid_flags) == 0
        d1 = root / "det1.ocsv"
        d2 = root / "det2.ocsv"
        assert cli_main(["depth", "--volume", str(vol_path), "--out", str(d1)]) == 0
        assert cli_main(["depth", "--volume", str(vol_path), "--out", str(d2)]) == 0
        assert d1.read_bytes() == d2.read_bytes()
        assert (root / "det1.ocsv.json").read_bytes() == (root / "det2.ocsv.json").read_bytes()

    def test_no_aggregate_flag(self, cli_workspace):
        root, scene_dir, images, rig, grid_flags = cli_workspace
        vol_path = root / "det_vol.ocsv"
        if not vol_path.exists():
            assert cli_main(["cost", "--rig", rig, "--images", *images,
                             "--out", str(vol_path)] + grid_flags) == 0
        raw_path = root / "raw.ocsv"
        assert cli_main(["depth", "--volume", str(vol_path), "--out", str(raw_path),
                         "--no-aggregate"]) == 0
        raw, _ = read_depth(raw_path)
        vol = read_volume(vol_path)
        idx = np.argmin(np.where(vol.mask, vol.data, np.inf), axis=0)
        valid = vol.mask.any(axis=0)
        assert np.array_equal(raw.index[valid], idx[valid].astype(np.int32))

    def test_depth_flag_defaults_match_published_penalties(self):
        from omnistereo.cli import build_parser
        args = build_parser().parse_args(["depth", "--volume", "v", "--out", "d"])
        assert args.p1 == 0.1
        assert args.p2 == 12.0
        assert args.paths == 8
        assert not args.no_wrap

    def test_eval_identical_maps_gives_zero_metrics(self, cli_workspace, capsys):
        root, scene_dir, images, rig, grid_flags = cli_workspace
        gt = str(scene_dir / "gt_depth.ocsv")
        assert cli_main(["eval", "--pred", gt, "--gt", gt]) == 0
        metrics = json.loads(capsys.readouterr().out)
        assert metrics["mae"] == 0.0
        assert metrics["rms"] == 0.0
        assert metrics[">1"] == metrics[">3"] == metrics[">5"] == 0.0

    def test_missing_file_is_input_error(self, tmp_path):
        assert cli_main(["depth", "--volume", str(tmp_path / "nope.ocsv"),
                         "--out", str(tmp_path / "d.ocsv")]) == 1

    def test_bad_flag_combination(self, tmp_path):
        assert cli_main(["cost", "--out", str(tmp_path / "v.ocsv")]) == 1

    def test_external_cost_path(self, cli_workspace):
        root, scene_dir, images, rig, grid_flags = cli_workspace
        vol_path = root / "det_vol.ocsv"
        if not vol_path.exists():
            assert cli_main(["cost", "--rig", rig, "--images", *images,
                             "--out", str(vol_path)] + grid_flags) == 0
        vol = read_volume(vol_path)
        ext_dir = root / "external"
        ext_dir.mkdir(exist_ok=True)
        from omnistereo.formats import write_ocsv
        write_ocsv(ext_dir / "pair_0_1.ocsv", vol.data, vol.mask)
        out = root / "ext_vol.ocsv"
        assert cli_main(["cost", "--cost", "external", "--external-dir", str(ext_dir),
                         "--out", str(out)] + grid_flags) == 0
        ext = read_volume(out)
        assert np.array_equal(ext.mask, vol.mask)
        assert np.array_equal(ext.data, vol.data)

    def test_calibrate_command(self, tmp_path, intr220, rig4):
        from omnistereo.calibration import CheckerboardSpec
        from omnistereo.formats import read_rig, write_corners, write_intrinsics
        from omnistereo.synth import generate_calibration_set
        board = CheckerboardSpec(cols=8, rows=6, square_m=0.08)
        obs, _ = generate_calibration_set([intr220] * 4, rig4, board,
                                          n_boards=10, seed=4)
        corners = tmp_path / "corners.json"
        write_corners(corners, board, obs)
        intr_path = tmp_path / "intr.json"
        write_intrinsics(intr_path, [intr220] * 4)
        rig_out = tmp_path / "rig.json"
        assert cli_main(["calibrate", "--corners", str(corners),
                         "--intrinsics", str(intr_path), "--out", str(rig_out)]) == 0
        intr2, poses, frame = read_rig(rig_out)
        assert len(intr2) == 4 and frame is not None
