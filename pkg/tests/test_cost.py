import numpy as np
import pytest

from omnistereo.cost import (CostMap, PairSelection, build_cost_volume, fuse,
                             fuse_pair_volumes, load_external_cost_maps,
                             normalize_image, zncc_cost)
from omnistereo.formats import FormatError, write_ocsv
from omnistereo.sweep import SphereGrid, SphericalImage, build_rig_frame, inverse_depth
from omnistereo.synth import SphereScene, render_fisheye


def make_sph(data, mask=None, **kw):
    data = np.asarray(data, dtype=float)
    if mask is None:
        mask = np.ones(data.shape, dtype=bool)
    return SphericalImage(data=data, mask=mask, **kw)


def zncc_oracle(a, b, amask, bmask, window):
    """Direct per-pixel covariance formula with circular columns."""
    H, W = a.shape
    r = window // 2
    out = np.zeros((H, W))
    ok = np.zeros((H, W), dtype=bool)
    for y in range(r, H - r):
        for x in range(W):
            cols = [(x + dx) % W for dx in range(-r, r + 1)]
            pa = a[y - r: y + r + 1][:, cols]
            pb = b[y - r: y + r + 1][:, cols]
            ma = amask[y - r: y + r + 1][:, cols]
            mb = bmask[y - r: y + r + 1][:, cols]
            if not (ma.all() and mb.all()):
                continue
            va = pa.var()
            vb = pb.var()
            if va < 1e-12 or vb < 1e-12:
                continue
            cov = ((pa - pa.mean()) * (pb - pb.mean())).mean()
            z = min(1.0, max(-1.0, cov / np.sqrt(va * vb)))
            out[y, x] = (1.0 - z) / 2.0
            ok[y, x] = True
    return out, ok


class TestNormalize:
    def test_constant_image_flagged(self):
        out, degenerate = normalize_image(np.full((8, 8), 3.7))
        assert degenerate
        assert (out == 0.0).all()

    def test_zero_mean_unit_variance(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(0.0, 1.0, size=(40, 50))
        mask = rng.uniform(size=img.shape) > 0.2
        out, degenerate = normalize_image(img, mask)
        assert not degenerate
        assert abs(out[mask].mean()) < 1e-9
        assert abs(out[mask].var() - 1.0) < 1e-9
        assert (out[~mask] == 0.0).all()

    def test_affine_invariance(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(size=(20, 30))
        base, _ = normalize_image(img)
        scaled, _ = normalize_image(1.7 * img + 42.0)
        assert np.abs(base - scaled).max() < 1e-9

    def test_empty_valid_set_rejected(self):
        with pytest.raises(ValueError):
            normalize_image(np.ones((4, 4)), np.zeros((4, 4), dtype=bool))


class TestZncc:
    def test_identical_patches_cost_zero(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(size=(20, 40))
        cm = zncc_cost(make_sph(img), make_sph(img.copy()), window=9)
        assert cm.mask[4:16].all()
        assert np.abs(cm.data[cm.mask]).max() < 1e-12

    def test_negated_patches_cost_one(self):
        rng = np.random.default_rng(3)
        img = rng.uniform(size=(20, 40))
        cm = zncc_cost(make_sph(img), make_sph(-img), window=9)
        assert np.abs(cm.data[cm.mask] - 1.0).max() < 1e-12

    def test_matches_direct_formula_oracle(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(size=(15, 22))
        b = rng.uniform(size=(15, 22))
        amask = rng.uniform(size=a.shape) > 0.1
        bmask = rng.uniform(size=b.shape) > 0.1
        cm = zncc_cost(make_sph(a, amask), make_sph(b, bmask), window=5)
        want, ok = zncc_oracle(a * amask, b * bmask, amask, bmask, 5)
        assert np.array_equal(cm.mask, ok)
        assert np.abs(cm.data - want).max() < 1e-10

    def test_border_rows_invalid(self):
        img = np.random.default_rng(5).uniform(size=(12, 30))
        cm = zncc_cost(make_sph(img), make_sph(img), window=9)
        assert not cm.mask[:4].any()
        assert not cm.mask[-4:].any()

    def test_affine_intensity_invariance(self):
        rng = np.random.default_rng(6)
        a = rng.uniform(size=(18, 25))
        b = rng.uniform(size=(18, 25))
        base = zncc_cost(make_sph(a), make_sph(b), window=7)
        tweak = zncc_cost(make_sph(1.9 * a - 12.0), make_sph(0.55 * b + 30.0), window=7)
        assert np.array_equal(base.mask, tweak.mask)
        assert np.abs(base.data - tweak.data)[base.mask].max() < 1e-6

    def test_column_rotation_equivariance(self):
        rng = np.random.default_rng(7)
        a = rng.uniform(size=(14, 31))
        b = rng.uniform(size=(14, 31))
        base = zncc_cost(make_sph(a), make_sph(b), window=5)
        for k in (1, 9, 30):
            rot = zncc_cost(make_sph(np.roll(a, k, axis=1)),
                            make_sph(np.roll(b, k, axis=1)), window=5)
            assert np.array_equal(rot.data, np.roll(base.data, k, axis=1))
            assert np.array_equal(rot.mask, np.roll(base.mask, k, axis=1))

    def test_textureless_patch_invalid(self):
        a = np.ones((11, 20))
        a[5, 7] = 1.0  # stays constant
        b = np.random.default_rng(8).uniform(size=(11, 20))
        cm = zncc_cost(make_sph(a), make_sph(b), window=5)
        assert not cm.mask.any()

    def test_input_validation(self):
        img = np.zeros((10, 12))
        with pytest.raises(ValueError):
            zncc_cost(make_sph(img), make_sph(np.zeros((10, 13))))
        with pytest.raises(ValueError):
            zncc_cost(make_sph(img), make_sph(img), window=4)
        with pytest.raises(ValueError):
            zncc_cost(make_sph(img), make_sph(img), window=1)


class TestFuse:
    def test_mean_of_two(self):
        a = CostMap(np.full((3, 3), 0.2), np.ones((3, 3), dtype=bool))
        b = CostMap(np.full((3, 3), 0.4), np.ones((3, 3), dtype=bool))
        out = fuse([a, b])
        assert np.allclose(out.data, 0.3)

    def test_invalid_entries_skipped(self):
        a = CostMap(np.full((2, 2), 0.8), np.array([[True, True], [False, True]]))
        b = CostMap(np.full((2, 2), 0.2), np.array([[True, False], [False, False]]))
        out = fuse([a, b])
        assert out.data[0, 0] == pytest.approx(0.5)
        assert out.data[0, 1] == 0.8
        assert not out.mask[1, 0]
        assert out.data[1, 1] == 0.8

    def test_matches_scalar_mean_oracle(self):
        rng = np.random.default_rng(9)
        maps = [CostMap(rng.uniform(size=(6, 7)), rng.uniform(size=(6, 7)) > 0.3)
                for _ in range(6)]
        out = fuse(maps)
        for y in range(6):
            for x in range(7):
                vals = sorted(m.data[y, x] for m in maps if m.mask[y, x])
                if not vals:
                    assert not out.mask[y, x]
                    continue
                acc = 0.0
                for v in vals:
                    acc += v
                assert out.data[y, x] == acc / len(vals)

    def test_permutation_invariance_exact(self):
        rng = np.random.default_rng(10)
        maps = [CostMap(rng.uniform(size=(5, 8)), rng.uniform(size=(5, 8)) > 0.2)
                for _ in range(5)]
        base = fuse(maps)
        for perm_seed in range(4):
            perm = np.random.default_rng(perm_seed).permutation(5)
            out = fuse([maps[i] for i in perm])
            assert np.array_equal(out.data, base.data)
            assert np.array_equal(out.mask, base.mask)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            fuse([])


class TestPairSelection:
    def test_all_pairs(self):
        sel = PairSelection.all_pairs(4)
        assert sel.pairs == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]

    def test_validation(self):
        with pytest.raises(ValueError):
            PairSelection([(1, 1)])
        with pytest.raises(ValueError):
            PairSelection([(0, 1), (1, 0)])


VOLUME_GRID = SphereGrid(width=120, height=40, n_spheres=8, d_min=1.0)


@pytest.fixture(scope="module")
def sphere_setup(intr220, rig4):
    n_true = 5
    radius = 1.0 / inverse_depth(n_true, VOLUME_GRID)
    scene = SphereScene(radius=radius)
    images = [render_fisheye(scene, intr220, p)[0] for p in rig4]
    frame = build_rig_frame(rig4)
    return images, frame, n_true


class TestBuildVolume:
    GRID = VOLUME_GRID

    def test_two_cameras_volume_is_single_pair_map(self, intr220, rig4, sphere_setup):
        images, frame, _ = sphere_setup
        vol = build_cost_volume(images[:2], [intr220] * 2, frame, self.GRID, window=5)
        from omnistereo.sweep import warp
        for n in (0, 3, 7):
            a = warp(images[0], intr220, frame.cam_from_rig[0], n, self.GRID)
            b = warp(images[1], intr220, frame.cam_from_rig[1], n, self.GRID)
            cm = zncc_cost(a, b, window=5)
            assert np.array_equal(vol.mask[n], cm.mask)
            assert np.abs(vol.data[n] - cm.data.astype(np.float32)).max() < 1e-7

    def test_painted_sphere_argmin_at_true_index(self, intr220, rig4, sphere_setup):
        images, frame, n_true = sphere_setup
        vol = build_cost_volume(images, [intr220] * 4, frame, self.GRID, window=5)
        valid_costs = vol.data[vol.mask]
        assert np.isfinite(valid_costs).all()
        assert valid_costs.min() >= 0.0 and valid_costs.max() <= 1.0
        data = np.where(vol.mask, vol.data, np.inf)
        idx = np.argmin(data, axis=0)
        valid = vol.mask.any(axis=0)
        interior = valid.copy()
        interior[:3] = False
        interior[-3:] = False
        frac = np.mean(idx[interior] == n_true)
        assert frac >= 0.99

    def test_all_pairs_matches_explicit_recomputation(self, intr220, rig4, sphere_setup):
        images, frame, _ = sphere_setup
        vol = build_cost_volume(images, [intr220] * 4, frame, self.GRID, window=5)
        from omnistereo.sweep import warp
        for n in (2, 6):
            warped = [warp(images[i], intr220, frame.cam_from_rig[i], n, self.GRID)
                      for i in range(4)]
            maps = []
            npix = float(self.GRID.width * self.GRID.height)
            for (i, j) in PairSelection.all_pairs(4).pairs:
                if np.count_nonzero(warped[i].mask & warped[j].mask) / npix < 0.05:
                    continue
                maps.append(zncc_cost(warped[i], warped[j], window=5))
            fused = fuse(maps)
            assert np.array_equal(vol.mask[n], fused.mask)
            assert np.array_equal(vol.data[n], fused.data.astype(np.float32))

    def test_too_few_cameras(self, intr220):
        with pytest.raises(ValueError):
            build_cost_volume([np.zeros((4, 4))], [intr220], None, self.GRID)


class TestExternalMaps:
    GRID = SphereGrid(width=16, height=8, n_spheres=3, d_min=1.0)

    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(11)
        data = rng.uniform(size=(3, 8, 16)).astype(np.float32)
        mask = rng.uniform(size=data.shape) > 0.2
        p = tmp_path / "pair_0_1.ocsv"
        write_ocsv(p, data, mask)
        out = load_external_cost_maps(tmp_path, self.GRID)
        assert set(out) == {(0, 1)}
        got, gmask = out[(0, 1)]
        assert np.array_equal(got, data)
        assert np.array_equal(gmask, mask)

    def test_dimension_mismatch_rejected(self, tmp_path):
        data = np.zeros((2, 8, 16), dtype=np.float32)
        write_ocsv(tmp_path / "pair_0_1.ocsv", data, np.ones(data.shape, dtype=bool))
        with pytest.raises(FormatError, match="does not match grid"):
            load_external_cost_maps(tmp_path, self.GRID)

    def test_truncated_file_names_byte_counts(self, tmp_path):
        data = np.zeros((3, 8, 16), dtype=np.float32)
        p = tmp_path / "pair_0_1.ocsv"
        write_ocsv(p, data, np.ones(data.shape, dtype=bool))
        blob = p.read_bytes()
        p.write_bytes(blob[:-40])
        with pytest.raises(FormatError, match="expected .* got"):
            load_external_cost_maps(tmp_path, self.GRID)

    def test_bad_pair_name_rejected(self, tmp_path):
        data = np.zeros((3, 8, 16), dtype=np.float32)
        p = tmp_path / "pair_ab.ocsv"
        write_ocsv(p, data, np.ones(data.shape, dtype=bool))
        with pytest.raises((FormatError, FileNotFoundError)):
            load_external_cost_maps(tmp_path / "pair_ab.ocsv", self.GRID)

    def test_fuse_pair_volumes(self):
        rng = np.random.default_rng(12)
        shape = (3, 8, 16)
        pv = {
            (0, 1): (rng.uniform(size=shape).astype(np.float32),
                     np.ones(shape, dtype=bool)),
            (1, 2): (rng.uniform(size=shape).astype(np.float32),
                     rng.uniform(size=shape) > 0.5),
        }
        vol = fuse_pair_volumes(pv, self.GRID)
        a, am = pv[(0, 1)]
        b, bm = pv[(1, 2)]
        both = am & bm
        assert np.allclose(vol.data[both],
                           ((a.astype(np.float64) + b.astype(np.float64)) / 2)[both],
                           atol=1e-7)
        only_a = am & ~bm
        assert np.allclose(vol.data[only_a], a[only_a], atol=0)
