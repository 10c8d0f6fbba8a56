import numpy as np
import pytest
from PIL import Image

from orthosplat.errors import DegenerateGeometryError, InputError
from orthosplat.ground_plane import estimate_frame
from orthosplat.ortho_renderer import (
    Layer,
    RasterSpec,
    RenderConfig,
    choose_resolution,
    composite,
    downsample_ssaa,
    estimate_roof_height,
    render_orthophoto,
    splat_ground,
    splat_roof,
)
from synth import ground_box_cloud, local_cloud, make_cloud, unit_frame


def coords_with_bbox(n, span_x, span_y, z=0.0):
    """n points whose (u, v) bounding box is exactly span_x x span_y."""
    coords = np.zeros((n, 3))
    coords[:, 2] = z
    coords[0, :2] = (0.0, 0.0)
    coords[1, :2] = (span_x, span_y)
    coords[2, :2] = (span_x, 0.0)
    coords[3, :2] = (0.0, span_y)
    coords[4:, 0] = span_x / 2
    coords[4:, 1] = span_y / 2
    return coords


class TestChooseResolution:
    def test_clips_to_upper_bound(self):
        local = local_cloud(coords_with_bbox(150, 10.0, 10.0))
        spec = choose_resolution(local)
        # raw r = sqrt(100 / (150/1.5)) = 1.0 -> clipped
        assert spec.resolution == 0.05
        assert spec.width == int(np.ceil(10.0 / 0.05)) + 1 == 201

    def test_clips_to_lower_bound(self):
        local = local_cloud(coords_with_bbox(96_000, 0.6, 0.6))
        spec = choose_resolution(local)
        # raw r = sqrt(0.36 / 64000) ~ 0.00237 -> clipped up
        assert spec.resolution == 0.0075

    def test_formula_case(self):
        local = local_cloud(coords_with_bbox(6_000_000, 48.0, 48.0))
        spec = choose_resolution(local)
        assert spec.resolution == pytest.approx(0.024, abs=1e-12)
        assert spec.width == spec.height == 2001

    def test_pixel_cap(self):
        local = local_cloud(coords_with_bbox(200_000, 1000.0, 1000.0))
        cfg = RenderConfig()
        spec = choose_resolution(local, cfg)
        assert spec.width * spec.height <= cfg.pixel_cap
        assert spec.resolution > cfg.res_max  # the cap overrode the clip range

    def test_band_fallback_below_50(self):
        coords = coords_with_bbox(100, 4.0, 4.0, z=3.0)  # everything off-ground
        spec = choose_resolution(local_cloud(coords))
        assert spec.width >= 2  # fell back to all points instead of erroring

    def test_zero_area_errors(self):
        coords = np.zeros((100, 3))
        with pytest.raises(DegenerateGeometryError):
            choose_resolution(local_cloud(coords))


def spec_1x(width=20, height=16, resolution=1.0):
    return RasterSpec(resolution=resolution, width=width, height=height, origin_uv=(0.0, 0.0), ssaa=1)


class TestSplatGround:
    def test_single_point_color_and_disk(self):
        spec = spec_1x()
        coords = np.array([[4.5, 2.5, 0.0]])  # center of a cell
        layer = splat_ground(local_cloud(coords, (0.2, 0.4, 0.8)), spec)
        row, col = spec.height - 1 - 2, 4
        assert np.allclose(layer.rgb[row, col], [0.2, 0.4, 0.8])
        assert layer.weight[row, col] == pytest.approx(1.0)
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            assert np.allclose(layer.rgb[row + dr, col + dc], [0.2, 0.4, 0.8])
            assert layer.weight[row + dr, col + dc] == pytest.approx(np.exp(-2.0))
        assert layer.weight.sum() == pytest.approx(1.0 + 4 * np.exp(-2.0))

    def test_two_coincident_points_average(self):
        spec = spec_1x()
        coords = np.array([[4.5, 2.5, 0.0], [4.5, 2.5, 0.0]])
        colors = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        from orthosplat.ground_plane import LocalCloud

        layer = splat_ground(LocalCloud(coords=coords, colors=colors, frame=unit_frame()), spec)
        assert np.allclose(layer.rgb[spec.height - 1 - 2, 4], [0.5, 0.0, 0.5])

    def test_matches_double_loop_oracle(self, rng):
        spec = spec_1x(width=12, height=10)
        n = 1000
        coords = np.zeros((n, 3))
        coords[:, 0] = rng.uniform(0, 12, n)
        coords[:, 1] = rng.uniform(0, 10, n)
        colors = rng.uniform(0, 1, (n, 3))
        from orthosplat.ground_plane import LocalCloud

        layer = splat_ground(LocalCloud(coords=coords, colors=colors, frame=unit_frame()), spec)

        # naive oracle
        acc = np.zeros((10, 12, 3))
        wacc = np.zeros((10, 12))
        offs = [(0, 0, 1.0), (-1, 0, np.exp(-2)), (1, 0, np.exp(-2)), (0, -1, np.exp(-2)), (0, 1, np.exp(-2))]
        for j in range(n):
            c = int(np.floor(coords[j, 0]))
            r = 10 - 1 - int(np.floor(coords[j, 1]))
            for dr, dc, w in offs:
                rr, cc = r + dr, c + dc
                if 0 <= rr < 10 and 0 <= cc < 12:
                    wacc[rr, cc] += w
                    acc[rr, cc] += w * colors[j]
        ref = np.zeros_like(acc)
        nz = wacc > 0
        ref[nz] = acc[nz] / wacc[nz, None]
        assert np.allclose(layer.rgb, ref, atol=1e-6)

    def test_band_selection(self):
        spec = spec_1x()
        coords = np.array([[4.5, 2.5, 0.0], [4.5, 2.5, 0.5]])  # second point off-band
        layer = splat_ground(local_cloud(coords, (1.0, 0.0, 0.0)), spec)
        assert layer.weight[spec.height - 1 - 2, 4] == pytest.approx(1.0)


class TestRoofHeight:
    def test_constant_heights(self):
        assert estimate_roof_height(np.full(10, 5.0)) == 5.0

    def test_uniform_percentiles(self):
        assert estimate_roof_height(np.linspace(0, 1, 101)) == pytest.approx(0.25)

    def test_low_median_dominates(self):
        assert estimate_roof_height(np.array([0.05, 0.1, 0.15])) == pytest.approx(0.1)

    def test_empty_is_infinite(self):
        assert estimate_roof_height(np.array([])) == np.inf


class TestSplatRoof:
    def test_height_weight_at_top_is_one(self):
        spec = spec_1x()
        coords = np.tile([4.5, 2.5, 6.0], (3, 1))  # 3 coincident points at the top
        layer, mask = splat_roof(local_cloud(coords, (1, 0, 0)), spec, h_roof=5.0)
        assert layer.weight[spec.height - 1 - 2, 4] == pytest.approx(3.0)
        assert mask[spec.height - 1 - 2, 4] == 1.0

    def test_height_weight_one_sigma_below(self):
        cfg = RenderConfig()
        sigma_h = cfg.t_roof * cfg.dh_bw
        spec = spec_1x()
        coords = np.concatenate(
            [np.tile([4.5, 2.5, 6.0], (3, 1)), np.tile([4.5, 2.5, 6.0 - sigma_h], (3, 1))]
        )
        layer, _ = splat_roof(local_cloud(coords, (1, 0, 0)), spec, h_roof=5.0, cfg=cfg)
        expected = 3.0 + 3.0 * np.exp(-0.5)
        assert layer.weight[spec.height - 1 - 2, 4] == pytest.approx(expected, rel=1e-12)

    def test_band_discards_points_far_below_top(self):
        spec = spec_1x()
        coords = np.concatenate(
            [np.tile([4.5, 2.5, 6.0], (3, 1)), np.tile([4.5, 2.5, 5.0], (3, 1))]
        )  # 1 m below the top > dh_bw
        layer, _ = splat_roof(local_cloud(coords, (1, 0, 0)), spec, h_roof=4.0)
        assert layer.weight[spec.height - 1 - 2, 4] == pytest.approx(3.0)

    def test_min_support_suppression(self):
        spec = spec_1x()
        coords = np.tile([4.5, 2.5, 6.0], (2, 1))  # only 2 contributors
        layer, mask = splat_roof(local_cloud(coords, (1, 0, 0)), spec, h_roof=5.0)
        assert layer.weight[spec.height - 1 - 2, 4] == 0.0
        assert mask.max() == 0.0

    def test_monotone_suppression(self, rng):
        spec = spec_1x()
        n = 300
        coords = np.zeros((n, 3))
        coords[:, 0] = rng.uniform(0, 20, n)
        coords[:, 1] = rng.uniform(0, 16, n)
        coords[:, 2] = 6.0
        pixels = []
        for nmin in (1, 3, 5):
            cfg = RenderConfig(n_min_roof=nmin)
            _, mask = splat_roof(local_cloud(coords, (1, 0, 0)), spec, 5.0, cfg)
            pixels.append(mask > 0)
        assert not (pixels[1] & ~pixels[0]).any()
        assert not (pixels[2] & ~pixels[1]).any()

    def test_flat_roof_fixture_interior_mask_one(self):
        # exactly 5 points per pixel over a 10 x 10 px roof: uniform weight
        # sums, so the normalized mask is exactly 1 in the interior
        spec = spec_1x(width=14, height=14)
        cells = np.mgrid[2:12, 2:12].reshape(2, -1).T.astype(np.float64)
        offsets = np.array([[0.25, 0.25], [0.25, 0.75], [0.75, 0.25], [0.75, 0.75], [0.5, 0.5]])
        uv = (cells[:, None, :] + offsets[None, :, :]).reshape(-1, 2)
        coords = np.concatenate([uv, np.full((uv.shape[0], 1), 6.0)], axis=1)
        layer, mask = splat_roof(local_cloud(coords, (1, 0, 0)), spec, h_roof=5.0)
        rows = spec.height - 1 - cells[:, 1].astype(int)
        cols = cells[:, 0].astype(int)
        covered = np.zeros((14, 14), dtype=bool)
        covered[rows, cols] = True
        interior = mask[4:10, 4:10]
        assert np.allclose(interior, 1.0, atol=1e-12)
        assert mask.max() == 1.0
        assert (layer.support[4:10, 4:10] >= 3).all()


class TestComposite:
    def _layers(self, rng, h=8, w=9):
        g = Layer(rgb=rng.uniform(0, 1, (h, w, 3)), weight=np.ones((h, w)), support=np.ones((h, w), np.int64))
        r = Layer(rgb=rng.uniform(0, 1, (h, w, 3)), weight=np.ones((h, w)), support=np.ones((h, w), np.int64))
        return g, r

    def test_mask_one_returns_roof_bitwise(self, rng):
        g, r = self._layers(rng)
        out = composite(g, r, np.ones((8, 9)))
        assert np.array_equal(out.rgb, r.rgb)

    def test_mask_zero_returns_ground_bitwise(self, rng):
        g, r = self._layers(rng)
        out = composite(g, r, np.zeros((8, 9)))
        assert np.array_equal(out.rgb, g.rgb)

    def test_half_blend(self):
        g = Layer(rgb=np.zeros((2, 2, 3)), weight=np.ones((2, 2)), support=np.ones((2, 2), np.int64))
        r = Layer(rgb=np.ones((2, 2, 3)), weight=np.ones((2, 2)), support=np.ones((2, 2), np.int64))
        out = composite(g, r, np.full((2, 2), 0.5))
        assert np.allclose(out.rgb, 0.5)

    def test_hard_mask_identity_bitwise(self, rng):
        g, r = self._layers(rng)
        m = (rng.uniform(0, 1, (8, 9)) > 0.5).astype(np.float64)
        out = composite(g, r, m)
        expect = np.where(m[:, :, None] == 1.0, r.rgb, g.rgb)
        assert np.array_equal(out.rgb, expect)

    def test_dimension_mismatch(self, rng):
        g, r = self._layers(rng)
        with pytest.raises(InputError):
            composite(g, r, np.ones((4, 4)))

    def test_coverage_and_hole(self, rng):
        g, r = self._layers(rng)
        g = Layer(rgb=g.rgb, weight=np.zeros((8, 9)), support=np.zeros((8, 9), np.int64))
        m = np.zeros((8, 9))
        m[0, 0] = 0.5
        out = composite(g, r, m)
        assert out.coverage_mask[0, 0]
        assert not out.coverage_mask[1, 1]
        assert np.array_equal(out.hole_mask, ~out.coverage_mask)


class TestDownsample:
    def test_constant_preserved(self):
        out = downsample_ssaa(np.full((16, 16), 0.37))
        assert np.abs(out - 0.37).max() < 1e-6

    def test_checkerboard_to_gray(self):
        tile = np.indices((32, 32)).sum(axis=0) % 2
        out = downsample_ssaa(tile.astype(np.float64))
        assert np.abs(out[4:-4, 4:-4] - 0.5).max() < 0.02

    def test_matches_pil_reference(self, rng):
        img = rng.uniform(0, 1, (64, 64, 3))
        out = downsample_ssaa(img)
        for c in range(3):
            ref = Image.fromarray(img[:, :, c].astype(np.float32), mode="F").resize(
                (32, 32), Image.LANCZOS
            )
            assert np.abs(out[:, :, c] - np.asarray(ref)).max() < 1e-4

    def test_odd_dimensions_padded(self):
        out = downsample_ssaa(np.full((15, 17), 0.5))
        assert out.shape == (8, 9)


class TestRenderOrthophoto:
    def test_green_ground_red_roof(self, rng):
        cloud = ground_box_cloud(rng)
        ortho = render_orthophoto(cloud, unit_frame())
        assert ortho.spec.resolution == 0.05
        h, w = ortho.rgb.shape[:2]

        def region(px_box):
            r0, r1, c0, c1 = px_box
            return ortho.rgb[r0:r1, c0:c1].reshape(-1, 3)

        # box interior: u,v in [-3,3] -> pixels, with margin
        u0, v0 = ortho.spec.origin_uv
        c_lo = int((-3 - u0) / 0.05) + 5
        c_hi = int((3 - u0) / 0.05) - 5
        r_lo = h - 1 - int((3 - v0) / 0.05) + 5
        r_hi = h - 1 - int((-3 - v0) / 0.05) - 5
        roof = region((r_lo, r_hi, c_lo, c_hi))
        assert np.abs(roof.mean(axis=0) - [0.85, 0.1, 0.1]).max() < 0.1

        ground = region((5, r_lo - 10, 5, c_lo - 10))
        assert np.abs(ground.mean(axis=0) - [0.1, 0.8, 0.1]).max() < 0.1

    def test_ground_only_scene(self, rng):
        cloud = ground_box_cloud(rng, ground_n=50_000, box=(0, 0, 0, 0))
        ortho = render_orthophoto(cloud, unit_frame())
        assert ortho.roof_mask.max() == 0.0
        assert not np.isfinite(ortho.roof_height)

    def test_rotation_equivariance(self):
        rng_a = np.random.default_rng(5)
        cloud = ground_box_cloud(rng_a, extent_x=10.0, extent_y=6.0, box=(-3.0, 1.0, -2.0, 2.0))
        rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        rotated = make_cloud(cloud.positions @ rot.T, cloud.colors)

        frame_a = estimate_frame(cloud, iters=200, rng=np.random.default_rng(0))
        frame_b = estimate_frame(rotated, iters=200, rng=np.random.default_rng(0))
        im_a = render_orthophoto(cloud, frame_a).rgb
        im_b = render_orthophoto(rotated, frame_b).rgb
        hh = min(im_a.shape[0], im_b.shape[0])
        ww = min(im_a.shape[1], im_b.shape[1])
        diff = np.abs(im_a[:hh, :ww] - im_b[:hh, :ww]).mean()
        assert diff < 0.05

    def test_deterministic(self, rng):
        cloud = ground_box_cloud(rng, ground_n=30_000)
        a = render_orthophoto(cloud, unit_frame())
        b = render_orthophoto(cloud, unit_frame())
        assert np.array_equal(a.rgb, b.rgb)

    def test_color_convex_combination_under_splatting(self, rng):
        # per-pixel layer colors stay within [min, max] of the contributing
        # point colors (weighted means cannot extrapolate)
        spec = spec_1x(width=12, height=10)
        n = 500
        coords = np.zeros((n, 3))
        coords[:, 0] = rng.uniform(0, 12, n)
        coords[:, 1] = rng.uniform(0, 10, n)
        colors = rng.uniform(0.2, 0.7, (n, 3))
        from orthosplat.ground_plane import LocalCloud

        layer = splat_ground(LocalCloud(coords=coords, colors=colors, frame=unit_frame()), spec)
        covered = layer.weight > 0
        assert layer.rgb[covered].min() >= colors.min() - 1e-12
        assert layer.rgb[covered].max() <= colors.max() + 1e-12
