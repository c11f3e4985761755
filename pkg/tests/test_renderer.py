import math

import numpy as np
import pytest
from conftest import brute_force_pairs, origin_camera, random_scene

from spherical_gof.camera import ErpCamera, quat_to_rotmat
from spherical_gof.gaussians import GaussianScene, logit, peak_response, rgb_to_sh0, to_local_ray
from spherical_gof.renderer import (
    RenderSettings, build_tile_index, composite_ray, full_tile_index, render, support_taper,
)


def scene_from(means, rgbs, scales, opacities, filter_radius=0.0):
    n = len(means)
    return GaussianScene(
        np.asarray(means, float), np.tile([1.0, 0, 0, 0], (n, 1)), np.log(np.asarray(scales, float)),
        logit(np.asarray(opacities, float)), rgb_to_sh0(np.asarray(rgbs, float))[:, None, :], np.full(n, filter_radius),
    )


def test_support_taper_shape():
    st = RenderSettings()
    assert support_taper(0.0, st) == 1.0
    assert support_taper(2.5**2, st) == 1.0
    assert support_taper(9.0, st) == 0.0
    qs = np.linspace(6.25, 9.0, 50)
    v = [support_taper(q, st) for q in qs]
    assert np.all(np.diff(v) <= 0)
    with pytest.raises(ValueError):
        RenderSettings(taper_sigma=3.0)


def test_empty_candidates():
    sc = scene_from([(0, 0, 5)], [(1, 0, 0)], [(0.5,) * 3], [0.9])
    r = composite_ray(np.zeros(3), (0, 0, 1), [], sc)
    assert r.alpha == 0.0 and np.all(r.rgb == 0) and math.isnan(r.depth)


def test_single_opaque_gaussian():
    sc = scene_from([(0, 0, 5)], [(0.2, 0.6, 0.4)], [(0.3, 0.3, 0.1)], [1 - 1e-9])
    r = composite_ray(np.zeros(3), (0, 0, 1), [0], sc)
    assert r.alpha == pytest.approx(0.999)
    assert r.depth == pytest.approx(5.0, abs=1e-9)
    np.testing.assert_allclose(r.rgb, 0.999 * np.array([0.2, 0.6, 0.4]), atol=1e-9)
    np.testing.assert_allclose(r.normal @ np.array([0, 0, 1.0]), -1.0, atol=1e-12)


def test_two_gaussians_closed_form():
    cam = origin_camera(64, 32)
    d = cam.rays[10, 20]
    means = [3.0 * d, 7.0 * d]
    c1, c2 = np.array([0.9, 0.2, 0.1]), np.array([0.1, 0.3, 0.8])
    o1, o2 = 0.3, 0.7
    sc = scene_from(means, [c1, c2], [(0.2,) * 3, (0.3,) * 3], [o1, o2])
    expected = c1 * o1 + c2 * o2 * (1 - o1)
    r = composite_ray(cam.center, d, [0, 1], sc)
    np.testing.assert_allclose(r.rgb, expected, atol=1e-9)
    assert r.alpha == pytest.approx(1 - (1 - o1) * (1 - o2), abs=1e-9)
    # T drops below 0.5 at the second Gaussian
    assert r.depth == pytest.approx(7.0, abs=1e-9)
    out = render(sc, cam)
    np.testing.assert_allclose(out.rgb[10, 20], expected, atol=1e-9)
    assert out.depth[10, 20] == pytest.approx(7.0, abs=1e-9)


def test_kernel_matches_scalar_path(rng):
    sc = random_scene(40, rng, sh_degree=1)
    cam = ErpCamera(quat_to_rotmat(rng.normal(size=4)), rng.normal(size=3) * 0.2, 32, 16)
    st = RenderSettings(tile_size=8)
    out = render(sc, cam, st)
    tiles = build_tile_index(sc, cam, 8, st)
    for v in range(0, 16, 3):
        for u in range(0, 32, 5):
            r = composite_ray(cam.center, cam.rays[v, u], tiles.pixel_candidates(u, v), sc, settings=st)
            np.testing.assert_allclose(out.rgb[v, u], r.rgb, atol=1e-12)
            assert out.alpha[v, u] == pytest.approx(r.alpha, abs=1e-12)
            np.testing.assert_allclose(out.normal[v, u], r.normal, atol=1e-12)
            assert out.count[v, u] == r.count
            if math.isnan(r.depth):
                assert math.isnan(out.depth[v, u])
            else:
                assert out.depth[v, u] == pytest.approx(r.depth, abs=1e-12)


def test_single_gaussian_depth_is_t_star(rng):
    cam = origin_camera(64, 32)
    for _ in range(5):
        v, u = int(rng.integers(4, 28)), int(rng.integers(64))
        d = cam.rays[v, u]
        dist = rng.uniform(2, 6)
        sc = GaussianScene((dist * d)[None], rng.normal(size=(1, 4)), np.log(rng.uniform(0.1, 0.5, (1, 3))),
                           np.array([5.0]), np.zeros((1, 1, 3)), np.array([0.01]))
        out = render(sc, cam)
        pk = peak_response(to_local_ray(sc[0], cam.center, d))
        assert out.depth[v, u] == pytest.approx(pk.t_star, abs=1e-6)
        assert pk.t_star == pytest.approx(dist, abs=1e-9)


def test_zero_opacity_scene_renders_nothing(rng):
    sc = random_scene(30, rng)
    sc.opacity_logits[:] = -40.0
    out = render(sc, origin_camera())
    assert np.all(out.alpha == 0) and np.all(out.rgb == 0) and np.all(np.isnan(out.depth))


def test_empty_scene():
    sc = GaussianScene(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 1, 3)))
    out = render(sc, origin_camera(16, 8))
    assert out.rgb.shape == (8, 16, 3) and np.all(out.alpha == 0)


def test_output_invariants(rng):
    sc = random_scene(80, rng)
    out = render(sc, origin_camera())
    assert np.all((out.alpha >= 0) & (out.alpha <= 1))
    assert np.all(np.isfinite(out.rgb))
    covered = out.alpha > 0
    np.testing.assert_allclose(np.linalg.norm(out.normal[covered], axis=-1), 1.0, atol=1e-9)
    # background: depth undefined below the alpha threshold
    assert np.all(np.isnan(out.depth[out.alpha < 0.01]))


def test_tile_rect_from_cap_example():
    W, H = 1024, 512
    cam = origin_camera(W, H)
    # radius 3 * (1/3) = 1 at distance 2: beta = 30 degrees
    sc = scene_from([(0, 0, 2)], [(1, 1, 1)], [(1 / 3,) * 3], [0.9])
    ti = build_tile_index(sc, cam, 16)
    tiles = [t for t in range(len(ti)) if len(ti.candidates(t))]
    tx = np.array(tiles) % ti.tiles_x
    ty = np.array(tiles) // ti.tiles_x
    half = W / 12  # 30 degrees of longitude (and of latitude, since W = 2H)
    assert tx.min() == int((W / 2 - half) // 16) and tx.max() == int((W / 2 + half) // 16)
    assert ty.min() == int((H / 2 - half) // 16) and ty.max() == int((H / 2 + half) // 16)
    assert len(tiles) == (tx.max() - tx.min() + 1) * (ty.max() - ty.min() + 1)


def test_gaussian_around_camera_in_every_tile():
    cam = origin_camera(128, 64)
    sc = scene_from([(0, 0, 0.5)], [(1, 1, 1)], [(1.0,) * 3], [0.5])
    ti = build_tile_index(sc, cam, 16)
    assert all(len(ti.candidates(t)) == 1 for t in range(len(ti)))


def test_tile_lists_sorted_and_seam_wrap(rng):
    cam = origin_camera(128, 64)
    sc = random_scene(60, rng)
    sc.means[0] = (0.05, 0.0, -3.0)  # straddles the seam behind the camera
    ti = build_tile_index(sc, cam, 16)
    for t in range(len(ti)):
        ids = ti.candidates(t)
        assert np.all(np.diff(ti.keys[ids]) >= 0)
    row = 2 * ti.tiles_x
    assert 0 in ti.candidates(row) and 0 in ti.candidates(row + ti.tiles_x - 1)


def test_conservative_tile_index(rng):
    sc = random_scene(60, rng, dist=(0.8, 4.0), scale=(0.05, 0.6))
    cam = ErpCamera(quat_to_rotmat(rng.normal(size=4)), np.zeros(3), 64, 32)
    pairs = brute_force_pairs(sc, cam)
    ti = build_tile_index(sc, cam, 8)
    missing = 0
    for v, u, n in zip(*np.nonzero(pairs)):
        missing += n not in ti.pixel_candidates(u, v)
    assert pairs.sum() > 100 and missing == 0


def test_culling_matches_brute_force(rng):
    sc = random_scene(100, rng)
    cam = ErpCamera(quat_to_rotmat(rng.normal(size=4)), rng.normal(size=3) * 0.3, 64, 32)
    a = render(sc, cam)
    b = render(sc, cam, culling=False)
    assert np.abs(a.rgb - b.rgb).max() <= 1e-6
    assert np.abs(a.alpha - b.alpha).max() <= 1e-6
    np.testing.assert_array_equal(np.isnan(a.depth), np.isnan(b.depth))


@pytest.mark.parametrize("k", [1, 17, 16])
def test_yaw_shift_equivariance(k, rng):
    sc = random_scene(80, rng)
    W = 64
    cam = ErpCamera(quat_to_rotmat(rng.normal(size=4)), rng.normal(size=3) * 0.3, W, 32)
    a = render(sc, cam)
    b = render(sc, cam.yawed(k * 2 * math.pi / W))
    for x, y in [(a.rgb, b.rgb), (a.alpha, b.alpha), (a.normal, b.normal)]:
        assert np.abs(np.roll(x, k, axis=1) - y).max() <= 1e-5
    da, db = np.roll(a.depth, k, axis=1), b.depth
    np.testing.assert_array_equal(np.isnan(da), np.isnan(db))
    ok = ~np.isnan(da)
    assert np.abs(da[ok] - db[ok]).max() <= 1e-5


def test_render_deterministic(rng):
    sc = random_scene(50, rng)
    cam = origin_camera()
    a, b = render(sc, cam), render(sc, cam)
    for x, y in [(a.rgb, b.rgb), (a.alpha, b.alpha), (a.normal, b.normal)]:
        np.testing.assert_array_equal(x, y)
    np.testing.assert_array_equal(a.depth, b.depth)


def test_per_ray_sort_agrees_on_separated_gaussians():
    cam = origin_camera(32, 16)
    d = cam.rays[8, 16]
    sc = scene_from([2.0 * d, 5.0 * d], [(1, 0, 0), (0, 1, 0)], [(0.2,) * 3, (0.2,) * 3], [0.5, 0.8])
    a = render(sc, cam)
    b = render(sc, cam, sort_mode="per_ray")
    np.testing.assert_allclose(a.rgb, b.rgb, atol=1e-12)


def test_full_tile_index_lists_everything(rng):
    sc = random_scene(7, rng)
    ti = full_tile_index(sc, origin_camera(32, 16), 8)
    assert all(len(ti.candidates(t)) == 7 for t in range(len(ti)))
