import math

import numpy as np
import pytest
from conftest import origin_camera, random_scene

from spherical_gof.camera import ErpCamera, project_points, quat_to_rotmat
from spherical_gof.gaussians import GaussianScene, filter_radius, logit
from spherical_gof.training.backward import SceneGrads
from spherical_gof.training.densify import (
    DensifyParams, DensifyStats, accumulate_densify_stats, densify_and_prune, projected_mean_grad,
)


def grads_with(scene, d_means, visible=None):
    g = SceneGrads.zeros_like(scene)
    g.means[:] = d_means
    g.means_geom = np.array(d_means, dtype=float)
    g.visible = np.any(g.means_geom != 0, axis=1) if visible is None else visible
    return g


def test_projected_gradient_matches_projection_jacobian(rng):
    cam = ErpCamera(quat_to_rotmat(rng.normal(size=4)), rng.normal(size=3), 128, 64)
    means = cam.center + rng.normal(size=(20, 3)) * 3
    a = rng.normal(size=(20, 2))
    # d/dmean of a . (u, v) by central differences of the projection
    h = 1e-6
    d_means = np.zeros((20, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        du = (project_points(means + e, cam) - project_points(means - e, cam)) / (2 * h)
        d_means[:, k] = (a * du).sum(1)
    np.testing.assert_allclose(projected_mean_grad(d_means, means, cam), a, rtol=1e-5, atol=1e-6)


def test_equator_vs_pole_score():
    cam = origin_camera(128, 64)
    sc = random_scene(2, np.random.default_rng(0))
    sc.means[0] = (0.0, 0.0, 3.0)
    lat = math.radians(87)
    sc.means[1] = (0.0, -3.0 * math.sin(lat), 3.0 * math.cos(lat))
    d = np.zeros((2, 3))
    d[0] = (1.0, 0.0, 0.0)
    d[1] = (1.0, 0.0, 0.0)
    g = projected_mean_grad(d, sc.means, cam)
    d[1] *= np.linalg.norm(g[0]) / np.linalg.norm(g[1])  # equal raw norms
    raw = np.linalg.norm(projected_mean_grad(d, sc.means, cam)[0])
    st = DensifyStats.zeros(2)
    accumulate_densify_stats(st, grads_with(sc, d), sc, cam, eps=0.1, normalized=False)
    assert st.score[0] == pytest.approx(raw, rel=1e-12)
    assert st.score[1] == pytest.approx(0.1 * raw, rel=1e-9)
    np.testing.assert_array_equal(st.count, [1, 1])


def test_normalized_scaling():
    cam = origin_camera(128, 64)
    sc = random_scene(1, np.random.default_rng(0))
    sc.means[0] = (0.0, 0.0, 3.0)
    d = np.array([[0.3, 0.2, 0.0]])
    a, b = DensifyStats.zeros(1), DensifyStats.zeros(1)
    accumulate_densify_stats(a, grads_with(sc, d), sc, cam, normalized=False)
    accumulate_densify_stats(b, grads_with(sc, d), sc, cam, normalized=True)
    g = projected_mean_grad(d, sc.means, cam)[0]
    assert b.score[0] == pytest.approx(np.hypot(g[0] * 64, g[1] * 32))
    assert a.score[0] == pytest.approx(np.hypot(*g))


def test_invisible_gaussian_untouched(rng):
    cam = origin_camera()
    sc = random_scene(3, rng)
    d = rng.normal(size=(3, 3))
    d[1] = 0.0
    st = DensifyStats.zeros(3)
    accumulate_densify_stats(st, grads_with(sc, d), sc, cam)
    assert st.score[1] == 0.0 and st.count[1] == 0
    assert st.count[0] == 1 and st.count[2] == 1


def test_two_view_accumulation_is_additive(rng):
    sc = random_scene(10, rng)
    cams = [origin_camera(), ErpCamera(quat_to_rotmat(rng.normal(size=4)), rng.normal(size=3) * 0.3, 64, 32)]
    grads = [grads_with(sc, rng.normal(size=(10, 3))) for _ in cams]
    both = DensifyStats.zeros(10)
    parts = []
    for cam, g in zip(cams, grads):
        accumulate_densify_stats(both, g, sc, cam)
        one = DensifyStats.zeros(10)
        accumulate_densify_stats(one, g, sc, cam)
        parts.append(one)
    np.testing.assert_allclose(both.score, parts[0].score + parts[1].score, rtol=1e-14)
    np.testing.assert_array_equal(both.count, 2)
    np.testing.assert_allclose(both.mean_score(), both.score / 2)
    both.reset()
    assert not both.score.any() and not both.count.any()


def scene_of(means, scales, opacities):
    n = len(means)
    return GaussianScene(np.asarray(means, float), np.tile([1.0, 0, 0, 0], (n, 1)),
                         np.log(np.asarray(scales, float)), logit(np.asarray(opacities, float)),
                         np.zeros((n, 1, 3)), np.zeros(n))


def test_all_scores_below_threshold():
    sc = scene_of([(0, 0, 3), (1, 0, 3), (0, 1, 3)], [(0.1,) * 3] * 3, [0.5, 0.5, 1e-4])
    st = DensifyStats(np.full(3, 1e-5), np.ones(3, np.int64))
    res = densify_and_prune(sc, st, DensifyParams(extent=5.0), [origin_camera()], np.random.default_rng(0))
    assert len(res.scene) == 2 and res.pruned == 1 and res.cloned == 0 and res.split == 0
    np.testing.assert_array_equal(res.keep, [0, 1])


def test_split_large_hot_gaussian():
    sc = scene_of([(0, 0, 3), (1, 0, 3)], [(0.5, 0.3, 0.2), (0.01,) * 3], [0.6, 0.6])
    st = DensifyStats(np.array([1.0, 0.0]), np.ones(2, np.int64))
    cams = [origin_camera()]
    res = densify_and_prune(sc, st, DensifyParams(extent=5.0), cams, np.random.default_rng(0))
    assert res.split == 1 and len(res.scene) == 3
    np.testing.assert_array_equal(res.keep, [1])
    children = res.scene.subset([1, 2])
    np.testing.assert_allclose(children.scales, np.tile([0.5, 0.3, 0.2], (2, 1)) / 1.6)
    assert np.all(np.abs(children.means - sc.means[0]) < 4 * 0.5)
    np.testing.assert_allclose(res.scene.filter_radii, filter_radius(res.scene.means, cams, 0.5))


def test_clone_small_hot_gaussian():
    sc = scene_of([(0, 0, 3)], [(0.01,) * 3], [0.6])
    st = DensifyStats(np.array([1.0]), np.ones(1, np.int64))
    res = densify_and_prune(sc, st, DensifyParams(extent=5.0), [origin_camera()], np.random.default_rng(0),
                            d_means=np.array([[0.0, 0.0, 2.0]]))
    assert res.cloned == 1 and len(res.scene) == 2
    np.testing.assert_allclose(res.scene.means[1], [0, 0, 3 - 0.1 * 0.01])
    np.testing.assert_allclose(res.scene.scales[1], res.scene.scales[0])


def test_densify_keeps_primitives_valid(rng):
    sc = random_scene(50, rng)
    st = DensifyStats(rng.uniform(0, 1e-3, 50), np.ones(50, np.int64))
    res = densify_and_prune(sc, st, DensifyParams(extent=3.0), [origin_camera()], rng)
    out = res.scene
    assert np.all(np.isfinite(out.means)) and np.all(out.scales > 0)
    np.testing.assert_allclose(np.linalg.norm(out.quats, axis=1), 1.0, atol=1e-12)
    assert np.all(out.filter_radii >= 0)
    assert len(out) == len(res.keep) + res.n_new
