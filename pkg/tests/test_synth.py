import math

import numpy as np
import pytest
from conftest import origin_camera
from hypothesis import given, settings, strategies as st

from spherical_gof.camera import ErpCamera, read_poses
from spherical_gof.errors import ConfigError
from spherical_gof.evaluation.synth import (
    Plane, Room, Sphere, SyntheticScene, Texture, random_rotation, render_gt, save_dataset, scene_from_dict,
    synth_generate, textured_plane, textured_room, trace_rays,
)
from spherical_gof.io import read_image, read_pfm
from spherical_gof.ply import read_point_cloud


def test_depth_from_sphere_center_is_radius():
    scene = SyntheticScene(room=None, spheres=(Sphere((1.0, -0.5, 2.0), 0.7),))
    cam = ErpCamera(np.eye(3), np.array([1.0, -0.5, 2.0]), 32, 16)
    h = render_gt(scene, cam)
    np.testing.assert_allclose(h.depth, 0.7, rtol=0, atol=1e-9)
    np.testing.assert_array_equal(h.prim, 200)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_room_depth_from_center(x, y, z):
    d = np.array([x, y, z])
    if np.linalg.norm(d) < 1e-3:
        return
    d /= np.linalg.norm(d)
    h = trace_rays(SyntheticScene(), np.zeros(3), d[None])
    half = np.array([2.0, 1.5, 2.5])
    with np.errstate(divide="ignore"):
        want = np.min(half / np.abs(d))
    assert h.depth[0] == pytest.approx(want, rel=1e-12)


def test_room_axis_depths():
    dirs = np.array([[0, 0, 1.0], [1.0, 0, 0], [0, -1.0, 0]])
    h = trace_rays(SyntheticScene(), np.zeros(3), dirs)
    np.testing.assert_allclose(h.depth, [2.5, 2.0, 1.5])
    np.testing.assert_array_equal(h.prim, [5, 1, 2])
    np.testing.assert_allclose(h.normal, -dirs)


def test_plane_hit_and_miss():
    pl = Plane((0.0, 0.0, 2.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), 2.0, 0.5)
    scene = SyntheticScene(room=None, planes=(pl,))
    dirs = np.array([[0, 0, 1.0], [0.6, 0, 0.8], [0, 0, -1.0], [0, 0.6, 0.8]])
    h = trace_rays(scene, np.zeros(3), dirs)
    assert h.depth[0] == pytest.approx(2.0) and h.depth[1] == pytest.approx(2.5)
    assert np.isnan(h.depth[2]) and h.prim[2] == -1 and np.all(h.rgb[2] == 0)
    assert np.isnan(h.depth[3])  # y = 1.5 is past the rectangle edge
    np.testing.assert_allclose(h.normal[0], [0, 0, -1.0])


def test_checker_texture():
    t = Texture("checker", (1, 1, 1), (0, 0, 0), 0.5)
    c = t.sample(np.array([0.1, 0.6, 0.6]), np.array([0.1, 0.1, 0.6]))
    np.testing.assert_array_equal(c[:, 0], [1, 0, 1])
    n1 = Texture("noise", seed=3).sample(np.linspace(0, 5, 20), np.zeros(20))
    n2 = Texture("noise", seed=3).sample(np.linspace(0, 5, 20), np.zeros(20))
    np.testing.assert_array_equal(n1, n2)
    with pytest.raises(ConfigError):
        Texture("stripes")


def test_cameras_outside_room_rejected():
    scene = textured_room(16, 8, n_views=3)
    with pytest.raises(ConfigError):
        synth_generate(scene, [ErpCamera(np.eye(3), np.array([0.0, 0.0, 3.0]), 16, 8)])
    inside = SyntheticScene(spheres=(Sphere((0.0, 0.0, 0.0), 0.5),))
    with pytest.raises(ConfigError):
        synth_generate(inside, [origin_camera(16, 8)])


def test_generate_is_deterministic_and_consistent():
    scene = textured_room(32, 16, n_views=5, with_sphere=True)
    a, b = synth_generate(scene), synth_generate(scene)
    np.testing.assert_array_equal(a.points, b.points)
    assert (a.train_ids, a.test_ids) == ([0, 1, 3, 4], [2])
    # seed points lie on the traced surfaces
    for cam, dep in zip(a.cams, a.depths):
        assert np.all(np.isfinite(dep))
    room = scene.room
    on_wall = np.any(np.isclose(a.points, room.lo, atol=1e-9) | np.isclose(a.points, room.hi, atol=1e-9), axis=1)
    on_ball = np.isclose(np.linalg.norm(a.points - np.asarray(scene.spheres[0].center), axis=1), 0.45)
    assert np.all(on_wall | on_ball)


def test_save_dataset_layout(tmp_path):
    ds = synth_generate(textured_plane(16, 8, n_views=5))
    out = save_dataset(ds, tmp_path / "ds")
    cams = read_poses(out / "poses.txt")
    assert [c.name for c in cams] == [c.name for c in ds.cams]
    assert len(read_poses(out / "poses_test.txt")) == len(ds.test_ids)
    np.testing.assert_allclose(read_pfm(out / "depth" / f"{cams[0].name}.pfm"), ds.depths[0], rtol=1e-6)
    assert read_image(out / "images" / f"{cams[0].name}.png").shape == (8, 16, 3)
    assert len(read_point_cloud(out / "points.ply").points) == len(ds.points)


def test_scene_from_dict():
    sc = scene_from_dict({"preset": "plane", "camera": {"width": 32, "height": 16}, "n_points": 50})
    assert sc.width == 32 and sc.n_points == 50 and len(sc.planes) == 1
    custom = scene_from_dict({
        "room": {"size": [2, 2, 2]},
        "spheres": [{"center": [0, 0, 0.5], "radius": 0.2, "texture": {"kind": "checker"}}],
        "trajectory": {"n_views": 3, "radius": [0.3, 0.3]},
        "light_dir": None,
    })
    assert custom.room.size == (2, 2, 2) and custom.spheres[0].texture.kind == "checker"
    assert custom.light_dir is None and custom.trajectory.n_views == 3
    with pytest.raises(ConfigError):
        scene_from_dict({"preset": "castle"})


def test_random_rotation_angle_bound(rng):
    for _ in range(200):
        R = random_rotation(rng, math.radians(30))
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0)
        ang = math.acos(np.clip((np.trace(R) - 1) / 2, -1, 1))
        assert ang <= math.radians(30) + 1e-9
    np.testing.assert_allclose(random_rotation(rng, 0.0), np.eye(3), atol=1e-15)
