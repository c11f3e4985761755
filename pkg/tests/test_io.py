import numpy as np
import pytest
from conftest import random_scene

from spherical_gof.errors import ConfigError, DomainError
from spherical_gof.io import list_images, read_image, read_pfm, write_image, write_pfm
from spherical_gof.ply import read_point_cloud, read_scene, write_point_cloud, write_scene


def test_pfm_round_trip_with_nan(tmp_path, rng):
    d = rng.uniform(0.5, 5.0, (7, 9)).astype(np.float32).astype(np.float64)
    d[2, 3] = np.nan
    write_pfm(tmp_path / "d.pfm", d)
    back = read_pfm(tmp_path / "d.pfm")
    np.testing.assert_array_equal(back, d)
    c = rng.uniform(size=(4, 5, 3)).astype(np.float32).astype(np.float64)
    write_pfm(tmp_path / "c.pfm", c)
    np.testing.assert_array_equal(read_pfm(tmp_path / "c.pfm"), c)


def test_pfm_rejects_bad_input(tmp_path):
    with pytest.raises(DomainError):
        write_pfm(tmp_path / "x.pfm", np.zeros((2, 2, 2)))
    (tmp_path / "y.pfm").write_bytes(b"P6\n1 1\n255\n\0\0\0")
    with pytest.raises(DomainError):
        read_pfm(tmp_path / "y.pfm")


def test_png_round_trip_quantizes(tmp_path, rng):
    img = rng.uniform(size=(6, 10, 3))
    write_image(tmp_path / "a.png", img)
    back = read_image(tmp_path / "a.png")
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12
    with pytest.raises(DomainError):
        write_image(tmp_path / "b.png", img[..., 0])


def test_list_images(tmp_path):
    for name in ("b.png", "a.JPG", "notes.txt"):
        (tmp_path / name).write_bytes(b"")
    assert list(list_images(tmp_path)) == ["a", "b"]


def test_point_cloud_round_trip(tmp_path, rng):
    pts = rng.normal(size=(20, 3)).astype(np.float32).astype(np.float64)
    cols = rng.integers(0, 256, (20, 3)) / 255.0
    write_point_cloud(tmp_path / "p.ply", pts, cols)
    pc = read_point_cloud(tmp_path / "p.ply")
    np.testing.assert_array_equal(pc.points, pts)
    np.testing.assert_allclose(pc.colors, cols, atol=1e-12)
    write_point_cloud(tmp_path / "q.ply", pts, binary=False)
    assert read_point_cloud(tmp_path / "q.ply").colors is None


@pytest.mark.parametrize("degree", [0, 1, 3])
def test_scene_round_trip(tmp_path, rng, degree):
    sc = random_scene(15, rng, sh_degree=degree)
    write_scene(tmp_path / "s.ply", sc)
    back = read_scene(tmp_path / "s.ply")
    assert back.sh_degree == degree
    for name in ("means", "quats", "log_scales", "opacity_logits", "sh", "filter_radii"):
        np.testing.assert_array_equal(getattr(back, name), getattr(sc, name))


def test_point_cloud_is_not_a_scene(tmp_path, rng):
    write_point_cloud(tmp_path / "p.ply", rng.normal(size=(3, 3)))
    with pytest.raises(ConfigError):
        read_scene(tmp_path / "p.ply")
