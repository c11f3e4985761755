import numpy as np
import pytest

from spherical_gof.camera import ErpCamera
from spherical_gof.gaussians import GaussianScene, rgb_to_sh0
from spherical_gof.renderer import RenderSettings

# acceptance lines, filled by test_acceptance.py and printed at the end of the run
ACCEPTANCE = {}


def random_scene(n, rng, dist=(2.0, 4.0), scale=(0.3, 0.8), filter_radius=0.05, opacity_sd=1.0, sh_degree=0):
    """Gaussians scattered on a shell around the origin, random orientation."""
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    means = dirs * rng.uniform(*dist, size=(n, 1))
    k = (sh_degree + 1) ** 2
    sh = np.zeros((n, k, 3))
    sh[:, 0] = rgb_to_sh0(rng.uniform(0.1, 0.9, (n, 3)))
    if k > 1:
        sh[:, 1:] = rng.normal(0, 0.1, (n, k - 1, 3))
    return GaussianScene(
        means, rng.normal(size=(n, 4)), np.log(rng.uniform(*scale, size=(n, 3))),
        rng.normal(0, opacity_sd, n), sh, np.full(n, filter_radius), sh_degree,
    )


def origin_camera(width=64, height=32, **kw):
    return ErpCamera(np.eye(3), np.zeros(3), width, height, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def brute_force_pairs(scene, cam, settings=RenderSettings()):
    """(H, W, N) mask of pixel/Gaussian pairs inside the 3-sigma support with o * g_max >= 1/255."""
    M = scene.rotations() / scene.inflated_scales[:, :, None]
    oloc = np.einsum("nij,nj->ni", M, cam.center - scene.means)
    rloc = np.einsum("nij,hwj->hwni", M, cam.rays)
    A = (rloc**2).sum(-1)
    B = (rloc * oloc).sum(-1)
    C = (oloc**2).sum(-1)
    t = -B / A
    q = np.maximum(C - B * B / A, 0.0)
    a = scene.effective_opacities * np.exp(-0.5 * q)
    return (t > settings.t_near) & (q <= settings.sigma_cutoff**2) & (a >= 1 / 255)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
