"""Analytic gradients of rendered maps with respect to Gaussian parameters."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import _kernels
from ..gaussians import GaussianScene, rotmat_grad_to_quat, scene_colors_backward, sigmoid
from ..renderer import DEFAULT_SETTINGS, RenderSettings, ViewData, _kernel_args


@dataclass
class SceneGrads:
    means: np.ndarray
    quats: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    # mean gradient through geometry only (no view-dependent color), and
    # which Gaussians received any gradient; both feed densification
    means_geom: Optional[np.ndarray] = None
    visible: Optional[np.ndarray] = None

    @classmethod
    def zeros_like(cls, scene: GaussianScene) -> "SceneGrads":
        return cls(
            np.zeros_like(scene.means), np.zeros_like(scene.quats), np.zeros_like(scene.log_scales),
            np.zeros_like(scene.opacity_logits), np.zeros_like(scene.sh),
        )

    def __iadd__(self, other: "SceneGrads") -> "SceneGrads":
        for name in ("means", "quats", "log_scales", "opacity_logits", "sh"):
            getattr(self, name).__iadd__(getattr(other, name))
        if self.means_geom is not None and other.means_geom is not None:
            self.means_geom += other.means_geom
        if self.visible is not None and other.visible is not None:
            self.visible |= other.visible
        return self

    def flat(self) -> np.ndarray:
        return np.concatenate([self.means.ravel(), self.quats.ravel(), self.log_scales.ravel(),
                               self.opacity_logits.ravel(), self.sh.ravel()])


def backward(
    scene: GaussianScene,
    view: ViewData,
    grads: dict,
    settings: RenderSettings = DEFAULT_SETTINGS,
) -> SceneGrads:
    """Backpropagate map gradients (keys rgb, depth, normal, alpha) to the scene.

    ``view`` must come from :func:`spherical_gof.renderer.prepare_view` on the
    same scene. The chain covers scale inflation and opacity compensation;
    filter radii are treated as constants.
    """
    n = len(scene)
    H, W = view.cam.height, view.cam.width
    g_rgb = np.ascontiguousarray(grads.get("rgb", np.zeros((H, W, 3))), dtype=np.float64)
    g_depth = np.ascontiguousarray(grads.get("depth", np.zeros((H, W))), dtype=np.float64)
    g_normal = np.ascontiguousarray(grads.get("normal", np.zeros((H, W, 3))), dtype=np.float64)
    g_alpha = np.ascontiguousarray(grads.get("alpha", np.zeros((H, W))), dtype=np.float64)

    entry = _kernels.backward_kernel(*_kernel_args(view, settings), g_rgb, g_depth, g_normal, g_alpha)
    G = _kernels.reduce_entries(entry, view.tiles.ids, n)
    g_oloc = G[:, 0:3]
    g_M = G[:, 3:12].reshape(n, 3, 3) + g_oloc[:, :, None] * view.o_minus_mu[:, None, :]
    g_opac = G[:, 12]
    g_color = G[:, 13:16]
    g_axis = G[:, 16:19]

    d_means = -np.einsum("nij,ni->nj", view.M, g_oloc)

    # M = diag(1 / s_tilde) R
    s_t = view.s_tilde
    dR = g_M / s_t[:, :, None]
    d_st = -np.sum(g_M * view.M, axis=2) / s_t
    dR[np.arange(n), view.axis_index] += g_axis * view.axis_sign[:, None]

    s = scene.scales
    f2 = scene.filter_radii[:, None] ** 2
    sig = sigmoid(scene.opacity_logits)
    d_logit = g_opac * view.opacity * (1.0 - sig)
    # opacity compensation prod(s / s_tilde): d(s_k / s_tilde_k)/ds_k = f^2 / s_tilde_k^3
    d_s = (g_opac * view.opacity)[:, None] * f2 / (s * s_t**2)
    d_s += d_st * s / s_t
    d_log_scales = d_s * s

    d_quats = rotmat_grad_to_quat(scene.quats, dR)
    d_sh, d_means_color = scene_colors_backward(scene, view.color_cache, g_color)
    visible = np.any(G != 0.0, axis=1)
    return SceneGrads(d_means + d_means_color, d_quats, d_log_scales, d_logit, d_sh, d_means, visible)
