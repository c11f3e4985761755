"""Adam over the scene's parameter groups, with row-aware resizing for densification."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..gaussians import GaussianScene
from .backward import SceneGrads

log = logging.getLogger(__name__)

GROUPS = ("means", "quats", "log_scales", "opacity_logits", "sh")


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_scene(cls, scene: GaussianScene) -> "AdamState":
        st = cls()
        for g in GROUPS:
            st.m[g] = np.zeros_like(getattr(scene, g))
            st.v[g] = np.zeros_like(getattr(scene, g))
        return st

    def subset(self, keep) -> "AdamState":
        return AdamState(self.step, {k: a[keep] for k, a in self.m.items()}, {k: a[keep] for k, a in self.v.items()})

    def extend(self, n_new: int) -> "AdamState":
        """Append zero moments for ``n_new`` rows."""
        def grow(a):
            return np.concatenate([a, np.zeros((n_new,) + a.shape[1:])])

        return AdamState(self.step, {k: grow(a) for k, a in self.m.items()}, {k: grow(a) for k, a in self.v.items()})

    def arrays(self) -> dict:
        out = {"step": np.array(self.step)}
        for g in GROUPS:
            out[f"m_{g}"] = self.m[g]
            out[f"v_{g}"] = self.v[g]
        return out

    @classmethod
    def from_arrays(cls, arrs) -> "AdamState":
        return cls(int(arrs["step"]), {g: np.array(arrs[f"m_{g}"]) for g in GROUPS},
                   {g: np.array(arrs[f"v_{g}"]) for g in GROUPS})


def adam_step(
    scene: GaussianScene,
    grads: SceneGrads,
    state: AdamState,
    lrs: dict,
    betas: tuple = (0.9, 0.999),
    eps: float = 1e-15,
) -> None:
    """In-place update of ``scene`` and ``state``.

    Rows whose gradient has a non-finite entry are skipped for that group:
    neither the parameter nor its moments change. Rows with an all-zero
    gradient (not seen this step) keep their parameters; moments decay. Updated quaternions
    are renormalized; scales stay positive through the log.
    """
    b1, b2 = betas
    state.step += 1
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for g in GROUPS:
        lr = lrs[g]
        p = getattr(scene, g)
        gr = getattr(grads, g)
        rows = gr.reshape(len(gr), -1)
        ok = np.isfinite(rows).all(axis=1)
        if not ok.all():
            log.warning("skipping %d rows of %s with non-finite gradients", int((~ok).sum()), g)
        shape = (-1,) + (1,) * (gr.ndim - 1)
        okb = ok.reshape(shape)
        gr = np.where(okb, gr, 0.0)
        m, v = state.m[g], state.v[g]
        m_new = b1 * m + (1.0 - b1) * gr
        v_new = b2 * v + (1.0 - b2) * gr * gr
        upd = lr * (m_new / bc1) / (np.sqrt(v_new / bc2) + eps)
        state.m[g] = np.where(okb, m_new, m)
        state.v[g] = np.where(okb, v_new, v)
        live = (ok & (rows != 0).any(axis=1)).reshape(shape)
        p -= np.where(live, upd, 0.0)
        if g == "quats":
            moved = live.reshape(-1)
            p[moved] /= np.linalg.norm(p[moved], axis=1, keepdims=True)
