import logging

import numpy as np
import pytest
from conftest import random_scene

from spherical_gof.training.backward import SceneGrads
from spherical_gof.training.optim import GROUPS, AdamState, adam_step

LRS = {"means": 0.01, "quats": 0.01, "log_scales": 0.01, "opacity_logits": 0.01, "sh": 0.01}


def test_zero_gradient_leaves_parameters(rng):
    sc = random_scene(6, rng)
    st = AdamState.for_scene(sc)
    st.m["means"][:] = 0.5
    st.v["means"][:] = 0.25
    before = sc.copy()
    adam_step(sc, SceneGrads.zeros_like(sc), st, LRS)
    for g in GROUPS:
        np.testing.assert_array_equal(getattr(sc, g), getattr(before, g))
    np.testing.assert_allclose(st.m["means"], 0.45)
    np.testing.assert_allclose(st.v["means"], 0.25 * 0.999)


def test_quadratic_toy_converges(rng):
    sc = random_scene(1, rng)
    target = sc.means[0, 0] + 2.0
    st = AdamState.for_scene(sc)
    for _ in range(500):
        g = SceneGrads.zeros_like(sc)
        g.means[0, 0] = 2.0 * (sc.means[0, 0] - target)
        adam_step(sc, g, st, {**LRS, "means": 0.05})
    assert abs(sc.means[0, 0] - target) < 1e-4


def test_non_finite_rows_are_skipped(rng, caplog):
    sc = random_scene(4, rng)
    st = AdamState.for_scene(sc)
    g = SceneGrads.zeros_like(sc)
    g.means[:] = 1.0
    g.means[2, 1] = np.nan
    before = sc.means.copy()
    with caplog.at_level(logging.WARNING):
        adam_step(sc, g, st, LRS)
    assert "non-finite" in caplog.text
    np.testing.assert_array_equal(sc.means[2], before[2])
    assert np.all(st.m["means"][2] == 0) and np.all(st.v["means"][2] == 0)
    assert np.all(sc.means[[0, 1, 3]] != before[[0, 1, 3]])


def test_quaternions_stay_unit(rng):
    sc = random_scene(10, rng)
    st = AdamState.for_scene(sc)
    g = SceneGrads.zeros_like(sc)
    g.quats[:] = rng.normal(size=g.quats.shape)
    for _ in range(20):
        adam_step(sc, g, st, {**LRS, "quats": 0.2})
    np.testing.assert_allclose(np.linalg.norm(sc.quats, axis=1), 1.0, atol=1e-12)


def test_deterministic(rng):
    base = random_scene(8, rng)
    grads = [rng.normal(size=base.means.shape) for _ in range(10)]

    def run():
        sc = base.copy()
        st = AdamState.for_scene(sc)
        for gm in grads:
            g = SceneGrads.zeros_like(sc)
            g.means[:] = gm
            g.opacity_logits[:] = gm[:, 0]
            adam_step(sc, g, st, LRS)
        return sc

    a, b = run(), run()
    for g in GROUPS:
        np.testing.assert_array_equal(getattr(a, g), getattr(b, g))


def test_per_coefficient_sh_rates(rng):
    sc = random_scene(3, rng, sh_degree=1)
    st = AdamState.for_scene(sc)
    g = SceneGrads.zeros_like(sc)
    g.sh[:] = 1.0
    before = sc.sh.copy()
    lr = np.full(sc.sh.shape[1:], 0.001)
    lr[0] = 0.1
    adam_step(sc, g, st, {**LRS, "sh": lr})
    step = before - sc.sh
    np.testing.assert_allclose(step[:, 0], 0.1, rtol=1e-9)
    np.testing.assert_allclose(step[:, 1:], 0.001, rtol=1e-9)


def test_state_resizing(rng):
    sc = random_scene(5, rng)
    st = AdamState.for_scene(sc)
    st.m["means"][:] = np.arange(5)[:, None]
    sub = st.subset(np.array([0, 3])).extend(2)
    np.testing.assert_array_equal(sub.m["means"][:, 0], [0, 3, 0, 0])
    back = AdamState.from_arrays(sub.arrays())
    assert back.step == sub.step
    np.testing.assert_array_equal(back.m["means"], sub.m["means"])
