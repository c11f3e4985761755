import math
from dataclasses import replace

import numpy as np
import pytest
from conftest import origin_camera

from spherical_gof.errors import ConfigError
from spherical_gof.evaluation.synth import synth_generate, textured_room
from spherical_gof.ply import read_scene
from spherical_gof.training.config import LearningRates, TrainConfig, config_from_dict, load_config
from spherical_gof.training.trainer import init_scene, learning_rates, load_optimizer, scene_extent, train


@pytest.fixture(scope="module")
def tiny():
    scene = replace(textured_room(32, 16, n_views=6), n_points=600)
    ds = synth_generate(scene)
    return ds


def small_cfg(iterations=30, **kw):
    return replace(TrainConfig(tile_size=8).scaled(iterations), **kw)


def test_schedule_defaults():
    cfg = TrainConfig()
    assert (cfg.iterations, cfg.densify_until, cfg.densify_interval) == (8000, 4000, 100)
    assert cfg.schedule(999).jump == 0.0
    assert cfg.schedule(2500).jump == pytest.approx(0.5)
    assert cfg.schedule(4000).jump == 1.0
    assert cfg.schedule(4999).dn == 0.0 and cfg.schedule(5000).dn == 1.0
    assert cfg.loss.lambda_j1 == 0.45 and cfg.loss.lambda_j2 == 0.32 and cfg.loss.lambda_dn == 0.03


def test_scaled_schedule():
    cfg = TrainConfig().scaled(2000)
    assert cfg.iterations == 2000 and cfg.densify_until == 1000 and cfg.densify_from == 125
    assert cfg.jump_ramp == (250, 1000) and cfg.dn_start == 1250


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(iterations=100)  # densify_until 4000 > iterations
    with pytest.raises(ConfigError):
        TrainConfig(lr=LearningRates(means=0.0))
    with pytest.raises(ConfigError):
        TrainConfig(jump_ramp=(10, 5))
    with pytest.raises(ConfigError):
        config_from_dict({"iterations": 10, "bogus": 1})


def test_config_toml(tmp_path):
    p = tmp_path / "cfg.toml"
    p.write_text('iterations = 400\ndensify_until = 200\njump_ramp = [50, 200]\n'
                 '[lr]\nopacity_logits = 0.02\n[loss]\nlambda_j1 = 0.1\n')
    cfg = load_config(p)
    assert cfg.iterations == 400 and cfg.jump_ramp == (50, 200)
    assert cfg.lr.opacity_logits == 0.02 and cfg.loss.lambda_j1 == 0.1
    assert config_from_dict(cfg.to_dict()) == cfg
    p.write_text("iterations = [")
    with pytest.raises(ConfigError):
        load_config(p)


def test_init_scene_scales_from_neighbours():
    g = np.stack(np.meshgrid(np.arange(5.0), np.arange(5.0), np.arange(5.0)), -1).reshape(-1, 3)
    sc = init_scene(g + 10.0, None, [origin_camera()])
    interior = np.all((g > 0) & (g < 4), axis=1)
    np.testing.assert_allclose(sc.scales[interior], 1.0)
    np.testing.assert_allclose(sc.opacities, 0.1)
    np.testing.assert_allclose(sc.sh[:, 0] * 0.28209479177387814 + 0.5, 0.5)
    with pytest.raises(ConfigError):
        init_scene(np.zeros((0, 3)), None, [origin_camera()])


def test_learning_rate_decay():
    cfg = TrainConfig()
    lr0 = learning_rates(cfg, 0, 2.0)["means"]
    lr1 = learning_rates(cfg, cfg.iterations, 2.0)["means"]
    assert lr0 == pytest.approx(1.6e-4 * 2.0) and lr1 == pytest.approx(1.6e-6 * 2.0)
    mid = learning_rates(cfg, cfg.iterations // 2, 2.0)["means"]
    assert mid == pytest.approx(math.sqrt(lr0 * lr1))


def test_zero_iterations_returns_init(tiny):
    cams, imgs, _ = tiny.subset(tiny.train_ids)
    cfg = TrainConfig(iterations=0, densify_until=0, densify_from=0)
    res = train(cams, imgs, tiny.points, tiny.colors, cfg)
    ref = init_scene(tiny.points, tiny.colors, cams, cfg)
    for name in ("means", "quats", "log_scales", "opacity_logits", "sh", "filter_radii"):
        np.testing.assert_array_equal(getattr(res.scene, name), getattr(ref, name))
    assert res.history == []


def test_empty_inputs_raise(tiny):
    cams, imgs, _ = tiny.subset(tiny.train_ids)
    with pytest.raises(ConfigError):
        train(cams, imgs, np.zeros((0, 3)), None, small_cfg())
    with pytest.raises(ConfigError):
        train([], [], tiny.points, None, small_cfg())
    with pytest.raises(ConfigError):
        train(cams, [im[:, :8] for im in imgs], tiny.points, None, small_cfg())


def test_short_run_is_deterministic_and_checkpoints(tiny, tmp_path):
    cams, imgs, _ = tiny.subset(tiny.train_ids)
    cfg = small_cfg(40, checkpoint_interval=20)
    a = train(cams, imgs, tiny.points, tiny.colors, cfg, out_dir=tmp_path / "a")
    b = train(cams, imgs, tiny.points, tiny.colors, cfg, out_dir=tmp_path / "b")
    for name in ("means", "quats", "log_scales", "opacity_logits", "sh"):
        np.testing.assert_array_equal(getattr(a.scene, name), getattr(b.scene, name))
    assert (tmp_path / "a" / "scene_000020.ply").exists()
    assert (tmp_path / "a" / "scene.ply").read_bytes() == (tmp_path / "b" / "scene.ply").read_bytes()
    back = read_scene(tmp_path / "a" / "scene.ply")
    np.testing.assert_array_equal(back.means, a.scene.means)
    opt = load_optimizer(tmp_path / "a" / "scene.ply")
    assert opt.step == 40 and opt.m["means"].shape == a.scene.means.shape
    log = (tmp_path / "a" / "train_log.csv").read_text().splitlines()
    assert log[0].startswith("iteration,total,rgb,dn,jump1,jump2,valid_px") and len(log) == 41
    assert (tmp_path / "a" / "config.json").exists()


def test_training_reduces_loss_and_keeps_primitives_valid(tiny):
    cams, imgs, _ = tiny.subset(tiny.train_ids)
    cfg = small_cfg(120)
    res = train(cams, imgs, tiny.points, tiny.colors, cfg)
    totals = np.array([bd.rgb for _, _, bd, _ in res.history])
    assert totals[-20:].mean() < totals[:20].mean()
    sc = res.scene
    assert np.all(np.isfinite(sc.means)) and np.all(sc.scales > 0)
    np.testing.assert_allclose(np.linalg.norm(sc.quats, axis=1), 1.0, atol=1e-9)
    assert np.all((sc.opacities > 0) & (sc.opacities < 1))


def test_scene_extent():
    pts = np.array([[1.0, 0, 0]] * 9 + [[10.0, 0, 0]])
    assert scene_extent([origin_camera()], pts) == pytest.approx(np.percentile([1.0] * 9 + [10.0], 90))
