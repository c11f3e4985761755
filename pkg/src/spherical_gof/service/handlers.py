"""Request handlers shared by the HTTP service and the in-process CLI."""

from __future__ import annotations

import math
import sys
import time
from pathlib import Path
from typing import Callable, Optional

from ..camera import read_poses
from ..errors import ConfigError
from ..evaluation.metrics import METRICS_HEADER, MetricRow, ViewPairSpec, evaluate_views, parse_pairs
from ..evaluation.rotation import rotation_eval, synthetic_truth
from ..evaluation.synth import SyntheticScene, scene_from_dict, synth_generate, save_dataset, textured_room
from ..io import list_images, read_image, read_pfm, write_image, write_pfm
from ..ply import read_point_cloud, read_scene
from ..renderer import RenderSettings, render
from ..training.config import TrainConfig, load_config
from ..training.trainer import train
from .models import (
    EvalRequest, EvalResponse, MetricRowModel, RenderRequest, RenderResponse, RotateEvalRequest, SynthRequest,
    SynthResponse, TrainRequest, TrainSummary,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def _require(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {path}")
    return p


def handle_render(req: RenderRequest) -> RenderResponse:
    t0 = time.perf_counter()
    scene = read_scene(_require(req.scene, "scene"))
    cams = read_poses(_require(req.poses, "pose file"))
    out = Path(req.out)
    out.mkdir(parents=True, exist_ok=True)
    settings = RenderSettings(tile_size=req.tile, sh_degree=req.sh_degree)
    names = []
    for i, cam in enumerate(cams):
        name = cam.name or f"view_{i:03d}"
        r = render(scene, cam, settings)
        write_image(out / f"{name}.png", r.rgb)
        write_pfm(out / f"{name}_rgb.pfm", r.rgb)
        write_pfm(out / f"{name}_depth.pfm", r.depth)
        write_pfm(out / f"{name}_alpha.pfm", r.alpha)
        write_pfm(out / f"{name}_normal.pfm", r.normal)
        write_image(out / f"{name}_normal.png", 0.5 * (r.normal + 1.0))
        names.append(name)
    return RenderResponse(out=str(out), views=names, seconds=time.perf_counter() - t0)


def handle_train(req: TrainRequest, progress: Optional[Callable[[int, int], None]] = None) -> TrainSummary:
    t0 = time.perf_counter()
    cfg = load_config(_require(req.config, "config")) if req.config else TrainConfig()
    if req.iterations is not None:
        cfg = cfg.scaled(req.iterations)
    cams = read_poses(_require(req.poses, "pose file"))
    imgs = list_images(_require(req.images, "image folder"))
    images = []
    for cam in cams:
        if cam.name not in imgs:
            raise ConfigError(f"no image named {cam.name!r} in {req.images}")
        images.append(read_image(imgs[cam.name]))
    pc = read_point_cloud(_require(req.points, "point cloud"))
    cb = None
    if progress is not None:
        def cb(it, bd, scene):
            progress(it, cfg.iterations)
    res = train(cams, images, pc.points, pc.colors, cfg, out_dir=req.out, callback=cb)
    final = res.history[-1][2].total if res.history else None
    return TrainSummary(out=req.out, scene=str(Path(req.out) / "scene.ply"), iterations=cfg.iterations,
                        n_gaussians=len(res.scene), final_loss=final, seconds=time.perf_counter() - t0)


def _find(folder: Path, name: str, candidates) -> Optional[Path]:
    for rel in candidates:
        p = folder / rel.format(name=name)
        if p.exists():
            return p
    return None


def _row_model(r: MetricRow) -> MetricRowModel:
    def opt(x):
        return None if x is None or (isinstance(x, float) and math.isnan(x)) else x

    return MetricRowModel(scene=r.scene, theta=r.theta, psnr=r.psnr, ssim=r.ssim, dre=opt(r.dre), cir=opt(r.cir),
                          valid_px=r.valid_px)


def _write_metrics(path: Optional[str], rows) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text("\n".join([METRICS_HEADER] + [r.csv() for r in rows]) + "\n")


def handle_eval(req: EvalRequest) -> EvalResponse:
    cams = read_poses(_require(req.poses, "pose file"))
    pred, gt = _require(req.pred, "prediction folder"), _require(req.gt, "ground-truth folder")
    p_rgb, g_rgb, p_depth = [], [], []
    for cam in cams:
        pi = _find(pred, cam.name, ["{name}.png", "images/{name}.png"])
        gi = _find(gt, cam.name, ["images/{name}.png", "{name}.png"])
        pd = _find(pred, cam.name, ["{name}_depth.pfm", "depth/{name}.pfm"])
        if pi is None or gi is None or pd is None:
            raise ConfigError(f"missing prediction image, depth or ground truth for view {cam.name!r}")
        p_rgb.append(read_image(pi))
        g_rgb.append(read_image(gi))
        p_depth.append(read_pfm(pd))
    pairs = parse_pairs(req.pairs, len(cams))
    spec = ViewPairSpec(pairs, req.eps, req.tau_cyc, req.clamp)
    row = evaluate_views(p_rgb, g_rgb, p_depth, cams, scene=req.scene_name, spec=spec)
    _write_metrics(req.out, [row])
    return EvalResponse(rows=[_row_model(row)], out=req.out, dre_clamp=req.clamp)


def load_synth_spec(path: Optional[str], preset: Optional[str] = None) -> SyntheticScene:
    if path:
        try:
            cfg = tomllib.loads(_require(path, "scene spec").read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return scene_from_dict(cfg)
    if preset:
        return scene_from_dict({"preset": preset})
    return textured_room()


def handle_synth(req: SynthRequest) -> SynthResponse:
    scene = load_synth_spec(req.spec, req.preset)
    ds = synth_generate(scene)
    save_dataset(ds, req.out)
    return SynthResponse(out=req.out, n_views=len(ds.cams), n_points=len(ds.points),
                         train_views=ds.train_ids, test_views=ds.test_ids)


def handle_rotate_eval(req: RotateEvalRequest) -> EvalResponse:
    scene = read_scene(_require(req.scene, "scene"))
    cams = read_poses(_require(req.poses, "pose file"))
    synth = load_synth_spec(req.spec)
    rows = rotation_eval(scene, cams, synthetic_truth(synth), req.thetas, req.seed,
                         RenderSettings(tile_size=req.tile), name=Path(req.scene).stem)
    _write_metrics(req.out, rows)
    return EvalResponse(rows=[_row_model(r) for r in rows], out=req.out)
