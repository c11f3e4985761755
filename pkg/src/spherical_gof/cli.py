"""Command line entry point.

Every command runs in-process unless ``--server URL`` is given, in which
case the request is posted to a running ``spgof serve`` instance.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .errors import ConfigError, DomainError
from .service import models


def _abs(p):
    return str(Path(p).resolve()) if p is not None else None


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spgof", description="Ray-space Gaussian rendering and fitting for ERP panoramas")
    p.add_argument("--server", help="base URL of a running service, e.g. http://127.0.0.1:8000")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", help="render RGB/depth/normal/alpha maps for every pose")
    r.add_argument("--scene", required=True)
    r.add_argument("--poses", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--tile", type=int, default=16)
    r.add_argument("--sh-degree", type=int, default=None)

    t = sub.add_parser("train", help="fit a scene to posed panoramas")
    t.add_argument("--images", required=True)
    t.add_argument("--poses", required=True)
    t.add_argument("--points", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--iterations", type=int, help="override; the schedule is scaled to match")
    t.add_argument("--poll", type=float, default=2.0, help="status poll interval with --server, seconds")

    e = sub.add_parser("eval", help="PSNR/SSIM/DRE/CIR of rendered predictions")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--poses", required=True)
    e.add_argument("--pairs", default="adjacent:2")
    e.add_argument("--out")
    e.add_argument("--tau-cyc", type=float, default=2.0)
    e.add_argument("--clamp", type=float, default=1.0)
    e.add_argument("--name", default="scene")

    s = sub.add_parser("synth", help="generate a synthetic dataset with analytic depth")
    s.add_argument("--spec", help="TOML scene spec")
    s.add_argument("--preset", choices=["room", "plane"])
    s.add_argument("--out", required=True)

    q = sub.add_parser("rotate-eval", help="metrics under random camera rotations")
    q.add_argument("--scene", required=True)
    q.add_argument("--poses", required=True)
    q.add_argument("--thetas", type=_floats, default=[0.0, 60.0, 90.0])
    q.add_argument("--seed", type=int, default=7)
    q.add_argument("--spec", help="synthetic scene spec for the ground truth (default: room preset)")
    q.add_argument("--out")
    q.add_argument("--tile", type=int, default=16)

    v = sub.add_parser("serve", help="run the HTTP service")
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8000)
    return p


def _request(args) -> tuple[str, object]:
    c = args.command
    if c == "render":
        return "/render", models.RenderRequest(scene=_abs(args.scene), poses=_abs(args.poses), out=_abs(args.out),
                                               tile=args.tile, sh_degree=args.sh_degree)
    if c == "train":
        return "/train", models.TrainRequest(images=_abs(args.images), poses=_abs(args.poses),
                                             points=_abs(args.points), config=_abs(args.config), out=_abs(args.out),
                                             iterations=args.iterations)
    if c == "eval":
        return "/eval", models.EvalRequest(pred=_abs(args.pred), gt=_abs(args.gt), poses=_abs(args.poses),
                                           pairs=args.pairs, out=_abs(args.out), scene_name=args.name,
                                           tau_cyc=args.tau_cyc, clamp=args.clamp)
    if c == "synth":
        return "/synth", models.SynthRequest(out=_abs(args.out), spec=_abs(args.spec), preset=args.preset)
    if c == "rotate-eval":
        return "/rotate-eval", models.RotateEvalRequest(scene=_abs(args.scene), poses=_abs(args.poses),
                                                        thetas=args.thetas, seed=args.seed, spec=_abs(args.spec),
                                                        out=_abs(args.out), tile=args.tile)
    raise ValueError(c)


def _run_local(path: str, req):
    from .service import handlers

    fn = {
        "/render": handlers.handle_render, "/train": handlers.handle_train, "/eval": handlers.handle_eval,
        "/synth": handlers.handle_synth, "/rotate-eval": handlers.handle_rotate_eval,
    }[path]
    return fn(req).model_dump()


def _run_remote(server: str, path: str, req, poll: float = 2.0):
    import httpx

    with httpx.Client(base_url=server, timeout=None) as client:
        resp = client.post(path, json=req.model_dump())
        if resp.status_code >= 400:
            raise ConfigError(f"server returned {resp.status_code}: {resp.text}")
        body = resp.json()
        if path != "/train":
            return body
        job = body["id"]
        while body["state"] in ("queued", "running"):
            time.sleep(poll)
            body = client.get(f"/jobs/{job}").json()
        if body["state"] == "failed":
            raise ConfigError(f"training job {job} failed: {body.get('error')}")
        return body["result"]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.command == "serve":
        import uvicorn

        from .service.app import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0
    try:
        path, req = _request(args)
        if args.server:
            out = _run_remote(args.server, path, req, getattr(args, "poll", 2.0))
        else:
            out = _run_local(path, req)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(out, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
