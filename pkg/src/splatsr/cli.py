"""Command-line entry points.

Usage::

    splatsr make-data   --out data/ [--config c.json] [--seed 0]
    splatsr pretrain-lr --out run_lr/ [--data data/]
    splatsr run-3dsr    --out run/ [--data data/] [--scene-lr run_lr/scene_lr.ckpt]
    splatsr run-baseline --kind perview|bicubic --out run_b/ [--data data/]
    splatsr evaluate    --run run/
    splatsr render-grid --run run/ --baseline run_b/ --out grid.png [--views 0,8]

Configuration is one JSON file with the sections ``data``, ``pipeline``,
``denoiser`` and ``codec``; ``--set section.key=value`` overrides single
entries (values are parsed as JSON when possible).  ``--seed`` overrides
every seed.  Each command writes the merged configuration to
``<out>/config.json`` before it starts.

On failure a single line ``error: <category>: <message>`` goes to stderr
and the exit code is 1; bad usage exits with 2.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .codec import CodecSpec
from .data import ViewSet, load_dataset, make_synthetic_scene, save_dataset
from .denoiser import load_denoiser, oracle
from .errors import ConfigurationError, DataError, ParameterError, SplatSRError
from .gaussians.scene import GaussianScene
from .imaging import load_png, save_png, upsample
from .pipeline import (PipelineConfig, evaluate, pretrain_lr, render_views, run_3dsr, run_bicubic_baseline,
                       run_perview_baseline, write_metrics)

DEFAULTS = {
    "data": {"path": None, "kind": "blob_cluster", "n_views": 16, "image_size": 64, "sr_factor": 4,
             "n_blobs": 40, "test_every": 8, "seed": 0},
    "pipeline": PipelineConfig().to_dict(),
    "denoiser": {"kind": "oracle", "strength": 0.5, "smoothness": 2.0, "seed": 0, "checkpoint": None},
    "codec": {"kind": "identity", "factor": 1},
}

SUBCOMMANDS = ("make-data", "pretrain-lr", "run-3dsr", "run-baseline", "evaluate", "render-grid")


# ---------------------------------------------------------------------------
# configuration


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def merge_config(base: dict, file_doc: dict | None, overrides: list[str], seed: int | None) -> dict:
    """Defaults < config file < ``--set`` overrides < ``--seed``.  Unknown keys raise."""
    cfg = copy.deepcopy(base)

    def assign(section, key, value, origin):
        if section not in cfg:
            raise ParameterError(origin, f"unknown section {section!r}")
        if key not in cfg[section]:
            raise ParameterError(origin, f"unknown key {section}.{key}")
        cfg[section][key] = value

    for section, entries in (file_doc or {}).items():
        if section not in cfg:
            raise ParameterError("config", f"unknown section {section!r}")
        if not isinstance(entries, dict):
            raise ParameterError("config", f"section {section!r} must be an object")
        for key, value in entries.items():
            assign(section, key, value, "config")
    for item in overrides or []:
        if "=" not in item:
            raise ParameterError("--set", f"expected key=value, got {item!r}")
        dotted, value = item.split("=", 1)
        parts = dotted.split(".")
        if len(parts) == 3 and parts[:2] == ["pipeline", "lrs"]:
            if parts[2] not in cfg["pipeline"]["lrs"]:
                raise ParameterError("--set", f"unknown key {dotted}")
            cfg["pipeline"]["lrs"][parts[2]] = _parse_value(value)
            continue
        if len(parts) != 2:
            raise ParameterError("--set", f"expected section.key, got {dotted!r}")
        assign(parts[0], parts[1], _parse_value(value), "--set")
    if seed is not None:
        cfg["data"]["seed"] = cfg["pipeline"]["seed"] = cfg["denoiser"]["seed"] = int(seed)
    cfg["pipeline"]["sr_factor"] = cfg["data"]["sr_factor"]
    return cfg


def load_config(path, overrides, seed) -> dict:
    doc = None
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    return merge_config(DEFAULTS, doc, overrides, seed)


def write_snapshot(cfg: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))


def build_views(cfg: dict) -> ViewSet:
    d = cfg["data"]
    if d["path"]:
        return load_dataset(d["path"])
    return make_synthetic_scene(d["kind"], n_views=d["n_views"], image_size=d["image_size"],
                                sr_factor=d["sr_factor"], rng=d["seed"], n_blobs=d["n_blobs"],
                                test_every=d["test_every"])


def build_pipeline_config(cfg: dict) -> PipelineConfig:
    return PipelineConfig.from_dict(cfg["pipeline"])


def build_denoiser(cfg: dict, pc: PipelineConfig):
    d = cfg["denoiser"]
    sched = pc.schedule()
    if d["kind"] == "oracle":
        return oracle(sched, strength=d["strength"], seed=d["seed"], smoothness=d["smoothness"])
    if d["kind"] == "trained":
        if not d["checkpoint"]:
            raise ConfigurationError("denoiser.checkpoint is required for a trained denoiser")
        return load_denoiser(d["checkpoint"], sched)
    raise ParameterError("denoiser.kind", f"must be 'oracle' or 'trained', got {d['kind']!r}")


def build_codec(cfg: dict) -> CodecSpec:
    c = cfg["codec"]
    return CodecSpec(kind=c["kind"], factor=c["factor"], faithfulness=cfg["pipeline"]["faithfulness"])


# ---------------------------------------------------------------------------
# run artifacts


def export_renders(scene: GaussianScene, views: ViewSet, run_dir: Path) -> list[int]:
    """Write ``renders/view_{i}.png`` for the test views (all views if none are held out).

    The LR input and, when available, the HR ground truth are copied next to
    them as ``view_{i}_lr.png`` / ``view_{i}_gt.png`` so a run directory is
    self-contained for :func:`render_grid`.
    """
    ids = views.indices("test") or list(range(len(views)))
    out = run_dir / "renders"
    for i, res in render_views(scene, views, ids).items():
        save_png(res.image, out / f"view_{i}.png")
        save_png(views.views[i].lr, out / f"view_{i}_lr.png")
        if views.views[i].hr is not None:
            save_png(views.views[i].hr, out / f"view_{i}_gt.png")
    return ids


def run_id(manifest: dict) -> str:
    """Stable identifier: run kind plus a hash of the configuration."""
    digest = hashlib.sha256(json.dumps(manifest["config"], sort_keys=True).encode()).hexdigest()
    return f"{manifest['kind']}-{digest[:12]}"


def _finish_run(scene, views, manifest, run_dir: Path, images=None):
    export_renders(scene, views, run_dir)
    if views.has_ground_truth and views.indices("test"):
        report = evaluate(scene, views, run_id=run_id(manifest.data), images=images)
        write_metrics(report, run_dir)


def _load_scene_lr(path) -> GaussianScene | None:
    return None if path is None else GaussianScene.load(path)


def _perview_images(run_dir: Path, views: ViewSet) -> dict:
    images = {}
    for i in views.indices("train"):
        p = run_dir / "step_0" / f"view_{i}_H.npy"
        if not p.exists():
            raise DataError(f"missing per-view output {p}")
        images[i] = torch.from_numpy(np.load(p))
    return images


def render_grid(run_dir, baseline_dir, out_png, views: list[int] | None = None, header: int = 12) -> Path:
    """Comparison strip per view: LR upsampled | baseline | 3DSR | ground truth.

    Tiles are copied pixel-for-pixel from the runs' ``renders/`` PNGs (the
    LR column is upsampled bicubically).  When no ground truth exists the
    last column is dropped and the header says so.
    """
    from PIL import Image, ImageDraw

    run_dir, baseline_dir = Path(run_dir), Path(baseline_dir)
    if views is None:
        views = sorted(int(p.stem.split("_")[1]) for p in (run_dir / "renders").glob("view_*.png")
                       if p.stem.count("_") == 1)
    needed = []
    for i in views:
        needed += [run_dir / "renders" / f"view_{i}.png", run_dir / "renders" / f"view_{i}_lr.png",
                   baseline_dir / "renders" / f"view_{i}.png"]
    missing = [str(p) for p in needed if not p.exists()]
    if missing or not views:
        raise DataError("missing run artifacts: " + (", ".join(missing) if missing else "no rendered views"))
    has_gt = all((run_dir / "renders" / f"view_{i}_gt.png").exists() for i in views)

    labels = ["LR upsampled", "baseline", "3DSR"] + (["GT"] if has_gt else [])
    tiles = []
    for i in views:
        sr = np.asarray(Image.open(run_dir / "renders" / f"view_{i}.png").convert("RGB"))
        h, w = sr.shape[:2]
        lr = load_png(run_dir / "renders" / f"view_{i}_lr.png")
        lr_up = upsample(lr, h // lr.shape[0], mode="bicubic").clamp(0, 1)
        row = [np.round(lr_up.numpy() * 255).astype(np.uint8),
               np.asarray(Image.open(baseline_dir / "renders" / f"view_{i}.png").convert("RGB")), sr]
        if has_gt:
            row.append(np.asarray(Image.open(run_dir / "renders" / f"view_{i}_gt.png").convert("RGB")))
        tiles.append(row)
    h, w = tiles[0][2].shape[:2]
    grid = np.zeros((header + h * len(views), w * len(labels), 3), dtype=np.uint8)
    for r, row in enumerate(tiles):
        for c, tile in enumerate(row):
            grid[header + r * h:header + (r + 1) * h, c * w:(c + 1) * w] = tile
    img = Image.fromarray(grid)
    draw = ImageDraw.Draw(img)
    for c, label in enumerate(labels):
        draw.text((c * w + 1, 0), label, fill=(255, 255, 255))
    if not has_gt:
        draw.text((len(labels) * w - 30, 0), "no GT", fill=(255, 200, 0))
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    img.save(out_png)
    (out_png.with_suffix(".json")).write_text(json.dumps(
        {"columns": labels, "views": views, "tile": [h, w], "header": header,
         "note": None if has_gt else "ground truth unavailable; GT column omitted"}, indent=2))
    return out_png


# ---------------------------------------------------------------------------
# commands


def cmd_make_data(args, cfg):
    out = Path(args.out)
    write_snapshot(cfg, out)
    views = build_views(cfg)
    save_dataset(views, out)
    print(f"wrote {len(views)} views to {out}")


def cmd_pretrain_lr(args, cfg):
    out = Path(args.out)
    write_snapshot(cfg, out)
    scene = pretrain_lr(build_views(cfg), build_pipeline_config(cfg))
    scene.save(out / "scene_lr.ckpt")
    print(f"wrote {out / 'scene_lr.ckpt'}")


def cmd_run_3dsr(args, cfg):
    out = Path(args.out)
    write_snapshot(cfg, out)
    views = build_views(cfg)
    pc = build_pipeline_config(cfg)
    scene, manifest = run_3dsr(views, build_denoiser(cfg, pc), build_codec(cfg), pc, run_dir=out,
                               scene_lr=_load_scene_lr(args.scene_lr))
    write_snapshot(cfg, out)
    _finish_run(scene, views, manifest, out)
    print(f"finished 3dsr run in {out}")


def cmd_run_baseline(args, cfg):
    out = Path(args.out)
    write_snapshot(cfg, out)
    views = build_views(cfg)
    pc = build_pipeline_config(cfg)
    scene_lr = _load_scene_lr(args.scene_lr)
    images = None
    if args.kind == "perview":
        images, scene, manifest = run_perview_baseline(views, build_denoiser(cfg, pc), build_codec(cfg), pc,
                                                       run_dir=out, scene_lr=scene_lr)
    else:
        scene, manifest = run_bicubic_baseline(views, pc, run_dir=out, scene_lr=scene_lr)
    write_snapshot(cfg, out)
    _finish_run(scene, views, manifest, out, images=images)
    print(f"finished {args.kind} baseline in {out}")


def cmd_evaluate(args, cfg):
    run = Path(args.run)
    manifest_path = run / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"{manifest_path} not found")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("status") != "finished" or not manifest.get("final_scene"):
        raise DataError(f"run {run} did not finish")
    if args.config is None and not args.set:
        cfg = json.loads((run / "config.json").read_text())
    views = build_views(cfg)
    if not views.has_ground_truth:
        raise DataError("evaluation needs HR ground truth for every view")
    scene = GaussianScene.load(run / manifest["final_scene"])
    images = _perview_images(run, views) if manifest["kind"] == "perview_baseline" else None
    report = evaluate(scene, views, run_id=run_id(manifest), images=images)
    path = write_metrics(report, run)
    print(f"wrote {path} and {path.with_suffix('.csv')}")


def cmd_render_grid(args, cfg):
    if args.baseline is None:
        raise ConfigurationError("render-grid needs --baseline")
    views = [int(v) for v in args.views.split(",")] if args.views else None
    out = render_grid(args.run, args.baseline, args.out, views)
    print(f"wrote {out}")


COMMANDS = {"make-data": cmd_make_data, "pretrain-lr": cmd_pretrain_lr, "run-3dsr": cmd_run_3dsr,
            "run-baseline": cmd_run_baseline, "evaluate": cmd_evaluate, "render-grid": cmd_render_grid}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splatsr", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, help="seed for every random choice")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one configuration entry (repeatable)")
        p.add_argument("--views", help="comma-separated view indices")
        if out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--data", help="dataset directory (overrides data.path)")
        return p

    common(sub.add_parser("make-data", help="generate a synthetic dataset"))
    common(sub.add_parser("pretrain-lr", help="fit a scene to the LR images"))
    p = common(sub.add_parser("run-3dsr", help="3D-consistent super-resolution run"))
    p.add_argument("--scene-lr", help="reuse a pretrained LR scene checkpoint")
    p = common(sub.add_parser("run-baseline", help="per-view or bicubic baseline"))
    p.add_argument("--kind", choices=("perview", "bicubic"), default="perview")
    p.add_argument("--scene-lr", help="reuse a pretrained LR scene checkpoint")
    p = common(sub.add_parser("evaluate", help="metrics for a finished run"), out=False)
    p.add_argument("--run", required=True)
    p = common(sub.add_parser("render-grid", help="comparison image grid"))
    p.add_argument("--run", required=True, help="3DSR run directory")
    p.add_argument("--baseline", help="baseline run directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        overrides = list(args.set)
        if args.data:
            overrides.append(f"data.path={json.dumps(args.data)}")
        cfg = load_config(args.config, overrides, args.seed)
        COMMANDS[args.command](args, cfg)
    except SplatSRError as exc:
        print(f"error: {exc.category}: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    except (OSError, KeyError, TypeError) as exc:
        print(f"error: io: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
