"""End-to-end runs: LR pretraining, 3D-consistent sampling and the baselines.

A run optionally persists into a directory::

    run_dir/config.json
    run_dir/manifest.json
    run_dir/step_{t}/view_{i}_H.png   (+ .npy raw arrays)
    run_dir/step_{t}/view_{i}_R.png
    run_dir/scene_final.ckpt
    run_dir/metrics.json, metrics.csv

``manifest.json`` is rewritten after every stage; entries are only ever
appended, and every path it lists exists by the time it is written.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import codec as codec_mod
from .codec import CodecSpec
from .data import ViewSet
from .denoiser import DenoiserSpec, predict_noise
from .diffusion import NoiseSchedule, estimate_x0, guided_denoise_step, make_default_schedule
from .errors import DataError, ParameterError, SplatSRError
from .gaussians.fit import DEFAULT_LRS, FitConfig, fit, init_scene_from_views
from .gaussians.losses import subsample
from .gaussians.render import render
from .gaussians.scene import GaussianScene
from .imaging import save_png, upsample
from .metrics import build_report, cross_view_consistency, psnr, write_report

logger = logging.getLogger(__name__)

TIMING_KEYS = ("wall_clock_s", "started", "finished")


@dataclass
class PipelineConfig:
    T: int = 4
    fit_iterations_per_step: int = 500
    pretrain_iterations: int = 3000
    lam: float = 1.0
    delta: float = 0.2
    eta: float = 0.0
    faithfulness: float = 0.2
    seed: int = 0
    sr_factor: int = 4
    n_gaussians: int = 200
    baseline_lam: float = 0.0
    batch_size: int = 1
    lrs: dict = field(default_factory=lambda: dict(DEFAULT_LRS))

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("T", "fit_iterations_per_step", "pretrain_iterations", "n_gaussians", "batch_size"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ParameterError(name, f"must be an integer >= 1, got {v}")
        if self.sr_factor not in (2, 4):
            raise ParameterError("sr_factor", f"must be 2 or 4, got {self.sr_factor}")
        if not 0.0 <= self.delta <= 1.0:
            raise ParameterError("delta", f"must lie in [0, 1], got {self.delta}")
        if self.lam < 0 or self.baseline_lam < 0:
            raise ParameterError("lam", "weights must be >= 0")
        if not 0.0 <= self.eta <= 1.0:
            raise ParameterError("eta", f"must lie in [0, 1], got {self.eta}")
        if not 0.0 <= self.faithfulness <= 1.0:
            raise ParameterError("faithfulness", f"must lie in [0, 1], got {self.faithfulness}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ParameterError("config", f"unknown keys {sorted(unknown)}")
        return cls(**doc)

    def schedule(self) -> NoiseSchedule:
        return make_default_schedule(self.T, self.eta)

    def fit_config(self, iterations: int, lam: float, sr_factor: int, seed: int, background) -> FitConfig:
        return FitConfig(iterations=iterations, lrs=dict(self.lrs), lam=lam, delta=self.delta,
                         sr_factor=sr_factor, seed=seed, batch_size=self.batch_size,
                         background=tuple(background))


class RunManifest:
    """Append-only record of a run, flushed to ``manifest.json`` when persisted."""

    def __init__(self, kind: str, config: PipelineConfig, run_dir=None):
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.data = {"kind": kind, "config": config.to_dict(), "steps": [], "stages": [],
                     "final_scene": None, "status": "running"}
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            (self.run_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
            self.flush()

    @property
    def kind(self) -> str:
        return self.data["kind"]

    @property
    def steps(self) -> list:
        return self.data["steps"]

    def add_stage(self, name: str, seconds: float, **info) -> None:
        self.data["stages"].append({"name": name, "wall_clock_s": seconds, **info})
        self.flush()

    def add_step(self, entry: dict) -> None:
        self.data["steps"].append(entry)
        self.flush()

    def set(self, key: str, value) -> None:
        if key in ("steps", "stages"):
            raise KeyError(f"{key} is append-only")
        self.data[key] = value
        self.flush()

    def path(self, rel: str) -> Path | None:
        return None if self.run_dir is None else self.run_dir / rel

    def flush(self) -> None:
        if self.run_dir is None:
            return
        for rel in _referenced_paths(self.data):
            if not (self.run_dir / rel).exists():
                raise DataError(f"manifest references missing file {rel}")
        tmp = self.run_dir / "manifest.json.tmp"
        tmp.write_text(json.dumps(self.data, indent=2, sort_keys=True))
        tmp.replace(self.run_dir / "manifest.json")

    def without_timings(self) -> dict:
        return _strip(self.data)


def _referenced_paths(obj):
    if isinstance(obj, dict):
        for k, v in obj.items():
            if k.endswith("path") or k in ("final_scene", "H", "R", "H_raw", "R_raw"):
                if isinstance(v, str):
                    yield v
            else:
                yield from _referenced_paths(v)
    elif isinstance(obj, list):
        for v in obj:
            yield from _referenced_paths(v)


def _strip(obj):
    if isinstance(obj, dict):
        return {k: _strip(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [_strip(v) for v in obj]
    return obj


def _check_views(views: ViewSet) -> list[int]:
    train = views.indices("train")
    if not train:
        raise DataError("the view set has no training views")
    for i in train:
        if views.views[i].lr is None:
            raise DataError(f"view {i} has no LR image")
    return train


def pretrain_lr(views: ViewSet, config: PipelineConfig, history: list | None = None) -> GaussianScene:
    """Fit a fresh scene to the LR training images at LR resolution."""
    config.validate()
    train = _check_views(views)
    scene = init_scene_from_views(views, config.n_gaussians, rng=config.seed)
    fc = config.fit_config(config.pretrain_iterations, lam=0.0, sr_factor=1, seed=config.seed,
                           background=views.background)
    return fit(scene, [views.views[i].lr for i in train], [views.views[i].camera for i in train],
               None, fc, history=history)


def _save_pair(manifest: RunManifest, rel: str, img: torch.Tensor) -> dict:
    if manifest.run_dir is None:
        return {}
    save_png(img, manifest.run_dir / f"{rel}.png")
    np.save(manifest.run_dir / f"{rel}.npy", img.detach().float().numpy())
    return {rel.rsplit("_", 1)[-1]: f"{rel}.png", rel.rsplit("_", 1)[-1] + "_raw": f"{rel}.npy"}


class _Sampler:
    """Shared per-view latent bookkeeping for the samplers."""

    def __init__(self, views: ViewSet, denoiser: DenoiserSpec, codec: CodecSpec, config: PipelineConfig):
        self.views, self.denoiser, self.codec, self.config = views, denoiser, codec, config
        self.schedule = denoiser.schedule
        if self.schedule.T != config.T:
            raise ParameterError("T", f"denoiser schedule has T={self.schedule.T}, config T={config.T}")
        self.train = _check_views(views)
        self.hr_cams = {i: views.hr_camera(i) for i in self.train}
        hr_shape = (self.hr_cams[self.train[0]].height, self.hr_cams[self.train[0]].width, codec.latent_channels)
        self.latent_shape = codec.latent_shape(hr_shape)
        self.cond = {i: codec_mod.encode(views.views[i].lr, codec).clone() for i in self.train}
        self.cond_digest = self._digest_conditions()
        self.truth = {}
        for i in self.train:
            hr = views.views[i].hr
            self.truth[i] = None if hr is None else codec_mod.encode(hr, codec)
        gen = torch.Generator().manual_seed(int(config.seed))
        self.gen = gen
        self.x = {i: torch.randn(self.latent_shape, generator=gen) for i in self.train}

    def _digest_conditions(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for i in self.train:
            h.update(self.cond[i].numpy().tobytes())
        return h.hexdigest()

    def eps(self, i: int, t: int) -> torch.Tensor:
        return predict_noise(self.x[i], t, self.cond[i], self.denoiser, ground_truth=self.truth[i], view=i)

    def decode(self, x0: torch.Tensor, i: int) -> torch.Tensor:
        return codec_mod.decode(x0, self.cond[i], self.codec, faithfulness=self.config.faithfulness)


def _gt_psnr(views, i, img):
    hr = views.views[i].hr
    return None if hr is None else psnr(img, hr)


def run_3dsr(views: ViewSet, denoiser: DenoiserSpec, codec: CodecSpec, config: PipelineConfig,
             run_dir=None, scene_lr: GaussianScene | None = None) -> tuple[GaussianScene, RunManifest]:
    """Interleave denoising with scene fitting, from ``t = T`` down to ``1``.

    Per step: estimate every view's clean latent, decode it to an HR image,
    fit the scene to those images (warm start), render the scene back,
    re-encode the renders and take the guided denoising step around them.
    """
    config.validate()
    manifest = RunManifest("3dsr", config, run_dir)
    try:
        return _run_3dsr(views, denoiser, codec, config, manifest, scene_lr)
    except SplatSRError:
        manifest.set("status", "failed")
        raise


def _run_3dsr(views, denoiser, codec, config, manifest, scene_lr):
    s = _Sampler(views, denoiser, codec, config)
    if scene_lr is None:
        t0 = time.perf_counter()
        curve: list = []
        scene_lr = pretrain_lr(views, config, history=curve)
        manifest.add_stage("pretrain_lr", time.perf_counter() - t0, loss_first=curve[0], loss_last=curve[-1])
    scene = scene_lr
    for t in range(config.T, 0, -1):
        t0 = time.perf_counter()
        eps = {i: s.eps(i, t) for i in s.train}
        x0_hat = {i: estimate_x0(s.x[i], eps[i], t, s.schedule) for i in s.train}
        H = {i: s.decode(x0_hat[i], i) for i in s.train}

        curve = []
        fc = config.fit_config(config.fit_iterations_per_step, config.lam, views.sr_factor,
                               seed=config.seed * 1000 + t, background=views.background)
        scene = fit(scene, [H[i] for i in s.train], [s.hr_cams[i] for i in s.train],
                    [views.views[i].lr for i in s.train], fc, history=curve)

        entry = {"t": t, "loss_curve": curve, "views": []}
        for i in s.train:
            R = render(scene, s.hr_cams[i], background=views.background).image.detach()
            x0_dd = codec_mod.encode(R, codec)
            s.x[i] = guided_denoise_step(s.x[i], x0_dd, eps[i], t, s.schedule, s.gen)
            rec = {"view": i, "psnr_H": _gt_psnr(views, i, H[i]), "psnr_R": _gt_psnr(views, i, R),
                   "lr_error": float((subsample(R, views.sr_factor) - views.views[i].lr).abs().mean())}
            rec.update(_save_pair(manifest, f"step_{t}/view_{i}_H", H[i]))
            rec.update(_save_pair(manifest, f"step_{t}/view_{i}_R", R))
            entry["views"].append(rec)
        entry["wall_clock_s"] = time.perf_counter() - t0
        manifest.add_step(entry)

    if s._digest_conditions() != s.cond_digest:
        raise DataError("conditioning latents were modified during the run")
    manifest.set("conditioning_digest", s.cond_digest)
    _finish(manifest, scene)
    return scene, manifest


def _finish(manifest: RunManifest, scene: GaussianScene) -> None:
    if manifest.run_dir is not None:
        scene.save(manifest.run_dir / "scene_final.ckpt")
        manifest.set("final_scene", "scene_final.ckpt")
    manifest.set("scene_digest", scene.digest())
    manifest.set("status", "finished")


def _fit_targets(views, targets: dict, config, lam, scene_lr, manifest, label):
    """Fit fixed targets with the same protocol as the 3D-consistent run.

    ``T`` warm-started fits of ``fit_iterations_per_step`` iterations each,
    seeded as in :func:`run_3dsr`, so runs differ only in their targets and
    LR weight.
    """
    train = sorted(targets)
    cams = [views.hr_camera(i) for i in train]
    scene = scene_lr
    for t in range(config.T, 0, -1):
        t0 = time.perf_counter()
        curve: list = []
        fc = config.fit_config(config.fit_iterations_per_step, lam, views.sr_factor,
                               seed=config.seed * 1000 + t, background=views.background)
        scene = fit(scene, [targets[i] for i in train], cams, [views.views[i].lr for i in train], fc,
                    history=curve)
        manifest.add_stage(f"{label}_t{t}", time.perf_counter() - t0, loss_curve=curve)
    return scene


def _ensure_pretrained(views, config, manifest, scene_lr):
    if scene_lr is not None:
        return scene_lr
    t0 = time.perf_counter()
    scene_lr = pretrain_lr(views, config)
    manifest.add_stage("pretrain_lr", time.perf_counter() - t0)
    return scene_lr


def run_perview_baseline(views: ViewSet, denoiser: DenoiserSpec, codec: CodecSpec, config: PipelineConfig,
                         run_dir=None, scene_lr: GaussianScene | None = None):
    """Sample every view independently, then fit one scene to the results.

    The sampler is the same as in :func:`run_3dsr` but each step is guided by
    the view's own clean estimate.  The scene is fitted from the LR-pretrained
    scene with the same fitting protocol as the 3D-consistent run and LR
    weight ``config.baseline_lam``.

    Returns ``(images, scene, manifest)`` with ``images`` keyed by view index.
    """
    config.validate()
    manifest = RunManifest("perview_baseline", config, run_dir)
    s = _Sampler(views, denoiser, codec, config)
    for t in range(config.T, 0, -1):
        for i in s.train:
            eps = s.eps(i, t)
            x0_hat = estimate_x0(s.x[i], eps, t, s.schedule)
            s.x[i] = guided_denoise_step(s.x[i], x0_hat, eps, t, s.schedule, s.gen)
    images = {i: s.decode(s.x[i], i) for i in s.train}
    entry = {"t": 0, "views": []}
    for i in s.train:
        rec = {"view": i, "psnr_H": _gt_psnr(views, i, images[i])}
        rec.update(_save_pair(manifest, f"step_0/view_{i}_H", images[i]))
        entry["views"].append(rec)
    manifest.add_step(entry)
    scene_lr = _ensure_pretrained(views, config, manifest, scene_lr)
    scene = _fit_targets(views, images, config, config.baseline_lam, scene_lr, manifest, "fit_perview")
    _finish(manifest, scene)
    return images, scene, manifest


def bicubic_targets(views: ViewSet) -> dict:
    return {i: upsample(views.views[i].lr, views.sr_factor, mode="bicubic").clamp(0, 1)
            for i in views.indices("train")}


def run_bicubic_baseline(views: ViewSet, config: PipelineConfig, run_dir=None,
                         scene_lr: GaussianScene | None = None) -> tuple[GaussianScene, RunManifest]:
    """Fit the scene to bicubically upsampled LR images (same fitting protocol as the other runs)."""
    config.validate()
    manifest = RunManifest("bicubic_baseline", config, run_dir)
    targets = bicubic_targets(views)
    entry = {"t": 0, "views": []}
    for i, img in targets.items():
        rec = {"view": i, "psnr_H": _gt_psnr(views, i, img)}
        rec.update(_save_pair(manifest, f"step_0/view_{i}_H", img))
        entry["views"].append(rec)
    manifest.add_step(entry)
    scene_lr = _ensure_pretrained(views, config, manifest, scene_lr)
    scene = _fit_targets(views, targets, config, config.baseline_lam, scene_lr, manifest, "fit_bicubic")
    _finish(manifest, scene)
    return scene, manifest


def run_hr_upper_bound(views: ViewSet, config: PipelineConfig, run_dir=None,
                       scene_lr: GaussianScene | None = None) -> tuple[GaussianScene, RunManifest]:
    """Fit directly on HR ground truth with the 3D-consistent run's objective and fitting protocol."""
    config.validate()
    if not all(views.views[i].hr is not None for i in views.indices("train")):
        raise DataError("the HR upper bound needs ground truth for every training view")
    manifest = RunManifest("hr_upper_bound", config, run_dir)
    targets = {i: views.views[i].hr for i in views.indices("train")}
    scene_lr = _ensure_pretrained(views, config, manifest, scene_lr)
    scene = _fit_targets(views, targets, config, config.lam, scene_lr, manifest, "fit_hr")
    _finish(manifest, scene)
    return scene, manifest


# ---------------------------------------------------------------------------
# evaluation


def render_views(scene: GaussianScene, views: ViewSet, indices) -> dict:
    out = {}
    with torch.no_grad():
        for i in indices:
            out[i] = render(scene, views.hr_camera(i), background=views.background)
    return out


def evaluate(scene: GaussianScene, views: ViewSet, run_id: str, images: dict | None = None,
             consistency_views=None):
    """Test-view fidelity of ``scene`` and cross-view consistency.

    Consistency is measured on the training views: on ``images`` if given
    (e.g. independently super-resolved images), otherwise on the scene's own
    renders.  Depth always comes from the scene.
    """
    test = views.indices("test")
    rendered = render_views(scene, views, test)
    report = build_report(run_id, [rendered[i].image for i in test], [views.views[i].hr for i in test], test)
    cv = consistency_views if consistency_views is not None else views.indices("train")
    cr = render_views(scene, views, cv)
    colors = [images[i] if images is not None else cr[i].image for i in cv]
    cons = cross_view_consistency(colors, [cr[i].depth for i in cv], [views.hr_camera(i) for i in cv],
                                  scene_diameter=views.scene_diameter,
                                  masks=[cr[i].alpha > 0.5 for i in cv])
    report.consistency_pairs = cons.pairs()
    report.consistency_mean = None if np.isnan(cons.mean) else cons.mean
    if cons.excluded:
        report.flags.append(f"{len(cons.excluded)} view pairs excluded for low overlap")
    return report


def write_metrics(report, run_dir) -> Path:
    return write_report(report, Path(run_dir) / "metrics.json")
