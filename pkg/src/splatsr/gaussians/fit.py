"""Scene initialisation and gradient-based fitting."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np
import torch

from ..errors import DataError, DivergenceError, ParameterError
from .camera import Camera
from .losses import loss_all, subsample
from .render import render
from .scene import GaussianScene

if TYPE_CHECKING:
    from ..data import ViewSet

logger = logging.getLogger(__name__)

DEFAULT_LRS = {
    "means": 2e-3,
    "log_scales": 1e-2,
    "quats": 5e-3,
    "opacity_logits": 5e-2,
    "color_logits": 3e-2,
}


@dataclass
class FitConfig:
    iterations: int = 500
    lrs: dict = field(default_factory=lambda: dict(DEFAULT_LRS))
    lam: float = 1.0
    delta: float = 0.2
    sr_factor: int = 1
    seed: int = 0
    batch_size: int = 2
    background: tuple = (0.0, 0.0, 0.0)
    lr_final_ratio: float = 0.1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ParameterError("iterations", f"must be an integer >= 1, got {self.iterations}")
        if not 0.0 <= self.delta <= 1.0:
            raise ParameterError("delta", f"must lie in [0, 1], got {self.delta}")
        if self.lam < 0:
            raise ParameterError("lam", f"must be >= 0, got {self.lam}")
        if int(self.sr_factor) != self.sr_factor or self.sr_factor < 1:
            raise ParameterError("sr_factor", f"must be a positive integer, got {self.sr_factor}")
        if not 0.0 < self.lr_final_ratio <= 1.0:
            raise ParameterError("lr_final_ratio", f"must lie in (0, 1], got {self.lr_final_ratio}")
        if self.batch_size < 1:
            raise ParameterError("batch_size", f"must be >= 1, got {self.batch_size}")
        unknown = set(self.lrs) - set(DEFAULT_LRS)
        if unknown:
            raise ParameterError("lrs", f"unknown parameter groups {sorted(unknown)}")


def view_loss(scene, target, camera, lr_target, config: FitConfig) -> torch.Tensor:
    out = render(scene, camera, background=config.background)
    r_lr = subsample(out.image, config.sr_factor) if config.lam else None
    return loss_all(out.image, target, r_lr, lr_target, config.lam, config.delta)


def fit(scene: GaussianScene, targets: Sequence[torch.Tensor], cameras: Sequence[Camera],
        lr_images: Sequence[torch.Tensor] | None, config: FitConfig,
        history: list | None = None) -> GaussianScene:
    """Optimise a copy of ``scene`` against per-view targets.

    Each of the ``config.iterations`` Adam steps uses the summed loss of a
    minibatch of views drawn without replacement (reshuffled every epoch).
    Learning rates decay exponentially to ``lr_final_ratio`` times their
    initial values over the call.  Optimisation continues from the given parameters.  Per-iteration losses
    are appended to ``history`` when it is provided.

    Raises:
        DivergenceError: if the loss becomes non-finite.
    """
    config.validate()
    if len(targets) == 0:
        raise DataError("fit needs at least one view")
    if len(targets) != len(cameras):
        raise DataError(f"{len(targets)} targets but {len(cameras)} cameras")
    if config.lam and (lr_images is None or len(lr_images) != len(targets)):
        raise DataError("the LR term needs one LR image per target view")

    work = scene.clone(requires_grad=True)
    dtype = work.dtype
    targets = [torch.as_tensor(t, dtype=dtype) for t in targets]
    lr_images = [torch.as_tensor(t, dtype=dtype) for t in lr_images] if config.lam else [None] * len(targets)

    groups = [{"params": [p], "lr": config.lrs.get(name, DEFAULT_LRS[name]), "name": name}
              for name, p in work.params().items()]
    opt = torch.optim.Adam(groups, eps=1e-15)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=config.lr_final_ratio ** (1.0 / config.iterations))
    rng = np.random.default_rng(config.seed)
    batch = min(config.batch_size, len(targets))
    queue: list[int] = []
    recent: list[float] = []

    for it in range(config.iterations):
        if len(queue) < batch:
            queue.extend(rng.permutation(len(targets)).tolist())
        idx, queue = queue[:batch], queue[batch:]
        opt.zero_grad(set_to_none=True)
        loss = sum(view_loss(work, targets[i], cameras[i], lr_images[i], config) for i in idx)
        value = float(loss.detach())
        if not math.isfinite(value):
            state = {
                "iteration": it,
                "recent_losses": recent[-10:],
                "param_norms": {k: float(v.detach().norm()) for k, v in work.params().items()},
                "views": idx,
            }
            raise DivergenceError(f"non-finite loss at iteration {it}", state)
        loss.backward()
        opt.step()
        sched.step()
        recent.append(value)
        if history is not None:
            history.append(value)
    logger.debug("fit: %d iterations, loss %.5f -> %.5f", config.iterations, recent[0], recent[-1])
    return work.clone()


def _pixel_footprint(camera: Camera, depth: float) -> float:
    return depth / camera.fx


def init_scene_from_views(views: "ViewSet", n_gaussians: int, rng, views_subset: str = "train",
                          opacity: float = 0.5, dtype=torch.float32) -> GaussianScene:
    """Seed Gaussians by back-projecting random LR pixels.

    Each Gaussian comes from a random pixel of a random view, pushed to a
    random depth spanning the scene's bounding sphere; candidates outside
    the frustum of any other view are rejected (falling back to the
    best-covered candidates if the intersection is too thin).  Colours are
    copied from the source pixel.
    """
    if int(n_gaussians) != n_gaussians or n_gaussians < 1:
        raise ParameterError("n_gaussians", f"must be >= 1, got {n_gaussians}")
    items = views.split(views_subset) if views_subset else list(views.views)
    if not items:
        raise DataError("cannot initialise a scene from an empty view set")
    rng = np.random.default_rng(rng)
    center, radius = views.bounds_center, views.bounds_radius
    cams = [v.camera for v in items]

    points, colors, scales, coverage = [], [], [], []
    attempts = 0
    while len(points) < n_gaussians and attempts < 200 * n_gaussians:
        attempts += 1
        v = items[rng.integers(len(items))]
        cam = v.camera
        px, py = rng.integers(cam.width), rng.integers(cam.height)
        dist = float(np.linalg.norm(cam.center - center))
        depth = rng.uniform(max(cam.near * 2, dist - radius), dist + radius)
        ray = np.array([(px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0])
        p = cam.rotation.T @ (ray * depth - cam.translation)
        seen = 0
        for c in cams:
            uv, z = c.project(p[None])
            if z[0] > c.near and 0 <= uv[0, 0] <= c.width - 1 and 0 <= uv[0, 1] <= c.height - 1:
                seen += 1
        if seen < len(cams) and attempts < 100 * n_gaussians:
            continue
        points.append(p)
        colors.append(v.lr[py, px].numpy())
        scales.append(2.0 * _pixel_footprint(cam, depth))
        coverage.append(seen)

    pts = np.asarray(points)
    s = np.repeat(np.asarray(scales)[:, None], 3, axis=1)
    q = np.tile([1.0, 0.0, 0.0, 0.0], (len(pts), 1))
    return GaussianScene.from_activated(pts, s, q, np.full(len(pts), opacity),
                                        np.clip(np.asarray(colors), 0.02, 0.98), dtype=dtype)
