"""Differentiable 3D Gaussian scenes: cameras, rendering, losses and fitting."""

from .camera import Camera, look_at
from .fit import DEFAULT_LRS, FitConfig, fit, init_scene_from_views
from .losses import dssim, l1, loss_all, photometric, ssim, subsample
from .render import RenderResult, project, render, render_dense
from .scene import GaussianScene, covariance_3d, quat_to_rotmat

__all__ = [
    "Camera", "look_at", "DEFAULT_LRS", "FitConfig", "fit", "init_scene_from_views",
    "dssim", "l1", "loss_all", "photometric", "ssim", "subsample",
    "RenderResult", "project", "render", "render_dense",
    "GaussianScene", "covariance_3d", "quat_to_rotmat",
]
