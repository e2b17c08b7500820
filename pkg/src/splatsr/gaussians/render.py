"""Differentiable Gaussian splatting renderer.

``render`` projects with torch (autograd handles the EWA projection) and
composites with the numba kernels in :mod:`.rasterize`.  ``render_dense``
evaluates every Gaussian at every pixel in plain torch; it is slow but has no
hand-written derivatives and serves as the reference implementation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .camera import Camera
from .rasterize import RasterizeFunction, bounding_boxes
from .render_constants import ALPHA_MIN, COV2D_FLOOR, MAX_ALPHA
from .scene import GaussianScene, covariance_3d


@dataclass
class RenderResult:
    image: torch.Tensor  # (H, W, 3)
    depth: torch.Tensor  # (H, W), alpha-normalised expected depth (0 where empty)
    alpha: torch.Tensor  # (H, W), accumulated opacity
    any_visible: bool


def project(scene: GaussianScene, camera: Camera):
    """Screen-space means, 2D covariances and camera depths of all Gaussians."""
    dtype = scene.dtype
    w2c = camera.w2c_tensor(dtype)
    rot, trans = w2c[:3, :3], w2c[:3, 3]
    p = scene.means @ rot.T + trans
    z = p[:, 2]
    in_front = z > camera.near
    z_safe = torch.where(in_front, z, torch.ones_like(z))

    # Clamp the Jacobian's evaluation point to a slightly enlarged frustum so
    # Gaussians far outside the image cannot produce huge footprints.
    lim_x = 1.3 * 0.5 * camera.width / camera.fx
    lim_y = 1.3 * 0.5 * camera.height / camera.fy
    tx = (p[:, 0] / z_safe).clamp(-lim_x, lim_x)
    ty = (p[:, 1] / z_safe).clamp(-lim_y, lim_y)

    u = camera.fx * p[:, 0] / z_safe + camera.cx
    v = camera.fy * p[:, 1] / z_safe + camera.cy

    zeros = torch.zeros_like(z)
    jac = torch.stack([
        torch.stack([camera.fx / z_safe, zeros, -camera.fx * tx / z_safe], -1),
        torch.stack([zeros, camera.fy / z_safe, -camera.fy * ty / z_safe], -1),
    ], dim=1)
    m = jac @ rot
    cov2d = m @ covariance_3d(scene) @ m.transpose(1, 2)
    cov2d = cov2d + COV2D_FLOOR * torch.eye(2, dtype=dtype)
    return torch.stack([u, v], -1), cov2d, z, in_front


def _empty_result(scene, camera, bg):
    h, w = camera.height, camera.width
    # keep the graph connected so callers can still backprop a zero gradient
    zero = 0.0 * scene.means.sum()
    return RenderResult(
        image=bg.expand(h, w, 3) + zero,
        depth=torch.zeros(h, w, dtype=scene.dtype) + zero,
        alpha=torch.zeros(h, w, dtype=scene.dtype) + zero,
        any_visible=False,
    )


def _depth_order(z, in_front):
    key = torch.where(in_front, z, torch.full_like(z, float("inf"))).detach()
    order = torch.argsort(key, stable=True)
    return order[in_front[order]]


def _conic(cov2d):
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    return torch.stack([c / det, -b / det, a / det], -1)


def render(scene: GaussianScene, camera: Camera, background=(0.0, 0.0, 0.0),
           alpha_min: float = ALPHA_MIN) -> RenderResult:
    """Render ``scene`` from ``camera``.

    Gaussians are sorted once by the camera-space depth of their centres and
    composited front to back over a constant ``background``.  When no
    Gaussian lies in front of the camera the background is returned with
    ``any_visible=False``.
    """
    bg = torch.as_tensor(background, dtype=scene.dtype)
    means2d, cov2d, z, in_front = project(scene, camera)
    if not bool(in_front.any()):
        return _empty_result(scene, camera, bg)

    order = _depth_order(z, in_front).numpy().astype(np.int64)
    opac = scene.opacities
    bbox = bounding_boxes(means2d.detach().double().numpy(), cov2d.detach().double().numpy(),
                          opac.detach().double().numpy(), camera.height, camera.width, alpha_min)
    image, acc, dsum = RasterizeFunction.apply(
        means2d, _conic(cov2d), opac, scene.colors, z, order, bbox,
        tuple(float(v) for v in bg), camera.height, camera.width, float(alpha_min))
    depth = torch.where(acc > 1e-6, dsum / acc.clamp_min(1e-6), torch.zeros_like(acc))
    return RenderResult(image=image, depth=depth, alpha=acc, any_visible=True)


def render_dense(scene: GaussianScene, camera: Camera, background=(0.0, 0.0, 0.0),
                 alpha_min: float = ALPHA_MIN) -> RenderResult:
    """Reference renderer: all-pairs Gaussian/pixel evaluation in torch."""
    dtype = scene.dtype
    h, w = camera.height, camera.width
    bg = torch.as_tensor(background, dtype=dtype)
    means2d, cov2d, z, in_front = project(scene, camera)
    if not bool(in_front.any()):
        return _empty_result(scene, camera, bg)

    inv_a, inv_b, inv_c = _conic(cov2d).unbind(-1)
    ys, xs = torch.meshgrid(torch.arange(h, dtype=dtype), torch.arange(w, dtype=dtype), indexing="ij")
    xs, ys = xs.reshape(1, -1), ys.reshape(1, -1)
    order = _depth_order(z, in_front)

    dx = xs - means2d[order, 0:1]
    dy = ys - means2d[order, 1:2]
    power = -0.5 * (inv_a[order, None] * dx * dx + 2 * inv_b[order, None] * dx * dy
                    + inv_c[order, None] * dy * dy)
    alpha = (scene.opacities[order, None] * torch.exp(power)).clamp(max=MAX_ALPHA)
    alpha = torch.where(alpha < alpha_min, torch.zeros_like(alpha), alpha)

    log_t = torch.cumsum(torch.log1p(-alpha), dim=0)
    trans_excl = torch.exp(torch.cat([torch.zeros_like(log_t[:1]), log_t[:-1]], dim=0))
    weights = alpha * trans_excl                     # (N, P)

    acc = weights.sum(0)
    rgb = weights.T @ scene.colors[order] + torch.exp(log_t[-1])[:, None] * bg
    depth_sum = (weights * z[order, None]).sum(0)
    depth = torch.where(acc > 1e-6, depth_sum / acc.clamp_min(1e-6), torch.zeros_like(acc))

    return RenderResult(
        image=rgb.reshape(h, w, 3),
        depth=depth.reshape(h, w),
        alpha=acc.reshape(h, w),
        any_visible=True,
    )
