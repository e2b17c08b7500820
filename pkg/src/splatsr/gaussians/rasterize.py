"""Screen-space alpha compositing with an explicit backward pass.

Both kernels are Gaussian-major: splats are visited in depth order and each
one only touches the pixels inside its bounding box, updating per-pixel
transmittance buffers.  The backward kernel visits splats back to front and
recovers each transmittance by dividing out ``1 - alpha`` from the final
one, which is well conditioned because per-splat alpha is capped below one.
"""

from __future__ import annotations

import math

import numba
import numpy as np
import torch

from .render_constants import MAX_ALPHA


@numba.njit(cache=True)
def _forward(means2d, conic, opac, colors, depths, order, bbox, bg, height, width, alpha_min):
    image = np.zeros((height, width, 3))
    dsum = np.zeros((height, width))
    trans = np.ones((height, width))
    for idx in range(order.shape[0]):
        k = order[idx]
        x0 = max(bbox[k, 0], 0)
        x1 = min(bbox[k, 1], width - 1)
        y0 = max(bbox[k, 2], 0)
        y1 = min(bbox[k, 3], height - 1)
        for py in range(y0, y1 + 1):
            dy = py - means2d[k, 1]
            for px in range(x0, x1 + 1):
                dx = px - means2d[k, 0]
                power = -0.5 * (conic[k, 0] * dx * dx + 2.0 * conic[k, 1] * dx * dy + conic[k, 2] * dy * dy)
                alpha = opac[k] * math.exp(power)
                if alpha < alpha_min:
                    continue
                if alpha > MAX_ALPHA:
                    alpha = MAX_ALPHA
                w = alpha * trans[py, px]
                image[py, px, 0] += w * colors[k, 0]
                image[py, px, 1] += w * colors[k, 1]
                image[py, px, 2] += w * colors[k, 2]
                dsum[py, px] += w * depths[k]
                trans[py, px] *= 1.0 - alpha
    acc = np.empty((height, width))
    for py in range(height):
        for px in range(width):
            t = trans[py, px]
            image[py, px, 0] += t * bg[0]
            image[py, px, 1] += t * bg[1]
            image[py, px, 2] += t * bg[2]
            acc[py, px] = 1.0 - t
    return image, acc, dsum, trans


@numba.njit(cache=True)
def _backward(means2d, conic, opac, colors, depths, order, bbox, bg, t_final,
              g_image, g_acc, g_dsum, alpha_min):
    n = means2d.shape[0]
    height, width = t_final.shape
    d_means = np.zeros((n, 2))
    d_conic = np.zeros((n, 3))
    d_opac = np.zeros(n)
    d_colors = np.zeros((n, 3))
    d_depths = np.zeros(n)
    trans = t_final.copy()
    # gradient-weighted feature of everything composited behind each pixel's
    # current splat; the background contributes through the final transmittance
    behind = np.empty((height, width))
    for py in range(height):
        for px in range(width):
            behind[py, px] = trans[py, px] * (bg[0] * g_image[py, px, 0] + bg[1] * g_image[py, px, 1]
                                              + bg[2] * g_image[py, px, 2])
    for idx in range(order.shape[0] - 1, -1, -1):
        k = order[idx]
        x0 = max(bbox[k, 0], 0)
        x1 = min(bbox[k, 1], width - 1)
        y0 = max(bbox[k, 2], 0)
        y1 = min(bbox[k, 3], height - 1)
        for py in range(y0, y1 + 1):
            dy = py - means2d[k, 1]
            for px in range(x0, x1 + 1):
                dx = px - means2d[k, 0]
                power = -0.5 * (conic[k, 0] * dx * dx + 2.0 * conic[k, 1] * dx * dy + conic[k, 2] * dy * dy)
                gauss = math.exp(power)
                raw = opac[k] * gauss
                if raw < alpha_min:
                    continue
                alpha = raw if raw < MAX_ALPHA else MAX_ALPHA
                t = trans[py, px] / (1.0 - alpha)
                trans[py, px] = t
                w = alpha * t
                gr = g_image[py, px, 0]
                gg = g_image[py, px, 1]
                gb = g_image[py, px, 2]
                gd = g_dsum[py, px]
                d_colors[k, 0] += w * gr
                d_colors[k, 1] += w * gg
                d_colors[k, 2] += w * gb
                d_depths[k] += w * gd
                # accumulated alpha has per-splat feature 1 (background 0)
                feat = colors[k, 0] * gr + colors[k, 1] * gg + colors[k, 2] * gb + depths[k] * gd + g_acc[py, px]
                d_alpha = t * feat - behind[py, px] / (1.0 - alpha)
                behind[py, px] += feat * w
                if raw >= MAX_ALPHA:
                    continue
                d_opac[k] += d_alpha * gauss
                d_power = d_alpha * alpha
                d_means[k, 0] += d_power * (conic[k, 0] * dx + conic[k, 1] * dy)
                d_means[k, 1] += d_power * (conic[k, 1] * dx + conic[k, 2] * dy)
                d_conic[k, 0] += -0.5 * d_power * dx * dx
                d_conic[k, 1] += -d_power * dx * dy
                d_conic[k, 2] += -0.5 * d_power * dy * dy
    return d_means, d_conic, d_opac, d_colors, d_depths


def bounding_boxes(means2d: np.ndarray, cov2d: np.ndarray, opac: np.ndarray,
                   height: int, width: int, alpha_min: float) -> np.ndarray:
    """Pixel boxes outside of which a splat's alpha is below ``alpha_min``.

    Since ``d^T S^-1 d >= |d|^2 / lambda_max``, a radius of
    ``sqrt(2 lambda_max ln(opacity / alpha_min))`` is conservative.
    """
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0))
    if alpha_min > 0:
        ratio = np.maximum(opac / alpha_min, 1.0)
        radius = np.sqrt(2.0 * lam * np.log(ratio)) + 1.0
    else:
        radius = np.full_like(lam, np.inf)
    big = float(height + width)
    radius = np.minimum(radius, big)
    box = np.empty((means2d.shape[0], 4), dtype=np.int64)
    box[:, 0] = np.floor(np.clip(means2d[:, 0] - radius, -1, big))
    box[:, 1] = np.ceil(np.clip(means2d[:, 0] + radius, -big, width))
    box[:, 2] = np.floor(np.clip(means2d[:, 1] - radius, -1, big))
    box[:, 3] = np.ceil(np.clip(means2d[:, 1] + radius, -big, height))
    return box


class RasterizeFunction(torch.autograd.Function):
    """Differentiable compositing of pre-projected, pre-sorted splats.

    Inputs are ``means2d (N, 2)``, ``conic (N, 3)`` (upper triangle of the
    inverse 2D covariance), ``opacities (N,)``, ``colors (N, 3)`` and
    ``depths (N,)``.  Returns the image, accumulated alpha and the
    weight-summed depth.
    """

    @staticmethod
    def forward(ctx, means2d, conic, opac, colors, depths, order, bbox, bg, height, width, alpha_min):
        np_in = [x.detach().cpu().numpy().astype(np.float64) for x in (means2d, conic, opac, colors, depths)]
        bg_np = np.asarray(bg, dtype=np.float64)
        image, acc, dsum, t_final = _forward(*np_in, order, bbox, bg_np, height, width, alpha_min)
        ctx.saved = (np_in, order, bbox, bg_np, t_final, alpha_min)
        dtype = means2d.dtype
        return (torch.from_numpy(image).to(dtype), torch.from_numpy(acc).to(dtype),
                torch.from_numpy(dsum).to(dtype))

    @staticmethod
    def backward(ctx, g_image, g_acc, g_dsum):
        np_in, order, bbox, bg_np, t_final, alpha_min = ctx.saved
        height, width = t_final.shape
        as_np = lambda g, shape: (np.zeros(shape) if g is None  # noqa: E731
                                  else g.detach().cpu().numpy().astype(np.float64))
        grads = _backward(*np_in, order, bbox, bg_np, t_final,
                          as_np(g_image, (height, width, 3)), as_np(g_acc, (height, width)),
                          as_np(g_dsum, (height, width)), alpha_min)
        dtype = g_image.dtype if g_image is not None else torch.float64
        out = [torch.from_numpy(g).to(dtype) for g in grads]
        return (*out, None, None, None, None, None, None)
