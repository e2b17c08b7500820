"""Photometric objectives for scene fitting."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from ..errors import ShapeError
from ..imaging import area_downsample, as_image, to_nchw

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def subsample(image: torch.Tensor, factor: int) -> torch.Tensor:
    """Area-average pooling; the same operator that derives the LR dataset."""
    return area_downsample(image, factor)


def _window_1d(size: int, sigma: float, dtype) -> torch.Tensor:
    xs = torch.arange(size, dtype=dtype) - (size - 1) / 2
    g = torch.exp(-0.5 * (xs / sigma) ** 2)
    return g / g.sum()


def ssim_map(a: torch.Tensor, b: torch.Tensor, window: int = SSIM_WINDOW,
             sigma: float = SSIM_SIGMA) -> tuple[torch.Tensor, bool]:
    """Local SSIM over the fully-covered ("valid") region.

    Statistics use a Gaussian-weighted window, evaluated per channel.  If the
    image is smaller than the window, the window shrinks to the largest odd
    size that fits and the returned flag is ``True``.
    """
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise ShapeError(f"SSIM inputs differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
    h, w, c = a.shape
    cropped = False
    if min(h, w) < window:
        window = min(h, w)
        window -= 1 - window % 2
        cropped = True
    g = _window_1d(window, sigma, a.dtype)
    kx = g.view(1, 1, 1, -1).expand(c, 1, 1, window)
    ky = g.view(1, 1, -1, 1).expand(c, 1, window, 1)
    x, y = to_nchw(a), to_nchw(b)
    conv = lambda t: F.conv2d(F.conv2d(t, kx, groups=c), ky, groups=c)  # noqa: E731
    mu_x, mu_y = conv(x), conv(y)
    sxx = conv(x * x) - mu_x ** 2
    syy = conv(y * y) - mu_y ** 2
    sxy = conv(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (sxx + syy + SSIM_C2)
    return (num / den).squeeze(0), cropped


def ssim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean SSIM (differentiable)."""
    return ssim_map(a, b)[0].mean()


def dssim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (1.0 - ssim(a, b)) / 2.0


def l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"L1 inputs differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def photometric(a: torch.Tensor, b: torch.Tensor, delta: float) -> torch.Tensor:
    """``(1 - delta) * L1 + delta * D-SSIM``."""
    loss = (1.0 - delta) * l1(a, b)
    if delta:
        loss = loss + delta * dssim(a, b)
    return loss


def loss_all(render_hr: torch.Tensor, target_hr: torch.Tensor, render_lr: torch.Tensor | None,
             target_lr: torch.Tensor | None, lam: float, delta: float) -> torch.Tensor:
    """HR photometric term plus ``lam`` times the subsampled-render LR term.

    The LR term is skipped when ``lam == 0`` (the LR tensors may then be
    ``None``).
    """
    if render_hr.shape != target_hr.shape:
        raise ShapeError(f"render {tuple(render_hr.shape)} vs target {tuple(target_hr.shape)}")
    loss = photometric(render_hr, target_hr, delta)
    if lam:
        if render_lr is None or target_lr is None:
            raise ShapeError("LR term requested but LR images are missing")
        if render_lr.shape != target_lr.shape:
            raise ShapeError(f"LR render {tuple(render_lr.shape)} vs LR target {tuple(target_lr.shape)}")
        loss = loss + lam * photometric(render_lr, target_lr, delta)
    return loss
