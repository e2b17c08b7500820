"""Small image utilities shared by the data, codec, scene and metrics code.

Images and latents are ``torch`` tensors laid out as ``(H, W, C)`` with
values nominally in ``[0, 1]``.  The area-average downsampler defined here is
the single LR operator used everywhere (dataset generation, the subsampling
regulariser and the decimating codec), so an ideal HR image always maps to
its LR observation exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ParameterError, ShapeError


def as_image(x) -> torch.Tensor:
    """Convert arrays to a float tensor, adding a channel axis to 2-D input."""
    t = torch.as_tensor(x)
    if not torch.is_floating_point(t):
        t = t.float()
    if t.ndim == 2:
        t = t[..., None]
    if t.ndim != 3:
        raise ShapeError(f"expected an (H, W, C) image, got shape {tuple(t.shape)}")
    return t


def to_nchw(img: torch.Tensor) -> torch.Tensor:
    return img.permute(2, 0, 1).unsqueeze(0)


def from_nchw(x: torch.Tensor) -> torch.Tensor:
    return x.squeeze(0).permute(1, 2, 0)


def area_downsample(img: torch.Tensor, factor: int) -> torch.Tensor:
    """Average non-overlapping ``factor x factor`` blocks.

    Raises:
        ShapeError: if the spatial dimensions are not multiples of ``factor``.
    """
    if int(factor) != factor or factor < 1:
        raise ParameterError("factor", f"must be a positive integer, got {factor}")
    factor = int(factor)
    img = as_image(img)
    h, w, c = img.shape
    if h % factor or w % factor:
        raise ShapeError(f"image {h}x{w} is not divisible by factor {factor}")
    if factor == 1:
        return img.clone()
    return img.reshape(h // factor, factor, w // factor, factor, c).mean(dim=(1, 3))


def resize(img: torch.Tensor, size: tuple[int, int], mode: str = "bilinear") -> torch.Tensor:
    """Resample to ``size = (H, W)`` with pixel-centre alignment."""
    img = as_image(img)
    if tuple(img.shape[:2]) == tuple(size):
        return img.clone()
    kwargs = {} if mode == "nearest" else {"align_corners": False}
    out = F.interpolate(to_nchw(img), size=tuple(size), mode=mode, **kwargs)
    return from_nchw(out)


def upsample(img: torch.Tensor, factor: int, mode: str = "bilinear") -> torch.Tensor:
    img = as_image(img)
    h, w = img.shape[:2]
    return resize(img, (h * factor, w * factor), mode=mode)


def gaussian_blur(img: torch.Tensor, sigma: float) -> torch.Tensor:
    """Separable Gaussian blur with reflect padding."""
    img = as_image(img)
    radius = max(1, int(np.ceil(3 * sigma)))
    xs = torch.arange(-radius, radius + 1, dtype=img.dtype)
    k = torch.exp(-0.5 * (xs / sigma) ** 2)
    k = k / k.sum()
    c = img.shape[-1]
    x = to_nchw(img)
    pad = min(radius, img.shape[0] - 1, img.shape[1] - 1)
    if pad < radius:
        x = F.pad(x, (radius, radius, radius, radius), mode="circular")
    else:
        x = F.pad(x, (radius, radius, radius, radius), mode="reflect")
    x = F.conv2d(x, k.view(1, 1, 1, -1).repeat(c, 1, 1, 1), groups=c)
    x = F.conv2d(x, k.view(1, 1, -1, 1).repeat(c, 1, 1, 1), groups=c)
    return from_nchw(x)


def laplacian_variance(img: torch.Tensor) -> float:
    """Variance of the 4-neighbour Laplacian of the luminance (sharpness proxy)."""
    img = as_image(img)
    g = img.mean(dim=-1)
    lap = g[1:-1, :-2] + g[1:-1, 2:] + g[:-2, 1:-1] + g[2:, 1:-1] - 4 * g[1:-1, 1:-1]
    return float(lap.var())


def quantize(img: torch.Tensor) -> np.ndarray:
    arr = as_image(img).detach().cpu().clamp(0, 1).numpy()
    return np.round(arr * 255.0).astype(np.uint8)


def save_png(img: torch.Tensor, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = quantize(img)
    if arr.shape[-1] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path)
    return path


def load_png(path: str | Path) -> torch.Tensor:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr)
