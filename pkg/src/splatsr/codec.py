"""Encoder/decoder between image space and the diffusion latent space.

``identity`` runs diffusion directly on pixels.  ``decimate`` stands in for a
compressing autoencoder: the latent is an area-pooled image and decoding
upsamples it bilinearly.  Both decoders blend in the (upsampled) LR
conditioning latent with weight ``faithfulness`` so decoded images stay
anchored to the observation, then clamp to ``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ParameterError, ShapeError
from .imaging import area_downsample, as_image, resize, upsample


@dataclass(frozen=True)
class CodecSpec:
    kind: str = "identity"
    factor: int = 1
    latent_channels: int = 3
    faithfulness: float = 0.2

    def __post_init__(self):
        if self.kind not in ("identity", "decimate"):
            raise ParameterError("kind", f"must be 'identity' or 'decimate', got {self.kind!r}")
        if int(self.factor) != self.factor or self.factor < 1:
            raise ParameterError("factor", f"must be a positive integer, got {self.factor}")
        if self.kind == "identity" and self.factor != 1:
            raise ParameterError("factor", "the identity codec has factor 1")
        if not 0.0 <= self.faithfulness <= 1.0:
            raise ParameterError("faithfulness", f"must lie in [0, 1], got {self.faithfulness}")

    def latent_shape(self, image_shape) -> tuple[int, int, int]:
        h, w = image_shape[:2]
        if h % self.factor or w % self.factor:
            raise ShapeError(f"image {h}x{w} not divisible by codec factor {self.factor}")
        return (h // self.factor, w // self.factor, self.latent_channels)


def encode(image: torch.Tensor, spec: CodecSpec) -> torch.Tensor:
    image = as_image(image)
    if image.shape[-1] != spec.latent_channels:
        raise ShapeError(f"image has {image.shape[-1]} channels, codec expects {spec.latent_channels}")
    if spec.kind == "identity":
        return image
    return area_downsample(image, spec.factor)


def decode(x0_hat: torch.Tensor, condition: torch.Tensor, spec: CodecSpec,
           faithfulness: float | None = None) -> torch.Tensor:
    """Latent -> image, blended towards the upsampled conditioning latent."""
    w = spec.faithfulness if faithfulness is None else faithfulness
    if not 0.0 <= w <= 1.0:
        raise ParameterError("faithfulness", f"must lie in [0, 1], got {w}")
    x0_hat = as_image(x0_hat)
    if x0_hat.shape[-1] != spec.latent_channels:
        raise ShapeError(f"latent has {x0_hat.shape[-1]} channels, codec expects {spec.latent_channels}")
    base = x0_hat if spec.kind == "identity" else upsample(x0_hat, spec.factor)
    if w:
        condition = as_image(condition)
        if condition.shape[-1] != base.shape[-1]:
            raise ShapeError(f"condition has {condition.shape[-1]} channels, expected {base.shape[-1]}")
        base = (1.0 - w) * base + w * resize(condition, tuple(base.shape[:2])).to(base.dtype)
    return base.clamp(0.0, 1.0)


def round_trip_error(image: torch.Tensor, spec: CodecSpec) -> float:
    """Mean absolute error of ``decode(encode(image))`` with no LR blending."""
    image = as_image(image)
    lat = encode(image, spec)
    return float((decode(lat, lat, spec, faithfulness=0.0) - image).abs().mean())
