"""Optimisable 3D Gaussian scene."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..ckpt import digest_arrays, read_container, write_container
from ..errors import ParameterError, ParseError

PARAM_NAMES = ("means", "log_scales", "quats", "opacity_logits", "color_logits")


@dataclass
class GaussianScene:
    """N anisotropic Gaussians with flat RGB colour.

    All fields are raw (pre-activation) parameters:

    * ``means``          ``(N, 3)`` world positions
    * ``log_scales``     ``(N, 3)`` per-axis log standard deviations
    * ``quats``          ``(N, 4)`` rotation quaternions ``(w, x, y, z)``,
      renormalised before every use
    * ``opacity_logits`` ``(N,)``   sigmoid -> opacity in (0, 1)
    * ``color_logits``   ``(N, 3)`` sigmoid -> RGB in (0, 1)
    """

    means: torch.Tensor
    log_scales: torch.Tensor
    quats: torch.Tensor
    opacity_logits: torch.Tensor
    color_logits: torch.Tensor

    def __post_init__(self):
        n = self.means.shape[0]
        if n < 1:
            raise ParameterError("means", "a scene needs at least one Gaussian")
        expected = {"means": (n, 3), "log_scales": (n, 3), "quats": (n, 4),
                    "opacity_logits": (n,), "color_logits": (n, 3)}
        for name, shape in expected.items():
            if tuple(getattr(self, name).shape) != shape:
                raise ParameterError(name, f"expected shape {shape}, got {tuple(getattr(self, name).shape)}")

    @classmethod
    def from_activated(cls, means, scales, quats, opacities, colors, dtype=torch.float32) -> "GaussianScene":
        """Build a scene from activated values (positive scales, opacities/colours in (0, 1))."""
        t = lambda x: torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=dtype)  # noqa: E731
        eps = 1e-6
        op = t(opacities).clamp(eps, 1 - eps)
        col = t(colors).clamp(eps, 1 - eps)
        return cls(
            means=t(means).clone(),
            log_scales=torch.log(t(scales)),
            quats=t(quats).clone(),
            opacity_logits=torch.logit(op),
            color_logits=torch.logit(col),
        )

    def __len__(self) -> int:
        return self.means.shape[0]

    @property
    def dtype(self) -> torch.dtype:
        return self.means.dtype

    def params(self) -> dict[str, torch.Tensor]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    @property
    def scales(self) -> torch.Tensor:
        return torch.exp(self.log_scales)

    @property
    def rotations(self) -> torch.Tensor:
        return torch.nn.functional.normalize(self.quats, dim=-1)

    @property
    def opacities(self) -> torch.Tensor:
        return torch.sigmoid(self.opacity_logits)

    @property
    def colors(self) -> torch.Tensor:
        return torch.sigmoid(self.color_logits)

    def clone(self, requires_grad: bool = False) -> "GaussianScene":
        return GaussianScene(**{k: v.detach().clone().requires_grad_(requires_grad)
                                for k, v in self.params().items()})

    def to(self, dtype: torch.dtype) -> "GaussianScene":
        return GaussianScene(**{k: v.detach().to(dtype) for k, v in self.params().items()})

    def permuted(self, order) -> "GaussianScene":
        order = torch.as_tensor(order, dtype=torch.long)
        return GaussianScene(**{k: v.detach()[order].clone() for k, v in self.params().items()})

    def numpy_params(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy() for k, v in self.params().items()}

    def digest(self) -> str:
        return digest_arrays(self.numpy_params())

    def bounds(self) -> tuple[list[float], list[float]]:
        m = self.means.detach()
        return m.min(0).values.tolist(), m.max(0).values.tolist()

    def save(self, path) -> None:
        lo, hi = self.bounds()
        header = {
            "format": "splatsr.gaussian_scene",
            "version": 1,
            "N": len(self),
            "bounds": {"min": lo, "max": hi},
            "activations": {
                "means": "identity",
                "log_scales": "exp",
                "quats": "normalize (w, x, y, z)",
                "opacity_logits": "sigmoid",
                "color_logits": "sigmoid",
            },
        }
        write_container(path, header, self.numpy_params())

    @classmethod
    def load(cls, path) -> "GaussianScene":
        header, arrays = read_container(path)
        if header.get("format") != "splatsr.gaussian_scene":
            raise ParseError(f"{path}: not a Gaussian scene checkpoint")
        missing = [k for k in PARAM_NAMES if k not in arrays]
        if missing:
            raise ParseError(f"{path}: missing arrays {missing}")
        return cls(**{k: torch.from_numpy(arrays[k]) for k in PARAM_NAMES})


def quat_to_rotmat(q: torch.Tensor) -> torch.Tensor:
    """Unit quaternions ``(N, 4)`` in ``(w, x, y, z)`` order -> ``(N, 3, 3)``."""
    w, x, y, z = q.unbind(-1)
    return torch.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], dim=-1).reshape(q.shape[:-1] + (3, 3))


def covariance_3d(scene: GaussianScene) -> torch.Tensor:
    rot = quat_to_rotmat(scene.rotations)
    m = rot * scene.scales[:, None, :]
    return m @ m.transpose(1, 2)
