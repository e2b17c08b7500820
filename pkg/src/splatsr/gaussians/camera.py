"""Pinhole cameras (OpenCV convention: +x right, +y down, +z forward)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from ..errors import ParameterError


@dataclass
class Camera:
    """Pinhole camera with a world-to-camera rigid transform.

    Pixel centres sit at integer coordinates, so a principal point of
    ``((W - 1) / 2, (H - 1) / 2)`` is the exact image centre.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    w2c: np.ndarray
    width: int
    height: int
    near: float = field(default=0.05, compare=False)

    def __post_init__(self):
        self.w2c = np.asarray(self.w2c, dtype=np.float64).reshape(4, 4)
        self.validate()

    def validate(self, tol: float = 1e-6) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ParameterError("intrinsics", f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ParameterError("size", f"invalid image size {self.width}x{self.height}")
        rot = self.w2c[:3, :3]
        err = np.abs(rot @ rot.T - np.eye(3)).max()
        if err > tol or np.linalg.det(rot) < 0:
            raise ParameterError("w2c", f"rotation block is not orthonormal (max error {err:.2e})")
        if not np.allclose(self.w2c[3], [0, 0, 0, 1]):
            raise ParameterError("w2c", "last row must be [0, 0, 0, 1]")

    @property
    def rotation(self) -> np.ndarray:
        return self.w2c[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.w2c[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def intrinsics(self) -> list[float]:
        return [self.fx, self.fy, self.cx, self.cy]

    def scaled(self, factor: int) -> "Camera":
        """Camera for an image downsampled by ``factor`` with area averaging.

        LR pixel ``k`` averages HR pixels ``f*k .. f*k + f - 1`` whose mean
        centre is ``f*k + (f - 1) / 2``.
        """
        if self.width % factor or self.height % factor:
            raise ParameterError("factor", f"{self.width}x{self.height} not divisible by {factor}")
        off = (factor - 1) / 2.0
        return Camera(
            fx=self.fx / factor,
            fy=self.fy / factor,
            cx=(self.cx - off) / factor,
            cy=(self.cy - off) / factor,
            w2c=self.w2c.copy(),
            width=self.width // factor,
            height=self.height // factor,
            near=self.near,
        )

    def upscaled(self, factor: int) -> "Camera":
        off = (factor - 1) / 2.0
        return Camera(
            fx=self.fx * factor,
            fy=self.fy * factor,
            cx=self.cx * factor + off,
            cy=self.cy * factor + off,
            w2c=self.w2c.copy(),
            width=self.width * factor,
            height=self.height * factor,
            near=self.near,
        )

    def w2c_tensor(self, dtype=torch.float32) -> torch.Tensor:
        return torch.as_tensor(self.w2c, dtype=dtype)

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project world points; returns pixel coordinates ``(N, 2)`` and depths ``(N,)``."""
        p = np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation
        z = p[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * p[:, 0] / z + self.cx
            v = self.fy * p[:, 1] / z + self.cy
        return np.stack([u, v], axis=-1), z


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-to-camera matrix for a camera at ``eye`` looking at ``target``.

    ``up`` is the world direction that should appear towards the top of the
    image (image +y points down).
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    down = -np.asarray(up, dtype=np.float64)
    right = np.cross(down, forward)
    n = np.linalg.norm(right)
    if n < 1e-9:
        raise ParameterError("up", "up vector is parallel to the viewing direction")
    right /= n
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    w2c = np.eye(4)
    w2c[:3, :3] = rot
    w2c[:3, 3] = -rot @ eye
    return w2c
