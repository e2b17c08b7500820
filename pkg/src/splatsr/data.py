"""Multi-view datasets: containers, synthetic generation, splitting and disk IO.

On disk a dataset is a directory::

    root/poses.json
    root/images_lr/view_000.png ...
    root/images_hr/view_000.png ...     (optional ground truth)

``poses.json`` holds ``{"sr_factor": int, "views": [...]}`` where each view
has ``file``, ``intrinsics`` ``[fx, fy, cx, cy]``, a row-major 4x4
world-to-camera matrix ``w2c`` and the LR ``width``/``height``.  Intrinsics
refer to the LR images; HR cameras are derived with
:meth:`Camera.upscaled`.  Optional keys ``split`` (per view), ``background``
and ``bounds`` are written by :func:`save_dataset` and honoured on load;
when no view carries a ``split`` every 8th view is held out for testing.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .errors import DataError, ParameterError, ParseError
from .gaussians.camera import Camera, look_at
from .gaussians.render import render
from .gaussians.scene import GaussianScene
from .imaging import area_downsample, load_png, quantize, save_png

TEST_EVERY = 8


@dataclass
class View:
    lr: torch.Tensor                 # (h, w, 3) LR observation
    camera: Camera                   # LR camera
    split: str = "train"
    hr: torch.Tensor | None = None   # (h*f, w*f, 3) ground truth, if known
    file: str = ""


@dataclass
class ViewSet:
    views: list[View]
    sr_factor: int
    background: tuple = (0.0, 0.0, 0.0)
    bounds_center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bounds_radius: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bounds_center = np.asarray(self.bounds_center, dtype=np.float64)
        self.validate()

    def validate(self) -> None:
        if self.sr_factor < 1 or int(self.sr_factor) != self.sr_factor:
            raise ParameterError("sr_factor", f"must be a positive integer, got {self.sr_factor}")
        shapes = {}
        for i, v in enumerate(self.views):
            if v.split not in ("train", "test"):
                raise DataError(f"view {i}: unknown split tag {v.split!r}")
            h, w = v.lr.shape[:2]
            if (v.camera.height, v.camera.width) != (h, w):
                raise DataError(f"view {i}: image is {w}x{h} but camera is {v.camera.width}x{v.camera.height}")
            shapes.setdefault(v.split, (h, w))
            if shapes[v.split] != (h, w):
                raise DataError(f"view {i}: LR size {w}x{h} differs from the rest of the {v.split} split")
            if v.hr is not None and tuple(v.hr.shape[:2]) != (h * self.sr_factor, w * self.sr_factor):
                raise DataError(f"view {i}: HR size {tuple(v.hr.shape[:2])} != LR size x {self.sr_factor}")

    def __len__(self) -> int:
        return len(self.views)

    def split(self, tag: str) -> list[View]:
        return [v for v in self.views if v.split == tag]

    def indices(self, tag: str) -> list[int]:
        return [i for i, v in enumerate(self.views) if v.split == tag]

    @property
    def has_ground_truth(self) -> bool:
        return all(v.hr is not None for v in self.views)

    def hr_camera(self, i: int) -> Camera:
        return self.views[i].camera.upscaled(self.sr_factor)

    @property
    def scene_diameter(self) -> float:
        """Diameter of the camera rig, padded by 10% as in common 3DGS scene normalisation.

        Falls back to the bounding sphere when fewer than two cameras exist.
        """
        centers = np.stack([v.camera.center for v in self.views])
        if len(centers) < 2:
            return 2.0 * self.bounds_radius
        radius = np.linalg.norm(centers - centers.mean(0), axis=1).max()
        return float(2.0 * 1.1 * radius)

    def digest(self) -> str:
        """SHA-256 over 8-bit images and poses rounded to 1e-9."""
        h = hashlib.sha256()
        h.update(str(self.sr_factor).encode())
        for v in self.views:
            h.update(v.split.encode())
            h.update(quantize(v.lr).tobytes())
            if v.hr is not None:
                h.update(quantize(v.hr).tobytes())
            pose = np.round(np.concatenate([v.camera.w2c.ravel(), v.camera.intrinsics]), 9) + 0.0
            h.update(" ".join(f"{x:.9f}" for x in pose).encode())
        return h.hexdigest()


def split_every_kth(views: ViewSet, k: int = TEST_EVERY) -> ViewSet:
    """Tag views whose index is a multiple of ``k`` as test, the rest as train."""
    if int(k) != k or k < 2:
        raise ParameterError("k", f"must be an integer >= 2, got {k}")
    if len(views) < k:
        warnings.warn(f"only {len(views)} views for every-{k}th split; only view 0 is held out",
                      stacklevel=2)
    out = [replace(v, split="test" if i % k == 0 else "train") for i, v in enumerate(views.views)]
    return replace(views, views=out)


# ---------------------------------------------------------------------------
# synthetic scenes


def ring_cameras(n_views: int, size: int, radius: float = 4.0, elevation_deg: float = 20.0,
                 fov_deg: float = 36.0, arc_deg: float = 360.0, target=(0.0, 0.0, 0.0)) -> list[Camera]:
    """Cameras on a horizontal arc around ``target`` (full ring by default)."""
    f = 0.5 * size / np.tan(np.radians(fov_deg) / 2)
    c = (size - 1) / 2.0
    span = np.radians(arc_deg)
    if arc_deg >= 360.0:
        angles = np.arange(n_views) * span / n_views
    else:
        angles = np.linspace(-span / 2, span / 2, n_views)
    el = np.radians(elevation_deg)
    cams = []
    for a in angles:
        eye = np.array([radius * np.cos(el) * np.sin(a), radius * np.sin(el), -radius * np.cos(el) * np.cos(a)])
        cams.append(Camera(f, f, c, c, look_at(eye + np.asarray(target), target), size, size))
    return cams


def blob_cluster(n_blobs: int, rng: np.random.Generator, spread: float = 0.8) -> GaussianScene:
    """Random coloured Gaussians: a few large body blobs plus many small detail blobs."""
    n_big = max(1, n_blobs // 6)
    means = rng.uniform(-1, 1, (n_blobs, 3))
    means *= spread / np.maximum(1.0, np.linalg.norm(means, axis=1, keepdims=True))
    scales = np.empty((n_blobs, 3))
    scales[:n_big] = rng.uniform(0.15, 0.3, (n_big, 3))
    scales[n_big:] = rng.uniform(0.03, 0.09, (n_blobs - n_big, 3))
    quats = rng.normal(size=(n_blobs, 4))
    opac = rng.uniform(0.8, 0.97, n_blobs)
    colors = rng.uniform(0.1, 0.95, (n_blobs, 3))
    return GaussianScene.from_activated(means, scales, quats, opac, colors, dtype=torch.float64)


def plane_texture(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Procedural RGB texture with detail at several scales on ``[-1, 1]^2``."""
    checker = ((np.floor(u * 4) + np.floor(v * 4)) % 2)
    fine = 0.5 + 0.5 * np.sin(18 * u + 6 * np.sin(5 * v)) * np.cos(15 * v)
    rings = 0.5 + 0.5 * np.cos(30 * np.hypot(u - 0.3, v + 0.2))
    r = 0.25 + 0.5 * checker * 0.6 + 0.3 * fine * 0.5
    g = 0.2 + 0.5 * rings * 0.7 + 0.1 * checker
    b = 0.3 + 0.4 * fine * (1 - checker * 0.5)
    return np.clip(np.stack([r, g, b], -1), 0, 1)


def render_plane(camera: Camera, background, supersample: int = 4, half_extent: float = 1.0) -> torch.Tensor:
    """Ray-cast the textured plane ``z = 0`` with box-filtered supersampling."""
    s = supersample
    offs = (np.arange(s) + 0.5) / s - 0.5
    ys, xs = np.meshgrid(np.arange(camera.height), np.arange(camera.width), indexing="ij")
    px = np.broadcast_to(xs[..., None, None] + offs[None, None, None, :],
                         (camera.height, camera.width, s, s)).reshape(camera.height, camera.width, -1)
    py = np.broadcast_to(ys[..., None, None] + offs[None, None, :, None],
                         (camera.height, camera.width, s, s)).reshape(camera.height, camera.width, -1)
    dirs_cam = np.stack([(px - camera.cx) / camera.fx, (py - camera.cy) / camera.fy, np.ones_like(px)], -1)
    dirs = dirs_cam @ camera.rotation  # camera -> world (rows times R == R^T d)
    origin = camera.center
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -origin[2] / dirs[..., 2]
    hit = origin + t[..., None] * dirs
    inside = (t > 0) & (np.abs(hit[..., 0]) <= half_extent) & (np.abs(hit[..., 1]) <= half_extent)
    col = plane_texture(hit[..., 0] / half_extent, hit[..., 1] / half_extent)
    col = np.where(inside[..., None], col, np.asarray(background, dtype=np.float64))
    return torch.from_numpy(col.mean(axis=2))


def make_synthetic_scene(kind: str = "blob_cluster", n_views: int = 16, image_size: int = 64,
                         sr_factor: int = 2, rng=0, n_blobs: int = 40, test_every: int | None = TEST_EVERY,
                         background=(0.0, 0.0, 0.0)) -> ViewSet:
    """Generate a synthetic multi-view dataset with HR ground truth.

    ``image_size`` is the HR side length; LR images are the area-average of
    the HR renders.  ``blob_cluster`` surrounds a cluster of coloured
    Gaussians with a full camera ring; ``textured_plane`` views a textured
    square from a frontal arc.
    """
    if n_views < 2:
        raise ParameterError("n_views", f"need at least 2 views, got {n_views}")
    if image_size % sr_factor:
        raise ParameterError("image_size", f"{image_size} not divisible by sr_factor {sr_factor}")
    rng = np.random.default_rng(rng)
    meta = {"kind": kind, "n_views": n_views, "image_size": image_size}
    if kind == "blob_cluster":
        gt = blob_cluster(n_blobs, rng)
        cams = ring_cameras(n_views, image_size)
        hr_images = [render(gt, c, background=background, alpha_min=0.0).image.float() for c in cams]
        center, radius = np.zeros(3), 1.2
        meta["n_blobs"] = n_blobs
    elif kind == "textured_plane":
        cams = ring_cameras(n_views, image_size, radius=3.0, elevation_deg=10.0, arc_deg=60.0, fov_deg=40.0)
        hr_images = [render_plane(c, background).float() for c in cams]
        center, radius = np.zeros(3), 1.0 * np.sqrt(2)
    else:
        raise ParameterError("kind", f"unknown synthetic scene kind {kind!r}")

    views = []
    for i, (cam, hr) in enumerate(zip(cams, hr_images)):
        hr = hr.clamp(0, 1)
        views.append(View(lr=area_downsample(hr, sr_factor), camera=cam.scaled(sr_factor),
                          hr=hr, file=f"view_{i:03d}.png"))
    vs = ViewSet(views, sr_factor=sr_factor, background=tuple(background),
                 bounds_center=center, bounds_radius=radius, meta=meta)
    if kind == "blob_cluster":
        vs.meta["gt_scene"] = gt
    return split_every_kth(vs, test_every) if test_every else vs


def make_reference_dataset(seed: int = 0, image_size: int = 64, sr_factor: int = 4) -> ViewSet:
    """The reference synthetic scene used by the acceptance suite."""
    return make_synthetic_scene("blob_cluster", n_views=16, image_size=image_size,
                                sr_factor=sr_factor, rng=seed)


# ---------------------------------------------------------------------------
# disk IO


def save_dataset(views: ViewSet, root) -> Path:
    root = Path(root)
    entries = []
    for i, v in enumerate(views.views):
        name = v.file or f"view_{i:03d}.png"
        save_png(v.lr, root / "images_lr" / name)
        if v.hr is not None:
            save_png(v.hr, root / "images_hr" / name)
        cam = v.camera
        entries.append({
            "file": name,
            "intrinsics": [float(x) for x in cam.intrinsics],
            "w2c": [float(x) for x in cam.w2c.ravel()],
            "width": cam.width,
            "height": cam.height,
            "split": v.split,
        })
    doc = {
        "sr_factor": views.sr_factor,
        "background": list(views.background),
        "bounds": {"center": views.bounds_center.tolist(), "radius": views.bounds_radius},
        "views": entries,
    }
    root.mkdir(parents=True, exist_ok=True)
    (root / "poses.json").write_text(json.dumps(doc, indent=2))
    return root


def _require(entry: dict, key: str, i: int):
    if key not in entry:
        raise ParseError(f"poses.json view {i}: missing key {key!r}")
    return entry[key]


def load_dataset(root) -> ViewSet:
    """Load and validate a dataset directory (see module docstring)."""
    root = Path(root)
    pose_path = root / "poses.json"
    if not pose_path.exists():
        raise ParseError(f"{pose_path}: file not found")
    text = pose_path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if exc.lineno - 1 < len(text.splitlines()) else ""
        raise ParseError(f"{pose_path}:{exc.lineno}:{exc.colno}: {exc.msg}: {line.strip()!r}") from exc
    if not isinstance(doc, dict) or "views" not in doc or "sr_factor" not in doc:
        raise ParseError(f"{pose_path}: expected an object with 'sr_factor' and 'views'")

    lr_dir, hr_dir = root / "images_lr", root / "images_hr"
    on_disk = sorted(p.name for p in lr_dir.glob("*.png")) if lr_dir.exists() else []
    if len(on_disk) != len(doc["views"]):
        raise DataError(f"{len(on_disk)} LR images in {lr_dir} but {len(doc['views'])} poses")
    sr = int(doc["sr_factor"])

    views = []
    for i, e in enumerate(doc["views"]):
        name = _require(e, "file", i)
        intr = _require(e, "intrinsics", i)
        w2c = _require(e, "w2c", i)
        if len(intr) != 4 or len(w2c) != 16:
            raise ParseError(f"poses.json view {i}: intrinsics need 4 values and w2c 16")
        try:
            cam = Camera(*map(float, intr), w2c=np.asarray(w2c, dtype=np.float64).reshape(4, 4),
                         width=int(_require(e, "width", i)), height=int(_require(e, "height", i)))
        except ParameterError as exc:
            raise DataError(f"poses.json view {i}: {exc}") from exc
        if not (lr_dir / name).exists():
            raise DataError(f"view {i}: missing image {lr_dir / name}")
        lr = load_png(lr_dir / name)
        hr = load_png(hr_dir / name) if (hr_dir / name).exists() else None
        views.append(View(lr=lr, camera=cam, split=e.get("split", "train"), hr=hr, file=name))

    bounds = doc.get("bounds", {})
    vs = ViewSet(views, sr_factor=sr, background=tuple(doc.get("background", (0.0, 0.0, 0.0))),
                 bounds_center=bounds.get("center", (0.0, 0.0, 0.0)),
                 bounds_radius=float(bounds.get("radius", 1.0)))
    if not any("split" in e for e in doc["views"]):
        vs = split_every_kth(vs)
    return vs
