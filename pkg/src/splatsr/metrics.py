"""Image fidelity and cross-view consistency measurements."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .errors import ConfigurationError, ParameterError, ShapeError
from .gaussians.camera import Camera
from .gaussians.losses import ssim_map
from .imaging import as_image

PSNR_CAP = 99.0


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio for images in ``[0, 1]``, capped at 99 dB."""
    a, b = as_image(a).double(), as_image(b).double()
    if a.shape != b.shape:
        raise ShapeError(f"PSNR inputs differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def ssim(a, b, return_flag: bool = False):
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5) over the valid region.

    With ``return_flag`` a ``(value, cropped)`` pair is returned, where
    ``cropped`` tells whether the image was smaller than the window.
    """
    smap, cropped = ssim_map(as_image(a).double(), as_image(b).double())
    value = float(smap.mean())
    return (value, cropped) if return_flag else value


# ---------------------------------------------------------------------------
# cross-view consistency


@dataclass
class ConsistencyResult:
    matrix: np.ndarray          # symmetric (n, n) mean absolute colour error
    overlap: np.ndarray         # symmetric (n, n) fraction of pixels that warped validly
    excluded: list              # [(i, j)] pairs below the overlap threshold
    mean: float                 # mean over included pairs i < j (nan if none)

    def pairs(self) -> list[list]:
        n = self.matrix.shape[0]
        return [[i, j, float(self.matrix[i, j])] for i in range(n) for j in range(i + 1, n)
                if (i, j) not in self.excluded]


def _bilinear(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    x0 = np.clip(np.floor(u).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(v).astype(int), 0, h - 2)
    fx = (u - x0)[..., None] if img.ndim == 3 else (u - x0)
    fy = (v - y0)[..., None] if img.ndim == 3 else (v - y0)
    top = img[y0, x0] * (1 - fx) + img[y0, x0 + 1] * fx
    bot = img[y0 + 1, x0] * (1 - fx) + img[y0 + 1, x0 + 1] * fx
    return top * (1 - fy) + bot * fy


def warp_error(render_i, depth_i, cam_i: Camera, render_j, depth_j, cam_j: Camera, tau: float,
               mask_i=None) -> tuple[float, float]:
    """Mean absolute colour error of view ``i`` warped into view ``j``.

    Returns ``(error, overlap)`` where ``overlap`` is the fraction of view
    ``i``'s pixels with valid depth that land inside view ``j`` with a
    matching depth.
    """
    ri, di = np.asarray(render_i, dtype=np.float64), np.asarray(depth_i, dtype=np.float64)
    rj, dj = np.asarray(render_j, dtype=np.float64), np.asarray(depth_j, dtype=np.float64)
    h, w = di.shape
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    src = di > 0
    if mask_i is not None:
        src &= np.asarray(mask_i, dtype=bool)
    n_src = int(src.sum())
    if n_src == 0:
        return float("nan"), 0.0
    d = di[src]
    rays = np.stack([(xs[src] - cam_i.cx) / cam_i.fx, (ys[src] - cam_i.cy) / cam_i.fy, np.ones(n_src)], -1)
    world = (rays * d[:, None] - cam_i.translation) @ cam_i.rotation
    uv, z = cam_j.project(world)
    hj, wj = dj.shape
    inb = (z > cam_j.near) & (uv[:, 0] >= 0) & (uv[:, 0] <= wj - 1) & (uv[:, 1] >= 0) & (uv[:, 1] <= hj - 1)
    ok = np.zeros(n_src, dtype=bool)
    if inb.any():
        dj_s = _bilinear(dj, uv[inb, 0], uv[inb, 1])
        ok[inb] = (dj_s > 0) & (np.abs(z[inb] - dj_s) < tau)
    if not ok.any():
        return float("nan"), 0.0
    col_j = _bilinear(rj, uv[ok, 0], uv[ok, 1])
    err = float(np.abs(ri[src][ok] - col_j).mean())
    return err, float(ok.sum()) / n_src


def cross_view_consistency(renders: Sequence, depths: Sequence, cameras: Sequence[Camera],
                           scene_diameter: float = 2.0, tau: float | None = None,
                           masks: Sequence | None = None, min_overlap: float = 0.1) -> ConsistencyResult:
    """Pairwise depth-guided warp-and-compare error between views.

    For every ordered pair ``(i, j)``, pixels of view ``i`` are lifted to 3D
    with ``depths[i]``, projected into view ``j`` and compared against a
    bilinear sample of ``renders[j]``; only pixels that land in bounds with
    ``|z - depths[j]| < tau`` count.  The two directions are averaged.  The
    default ``tau`` is 1% of ``scene_diameter``.  Pairs whose valid overlap
    is below ``min_overlap`` are listed in ``excluded`` and left out of the
    mean.
    """
    n = len(renders)
    if depths is None or len(depths) != n or any(d is None for d in depths):
        raise ConfigurationError("cross-view consistency needs a depth map for every view")
    if len(cameras) != n:
        raise ShapeError(f"{n} renders but {len(cameras)} cameras")
    if n < 2:
        raise ParameterError("renders", "need at least two views")
    tau = 0.01 * scene_diameter if tau is None else tau
    R = [as_image(r).detach().double().numpy() for r in renders]
    D = [torch.as_tensor(d).detach().double().numpy() for d in depths]
    M = [None if masks is None else torch.as_tensor(m).detach().numpy() for m in (masks or [None] * n)]

    err = np.zeros((n, n))
    ovl = np.ones((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            err[i, j], ovl[i, j] = warp_error(R[i], D[i], cameras[i], R[j], D[j], cameras[j], tau, M[i])
    matrix = np.zeros((n, n))
    overlap = np.ones((n, n))
    excluded = []
    for i in range(n):
        for j in range(i + 1, n):
            vals = [e for e in (err[i, j], err[j, i]) if not math.isnan(e)]
            matrix[i, j] = matrix[j, i] = float(np.mean(vals)) if vals else float("nan")
            overlap[i, j] = overlap[j, i] = 0.5 * (ovl[i, j] + ovl[j, i])
            if overlap[i, j] < min_overlap or not vals:
                excluded.append((i, j))
    kept = [matrix[i, j] for i in range(n) for j in range(i + 1, n) if (i, j) not in excluded]
    mean = float(np.mean(kept)) if kept else float("nan")
    return ConsistencyResult(matrix, overlap, excluded, mean)


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricsReport:
    run_id: str
    per_view: list = field(default_factory=list)       # [{"view", "psnr", "ssim"}]
    consistency_pairs: list = field(default_factory=list)  # [[i, j, err]]
    consistency_mean: float | None = None
    aggregates: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "run_id": self.run_id,
            "per_view": self.per_view,
            "consistency": {"pairs": self.consistency_pairs, "mean": self.consistency_mean},
            "aggregates": self.aggregates,
            "flags": self.flags,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MetricsReport":
        cons = doc.get("consistency", {})
        return cls(run_id=doc["run_id"], per_view=doc.get("per_view", []),
                   consistency_pairs=[list(p) for p in cons.get("pairs", [])],
                   consistency_mean=cons.get("mean"), aggregates=doc.get("aggregates", {}),
                   flags=doc.get("flags", []))


def build_report(run_id: str, renders, targets, view_ids, consistency: ConsistencyResult | None = None,
                 extra: dict | None = None) -> MetricsReport:
    """Per-view PSNR/SSIM against ground truth plus aggregates."""
    per_view, flags = [], []
    for vid, r, g in zip(view_ids, renders, targets):
        s, cropped = ssim(r, g, return_flag=True)
        if cropped:
            flags.append(f"view {vid}: image smaller than SSIM window, window shrunk")
        per_view.append({"view": int(vid), "psnr": psnr(r, g), "ssim": s})
    ps = [p["psnr"] for p in per_view]
    ss = [p["ssim"] for p in per_view]
    agg = {}
    if per_view:
        agg = {"psnr_mean": float(np.mean(ps)), "psnr_std": float(np.std(ps)),
               "ssim_mean": float(np.mean(ss)), "ssim_std": float(np.std(ss)), "n_views": len(per_view)}
    report = MetricsReport(run_id=run_id, per_view=per_view, aggregates=agg, flags=flags)
    if consistency is not None:
        report.consistency_pairs = consistency.pairs()
        report.consistency_mean = None if math.isnan(consistency.mean) else consistency.mean
        if consistency.excluded:
            report.flags.append(f"{len(consistency.excluded)} view pairs excluded for low overlap")
    if extra:
        report.aggregates.update(extra)
    return report


def _check_finite(obj, where="report"):
    if isinstance(obj, float) and not math.isfinite(obj):
        raise ParameterError(where, f"non-finite metric value {obj}")
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{where}.{k}")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _check_finite(v, f"{where}[{i}]")


def write_report(report: MetricsReport, path) -> Path:
    """Write ``metrics.json`` (at ``path``) and a per-view CSV next to it.

    A directory ``path`` gets ``metrics.json``/``metrics.csv`` inside it.
    """
    path = Path(path)
    if path.is_dir() or path.suffix == "":
        path = path / "metrics.json"
    doc = report.to_json()
    _check_finite(doc)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    with open(path.with_suffix(".csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["view", "psnr", "ssim"])
        for row in report.per_view:
            wr.writerow([row["view"], repr(row["psnr"]), repr(row["ssim"])])
    return path


def read_report(path) -> MetricsReport:
    path = Path(path)
    if path.is_dir():
        path = path / "metrics.json"
    return MetricsReport.from_json(json.loads(path.read_text()))
