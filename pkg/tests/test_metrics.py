import math

import numpy as np
import pytest
import torch

from splatsr.data import make_reference_dataset, ring_cameras
from splatsr.errors import ConfigurationError, ParameterError, ShapeError
from splatsr.gaussians.render import render
from splatsr.metrics import (MetricsReport, build_report, cross_view_consistency, psnr, read_report, ssim,
                             write_report)


def test_psnr_values():
    a = torch.rand(8, 8, 3)
    assert psnr(a, a) == 99.0
    assert psnr(torch.full((4, 4, 3), 0.5), torch.full((4, 4, 3), 0.6)) == pytest.approx(20.0, abs=1e-4)
    assert psnr(torch.zeros(4, 4, 3), torch.ones(4, 4, 3)) == pytest.approx(0.0)
    b = torch.rand(8, 8, 3)
    assert psnr(a, b) == psnr(b, a) > 0
    with pytest.raises(ShapeError):
        psnr(a, torch.zeros(4, 4, 3))


def test_ssim_values():
    g = torch.Generator().manual_seed(0)
    a, b = torch.rand(24, 24, 3, generator=g), torch.rand(24, 24, 3, generator=g)
    assert ssim(a, a) == pytest.approx(1.0)
    assert ssim(a, 1 - a) < 1.0
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-9
    val, cropped = ssim(torch.rand(6, 6, 3), torch.rand(6, 6, 3), return_flag=True)
    assert cropped and -1 <= val <= 1


@pytest.fixture(scope="module")
def gt_renders():
    vs = make_reference_dataset(0)
    gt = vs.meta["gt_scene"]
    cams = [vs.hr_camera(i) for i in range(6)]
    return vs, [render(gt, c) for c in cams], cams


def test_identity_pair_is_zero(gt_renders):
    vs, rs, cams = gt_renders
    c = cross_view_consistency([rs[0].image, rs[0].image], [rs[0].depth] * 2, [cams[0]] * 2, vs.scene_diameter)
    assert c.matrix[0, 0] == 0.0 and c.matrix[1, 1] == 0.0
    assert c.mean < 1e-12  # the same pose twice only differs by round-off


def test_nearby_poses_of_one_scene_are_consistent(gt_renders):
    vs, _, _ = gt_renders
    cams = ring_cameras(2, 64, arc_deg=5.0)
    rs = [render(vs.meta["gt_scene"], c) for c in cams]
    c = cross_view_consistency([r.image for r in rs], [r.depth for r in rs], cams, vs.scene_diameter,
                               masks=[r.alpha > 0.5 for r in rs])
    assert c.mean < 0.02


def test_unrelated_random_images_score_one_third():
    cams = ring_cameras(1, 64) * 2  # same pose: warps land on pixel centres
    g = torch.Generator().manual_seed(0)
    imgs = [torch.rand(64, 64, 3, generator=g, dtype=torch.float64) for _ in range(2)]
    depth = torch.full((64, 64), 4.0, dtype=torch.float64)
    c = cross_view_consistency(imgs, [depth, depth], cams, scene_diameter=100.0)
    assert abs(c.mean - 1 / 3) < 0.02


def test_symmetry_permutation_and_errors(gt_renders):
    vs, rs, cams = gt_renders
    imgs, depths = [r.image for r in rs], [r.depth for r in rs]
    c = cross_view_consistency(imgs, depths, cams, vs.scene_diameter)
    assert np.allclose(c.matrix, c.matrix.T, equal_nan=True)
    perm = [3, 0, 5, 1, 4, 2]
    cp = cross_view_consistency([imgs[i] for i in perm], [depths[i] for i in perm], [cams[i] for i in perm],
                                vs.scene_diameter)
    assert np.allclose(cp.matrix, c.matrix[np.ix_(perm, perm)], equal_nan=True)
    with pytest.raises(ConfigurationError):
        cross_view_consistency(imgs, None, cams)
    with pytest.raises(ConfigurationError):
        cross_view_consistency(imgs, depths[:-1] + [None], cams)


def test_noise_increases_error_monotonically(gt_renders):
    vs, rs, cams = gt_renders
    g = torch.Generator().manual_seed(1)
    noise = [torch.randn(r.image.shape, generator=g, dtype=torch.float64) for r in rs]
    means = []
    for s in (0.0, 0.1, 0.2):
        imgs = [(r.image + s * n).clamp(0, 1) for r, n in zip(rs, noise)]
        means.append(cross_view_consistency(imgs, [r.depth for r in rs], cams, vs.scene_diameter).mean)
    assert means[0] < means[1] < means[2]


def test_low_overlap_pairs_are_excluded():
    cams = ring_cameras(2, 32, arc_deg=5.0)
    imgs = [torch.rand(32, 32, 3, dtype=torch.float64) for _ in range(2)]
    depth = torch.zeros(32, 32, dtype=torch.float64)
    depth[0, 0] = 4.0
    c = cross_view_consistency(imgs, [depth, depth], cams, scene_diameter=100.0)
    assert c.excluded == [(0, 1)] and math.isnan(c.mean)


def test_report_round_trip(tmp_path):
    imgs = [torch.rand(16, 16, 3) for _ in range(3)]
    gts = [torch.rand(16, 16, 3) for _ in range(3)]
    rep = build_report("run-x", imgs, gts, [0, 8, 16])
    rep.consistency_pairs = [[0, 1, 0.1]]
    rep.consistency_mean = 0.1
    path = write_report(rep, tmp_path)
    back = read_report(path)
    assert back == rep
    assert len((tmp_path / "metrics.csv").read_text().strip().splitlines()) == 3 + 1
    doc = rep.to_json()
    assert set(doc) >= {"run_id", "per_view", "consistency", "aggregates"}
    assert set(doc["per_view"][0]) == {"view", "psnr", "ssim"}


def test_nan_metrics_rejected(tmp_path):
    rep = MetricsReport("r", per_view=[{"view": 0, "psnr": float("nan"), "ssim": 0.5}])
    with pytest.raises(ParameterError):
        write_report(rep, tmp_path)
    assert not (tmp_path / "metrics.json").exists()
