import numpy as np
import pytest
import torch

from splatsr.data import ring_cameras
from splatsr.errors import DataError, DivergenceError, ParameterError, ShapeError
from splatsr.gaussians.fit import FitConfig, fit, init_scene_from_views
from splatsr.gaussians.losses import dssim, loss_all, ssim, subsample
from splatsr.gaussians.render import render
from splatsr.gaussians.scene import GaussianScene
from splatsr.imaging import area_downsample
from splatsr.metrics import psnr

from conftest import small_camera, tiny_scene


def test_subsample():
    x = torch.rand(6, 6, 3)
    assert torch.equal(subsample(x, 1), x)
    assert torch.allclose(subsample(torch.full((4, 4, 3), 0.3), 2), torch.full((2, 2, 3), 0.3))
    block = torch.tensor([[0.0, 1.0], [1.0, 0.0]])[..., None]
    assert torch.allclose(subsample(block, 2), torch.tensor([[[0.5]]]))
    with pytest.raises(ShapeError):
        subsample(torch.zeros(5, 4, 3), 2)
    assert torch.equal(subsample(x, 2), area_downsample(x, 2))


def test_loss_all_cases():
    r = torch.rand(12, 12, 3, dtype=torch.float64)
    rl = subsample(r, 2)
    assert float(loss_all(r, r, rl, rl, 1.0, 0.2)) == pytest.approx(0.0, abs=1e-12)
    h = torch.rand(12, 12, 3, dtype=torch.float64)
    l_noreg = loss_all(r, h, rl, torch.rand(6, 6, 3, dtype=torch.float64), 0.0, 0.2)
    assert float(l_noreg) == pytest.approx(float(0.8 * (r - h).abs().mean() + 0.2 * dssim(r, h)))
    a, b = torch.full((12, 12, 3), 0.5), torch.full((12, 12, 3), 0.6)
    small = torch.full((6, 6, 3), 0.2)
    assert float(loss_all(a, b, small, small, 1.0, 0.0)) == pytest.approx(0.1, abs=1e-6)
    with pytest.raises(ShapeError):
        loss_all(a, torch.zeros(6, 6, 3), None, None, 0.0, 0.2)


def test_ssim_against_skimage():
    skm = pytest.importorskip("skimage.metrics")
    checker = ((np.arange(32)[:, None] // 4 + np.arange(32)[None] // 4) % 2).astype(np.float64)
    from scipy.ndimage import gaussian_filter
    blurred = gaussian_filter(checker, 1.2)
    a = torch.from_numpy(np.repeat(checker[..., None], 3, -1))
    b = torch.from_numpy(np.repeat(blurred[..., None], 3, -1))
    ref = skm.structural_similarity(a.numpy(), b.numpy(), channel_axis=-1, data_range=1.0,
                                    gaussian_weights=True, sigma=1.5, use_sample_covariance=False)
    assert abs(float(ssim(a, b)) - ref) < 1e-4


def test_fit_config_validation():
    for kw in ({"iterations": 0}, {"delta": 1.5}, {"lam": -1}, {"lrs": {"bogus": 1.0}}):
        with pytest.raises(ParameterError):
            FitConfig(**kw)


def test_single_iteration_moves_parameters():
    s = tiny_scene(3)
    cam = small_camera(12)
    target = torch.rand(12, 12, 3, dtype=torch.float64)
    out = fit(s, [target], [cam], None, FitConfig(iterations=1, lam=0.0))
    assert not torch.equal(out.means, s.means)
    assert torch.equal(s.means, tiny_scene(3).means)  # input untouched


def test_divergence_guard():
    s = tiny_scene(3)
    bad = torch.full((12, 12, 3), float("nan"), dtype=torch.float64)
    with pytest.raises(DivergenceError) as exc:
        fit(s, [bad], [small_camera(12)], None, FitConfig(iterations=3, lam=0.0))
    assert exc.value.state["iteration"] == 0 and "param_norms" in exc.value.state


def test_view_count_mismatch():
    with pytest.raises(DataError):
        fit(tiny_scene(2), [torch.zeros(8, 8, 3)], [], None, FitConfig(iterations=1, lam=0.0))


def test_gradient_accumulation_is_order_independent():
    s = tiny_scene(4)
    cams = ring_cameras(3, 12, radius=3.0)
    targets = [torch.rand(12, 12, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(i)) for i in range(3)]
    grads = []
    for order in ([0, 1, 2], [2, 0, 1]):
        w = s.clone(requires_grad=True)
        sum(loss_all(render(w, cams[i]).image, targets[i], None, None, 0.0, 0.2) for i in order).backward()
        grads.append(torch.cat([p.grad.flatten() for p in w.params().values()]))
    assert torch.allclose(grads[0], grads[1], atol=1e-5)


def test_self_distillation_fixed_point():
    """Perturbed copy of a scene fitted to the original's renders."""
    gt = tiny_scene(6, seed=3, spread=0.5)
    cams = ring_cameras(8, 24, radius=3.0)
    targets = [render(gt, c).image.detach() for c in cams]
    g = torch.Generator().manual_seed(0)
    start = gt.clone()
    start.means.data += 0.05 * torch.randn(start.means.shape, generator=g, dtype=torch.float64)
    start.color_logits.data += 0.3 * torch.randn(start.color_logits.shape, generator=g, dtype=torch.float64)
    hist = []
    out = fit(start, targets, cams, None, FitConfig(iterations=500, lam=0.0), history=hist)
    p = np.mean([psnr(render(out, c).image, t) for c, t in zip(cams, targets)])
    assert p > 35
    smooth = np.convolve(hist, np.ones(50) / 50, mode="valid")
    assert smooth[-1] < smooth[0]


def test_three_gaussian_recovery():
    means = np.array([[-0.5, 0.0, 0.0], [0.4, 0.3, 0.1], [0.0, -0.4, -0.3]])
    gt = GaussianScene.from_activated(means, np.full((3, 3), 0.15), [[1, 0, 0, 0]] * 3, [0.9] * 3,
                                      [[0.9, 0.2, 0.2], [0.2, 0.9, 0.2], [0.2, 0.2, 0.9]], dtype=torch.float64)
    cams = ring_cameras(8, 32, radius=3.0)
    targets = [render(gt, c).image.detach() for c in cams]
    start = gt.clone()
    start.means.data += torch.tensor([[0.08, -0.05, 0.04], [-0.06, 0.07, 0.0], [0.05, 0.05, -0.06]],
                                     dtype=torch.float64)
    out = fit(start, targets, cams, None, FitConfig(iterations=400, lam=0.0, batch_size=2))
    err = (out.means - gt.means).norm(dim=1)
    assert float(err.max()) < 0.05


def test_init_scene_properties(small_views):
    a = init_scene_from_views(small_views, 50, rng=0)
    b = init_scene_from_views(small_views, 50, rng=0)
    assert a.digest() == b.digest() and len(a) == 50
    pts = a.means.detach().numpy()
    for p in pts:
        inside = False
        for v in small_views.split("train"):
            uv, z = v.camera.project(p[None])
            inside |= bool(z[0] > 0 and 0 <= uv[0, 0] <= v.camera.width - 1 and 0 <= uv[0, 1] <= v.camera.height - 1)
        assert inside
    with pytest.raises(ParameterError):
        init_scene_from_views(small_views, 0, rng=0)


def test_init_beats_random_colors(small_views):
    s = init_scene_from_views(small_views, 80, rng=1)
    r = s.clone()
    r.color_logits.data = torch.logit(torch.rand(r.color_logits.shape, generator=torch.Generator().manual_seed(0)))

    def score(sc):
        return np.mean([psnr(render(sc, v.camera).image, v.lr) for v in small_views.split("train")])

    assert score(s) > score(r)
