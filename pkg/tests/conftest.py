import numpy as np
import pytest
import torch

from splatsr.data import make_synthetic_scene
from splatsr.gaussians.camera import Camera, look_at
from splatsr.gaussians.scene import GaussianScene

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_camera(size=8, eye=(0.0, 0.0, -3.0), fov_px=None):
    f = fov_px if fov_px is not None else 1.2 * size
    c = (size - 1) / 2.0
    return Camera(f, f, c, c, look_at(np.asarray(eye), np.zeros(3)), size, size)


def tiny_scene(n=3, seed=0, dtype=torch.float64, spread=0.4, scale=(0.15, 0.3)):
    g = np.random.default_rng(seed)
    means = g.uniform(-spread, spread, (n, 3))
    scales = g.uniform(*scale, (n, 3))
    quats = g.normal(size=(n, 4))
    return GaussianScene.from_activated(means, scales, quats, g.uniform(0.4, 0.8, n),
                                        g.uniform(0.1, 0.9, (n, 3)), dtype=dtype)


@pytest.fixture(scope="session")
def small_views():
    """A 10-view blob scene at 32 px HR / 16 px LR, shared read-only."""
    return make_synthetic_scene("blob_cluster", n_views=10, image_size=32, sr_factor=2, rng=5, n_blobs=12)


class ReferenceRuns:
    """Lazily computed, cached runs on the reference scene (one per key)."""

    def __init__(self):
        self._cache = {}

    def get(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def views(self, seed):
        from splatsr.data import make_reference_dataset
        return self.get(("views", seed), lambda: make_reference_dataset(seed))

    def config(self, seed, **kw):
        from splatsr.pipeline import PipelineConfig
        return PipelineConfig(seed=seed, **kw)

    def scene_lr(self, seed):
        from splatsr.pipeline import pretrain_lr
        return self.get(("lr", seed), lambda: pretrain_lr(self.views(seed), self.config(seed)))

    def denoiser(self, seed, strength):
        from splatsr.denoiser import oracle
        return oracle(self.config(seed).schedule(), strength=strength, seed=seed)

    def run_3dsr(self, seed, strength, faithfulness=0.2, lam=1.0):
        from splatsr.codec import CodecSpec
        from splatsr.pipeline import run_3dsr
        cfg = self.config(seed, faithfulness=faithfulness, lam=lam)
        return self.get(("3dsr", seed, strength, faithfulness, lam), lambda: run_3dsr(
            self.views(seed), self.denoiser(seed, strength), CodecSpec(), cfg, scene_lr=self.scene_lr(seed)))

    def run_perview(self, seed, strength, faithfulness=0.2, baseline_lam=0.0):
        from splatsr.codec import CodecSpec
        from splatsr.pipeline import run_perview_baseline
        cfg = self.config(seed, faithfulness=faithfulness, baseline_lam=baseline_lam)
        return self.get(("perview", seed, strength, faithfulness, baseline_lam), lambda: run_perview_baseline(
            self.views(seed), self.denoiser(seed, strength), CodecSpec(), cfg, scene_lr=self.scene_lr(seed)))

    def run_bicubic(self, seed):
        from splatsr.pipeline import run_bicubic_baseline
        return self.get(("bicubic", seed), lambda: run_bicubic_baseline(
            self.views(seed), self.config(seed), scene_lr=self.scene_lr(seed)))

    def run_upper_bound(self, seed):
        from splatsr.pipeline import run_hr_upper_bound
        return self.get(("hr", seed), lambda: run_hr_upper_bound(
            self.views(seed), self.config(seed), scene_lr=self.scene_lr(seed)))

    def report(self, key, scene, seed, images=None):
        from splatsr.pipeline import evaluate
        return self.get(("report",) + key, lambda: evaluate(scene, self.views(seed), "-".join(map(str, key)),
                                                           images=images))


@pytest.fixture(scope="session")
def reference():
    return ReferenceRuns()
