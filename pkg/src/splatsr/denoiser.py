"""Noise predictors.

Two kinds share one calling convention, :func:`predict_noise`:

``oracle``
    Knows the clean latent of every view and returns the noise that would
    map ``x_t`` onto ``x0 + s * h_i``, where ``h_i`` is a fixed smooth random
    field per view.  With ``s = 0`` it is a perfect denoiser; with ``s > 0``
    it invents detail that differs from view to view, the way an image-space
    super-resolution model hallucinates texture independently per image.

``trained``
    A small convolutional network conditioned on the upsampled LR latent,
    trained with the usual noise-prediction objective.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .ckpt import digest_arrays, read_container, write_container
from .diffusion import NoiseSchedule
from .errors import ConfigurationError, DataError, ParameterError, ParseError, ShapeError
from .imaging import from_nchw, gaussian_blur, resize, to_nchw

logger = logging.getLogger(__name__)


def make_hallucination_field(shape, seed: int, smoothness: float = 2.0) -> torch.Tensor:
    """Zero-mean, unit-variance smooth random field of the given ``(H, W, C)`` shape.

    White noise is blurred with a Gaussian of standard deviation
    ``smoothness`` pixels and renormalised.
    """
    if not smoothness > 0:
        raise ParameterError("smoothness", f"must be > 0, got {smoothness}")
    shape = tuple(int(s) for s in shape)
    if len(shape) == 2:
        shape = shape + (1,)
    gen = torch.Generator().manual_seed(int(seed))
    noise = torch.randn(shape, generator=gen, dtype=torch.float64)
    field_ = gaussian_blur(noise, smoothness)
    field_ = field_ - field_.mean()
    return (field_ / field_.std(unbiased=False)).float()


class ConditionalUNet(nn.Module):
    """Two-level convolutional encoder-decoder with an additive time embedding."""

    def __init__(self, channels: int = 3, cond_channels: int = 3, width: int = 32, T: int = 4):
        super().__init__()
        self.channels, self.cond_channels, self.width, self.T = channels, cond_channels, width, T
        w = width
        self.time = nn.Sequential(nn.Linear(16, 2 * w), nn.SiLU(), nn.Linear(2 * w, w))
        self.inc = nn.Conv2d(channels + cond_channels, w, 3, padding=1)
        self.e1 = nn.Conv2d(w, w, 3, padding=1)
        self.down = nn.Conv2d(w, 2 * w, 3, stride=2, padding=1)
        self.mid = nn.Conv2d(2 * w, 2 * w, 3, padding=1)
        self.up = nn.Conv2d(2 * w, w, 3, padding=1)
        self.d1 = nn.Conv2d(2 * w, w, 3, padding=1)
        self.out = nn.Conv2d(w, channels, 3, padding=1)

    def _embed(self, t: torch.Tensor) -> torch.Tensor:
        freqs = torch.exp(torch.arange(8, dtype=torch.float32) * (-math.log(1000.0) / 8))
        arg = (t.float() / self.T)[:, None] * 1000.0 * freqs[None]
        return torch.cat([torch.sin(arg), torch.cos(arg)], -1)

    def forward(self, x: torch.Tensor, t: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h0 = F.silu(self.inc(torch.cat([x, cond], 1)) + self.time(self._embed(t))[:, :, None, None])
        h1 = F.silu(self.e1(h0))
        m = F.silu(self.mid(F.silu(self.down(h1))))
        u = F.interpolate(m, size=h1.shape[-2:], mode="nearest")
        u = F.silu(self.up(u))
        return self.out(F.silu(self.d1(torch.cat([u, h1], 1))))

    def architecture(self) -> dict:
        return {"class": type(self).__name__, "channels": self.channels,
                "cond_channels": self.cond_channels, "width": self.width, "T": self.T}


@dataclass
class DenoiserSpec:
    """Configuration (and, for ``trained``, weights) of a noise predictor."""

    kind: str
    schedule: NoiseSchedule
    hallucination_strength: float = 0.0
    hallucination_seed: int = 0
    smoothness: float = 2.0
    conditioning: str = "lr_latent"
    model: ConditionalUNet | None = None
    train_log: list = field(default_factory=list)
    _fields: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in ("oracle", "trained"):
            raise ParameterError("kind", f"must be 'oracle' or 'trained', got {self.kind!r}")
        if self.hallucination_strength < 0:
            raise ParameterError("hallucination_strength", "must be >= 0")
        if self.conditioning not in ("none", "lr_latent"):
            raise ParameterError("conditioning", f"unknown mode {self.conditioning!r}")
        if self.kind == "trained" and self.model is None:
            raise ConfigurationError("a trained denoiser needs a model")

    def view_seed(self, view: int) -> int:
        return self.hallucination_seed * 100_003 + int(view)

    def hallucination(self, shape, view: int) -> torch.Tensor:
        key = (tuple(shape), view)
        if key not in self._fields:
            self._fields[key] = make_hallucination_field(shape, self.view_seed(view), self.smoothness)
        return self._fields[key]


def oracle(schedule: NoiseSchedule, strength: float = 0.0, seed: int = 0, smoothness: float = 2.0) -> DenoiserSpec:
    return DenoiserSpec("oracle", schedule, hallucination_strength=strength,
                        hallucination_seed=seed, smoothness=smoothness)


def _match_condition(condition: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    if condition.shape[:2] != like.shape[:2]:
        condition = resize(condition, tuple(like.shape[:2]))
    return condition


def predict_noise(x_t: torch.Tensor, t: int, condition: torch.Tensor | None, spec: DenoiserSpec,
                  ground_truth: torch.Tensor | None = None, view: int = 0) -> torch.Tensor:
    """Predict the noise in an ``(H, W, C)`` latent ``x_t`` at step ``t``.

    ``ground_truth`` (the view's clean latent) and ``view`` (which selects
    the hallucination field) are only used by the oracle.

    Raises:
        ConfigurationError: the oracle is called without ground truth.
    """
    sched = spec.schedule
    if not 1 <= t <= sched.T:
        raise ParameterError("t", f"must satisfy 1 <= t <= {sched.T}, got {t}")
    if spec.kind == "oracle":
        if ground_truth is None:
            raise ConfigurationError("the oracle denoiser needs the view's ground-truth latent")
        if ground_truth.shape != x_t.shape:
            raise ShapeError(f"ground truth {tuple(ground_truth.shape)} vs latent {tuple(x_t.shape)}")
        target = ground_truth
        if spec.hallucination_strength:
            target = target + spec.hallucination_strength * spec.hallucination(x_t.shape, view).to(x_t.dtype)
        ab = sched.alpha_bars[t]
        return (x_t - math.sqrt(ab) * target) / math.sqrt(1.0 - ab)

    model = spec.model
    if spec.conditioning == "lr_latent":
        if condition is None:
            raise ConfigurationError("this denoiser is conditioned on the LR latent; got none")
        cond = _match_condition(condition, x_t)
    else:
        cond = torch.zeros(x_t.shape[:2] + (model.cond_channels,), dtype=x_t.dtype)
    with torch.no_grad():
        out = model(to_nchw(x_t.float()), torch.tensor([t]), to_nchw(cond.float()))
    return from_nchw(out).to(x_t.dtype)


# ---------------------------------------------------------------------------
# training


def _training_pairs(corpus) -> list[tuple[torch.Tensor, torch.Tensor]]:
    pairs = []
    for vs in corpus:
        for v in vs.views:
            if v.hr is None:
                raise DataError("training views need HR ground truth")
            pairs.append((v.hr.float(), resize(v.lr.float(), tuple(v.hr.shape[:2]))))
    if not pairs:
        raise DataError("the training corpus is empty")
    return pairs


def _sample_batch(pairs, batch: int, crop: int, schedule: NoiseSchedule, gen: torch.Generator):
    xs, conds = [], []
    for _ in range(batch):
        hr, cond = pairs[int(torch.randint(len(pairs), (1,), generator=gen))]
        h, w = hr.shape[:2]
        c = min(crop, h, w)
        y0 = int(torch.randint(h - c + 1, (1,), generator=gen))
        x0 = int(torch.randint(w - c + 1, (1,), generator=gen))
        xs.append(hr[y0:y0 + c, x0:x0 + c].permute(2, 0, 1))
        conds.append(cond[y0:y0 + c, x0:x0 + c].permute(2, 0, 1))
    x0 = torch.stack(xs)
    cond = torch.stack(conds)
    t = torch.randint(1, schedule.T + 1, (batch,), generator=gen)
    eps = torch.randn(x0.shape, generator=gen)
    ab = torch.as_tensor(schedule.alpha_bars, dtype=torch.float32)[t][:, None, None, None]
    x_t = ab.sqrt() * x0 + (1 - ab).sqrt() * eps
    return x_t, t, cond, eps


def train_denoiser(corpus: Sequence, schedule: NoiseSchedule, steps: int, rng=0, batch: int = 8,
                   crop: int = 24, width: int = 16, lr: float = 2e-3,
                   conditioning: str = "lr_latent") -> DenoiserSpec:
    """Fit a :class:`ConditionalUNet` to predict the injected noise.

    ``corpus`` is a sequence of view sets with HR ground truth; training
    uses random ``crop`` x ``crop`` patches of HR images and the matching
    patch of the bilinearly upsampled LR image as conditioning.  Per-step
    losses are kept in ``spec.train_log``.
    """
    if int(steps) != steps or steps < 1:
        raise ParameterError("steps", f"must be an integer >= 1, got {steps}")
    pairs = _training_pairs(corpus)
    seed = int(np.random.default_rng(rng).integers(2**31)) if not isinstance(rng, int) else rng
    gen = torch.Generator().manual_seed(seed)
    channels = pairs[0][0].shape[-1]
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = ConditionalUNet(channels, channels, width=width, T=schedule.T)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    log = []
    for step in range(int(steps)):
        x_t, t, cond, eps = _sample_batch(pairs, batch, crop, schedule, gen)
        if conditioning == "none":
            cond = torch.zeros_like(cond)
        loss = F.mse_loss(model(x_t, t, cond), eps)
        opt.zero_grad()
        loss.backward()
        opt.step()
        log.append(float(loss.detach()))
        if step % 100 == 0:
            logger.info("denoiser step %d loss %.4f", step, log[-1])
    model.eval()
    return DenoiserSpec("trained", schedule, conditioning=conditioning, model=model, train_log=log)


def noise_prediction_mse(spec: DenoiserSpec | None, corpus: Sequence, schedule: NoiseSchedule,
                         n_batches: int = 8, rng=1234, batch: int = 16, crop: int = 32) -> float:
    """Held-out noise-prediction MSE; ``spec=None`` scores the zero predictor."""
    pairs = _training_pairs(corpus)
    gen = torch.Generator().manual_seed(int(rng))
    total = 0.0
    for _ in range(n_batches):
        x_t, t, cond, eps = _sample_batch(pairs, batch, crop, schedule, gen)
        if spec is None:
            pred = torch.zeros_like(eps)
        else:
            if spec.conditioning == "none":
                cond = torch.zeros_like(cond)
            with torch.no_grad():
                pred = spec.model(x_t, t, cond)
        total += float(F.mse_loss(pred, eps))
    return total / n_batches


# ---------------------------------------------------------------------------
# checkpoints: <stem>.bin holds the weights, <stem>.json the metadata


def architecture_hash(model: ConditionalUNet) -> str:
    desc = json.dumps({"arch": model.architecture(),
                       "params": [[k, list(v.shape)] for k, v in model.state_dict().items()]},
                      sort_keys=True)
    return hashlib.sha256(desc.encode()).hexdigest()[:16]


def weights_digest(spec: DenoiserSpec) -> str:
    return digest_arrays({k: v.numpy() for k, v in spec.model.state_dict().items()})


def save_denoiser(spec: DenoiserSpec, path) -> tuple[Path, Path]:
    if spec.kind != "trained":
        raise ConfigurationError("only trained denoisers have weights to save")
    stem = Path(path).with_suffix("")
    arrays = {k: v.detach().numpy() for k, v in spec.model.state_dict().items()}
    meta = {
        "format": "splatsr.denoiser",
        "architecture": spec.model.architecture(),
        "architecture_hash": architecture_hash(spec.model),
        "schedule_T": spec.schedule.T,
        "channels": spec.model.channels,
        "cond_channels": spec.model.cond_channels,
        "conditioning": spec.conditioning,
        "n_parameters": int(sum(a.size for a in arrays.values())),
        "weights_digest": digest_arrays(arrays),
    }
    bin_path = write_container(stem.with_suffix(".bin"), {"format": "splatsr.denoiser.weights"}, arrays)
    json_path = stem.with_suffix(".json")
    json_path.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return bin_path, json_path


def load_denoiser(path, schedule: NoiseSchedule) -> DenoiserSpec:
    stem = Path(path).with_suffix("")
    try:
        meta = json.loads(stem.with_suffix(".json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{stem}.json: cannot read denoiser metadata ({exc})") from exc
    if meta.get("schedule_T") != schedule.T:
        raise ConfigurationError(f"checkpoint was trained for T={meta.get('schedule_T')}, schedule has T={schedule.T}")
    arch = meta["architecture"]
    model = ConditionalUNet(arch["channels"], arch["cond_channels"], arch["width"], arch["T"])
    if architecture_hash(model) != meta["architecture_hash"]:
        raise ParseError(f"{stem}: architecture hash mismatch")
    _, arrays = read_container(stem.with_suffix(".bin"))
    model.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
    model.eval()
    return DenoiserSpec("trained", schedule, conditioning=meta["conditioning"], model=model)
