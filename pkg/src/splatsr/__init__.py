"""3D-consistent diffusion super-resolution with Gaussian splatting.

The sampler projects every view's clean-latent estimate through a jointly
fitted 3D Gaussian scene at each denoising step, so the views are
super-resolved consistently.  Submodules:

``diffusion``   noise schedules and sampler algebra
``denoiser``    oracle and trained noise predictors
``codec``       image <-> latent encoder/decoder
``gaussians``   differentiable 3D Gaussian scenes
``pipeline``    LR pretraining, the 3D-consistent run and baselines
``data``        multi-view datasets, synthetic scenes and disk IO
``metrics``     PSNR, SSIM and cross-view consistency
``cli``         command-line entry points
"""

from .codec import CodecSpec, decode, encode
from .data import View, ViewSet, load_dataset, make_reference_dataset, make_synthetic_scene, save_dataset
from .denoiser import DenoiserSpec, make_hallucination_field, oracle, predict_noise, train_denoiser
from .diffusion import (NoiseSchedule, estimate_x0, forward_diffuse, guided_denoise_step, make_default_schedule,
                        make_linear_schedule)
from .errors import (ConfigurationError, DataError, DivergenceError, ParameterError, ParseError, ScheduleError,
                     ShapeError, SplatSRError)
from .gaussians import Camera, FitConfig, GaussianScene, fit, render
from .metrics import cross_view_consistency, psnr, ssim
from .pipeline import (PipelineConfig, RunManifest, evaluate, pretrain_lr, run_3dsr, run_bicubic_baseline,
                       run_hr_upper_bound, run_perview_baseline)

__version__ = "0.1.0"
