"""Swap the oracle for a small learned denoiser.

The oracle is convenient for measurements because its error is known.  The
sampler does not depend on it, though: any noise predictor conditioned on
the LR image can be plugged in.  Here a tiny conditional U-Net is trained
for a few hundred steps on other synthetic scenes and then used for a
3D-consistent run on the reference scene.  With so little training the
denoiser is weak, so compare it against the LR-only scene rather than the
oracle numbers.

    python examples_scripts/trained_denoiser.py
"""

from splatsr import (CodecSpec, PipelineConfig, evaluate, make_reference_dataset, make_synthetic_scene,
                     pretrain_lr, run_3dsr, train_denoiser)

config = PipelineConfig(seed=0)
schedule = config.schedule()

# Training scenes use different seeds from the evaluation scene.
corpus = [make_synthetic_scene("blob_cluster", rng=100 + k, sr_factor=4) for k in range(3)]
denoiser = train_denoiser(corpus, schedule, steps=400, rng=0)
print(f"denoiser loss {denoiser.train_log[0]:.3f} -> {denoiser.train_log[-1]:.3f}")

views = make_reference_dataset(seed=0)
scene_lr = pretrain_lr(views, config)
scene, _ = run_3dsr(views, denoiser, CodecSpec(), config, scene_lr=scene_lr)

lr_only = evaluate(scene_lr, views, run_id="lr-only")
ours = evaluate(scene, views, run_id="trained-3dsr")
print(f"test PSNR  LR-only scene {lr_only.aggregates['psnr_mean']:.2f} dB, "
      f"3DSR with the trained denoiser {ours.aggregates['psnr_mean']:.2f} dB")
