# Added to the screen-space covariance diagonal so splats never vanish.
COV2D_FLOOR = 0.3
# Per-splat alpha cap; keeps transmittance invertible in the backward pass.
MAX_ALPHA = 0.99
# Contributions below this alpha are skipped (1/255 as in common splatting code).
ALPHA_MIN = 1.0 / 255.0
