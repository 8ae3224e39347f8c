"""
Masked reconstruction of polyline features
==========================================

The second pre-training signal hides a fixed fraction of each scene's
tokens and reconstructs their raw features from context.  This demo
shows the masking rules (exact counts, determinism, validity), the
attention restriction masking induces, and the Huber loss that scores
reconstructions only where tokens were hidden.
"""

import numpy as np
import torch

from motionssl.masking import MaskSpec, huber, reconstruction_loss, sample_mask

torch.set_num_threads(1)

# --- choosing what to hide --------------------------------------------------
# Exactly floor(ratio * n_valid) valid tokens per modality and scene:
# never an invalid (padding) token, and the draw is a pure function of
# the seed, so a training step can be replayed bit for bit.
valid = {"agent": np.ones((2, 33), dtype=bool),
         "lane": np.ones((2, 24), dtype=bool),
         "light": np.ones((2, 11), dtype=bool)}
valid["agent"][1, 20:] = False  # second scene has a short agent set

spec = sample_mask(valid, ratio=0.6, seed=42)
for m, mask in spec.masks.items():
    print(f"{m:6s}: masked {mask.sum(axis=1)} of valid {valid[m].sum(axis=1)}")
assert (spec.masks["agent"] & ~valid["agent"]).sum() == 0

again = sample_mask(valid, ratio=0.6, seed=42)
other = sample_mask(valid, ratio=0.6, seed=43)
print(f"same seed identical: {all((spec.masks[m] == again.masks[m]).all() for m in spec.masks)}")
print(f"different seed differs: {any((spec.masks[m] != other.masks[m]).any() for m in spec.masks)}")

# --- the Huber score --------------------------------------------------------
# Quadratic near zero, linear past delta: large single-feature errors do
# not dominate the way squared error would.
errs = torch.tensor([0.0, 0.5, 2.0, 3.0], dtype=torch.float64)
print(f"\nhuber(err) for errors {errs.tolist()}: "
      f"{huber(errs, torch.zeros_like(errs)).tolist()}")

# --- scoring only hidden rows -----------------------------------------------
# The loss averages Huber over masked rows per modality, then combines
# modalities with unit weights.  Unmasked rows contribute nothing: the
# model is free to do anything where it saw the answer.
B, N, F = 2, 6, 3
target = torch.arange(B * N * F, dtype=torch.float64).reshape(B, N, F)
recon = target.clone()
recon[0, 0] += 1.0   # a wrong row that IS masked
recon[0, 1] += 99.0  # a very wrong row that is NOT masked

mask = np.zeros((B, N), dtype=bool)
mask[0, 0] = True
spec_small = MaskSpec(masks={"agent": mask}, ratio=0.6, seed=0)
total, per_mod = reconstruction_loss({"agent": recon}, {"agent": target}, spec_small)
print(f"\nloss with one masked row off by 1.0 everywhere: {total.item():.3f} "
      f"(huber(1.0) = 0.5; the unmasked +99 row is ignored)")
