"""
The scene-level similarity objective
====================================

The first pre-training signal asks the cross-correlation between pooled
motion embeddings and pooled environment embeddings (computed across a
batch of scenes) to be the identity matrix: each embedding dimension of
the motion summary should correlate with its own environment dimension
and with nothing else.  This demo computes the pieces by hand.
"""

import numpy as np
import torch

from motionssl.similarity import (SceneEmbeddingPair, SimilarityConfig,
                                  cross_correlation, scene_similarity_loss,
                                  similarity_loss)

torch.set_num_threads(1)
torch.manual_seed(0)

# --- the loss on crafted correlation matrices ------------------------------
# A perfect correlation matrix costs nothing; an all-zero one costs one
# unit per dimension; an all-ones one costs only the off-diagonal term.
I4 = torch.eye(4, dtype=torch.float64)
print(f"loss(I)        = {similarity_loss(I4).item():.10f}")
print(f"loss(zeros)    = {similarity_loss(torch.zeros(4, 4, dtype=torch.float64)).item():.10f}")
print(f"loss(ones, 3d) = {similarity_loss(torch.ones(3, 3, dtype=torch.float64)).item():.10f}")

# --- building C from embeddings --------------------------------------------
# Columns are standardized across the batch before the (1/B) z_m^T z_e
# product, so C_ii is exactly the Pearson correlation of dimension i.
# Identical, already-decorrelated inputs therefore give C = I.  Sylvester's
# Hadamard construction provides mutually orthogonal mean-zero columns.
H = np.array([[1.0]])
while H.shape[0] < 8:
    H = np.block([[H, H], [H, -H]])
z = torch.from_numpy(H[:, 1:5])  # 4 mean-zero, orthogonal columns of +-1
pair = SceneEmbeddingPair(z_motion=z, z_environment=z.clone())
C = cross_correlation(pair, epsilon_std=1e-9)
print(f"\nHadamard batch: ||C - I||_max = {(C - I4).abs().max().item():.2e}")

# Swapping two environment columns moves the correlation off the
# diagonal: C becomes the permutation matrix, and the loss notices.
perm = torch.tensor([1, 0, 2, 3])
pair_swapped = SceneEmbeddingPair(z_motion=z, z_environment=z[:, perm])
loss, C_swapped = scene_similarity_loss(pair_swapped, SimilarityConfig(epsilon_std=1e-9))
print(f"swapped columns: C[0,1] = {C_swapped[0, 1].item():+.3f}, "
      f"C[0,0] = {C_swapped[0, 0].item():+.3f}, loss = {loss.item():.3f}")

# --- what the penalty does over optimization -------------------------------
# Starting from random embeddings, a few gradient steps pull the
# diagonal toward 1 while the redundancy term suppresses off-diagonal
# correlation -- no negative pairs, no large batches required.
zm = torch.randn(16, 4, dtype=torch.float64, requires_grad=True)
ze = torch.randn(16, 4, dtype=torch.float64, requires_grad=True)
opt = torch.optim.SGD([zm, ze], lr=0.5)
for step in range(201):
    loss, C = scene_similarity_loss(SceneEmbeddingPair(zm, ze))
    opt.zero_grad()
    loss.backward()
    opt.step()
    if step % 50 == 0:
        off = (C - torch.diag(torch.diagonal(C))).abs().max()
        print(f"step {step:3d}: loss {loss.item():.5f}  "
              f"diag mean {torch.diagonal(C).mean().item():+.4f}  "
              f"max |off-diag| {off.item():.4f}")
