"""Scene-level similarity objective.

Motion and environment token sets are average-pooled per scene, pushed
through two independent two-layer projectors, standardized across the
batch, and compared via a cross-correlation matrix.  The loss drives the
correlation toward the identity: matching diagonal, decorrelated
off-diagonal (the redundancy term).
"""

from __future__ import annotations

import dataclasses

import torch
from torch import nn

from .encoders import TokenSequence


class NonFiniteLossError(RuntimeError):
    """A loss computation left the reals (NaN/Inf)."""


@dataclasses.dataclass(frozen=True)
class SimilarityConfig:
    redundancy_weight: float = 0.005
    epsilon_std: float = 1e-5

    def __post_init__(self):
        if self.redundancy_weight < 0:
            raise ValueError("redundancy_weight must be >= 0")
        if self.epsilon_std <= 0:
            raise ValueError("epsilon_std must be > 0")


@dataclasses.dataclass
class SceneEmbeddingPair:
    """Projected per-scene embeddings: rows are scenes, columns features."""

    z_motion: torch.Tensor       # (B, d)
    z_environment: torch.Tensor  # (B, d)

    def __post_init__(self):
        if self.z_motion.shape != self.z_environment.shape:
            raise ValueError(f"shape mismatch: {tuple(self.z_motion.shape)} vs "
                             f"{tuple(self.z_environment.shape)}")


def pool_valid_tokens(seqs: list[TokenSequence]) -> torch.Tensor:
    """Mean over every valid token across the given sequences -> (B, D).

    Exactly permutation-invariant in content (the sum runs over a set);
    raises if any scene has no valid token to pool.
    """
    seqs = [s for s in seqs if s.count > 0]
    if not seqs:
        raise ValueError("nothing to pool: all sequences are empty")
    total = None
    count = None
    for s in seqs:
        keep = s.valid[..., None].to(s.tokens.dtype)
        part = (s.tokens * keep).sum(dim=1)
        n = s.valid.sum(dim=1)
        total = part if total is None else total + part
        count = n if count is None else count + n
    if bool((count == 0).any()):
        raise ValueError("a scene has zero valid tokens in the pooled set")
    return total / count[:, None].to(total.dtype)


def pool_motion(h_agents: TokenSequence) -> torch.Tensor:
    return pool_valid_tokens([h_agents])


def pool_environment(h_lanes: TokenSequence, h_lights: TokenSequence) -> torch.Tensor:
    """Joint mean over lane and light tokens (one pool, not a mean of means)."""
    return pool_valid_tokens([h_lanes, h_lights])


class Projector(nn.Module):
    """Two-layer perceptron with LayerNorm + ReLU between the layers."""

    def __init__(self, width: int, hidden: int, out: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(width, hidden),
            nn.LayerNorm(hidden),
            nn.ReLU(),
            nn.Linear(hidden, out),
        )

    def forward(self, x):
        return self.net(x)


class ProjectorPair(nn.Module):
    """Independent motion/environment projectors (dropped after pre-training)."""

    def __init__(self, width: int, hidden: int, out: int):
        super().__init__()
        self.motion = Projector(width, hidden, out)
        self.environment = Projector(width, hidden, out)

    def forward(self, pooled_motion, pooled_environment) -> SceneEmbeddingPair:
        return SceneEmbeddingPair(self.motion(pooled_motion),
                                  self.environment(pooled_environment))


def cross_correlation(pair: SceneEmbeddingPair, epsilon_std: float = 1e-5) -> torch.Tensor:
    """Batch-standardized cross-correlation matrix C (d x d).

    Each column of both embeddings is standardized across the batch
    (mean 0, std 1, with epsilon_std added to the std so constant columns
    map to ~zero instead of dividing by zero); C_ij is the batch mean of
    standardized motion feature i times standardized environment feature j.
    """
    zm, ze = pair.z_motion, pair.z_environment
    B = zm.shape[0]
    if B < 2:
        raise ValueError(f"cross-correlation needs a batch of >= 2 scenes, got {B}")
    if not bool(torch.isfinite(zm).all() and torch.isfinite(ze).all()):
        raise NonFiniteLossError("non-finite embeddings in cross-correlation input")
    zm = (zm - zm.mean(dim=0)) / (zm.std(dim=0, unbiased=False) + epsilon_std)
    ze = (ze - ze.mean(dim=0)) / (ze.std(dim=0, unbiased=False) + epsilon_std)
    return (zm.T @ ze) / B


def similarity_loss(C: torch.Tensor, redundancy_weight: float = 0.005) -> torch.Tensor:
    """Sum_i (1 - C_ii)^2 + redundancy_weight * Sum_{i != j} C_ij^2."""
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"correlation matrix must be square, got {tuple(C.shape)}")
    diag = torch.diagonal(C)
    on_diag = ((1.0 - diag) ** 2).sum()
    off_diag = (C ** 2).sum() - (diag ** 2).sum()
    return on_diag + redundancy_weight * off_diag


def scene_similarity_loss(pair: SceneEmbeddingPair,
                          cfg: SimilarityConfig = SimilarityConfig()
                          ) -> tuple[torch.Tensor, torch.Tensor]:
    """Convenience: correlation then loss; returns (loss, C)."""
    C = cross_correlation(pair, cfg.epsilon_std)
    return similarity_loss(C, cfg.redundancy_weight), C
