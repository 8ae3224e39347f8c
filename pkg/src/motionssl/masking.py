"""Instance-level masked-reconstruction objective.

Tokens are masked per modality at an exact count (floor of ratio times the
valid-token count), replaced by a learned per-modality mask embedding, and
reconstructed by a decoder matched to the encoder family:

* late fusion: a shared windowed transformer over the concatenated
  modality embeddings, then per-modality affine heads back to raw
  feature widths;
* early fusion: one learned query per original input token (base vector
  plus sinusoidal phase of its position) cross-attending to the latent
  set, with windowed self-attention among queries, then the same heads.

The loss is an elementwise Huber over the masked rows only (configurable
to cover all valid rows), averaged per modality and combined with
per-modality weights.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import torch
from torch import nn

from .attention import (CrossAttentionBlock, EncoderBlock, TransformerConfig,
                        sinusoidal_encoding)
from .config import ModelConfig
from .encoders import ConcatTokens, EarlyFusionLatent, TokenSequence
from .features import MODALITIES, feature_widths
from .scene import DatasetDialect


@dataclasses.dataclass
class MaskSpec:
    """Per-modality token masking decisions for one batch."""

    masks: dict[str, np.ndarray]  # modality -> (B, N) bool
    ratio: float
    seed: int


def sample_mask(valid: dict[str, np.ndarray], ratio: float, seed: int) -> MaskSpec:
    """Choose exactly floor(ratio * n_valid) valid tokens per modality.

    Sampling is uniform without replacement, independent per modality and
    per scene, and a pure function of (seed, modality, scene row).

    Args:
        valid: modality -> (B, N) or (N,) boolean validity.
        ratio: fraction of valid tokens to mask, in [0, 1).
        seed: base seed.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"mask ratio must be in [0, 1), got {ratio}")
    masks = {}
    for m_idx, modality in enumerate(MODALITIES):
        if modality not in valid:
            continue
        v = np.asarray(valid[modality], dtype=bool)
        squeeze = v.ndim == 1
        if squeeze:
            v = v[None]
        B, N = v.shape
        mask = np.zeros((B, N), dtype=bool)
        for b in range(B):
            candidates = np.nonzero(v[b])[0]
            n_masked = int(ratio * candidates.size)
            if n_masked:
                rng = np.random.default_rng([int(seed), m_idx, b])
                mask[b, rng.choice(candidates, size=n_masked, replace=False)] = True
        masks[modality] = mask[0] if squeeze else mask
    return MaskSpec(masks=masks, ratio=ratio, seed=int(seed))


def apply_mask(seq: TokenSequence, mask: torch.Tensor,
               mask_embedding: torch.Tensor) -> tuple[TokenSequence, torch.Tensor]:
    """Replace masked rows by the learned embedding; build the attention rule.

    Returns the masked sequence plus an (B, N, N) "allowed" matrix under
    which unmasked tokens cannot attend to masked tokens while masked
    tokens may attend everywhere.
    """
    if mask.shape != seq.valid.shape:
        raise ValueError(f"mask shape {tuple(mask.shape)} does not match "
                         f"sequence {tuple(seq.valid.shape)}")
    if bool((mask & ~seq.valid).any()):
        raise ValueError("mask selects invalid tokens")
    tokens = torch.where(mask[..., None], mask_embedding.to(seq.tokens.dtype), seq.tokens)
    # query i may see key j unless j is masked and i is not
    allowed = ~(mask[:, None, :] & ~mask[:, :, None])
    return seq.replace_tokens(tokens), allowed


def huber(pred, target, delta: float = 1.0):
    """Elementwise Huber: quadratic within delta of the target, linear outside."""
    if delta <= 0:
        raise ValueError("huber delta must be > 0")
    pred = torch.as_tensor(pred, dtype=torch.float64)
    target = torch.as_tensor(target, dtype=torch.float64)
    r = pred - target
    return torch.where(r.abs() <= delta, 0.5 * r * r, delta * (r.abs() - 0.5 * delta))


class _ReconstructionHeads(nn.ModuleDict):
    def __init__(self, dialect: DatasetDialect, width: int):
        widths = feature_widths(dialect)
        super().__init__({m: nn.Linear(width, widths[m]) for m in MODALITIES})


class LocalReconstructionDecoder(nn.Module):
    """Shared windowed decoder over the concatenated late-fusion embeddings.

    Owns the per-modality mask embeddings so that dropping the ``decoder.``
    parameter group at fine-tune time removes every pre-training-only
    parameter in one prefix.
    """

    def __init__(self, cfg: ModelConfig, dialect: DatasetDialect):
        super().__init__()
        self.mask_embeddings = nn.ParameterDict(
            {m: nn.Parameter(torch.randn(cfg.width, dtype=torch.float64) * 0.02)
             for m in MODALITIES})
        block_cfg = TransformerConfig(depth=cfg.decoder_depth, heads=cfg.heads,
                                      window=cfg.window, width=cfg.width,
                                      ff_hidden=cfg.ff_hidden)
        self.blocks = nn.ModuleList(EncoderBlock(block_cfg) for _ in range(cfg.decoder_depth))
        self.heads = _ReconstructionHeads(dialect, cfg.width)

    def forward(self, concat: ConcatTokens) -> dict[str, torch.Tensor]:
        x = concat.tokens
        for block in self.blocks:
            x = block(x, concat.positions_1d, concat.valid)
        return {m: self.heads[m](x[:, concat.segments[m]]) for m in MODALITIES}


class _QueryDecoderBlock(nn.Module):
    """Cross-attention to the latent set + windowed self-attention + FF."""

    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.cross = CrossAttentionBlock(cfg)
        self.window = cfg.window
        self.norm = nn.LayerNorm(cfg.width)
        self.self_attn = EncoderBlock(cfg)

    def forward(self, q, positions, latent):
        B, L = latent.shape[0], latent.shape[1]
        lat_ok = torch.ones((B, L), dtype=torch.bool)
        q = self.cross(q, latent, lat_ok)
        q_valid = torch.ones(q.shape[:2], dtype=torch.bool)
        return self.self_attn(q, positions, q_valid)


class QueryReconstructionDecoder(nn.Module):
    """Early-fusion decoder: decompress a latent set back to one output row
    per original input token via learned queries."""

    def __init__(self, cfg: ModelConfig, dialect: DatasetDialect):
        super().__init__()
        self.mask_embeddings = nn.ParameterDict(
            {m: nn.Parameter(torch.randn(cfg.width, dtype=torch.float64) * 0.02)
             for m in MODALITIES})
        self.query_base = nn.ParameterDict(
            {m: nn.Parameter(torch.randn(cfg.width, dtype=torch.float64) * 0.02)
             for m in MODALITIES})
        block_cfg = TransformerConfig(depth=cfg.decoder_depth, heads=cfg.heads,
                                      window=cfg.window, width=cfg.width,
                                      ff_hidden=cfg.ff_hidden)
        self.blocks = nn.ModuleList(_QueryDecoderBlock(block_cfg)
                                    for _ in range(cfg.decoder_depth))
        self.heads = _ReconstructionHeads(dialect, cfg.width)

    def forward(self, latent: EarlyFusionLatent) -> dict[str, torch.Tensor]:
        src = latent.source
        B, N = src.valid.shape
        width = latent.latent.shape[-1]
        base = torch.zeros((B, N, width), dtype=torch.float64)
        for m in MODALITIES:
            base[:, src.segments[m]] = self.query_base[m]
        q = base + sinusoidal_encoding(src.positions_1d, width)
        for block in self.blocks:
            q = block(q, src.positions_1d, latent.latent)
        return {m: self.heads[m](q[:, src.segments[m]]) for m in MODALITIES}


def reconstruction_loss(recon: dict[str, torch.Tensor],
                        targets: dict[str, torch.Tensor],
                        spec: MaskSpec,
                        weights: dict[str, float] | None = None,
                        delta: float = 1.0,
                        scope: str = "masked",
                        valid: dict[str, torch.Tensor] | None = None,
                        ) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Weighted sum of per-modality mean Huber losses over masked rows.

    Args:
        recon: modality -> (B, N, F) reconstructed features.
        targets: modality -> (B, N, F) raw feature targets.
        spec: the masking decisions (loss rows under scope "masked").
        weights: per-modality loss weights, default 1.0 each.
        delta: Huber transition point.
        scope: "masked" (default) or "all" (every valid row; needs ``valid``).
        valid: modality -> (B, N) validity, required for scope "all".

    Returns:
        (total, per_modality): total = sum_m weight_m * loss_m; a modality
        with no selected rows contributes an exact 0.
    """
    if scope not in ("masked", "all"):
        raise ValueError(f"unknown loss scope {scope!r}")
    weights = weights or {}
    per = {}
    total = torch.zeros((), dtype=torch.float64)
    for m in MODALITIES:
        if m not in recon:
            continue
        if recon[m].shape != targets[m].shape:
            raise ValueError(f"{m}: reconstruction shape {tuple(recon[m].shape)} "
                             f"!= target {tuple(targets[m].shape)}")
        if scope == "masked":
            rows = torch.as_tensor(np.atleast_2d(spec.masks[m]))
        else:
            if valid is None:
                raise ValueError("scope 'all' needs the validity masks")
            rows = valid[m]
        if rows.shape != recon[m].shape[:2]:
            raise ValueError(f"{m}: mask shape {tuple(rows.shape)} misaligned with "
                             f"reconstruction {tuple(recon[m].shape)}")
        if bool(rows.any()):
            losses = huber(recon[m][rows], targets[m][rows], delta)
            per[m] = losses.mean()
        else:
            per[m] = torch.zeros((), dtype=torch.float64)
        total = total + float(weights.get(m, 1.0)) * per[m]
    return total, per
