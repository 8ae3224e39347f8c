"""Token embedding and the two encoder families.

Late fusion runs one windowed transformer stack per modality (agents /
lanes / lights) with attention confined to each polyline; early fusion
embeds everything into one concatenated sequence and compresses it into a
fixed set of learned latent tokens via cross-attention.

Token bookkeeping travels with the tensors so decoders can reconstruct
per-token outputs aligned with the original order.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import torch
from torch import nn

from .attention import (CrossAttentionBlock, EncoderBlock, TransformerConfig,
                        TransformerStack, sinusoidal_encoding)
from .config import ModelConfig
from .features import MODALITIES, RawTokens, feature_widths, scene_raw_tokens
from .scene import DatasetDialect, TrafficScene


@dataclasses.dataclass
class TokenSequence:
    """Embedded tokens of one modality with alignment bookkeeping.

    Invariants: rows with valid=False are all-zero and are never attended
    to; within_index counts 0.. within each polyline.
    """

    tokens: torch.Tensor        # (B, N, D)
    modality: str
    polyline_id: torch.Tensor   # (B, N) int64
    within_index: torch.Tensor  # (B, N) int64
    valid: torch.Tensor         # (B, N) bool
    positions_1d: torch.Tensor  # (B, N) int64

    @property
    def batch(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def count(self) -> int:
        return int(self.tokens.shape[1])

    def replace_tokens(self, tokens: torch.Tensor) -> "TokenSequence":
        return dataclasses.replace(self, tokens=tokens)

    def same_polyline_allowed(self) -> torch.Tensor:
        """(B, N, N) mask confining attention to each polyline."""
        return self.polyline_id[:, :, None] == self.polyline_id[:, None, :]


@dataclasses.dataclass
class ConcatTokens:
    """Modality-concatenated sequence (agents ++ lanes ++ lights) with a
    fresh contiguous positions_1d enumeration."""

    tokens: torch.Tensor
    valid: torch.Tensor
    positions_1d: torch.Tensor
    polyline_id: torch.Tensor
    within_index: torch.Tensor
    segments: dict[str, slice]  # modality -> column range

    @property
    def count(self) -> int:
        return int(self.tokens.shape[1])

    def segment_mask(self, modalities) -> torch.Tensor:
        """(B, N) True on tokens belonging to the given modalities."""
        m = torch.zeros_like(self.valid)
        for name in modalities:
            m[:, self.segments[name]] = True
        return m


def concatenate_sequences(seqs: dict[str, TokenSequence]) -> ConcatTokens:
    parts = [seqs[m] for m in MODALITIES]
    tokens = torch.cat([p.tokens for p in parts], dim=1)
    valid = torch.cat([p.valid for p in parts], dim=1)
    pid = torch.cat([p.polyline_id for p in parts], dim=1)
    widx = torch.cat([p.within_index for p in parts], dim=1)
    B, N = valid.shape
    positions = torch.arange(N, dtype=torch.int64).expand(B, N)
    segments, start = {}, 0
    for p in parts:
        segments[p.modality] = slice(start, start + p.count)
        start += p.count
    return ConcatTokens(tokens, valid, positions, pid, widx, segments)


@dataclasses.dataclass
class LateFusionEmbeddings:
    """Per-modality encoder outputs (H_agents houses the motion embedding,
    lanes + lights house the environment embedding)."""

    agents: TokenSequence
    lanes: TokenSequence
    lights: TokenSequence

    def as_dict(self) -> dict[str, TokenSequence]:
        return {"agent": self.agents, "lane": self.lanes, "light": self.lights}


@dataclasses.dataclass
class EarlyFusionLatent:
    """Compressed latent set plus the bookkeeping of its source tokens."""

    latent: torch.Tensor  # (B, L, D)
    source: ConcatTokens


class ModalityEmbedder(nn.Module):
    """Learned affine maps from raw feature rows to D-wide tokens."""

    def __init__(self, dialect: DatasetDialect, width: int):
        super().__init__()
        self.dialect = dialect
        widths = feature_widths(dialect)
        self.linears = nn.ModuleDict(
            {m: nn.Linear(widths[m], width) for m in MODALITIES})

    def embed_raw(self, raw: RawTokens) -> TokenSequence:
        """Embed one scene's raw token list (adds a batch dim of 1)."""
        feats = torch.from_numpy(np.ascontiguousarray(raw.features, dtype=np.float64))
        return self.embed_batch(
            raw.modality,
            feats[None],
            torch.from_numpy(raw.polyline_id.astype(np.int64))[None],
            torch.from_numpy(raw.within_index.astype(np.int64))[None],
            torch.from_numpy(raw.valid.astype(bool))[None],
        )

    def embed_batch(self, modality: str, features: torch.Tensor,
                    polyline_id: torch.Tensor, within_index: torch.Tensor,
                    valid: torch.Tensor) -> TokenSequence:
        want = self.linears[modality].in_features
        if features.shape[-1] != want:
            raise ValueError(f"{modality} features are {features.shape[-1]} wide, expected {want}")
        tokens = self.linears[modality](features) * valid[..., None].to(features.dtype)
        B, N = valid.shape
        positions = torch.arange(N, dtype=torch.int64).expand(B, N)
        return TokenSequence(tokens, modality, polyline_id, within_index, valid, positions)

    def embed_scene(self, scene: TrafficScene) -> dict[str, TokenSequence]:
        return {m: self.embed_raw(raw) for m, raw in scene_raw_tokens(scene).items()}


class LateFusionEncoder(nn.Module):
    """Three independent windowed transformer stacks, one per modality.

    Attention inside each stack is confined to tokens of the same
    polyline, so per-instance encodings do not depend on how many other
    agents/lanes are present or how they are ordered.
    """

    DEPTH_KEYS = {"agent": "agent_depth", "lane": "lane_depth", "light": "light_depth"}

    def __init__(self, cfg: ModelConfig, dialect: DatasetDialect):
        super().__init__()
        self.embed = ModalityEmbedder(dialect, cfg.width)
        self.stacks = nn.ModuleDict({
            m: TransformerStack(TransformerConfig(
                depth=getattr(cfg, self.DEPTH_KEYS[m]), heads=cfg.heads,
                window=cfg.window, width=cfg.width, ff_hidden=cfg.ff_hidden))
            for m in MODALITIES
        })

    def encode(self, seqs: dict[str, TokenSequence],
               extra_allowed: dict[str, torch.Tensor] | None = None) -> LateFusionEmbeddings:
        out = {}
        for m in MODALITIES:
            seq = seqs[m]
            if seq.count == 0:
                out[m] = seq
                continue
            allowed = seq.same_polyline_allowed()
            if extra_allowed is not None and extra_allowed.get(m) is not None:
                allowed = allowed & extra_allowed[m]
            encoded = self.stacks[m](seq.tokens, seq.positions_1d, seq.valid, allowed)
            out[m] = seq.replace_tokens(encoded)
        return LateFusionEmbeddings(agents=out["agent"], lanes=out["lane"], lights=out["light"])

    forward = encode


class EarlyFusionEncoder(nn.Module):
    """Shared encoder: learned latents cross-attend once to every valid
    input token (which carry sinusoidal phases of their positions_1d),
    then self-attend among themselves."""

    def __init__(self, cfg: ModelConfig, dialect: DatasetDialect):
        super().__init__()
        self.embed = ModalityEmbedder(dialect, cfg.width)
        self.latent_count = cfg.latent_count
        self.latents = nn.Parameter(torch.randn(cfg.latent_count, cfg.width, dtype=torch.float64) * 0.02)
        block_cfg = TransformerConfig(depth=cfg.early_self_depth, heads=cfg.heads,
                                      window=None, width=cfg.width, ff_hidden=cfg.ff_hidden)
        self.cross = CrossAttentionBlock(block_cfg)
        self.self_blocks = nn.ModuleList(EncoderBlock(block_cfg)
                                         for _ in range(cfg.early_self_depth))

    def encode(self, concat: ConcatTokens, key_mask: torch.Tensor | None = None) -> EarlyFusionLatent:
        """Compress a concatenated token sequence to the latent set.

        key_mask optionally restricts which (valid) tokens serve as keys,
        e.g. to read out a single modality.
        """
        keys_ok = concat.valid if key_mask is None else concat.valid & key_mask
        if concat.count == 0 or not bool(keys_ok.any(dim=1).all()):
            raise ValueError("early-fusion encoder needs at least one valid input token per scene")
        width = concat.tokens.shape[-1]
        kv = concat.tokens + (sinusoidal_encoding(concat.positions_1d, width)
                              * concat.valid[..., None].to(concat.tokens.dtype))
        B = concat.tokens.shape[0]
        lat = self.latents[None].expand(B, -1, -1)
        lat = self.cross(lat, kv, keys_ok)
        L = lat.shape[1]
        lat_positions = torch.zeros((B, L), dtype=torch.int64)
        lat_valid = torch.ones((B, L), dtype=torch.bool)
        for block in self.self_blocks:
            lat = block(lat, lat_positions, lat_valid)
        return EarlyFusionLatent(latent=lat, source=concat)

    forward = encode
