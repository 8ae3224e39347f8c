"""Trainable model assemblies for both stages.

PretrainModel = encoder + reconstruction decoder + projector pair; its
``losses`` method evaluates the similarity and/or reconstruction
objectives on a batch.  PredictionModel = the same encoder + the
joint-mode head.  Parameter prefixes are stable across the two
(``encoder.``) so checkpoints transfer by name, and everything
pre-training-only lives under ``projectors.`` / ``decoder.``.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import torch
from torch import nn

from .config import ModelConfig, TrainConfig
from .encoders import (ConcatTokens, EarlyFusionEncoder, LateFusionEncoder,
                       TokenSequence, concatenate_sequences)
from .features import MODALITIES
from .masking import (LocalReconstructionDecoder, MaskSpec,
                      QueryReconstructionDecoder, apply_mask, reconstruction_loss,
                      sample_mask)
from .prediction import JointModeHead, hard_assignment_loss
from .scene import DatasetDialect
from .similarity import (ProjectorPair, SceneEmbeddingPair, cross_correlation,
                         pool_environment, pool_motion, pool_valid_tokens,
                         similarity_loss)

SIMILARITY = "similarity"
RECONSTRUCTION = "reconstruction"


@dataclasses.dataclass
class Batch:
    """One training batch, already in the model frame.

    Scene-centric features drive the late-fusion paths; ``view_*`` fields
    (present only for early fusion) hold per-focal-agent views plus the
    pose mapping each view back into the common scene-centric frame.
    """

    features: dict[str, torch.Tensor]      # modality -> (B, N, F)
    polyline_id: dict[str, torch.Tensor]   # modality -> (B, N)
    within_index: dict[str, torch.Tensor]
    valid: dict[str, torch.Tensor]         # modality -> (B, N) bool
    futures: torch.Tensor                  # (B, A, T, 2)
    future_valid: torch.Tensor             # (B, A, T) bool
    agent_state: torch.Tensor              # (B, A, state_width)
    last_pos: torch.Tensor                 # (B, A, 2)
    agent_valid: torch.Tensor              # (B, A) bool
    scene_ids: list[str]
    view_features: dict[str, torch.Tensor] | None = None  # modality -> (B, V, N, F)
    view_valid: dict[str, torch.Tensor] | None = None      # modality -> (B, V, N)
    view_pose: torch.Tensor | None = None                  # (B, V, 4) tx, ty, cos, sin

    @property
    def size(self) -> int:
        return int(self.futures.shape[0])


def _embed_batch(embedder, features, polyline_id, within_index, valid) -> dict[str, TokenSequence]:
    return {m: embedder.embed_batch(m, features[m], polyline_id[m], within_index[m], valid[m])
            for m in MODALITIES}


class PretrainModel(nn.Module):
    def __init__(self, cfg: ModelConfig, dialect: DatasetDialect, fusion: str = "late"):
        super().__init__()
        if fusion not in ("late", "early"):
            raise ValueError(f"unknown fusion {fusion!r}")
        self.fusion = fusion
        self.cfg = cfg
        self.dialect = dialect
        if fusion == "late":
            self.encoder = LateFusionEncoder(cfg, dialect)
            self.decoder = LocalReconstructionDecoder(cfg, dialect)
        else:
            self.encoder = EarlyFusionEncoder(cfg, dialect)
            self.decoder = QueryReconstructionDecoder(cfg, dialect)
        self.projectors = ProjectorPair(cfg.width, cfg.projector_hidden, cfg.projector_out)

    # -- late-fusion paths ---------------------------------------------------

    def _late_similarity(self, enc, tcfg: TrainConfig) -> torch.Tensor:
        pair = self.projectors(pool_motion(enc.agents),
                               pool_environment(enc.lanes, enc.lights))
        C = cross_correlation(pair, tcfg.epsilon_std)
        return similarity_loss(C, tcfg.redundancy_weight)

    def _late_masked_encode(self, seqs, spec: MaskSpec):
        masked, extra = {}, {}
        for m in MODALITIES:
            mask = torch.from_numpy(spec.masks[m])
            masked[m], extra[m] = apply_mask(seqs[m], mask, self.decoder.mask_embeddings[m])
        return self.encoder.encode(masked, extra)

    def _late_reconstruction(self, enc, batch: Batch, spec: MaskSpec, tcfg: TrainConfig):
        concat = concatenate_sequences(enc.as_dict())
        recon = self.decoder(concat)
        return reconstruction_loss(
            recon, batch.features, spec,
            weights={"agent": tcfg.recon_agent_weight, "lane": tcfg.recon_lane_weight,
                     "light": tcfg.recon_light_weight},
            delta=tcfg.huber_delta, scope=tcfg.loss_scope, valid=batch.valid)

    # -- early-fusion paths --------------------------------------------------

    def _early_concat(self, batch: Batch, view_index: np.ndarray,
                      masked_with: MaskSpec | None = None) -> tuple[ConcatTokens, dict]:
        """Embed the selected view of every scene into one concat sequence."""
        B = batch.size
        rows = torch.arange(B)
        feats, valid, targets = {}, {}, {}
        vi = torch.from_numpy(np.asarray(view_index, dtype=np.int64))
        for m in MODALITIES:
            feats[m] = batch.view_features[m][rows, vi]
            valid[m] = batch.view_valid[m][rows, vi]
            targets[m] = feats[m]
        seqs = _embed_batch(self.encoder.embed, feats, batch.polyline_id,
                            batch.within_index, valid)
        if masked_with is not None:
            for m in MODALITIES:
                mask = torch.from_numpy(masked_with.masks[m])
                seqs[m], _ = apply_mask(seqs[m], mask, self.decoder.mask_embeddings[m])
        return concatenate_sequences(seqs), targets

    def _early_similarity(self, concat: ConcatTokens, tcfg: TrainConfig) -> torch.Tensor:
        motion = self.encoder.encode(concat, key_mask=concat.segment_mask(["agent"]))
        environment = self.encoder.encode(concat, key_mask=concat.segment_mask(["lane", "light"]))
        pair = self.projectors(motion.latent.mean(dim=1), environment.latent.mean(dim=1))
        C = cross_correlation(pair, tcfg.epsilon_std)
        return similarity_loss(C, tcfg.redundancy_weight)

    def _early_reconstruction(self, masked_concat: ConcatTokens, targets, valid,
                              spec: MaskSpec, tcfg: TrainConfig):
        latent = self.encoder.encode(masked_concat)
        recon = self.decoder(latent)
        return reconstruction_loss(
            recon, targets, spec,
            weights={"agent": tcfg.recon_agent_weight, "lane": tcfg.recon_lane_weight,
                     "light": tcfg.recon_light_weight},
            delta=tcfg.huber_delta, scope=tcfg.loss_scope, valid=valid)

    # -------------------------------------------------------------------------

    def losses(self, batch: Batch, tcfg: TrainConfig, mask_seed: int,
               view_index: np.ndarray | None = None) -> dict[str, torch.Tensor]:
        """Evaluate the configured objectives on one batch.

        Returns a dict with ``total`` plus, per active objective,
        ``similarity`` and/or ``reconstruction`` (+ per-modality parts).
        The composition is exactly
        total = similarity_weight * similarity + reconstruction.

        With both objectives active the similarity term pools the same
        masked forward pass the reconstruction decodes from, so the
        scene summary must survive 60% of the tokens being hidden;
        similarity alone pools an unmasked pass (no masking without the
        reconstruction objective).
        """
        objectives = set(tcfg.objectives)
        if not objectives:
            raise ValueError("objective set is empty")
        out: dict[str, torch.Tensor] = {}
        if self.fusion == "late":
            seqs = _embed_batch(self.encoder.embed, batch.features,
                                batch.polyline_id, batch.within_index, batch.valid)
            enc = None
            if RECONSTRUCTION in objectives:
                spec = sample_mask({m: batch.valid[m].numpy() for m in MODALITIES},
                                   tcfg.mask_ratio, mask_seed)
                enc = self._late_masked_encode(seqs, spec)
                out[RECONSTRUCTION], per = self._late_reconstruction(enc, batch, spec, tcfg)
                for m in MODALITIES:
                    out[f"recon_{m}"] = per[m]
            if SIMILARITY in objectives:
                if enc is None:
                    enc = self.encoder.encode(seqs)
                out[SIMILARITY] = self._late_similarity(enc, tcfg)
        else:
            if view_index is None:
                raise ValueError("early fusion needs a focal view per scene")
            view_valid = {m: batch.view_valid[m][torch.arange(batch.size),
                                                 torch.from_numpy(np.asarray(view_index))]
                          for m in MODALITIES}
            concat = None
            if RECONSTRUCTION in objectives:
                spec = sample_mask({m: view_valid[m].numpy() for m in MODALITIES},
                                   tcfg.mask_ratio, mask_seed)
                concat, targets = self._early_concat(batch, view_index, masked_with=spec)
                out[RECONSTRUCTION], per = self._early_reconstruction(
                    concat, targets, view_valid, spec, tcfg)
                for m in MODALITIES:
                    out[f"recon_{m}"] = per[m]
            if SIMILARITY in objectives:
                if concat is None:
                    concat, _ = self._early_concat(batch, view_index)
                out[SIMILARITY] = self._early_similarity(concat, tcfg)
        if SIMILARITY in out and RECONSTRUCTION in out:
            total = tcfg.similarity_weight * out[SIMILARITY] + out[RECONSTRUCTION]
        elif SIMILARITY in out:
            total = tcfg.similarity_weight * out[SIMILARITY]
        else:
            total = out[RECONSTRUCTION]
        out["total"] = total
        return out


class PredictionModel(nn.Module):
    def __init__(self, cfg: ModelConfig, dialect: DatasetDialect, fusion: str = "late"):
        super().__init__()
        if fusion not in ("late", "early"):
            raise ValueError(f"unknown fusion {fusion!r}")
        self.fusion = fusion
        self.cfg = cfg
        self.dialect = dialect
        if fusion == "late":
            self.encoder = LateFusionEncoder(cfg, dialect)
        else:
            self.encoder = EarlyFusionEncoder(cfg, dialect)
            self.view_merge = nn.Linear(cfg.width + 4, cfg.width)
        self.head = JointModeHead(cfg, dialect.T_future)

    def _late_context(self, batch: Batch):
        seqs = _embed_batch(self.encoder.embed, batch.features,
                            batch.polyline_id, batch.within_index, batch.valid)
        enc = self.encoder.encode(seqs)
        concat = concatenate_sequences(enc.as_dict())
        return concat.tokens, concat.valid

    def _early_context(self, batch: Batch):
        B, V = batch.view_pose.shape[:2]
        feats, valid = {}, {}
        for m in MODALITIES:
            N = batch.view_features[m].shape[2]
            feats[m] = batch.view_features[m].reshape(B * V, N, -1)
            v = batch.view_valid[m].reshape(B * V, N).clone()
            valid[m] = v
        # padded views have no valid token anywhere; give them one dummy key
        # (all-zero features) so the encoder runs -- their latents are
        # excluded from the context below.
        view_live = batch.agent_valid.reshape(B * V)
        dead = ~view_live
        if bool(dead.any()):
            valid["agent"][dead, 0] = True
        pid = {m: batch.polyline_id[m].repeat_interleave(V, dim=0) for m in MODALITIES}
        widx = {m: batch.within_index[m].repeat_interleave(V, dim=0) for m in MODALITIES}
        seqs = _embed_batch(self.encoder.embed, feats, pid, widx, valid)
        latent = self.encoder.encode(concatenate_sequences(seqs)).latent  # (B*V, L, D)
        L = latent.shape[1]
        latent = latent.view(B, V, L, -1)
        pose = batch.view_pose[:, :, None, :].expand(-1, -1, L, -1)
        context = self.view_merge(torch.cat([latent, pose.to(latent.dtype)], dim=-1))
        context = context.reshape(B, V * L, -1)
        context_valid = batch.agent_valid[:, :, None].expand(-1, -1, L).reshape(B, V * L)
        return context, context_valid

    def forward(self, batch: Batch):
        if self.fusion == "late":
            context, context_valid = self._late_context(batch)
        else:
            context, context_valid = self._early_context(batch)
        return self.head(context, context_valid, batch.agent_state,
                         batch.last_pos, batch.agent_valid)

    def loss(self, batch: Batch, tcfg: TrainConfig):
        modes, conf_logits = self(batch)
        total, regression, confidence, best = hard_assignment_loss(
            modes, conf_logits, batch.futures, batch.future_valid,
            delta=tcfg.huber_delta, conf_weight=tcfg.conf_weight)
        return {"total": total, "regression": regression, "confidence": confidence,
                "best": best}


def build_pretrain_model(cfg: ModelConfig, dialect: DatasetDialect, fusion: str,
                         seed: int) -> PretrainModel:
    torch.manual_seed(seed)
    return PretrainModel(cfg, dialect, fusion).double()


def build_prediction_model(cfg: ModelConfig, dialect: DatasetDialect, fusion: str,
                           seed: int) -> PredictionModel:
    torch.manual_seed(seed)
    return PredictionModel(cfg, dialect, fusion).double()
