"""Joint-mode prediction head and its training loss.

The head decodes k scene-wide motion modes: learned anchor queries (one
per mode, broadcast across agents and offset by each agent's last
observed state) cross-attend to the encoder outputs and self-attend
within each mode, then per-(mode, agent) affine heads emit future
position offsets relative to the agent's last observed position.  A
confidence head scores modes as a softmax simplex.

Training uses hard assignment: the regression loss counts only for the
scene-wide best mode, and the confidence head is trained with
cross-entropy against that mode's index.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np
import torch
from torch import nn

from .attention import CrossAttentionBlock, EncoderBlock, TransformerConfig
from .config import ModelConfig
from .features import AGENT_STATE_WIDTH
from .masking import huber
from .scene import MalformedPayloadError, VersionMismatchError, _arr, _read_arr

PREDICTION_FORMAT = "joint-prediction-set"
PREDICTION_VERSION = 1


@dataclasses.dataclass
class JointPrediction:
    """k scene-wide modes for one scene, numpy, scene frame."""

    modes: np.ndarray        # (k, n_agents, T_future, 2)
    confidences: np.ndarray  # (k,) nonnegative, sums to 1

    def check(self) -> None:
        k = self.modes.shape[0]
        if self.confidences.shape != (k,):
            raise ValueError(f"{k} modes but {self.confidences.shape} confidences")
        if np.any(self.confidences < 0) or abs(float(self.confidences.sum()) - 1.0) > 1e-6:
            raise ValueError("confidences are not a simplex")


class _JointBlock(nn.Module):
    """One decoding round: global cross-attention to the scene context,
    then self-attention restricted to queries of the same mode."""

    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.cross = CrossAttentionBlock(cfg)
        self.self_attn = EncoderBlock(cfg)

    def forward(self, q, context, context_valid, mode_allowed, q_valid, q_positions):
        q = self.cross(q, context, context_valid)
        return self.self_attn(q, q_positions, q_valid, mode_allowed)


class JointModeHead(nn.Module):
    def __init__(self, cfg: ModelConfig, t_future: int):
        super().__init__()
        self.k = cfg.k_modes
        self.t_future = t_future
        self.anchors = nn.Parameter(torch.randn(cfg.k_modes, cfg.width, dtype=torch.float64) * 0.02)
        self.state_proj = nn.Linear(AGENT_STATE_WIDTH, cfg.width)
        block_cfg = TransformerConfig(depth=cfg.head_depth, heads=cfg.heads,
                                      window=None, width=cfg.width, ff_hidden=cfg.ff_hidden)
        self.blocks = nn.ModuleList(_JointBlock(block_cfg) for _ in range(cfg.head_depth))
        self.traj_head = nn.Linear(cfg.width, t_future * 2)
        self.conf_head = nn.Linear(cfg.width, 1)
        nn.init.zeros_(self.traj_head.weight)
        nn.init.zeros_(self.traj_head.bias)

    def forward(self, context, context_valid, agent_state, last_pos, agent_valid):
        """Decode modes from encoder outputs.

        Args:
            context: (B, Nc, D) encoder tokens (any fusion style).
            context_valid: (B, Nc) usable context tokens.
            agent_state: (B, A, state_width) last-observed rows.
            last_pos: (B, A, 2) last observed positions (residual base).
            agent_valid: (B, A) live agents (False rows are padding).

        Returns:
            (modes, conf_logits): (B, k, A, T_future, 2) and (B, k).
        """
        B, A = agent_state.shape[:2]
        k = self.k
        q = self.anchors[None, :, None, :] + self.state_proj(agent_state)[:, None, :, :]
        q = q.reshape(B, k * A, -1)
        mode_ids = torch.arange(k).repeat_interleave(A)
        mode_allowed = (mode_ids[:, None] == mode_ids[None, :]).expand(B, -1, -1)
        q_valid = agent_valid.repeat(1, k)
        q_positions = torch.zeros((B, k * A), dtype=torch.int64)
        for block in self.blocks:
            q = block(q, context, context_valid, mode_allowed, q_valid, q_positions)
        offsets = self.traj_head(q).view(B, k, A, self.t_future, 2)
        modes = offsets + last_pos[:, None, :, None, :]
        per_agent = agent_valid[:, None, :, None].to(q.dtype)
        q_modes = q.view(B, k, A, -1)
        pooled = (q_modes * per_agent).sum(dim=2) / per_agent.sum(dim=2).clamp(min=1.0)
        conf_logits = self.conf_head(pooled).squeeze(-1)
        return modes, conf_logits


def hard_assignment_loss(modes: torch.Tensor, conf_logits: torch.Tensor,
                         gt: torch.Tensor, gt_valid: torch.Tensor,
                         delta: float = 1.0, conf_weight: float = 1.0):
    """Best-scene-mode regression plus mode-classification cross-entropy.

    The best mode per scene minimizes the mean (over all agents' valid
    future steps jointly) Huber loss of the Euclidean displacement; ties
    pick the lowest mode index.  Returns (total, regression, confidence,
    best_mode_index) with the first three averaged over the batch.
    """
    B, k = modes.shape[:2]
    diff = modes - gt[:, None]
    # small epsilon keeps the sqrt differentiable when a mode is exact
    dist = torch.sqrt((diff ** 2).sum(dim=-1) + 1e-12)
    weight = gt_valid[:, None].to(modes.dtype)
    counts = weight.sum(dim=(2, 3))
    if bool((counts == 0).any()):
        raise ValueError("a scene has zero valid future steps")
    per_mode = (huber(dist, torch.zeros((), dtype=dist.dtype), delta) * weight).sum(dim=(2, 3)) / counts
    best = per_mode.argmin(dim=1)
    regression = per_mode.gather(1, best[:, None]).mean()
    confidence = nn.functional.cross_entropy(conf_logits, best)
    return regression + conf_weight * confidence, regression, confidence, best


def postprocess_confidences(pred: JointPrediction, threshold: float = 2.0,
                            penalty: float = 0.5) -> JointPrediction:
    """Demote redundant modes: walking modes by descending confidence
    (ties by index), a mode's confidence is multiplied by ``penalty`` once
    per higher-ranked mode whose mean-over-agents final-position distance
    is below ``threshold``; confidences are then renormalized.
    Trajectories are returned unchanged (same array contents)."""
    pred.check()
    k = pred.modes.shape[0]
    conf = pred.confidences.astype(float).copy()
    order = np.lexsort((np.arange(k), -pred.confidences))
    finals = pred.modes[:, :, -1, :]  # (k, A, 2)
    for rank, j in enumerate(order):
        for i in order[:rank]:
            gap = float(np.linalg.norm(finals[i] - finals[j], axis=-1).mean())
            if gap < threshold:
                conf[j] *= penalty
    conf /= conf.sum()
    return JointPrediction(modes=pred.modes.copy(), confidences=conf)


# ---------------------------------------------------------------------------
# prediction dumps (same text-schema family as scenes)


def write_predictions(path, entries: list[tuple[str, JointPrediction]]) -> None:
    """Write scene-id/prediction pairs as canonical JSON."""
    payload = {
        "format": PREDICTION_FORMAT,
        "version": PREDICTION_VERSION,
        "entries": [
            {
                "scene_id": scene_id,
                "modes": _arr(pred.modes, "float"),
                "confidences": _arr(pred.confidences, "float"),
            }
            for scene_id, pred in entries
        ],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8"))


def read_predictions(path) -> list[tuple[str, JointPrediction]]:
    try:
        payload = json.loads(open(path, "rb").read().decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise MalformedPayloadError(f"prediction file is not valid JSON: {e}") from None
    if not isinstance(payload, dict) or payload.get("format") != PREDICTION_FORMAT:
        raise MalformedPayloadError("not a joint-prediction-set payload")
    if payload.get("version") != PREDICTION_VERSION:
        raise VersionMismatchError(f"prediction format version {payload.get('version')!r}")
    out = []
    for i, e in enumerate(payload.get("entries", [])):
        modes = _read_arr(e.get("modes"), f"entries[{i}].modes")
        conf = _read_arr(e.get("confidences"), f"entries[{i}].confidences")
        pred = JointPrediction(modes=modes, confidences=conf)
        pred.check()
        out.append((str(e.get("scene_id", "")), pred))
    return out
