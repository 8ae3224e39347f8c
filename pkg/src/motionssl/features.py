"""Raw polyline features: the model-facing view of a scene.

Each modality becomes one flat token list with per-token raw feature rows,
polyline ids, within-polyline indices, and validity.  The same rows serve
as embedding inputs and as reconstruction targets.

Feature layouts (per token / row):
  agent: [x, y, l, w, h, ax, ay, vx, vy, yaw, step_onehot(T_past), class_onehot(3)]
  lane:  [x, y, class_onehot(lane_class_count)]
  light: [x, y, step_onehot(T_past), state_onehot(3)]
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .scene import DatasetDialect, TrafficScene, last_valid_index

MODALITIES = ("agent", "lane", "light")


def agent_feature_width(dialect: DatasetDialect) -> int:
    return 13 + dialect.T_past


def lane_feature_width(dialect: DatasetDialect) -> int:
    return 2 + dialect.lane_class_count


def light_feature_width(dialect: DatasetDialect) -> int:
    return 5 + dialect.T_past


def feature_widths(dialect: DatasetDialect) -> dict[str, int]:
    return {
        "agent": agent_feature_width(dialect),
        "lane": lane_feature_width(dialect),
        "light": light_feature_width(dialect),
    }


# width of the per-agent state row fed to the prediction head; independent
# of dialect so fine-tuning heads are portable across dialects
AGENT_STATE_WIDTH = 11


@dataclasses.dataclass
class RawTokens:
    """Flat per-modality token list for one scene."""

    modality: str
    features: np.ndarray      # (N, F) float64; invalid rows all-zero
    polyline_id: np.ndarray   # (N,) int64
    within_index: np.ndarray  # (N,) int64
    valid: np.ndarray         # (N,) bool

    @property
    def count(self) -> int:
        return int(self.features.shape[0])


def _empty(modality: str, width: int) -> RawTokens:
    return RawTokens(modality, np.zeros((0, width)), np.zeros(0, np.int64),
                     np.zeros(0, np.int64), np.zeros(0, bool))


def agent_raw_tokens(scene: TrafficScene) -> RawTokens:
    """One token per (agent, past step), ordered by agent then step."""
    d = scene.dialect
    T = d.T_past
    rows, pids, widx, valid = [], [], [], []
    for ag in scene.agents:
        feats = np.concatenate([
            ag.position,                     # x, y
            ag.dims,                         # l, w, h
            ag.accel,                        # ax, ay
            ag.vel,                          # vx, vy
            ag.yaw[:, None],                 # yaw
            ag.step_onehot,                  # temporal order
            np.tile(ag.class_onehot, (T, 1)),
        ], axis=1)
        feats = np.where(ag.valid[:, None], feats, 0.0)
        rows.append(feats)
        pids.append(np.full(T, ag.agent_id, np.int64))
        widx.append(np.arange(T, dtype=np.int64))
        valid.append(ag.valid.astype(bool))
    return RawTokens("agent", np.concatenate(rows), np.concatenate(pids),
                     np.concatenate(widx), np.concatenate(valid))


def lane_raw_tokens(scene: TrafficScene) -> RawTokens:
    """One token per (lane, point), ordered by lane then point."""
    width = lane_feature_width(scene.dialect)
    if not scene.lanes:
        return _empty("lane", width)
    rows, pids, widx = [], [], []
    for lane in scene.lanes:
        P = lane.points.shape[0]
        rows.append(np.concatenate([lane.points, np.tile(lane.class_onehot, (P, 1))], axis=1))
        pids.append(np.full(P, lane.lane_id, np.int64))
        widx.append(np.arange(P, dtype=np.int64))
    feats = np.concatenate(rows)
    return RawTokens("lane", feats, np.concatenate(pids), np.concatenate(widx),
                     np.ones(feats.shape[0], bool))


def light_raw_tokens(scene: TrafficScene) -> RawTokens:
    """One token per (light, past step), ordered by light then step."""
    d = scene.dialect
    width = light_feature_width(d)
    if not scene.lights:
        return _empty("light", width)
    T = d.T_past
    rows, pids, widx = [], [], []
    for tl in scene.lights:
        rows.append(np.concatenate([
            np.tile(tl.position, (T, 1)),
            tl.step_onehot,
            tl.state_onehot,
        ], axis=1))
        pids.append(np.full(T, tl.light_id, np.int64))
        widx.append(np.arange(T, dtype=np.int64))
    feats = np.concatenate(rows)
    return RawTokens("light", feats, np.concatenate(pids), np.concatenate(widx),
                     np.ones(feats.shape[0], bool))


def scene_raw_tokens(scene: TrafficScene) -> dict[str, RawTokens]:
    return {
        "agent": agent_raw_tokens(scene),
        "lane": lane_raw_tokens(scene),
        "light": light_raw_tokens(scene),
    }


def agent_state_rows(scene: TrafficScene) -> tuple[np.ndarray, np.ndarray]:
    """Last-observed state per agent for the prediction head.

    Returns (states, last_positions): states is (n_agents, 11) rows of
    [x, y, vx, vy, yaw, l, w, h, class_onehot(3)] at each agent's last
    valid step; last_positions is (n_agents, 2).
    """
    states = np.zeros((len(scene.agents), AGENT_STATE_WIDTH))
    last_pos = np.zeros((len(scene.agents), 2))
    for i, ag in enumerate(scene.agents):
        t = last_valid_index(ag.valid)
        if t is None:
            raise ValueError(f"agent {ag.agent_id} has no valid step")
        states[i] = np.concatenate([
            ag.position[t], ag.vel[t], [ag.yaw[t]], ag.dims[t], ag.class_onehot,
        ])
        last_pos[i] = ag.position[t]
    return states, last_pos
