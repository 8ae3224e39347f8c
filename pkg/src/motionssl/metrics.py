"""Joint-prediction metrics over the best of k scene-wide modes.

All metrics treat a mode as one joint hypothesis: the minimizing mode is
chosen per scene for the whole agent set (never per agent).  Displacement
errors are Euclidean distances in meters.

Definitions:
  ADE (one mode): mean displacement over every agent's valid future steps.
  FDE (one mode): mean over agents of the displacement at each agent's
      last valid step (agents without valid steps are skipped).
  min ADE / min FDE: minimum of the above over modes.
  hit: a mode hits a scene iff every agent's final displacement is below
      the threshold; a scene is missed iff no mode hits.
  simplified mAP: average precision over all (scene, mode) detections
      ranked by confidence, where a detection is a true positive iff it
      hits a scene no higher-confidence detection already hit, detections
      of already-hit scenes are skipped, and recall counts scenes.
"""

from __future__ import annotations

import dataclasses
import time
from pathlib import Path

import numpy as np

from .prediction import JointPrediction


def _check_instance(modes: np.ndarray, gt: np.ndarray, valid: np.ndarray):
    modes, gt, valid = np.asarray(modes), np.asarray(gt), np.asarray(valid, dtype=bool)
    if modes.ndim != 4 or modes.shape[-1] != 2:
        raise ValueError(f"modes must be (k, A, T, 2), got {modes.shape}")
    if gt.shape != modes.shape[1:]:
        raise ValueError(f"ground truth {gt.shape} does not match modes {modes.shape}")
    if valid.shape != gt.shape[:2]:
        raise ValueError(f"valid flags {valid.shape} do not match {gt.shape[:2]}")
    if not valid.any():
        raise ValueError("no valid future steps")
    return modes, gt, valid


def mode_ade(mode: np.ndarray, gt: np.ndarray, valid: np.ndarray) -> float:
    """Mean displacement of one (A, T, 2) mode over valid steps."""
    dist = np.linalg.norm(mode - gt, axis=-1)
    return float(dist[valid].mean())


def mode_fde(mode: np.ndarray, gt: np.ndarray, valid: np.ndarray) -> float:
    """Mean over agents of the displacement at each agent's last valid step."""
    finals = []
    for a in range(gt.shape[0]):
        idx = np.nonzero(valid[a])[0]
        if idx.size:
            t = idx[-1]
            finals.append(float(np.linalg.norm(mode[a, t] - gt[a, t])))
    return float(np.mean(finals))


def agent_final_errors(mode: np.ndarray, gt: np.ndarray, valid: np.ndarray) -> list[float]:
    """Final displacement per agent that has at least one valid step."""
    out = []
    for a in range(gt.shape[0]):
        idx = np.nonzero(valid[a])[0]
        if idx.size:
            t = idx[-1]
            out.append(float(np.linalg.norm(mode[a, t] - gt[a, t])))
    return out


def joint_min_ade(pred: JointPrediction, gt: np.ndarray, valid: np.ndarray) -> float:
    modes, gt, valid = _check_instance(pred.modes, gt, valid)
    return min(mode_ade(m, gt, valid) for m in modes)


def joint_min_fde(pred: JointPrediction, gt: np.ndarray, valid: np.ndarray) -> float:
    modes, gt, valid = _check_instance(pred.modes, gt, valid)
    return min(mode_fde(m, gt, valid) for m in modes)


def mode_hits(mode: np.ndarray, gt: np.ndarray, valid: np.ndarray, threshold: float) -> bool:
    """True iff every agent's final displacement is strictly below threshold."""
    return all(e < threshold for e in agent_final_errors(mode, gt, valid))


def scene_hit(pred: JointPrediction, gt: np.ndarray, valid: np.ndarray, threshold: float) -> bool:
    modes, gt, valid = _check_instance(pred.modes, gt, valid)
    return any(mode_hits(m, gt, valid, threshold) for m in modes)


def joint_miss_rate(instances: list[tuple[JointPrediction, np.ndarray, np.ndarray]],
                    threshold: float = 2.0) -> float:
    """Fraction of scenes that no mode hits.

    Args:
        instances: list of (prediction, gt (A, T, 2), valid (A, T)).
        threshold: final-displacement hit threshold in meters.
    """
    if not instances:
        raise ValueError("empty dataset")
    misses = sum(0 if scene_hit(p, gt, v, threshold) else 1 for p, gt, v in instances)
    return misses / len(instances)


def simplified_map(instances: list[tuple[JointPrediction, np.ndarray, np.ndarray]],
                   threshold: float = 2.0) -> float:
    """Average precision over confidence-ranked (scene, mode) detections."""
    if not instances:
        raise ValueError("empty dataset")
    detections = []  # (-confidence, scene index, mode index, hits)
    for s, (pred, gt, valid) in enumerate(instances):
        modes, gt, valid = _check_instance(pred.modes, gt, valid)
        for m in range(modes.shape[0]):
            detections.append((-float(pred.confidences[m]), s, m,
                               mode_hits(modes[m], gt, valid, threshold)))
    detections.sort()
    n_scenes = len(instances)
    hit_scenes: set[int] = set()
    tp = fp = 0
    precision_at_tp = []
    for _, s, _, hits in detections:
        if s in hit_scenes:
            continue  # scene already found; extra detections neither help nor hurt
        if hits:
            hit_scenes.add(s)
            tp += 1
            precision_at_tp.append(tp / (tp + fp))
        else:
            fp += 1
    return float(sum(precision_at_tp) / n_scenes)


@dataclasses.dataclass
class MetricReport:
    min_ade: float
    min_fde: float
    miss_rate: float
    map_simplified: float
    scene_count: int
    per_scene: list[dict]
    overlap_rate: str = "not computed"

    def summary_lines(self) -> list[str]:
        return [
            f"scene_count = {self.scene_count}",
            f"min_ade = {self.min_ade!r}",
            f"min_fde = {self.min_fde!r}",
            f"miss_rate = {self.miss_rate!r}",
            f"map_simplified = {self.map_simplified!r}",
            f"overlap_rate = {self.overlap_rate}",
        ]


def evaluate_predictions(instances: list[tuple[JointPrediction, np.ndarray, np.ndarray]],
                         scene_ids: list[str] | None = None,
                         threshold: float = 2.0) -> MetricReport:
    """Dataset-level metrics: per-scene min ADE/FDE averaged over scenes,
    miss rate and simplified mAP over the whole set."""
    if not instances:
        raise ValueError("empty dataset")
    ids = scene_ids or [f"scene[{i}]" for i in range(len(instances))]
    per_scene = []
    for sid, (pred, gt, valid) in zip(ids, instances):
        per_scene.append({
            "scene_id": sid,
            "min_ade": joint_min_ade(pred, gt, valid),
            "min_fde": joint_min_fde(pred, gt, valid),
            "hit": scene_hit(pred, gt, valid, threshold),
        })
    return MetricReport(
        min_ade=float(np.mean([r["min_ade"] for r in per_scene])),
        min_fde=float(np.mean([r["min_fde"] for r in per_scene])),
        miss_rate=joint_miss_rate(instances, threshold),
        map_simplified=simplified_map(instances, threshold),
        scene_count=len(instances),
        per_scene=per_scene,
    )


HISTORY_HEADER = "timestamp,corpus,scene_count,min_ade,min_fde,miss_rate,map_simplified"


def write_metric_report(path, report: MetricReport) -> None:
    """Flat key = value text file."""
    Path(path).write_text("\n".join(report.summary_lines()) + "\n")


def append_history_row(path, report: MetricReport, corpus: str,
                       timestamp: float | None = None) -> None:
    """Append one comma-separated row (documented header) to a history table."""
    p = Path(path)
    stamp = time.time() if timestamp is None else timestamp
    row = (f"{stamp!r},{corpus},{report.scene_count},{report.min_ade!r},"
           f"{report.min_fde!r},{report.miss_rate!r},{report.map_simplified!r}")
    if not p.exists():
        p.write_text(HISTORY_HEADER + "\n" + row + "\n")
    else:
        with open(p, "a") as fh:
            fh.write(row + "\n")
