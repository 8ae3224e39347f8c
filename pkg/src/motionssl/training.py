"""Training harness: dataset tensors, run records, pre-training and
fine-tuning loops, and evaluation.

Every run is deterministic in its config seed on a single thread: model
init, batch order, and mask draws all derive from it.  Per-step losses
are logged to a CSV run record whose ``loss_total`` column always equals
``similarity_weight * loss_similarity + loss_reconstruction`` (absent
terms contribute zero) at machine precision.
"""

from __future__ import annotations

import dataclasses
import json
import time
from pathlib import Path

import numpy as np
import torch

from .config import (ModelConfig, TrainConfig, config_to_dict,
                     model_config_from_dict, train_config_from_dict)
from .features import MODALITIES, agent_state_rows, feature_widths, scene_raw_tokens
from .metrics import MetricReport, append_history_row, evaluate_predictions, write_metric_report
from .models import (Batch, PredictionModel, PretrainModel, RECONSTRUCTION,
                     SIMILARITY, build_prediction_model, build_pretrain_model)
from .params import (DIALECT_DEPENDENT_PREFIXES, PRETRAIN_ONLY_PREFIXES, LoadReport,
                     load_into_model, read_checkpoint, save_checkpoint)
from .prediction import JointPrediction, postprocess_confidences, write_predictions
from .scene import DataError, DatasetDialect, TrafficScene, corpus_dialect, read_corpus, \
    to_agent_centric_views, to_scene_centric
from .similarity import NonFiniteLossError


# ---------------------------------------------------------------------------
# dataset tensors


def _pad_stack(arrays: list[np.ndarray], shape: tuple[int, ...]) -> np.ndarray:
    out = np.zeros((len(arrays), *shape), dtype=arrays[0].dtype)
    for i, a in enumerate(arrays):
        sl = tuple(slice(0, s) for s in a.shape)
        out[i][sl] = a
    return out


class SceneDataset:
    """Corpus scenes precomputed into padded per-modality feature arrays.

    Scenes are recentered (scene-centric) once at construction; for early
    fusion every agent-centric view is additionally materialized together
    with its pose in the common frame.
    """

    def __init__(self, scenes: list[TrafficScene], fusion: str = "late"):
        if not scenes:
            raise DataError("dataset needs at least one scene")
        dialects = {s.dialect for s in scenes}
        if len(dialects) != 1:
            raise DataError(f"mixed dialects in one corpus: {sorted(d.name for d in dialects)}")
        self.dialect: DatasetDialect = next(iter(dialects))
        self.fusion = fusion
        self.scene_ids = [s.scene_id for s in scenes]
        centric = [to_scene_centric(s) for s in scenes]

        widths = feature_widths(self.dialect)
        per_mod = {m: [] for m in MODALITIES}
        for s in centric:
            raw = scene_raw_tokens(s)
            for m in MODALITIES:
                per_mod[m].append(raw[m])
        self.token_count = {m: max(r.count for r in per_mod[m]) for m in MODALITIES}
        self.features, self.polyline_id, self.within_index, self.valid = {}, {}, {}, {}
        for m in MODALITIES:
            N = self.token_count[m]
            self.features[m] = _pad_stack([r.features for r in per_mod[m]], (N, widths[m]))
            self.polyline_id[m] = _pad_stack([r.polyline_id for r in per_mod[m]], (N,))
            self.within_index[m] = _pad_stack([r.within_index for r in per_mod[m]], (N,))
            self.valid[m] = _pad_stack([r.valid for r in per_mod[m]], (N,))

        self.agent_count = max(len(s.agents) for s in centric)
        A, T = self.agent_count, self.dialect.T_future
        self.futures = _pad_stack([s.futures for s in centric], (A, T, 2))
        self.future_valid = _pad_stack([s.future_valid.astype(bool) for s in centric], (A, T))
        states = [agent_state_rows(s) for s in centric]
        self.agent_state = _pad_stack([st for st, _ in states], (A, states[0][0].shape[1]))
        self.last_pos = _pad_stack([lp for _, lp in states], (A, 2))
        self.agent_valid = _pad_stack(
            [np.ones(len(s.agents), dtype=bool) for s in centric], (A,))

        self.view_features = self.view_valid = self.view_pose = None
        if fusion == "early":
            vf = {m: [] for m in MODALITIES}
            vv = {m: [] for m in MODALITIES}
            poses = []
            for s in centric:
                focal_ids = [a.agent_id for a in s.agents]
                views = to_agent_centric_views(s, focal_ids)
                per_view = {m: [] for m in MODALITIES}
                per_view_valid = {m: [] for m in MODALITIES}
                pose_rows = []
                for view in views:
                    raw = scene_raw_tokens(view.scene)
                    for m in MODALITIES:
                        per_view[m].append(raw[m].features)
                        per_view_valid[m].append(raw[m].valid)
                    pose_rows.append([view.pose_translation[0], view.pose_translation[1],
                                      np.cos(view.pose_rotation), np.sin(view.pose_rotation)])
                for m in MODALITIES:
                    vf[m].append(np.stack(per_view[m]))
                    vv[m].append(np.stack(per_view_valid[m]))
                poses.append(np.asarray(pose_rows))
            self.view_features = {
                m: _pad_stack(vf[m], (A, self.token_count[m], widths[m])) for m in MODALITIES}
            self.view_valid = {
                m: _pad_stack(vv[m], (A, self.token_count[m])) for m in MODALITIES}
            self.view_pose = _pad_stack(poses, (A, 4))

    def __len__(self) -> int:
        return len(self.scene_ids)

    def batch(self, indices: np.ndarray) -> Batch:
        idx = np.asarray(indices)
        t = torch.from_numpy
        kwargs = dict(
            features={m: t(self.features[m][idx]) for m in MODALITIES},
            polyline_id={m: t(self.polyline_id[m][idx]) for m in MODALITIES},
            within_index={m: t(self.within_index[m][idx]) for m in MODALITIES},
            valid={m: t(self.valid[m][idx]) for m in MODALITIES},
            futures=t(self.futures[idx]),
            future_valid=t(self.future_valid[idx]),
            agent_state=t(self.agent_state[idx]),
            last_pos=t(self.last_pos[idx]),
            agent_valid=t(self.agent_valid[idx]),
            scene_ids=[self.scene_ids[i] for i in idx],
        )
        if self.view_features is not None:
            kwargs["view_features"] = {m: t(self.view_features[m][idx]) for m in MODALITIES}
            kwargs["view_valid"] = {m: t(self.view_valid[m][idx]) for m in MODALITIES}
            kwargs["view_pose"] = t(self.view_pose[idx])
        return Batch(**kwargs)

    def view_counts(self) -> np.ndarray:
        return self.agent_valid.sum(axis=1)


def load_dataset(corpus_dir, fusion: str = "late") -> SceneDataset:
    scenes, _ = read_corpus(corpus_dir)
    return SceneDataset(scenes, fusion=fusion)


# ---------------------------------------------------------------------------
# run records


@dataclasses.dataclass
class RunRecord:
    columns: list[str]
    rows: list[list[float]] = dataclasses.field(default_factory=list)

    def append(self, values: dict[str, float]) -> None:
        missing = set(self.columns) - set(values)
        extra = set(values) - set(self.columns)
        if missing or extra:
            raise ValueError(f"row keys mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        self.rows.append([float(values[c]) for c in self.columns])

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.asarray([r[i] for r in self.rows])

    def epoch_mean(self, name: str, epoch: int) -> float:
        col = self.column(name)
        epochs = self.column("epoch")
        return float(col[epochs == epoch].mean())

    def save(self, path) -> None:
        lines = [",".join(self.columns)]
        lines += [",".join(repr(v) for v in row) for row in self.rows]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "RunRecord":
        lines = Path(path).read_text().strip().splitlines()
        if not lines:
            raise DataError(f"empty run record {path}")
        cols = lines[0].split(",")
        rows = [[float(x) for x in line.split(",")] for line in lines[1:]]
        return cls(columns=cols, rows=rows)


def lr_at_epoch(base_lr: float, epoch: int, decay: float, step_epochs: int) -> float:
    return base_lr * decay ** (epoch // step_epochs)


def _step_seed(seed: int, epoch: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, step]).generate_state(1, np.uint64)[0])


def _epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, 17, epoch]).permutation(n)


def _dialect_meta(d: DatasetDialect) -> dict:
    return {"name": d.name, "t_past": d.T_past, "t_future": d.T_future,
            "has_traffic_lights": d.has_traffic_lights,
            "lane_class_count": d.lane_class_count}


# ---------------------------------------------------------------------------
# pre-training


def pretrain_columns(objectives) -> list[str]:
    cols = ["step", "epoch", "wall_time_s", "lr", "loss_total"]
    if SIMILARITY in objectives:
        cols.append("loss_similarity")
    if RECONSTRUCTION in objectives:
        cols += ["loss_reconstruction", "loss_recon_agent", "loss_recon_lane", "loss_recon_light"]
    return cols


def pretrain(mcfg: ModelConfig, tcfg: TrainConfig, corpus_dir, out_dir,
             ) -> tuple[PretrainModel, RunRecord]:
    """Pre-train on a corpus; writes record.csv, checkpoint.json, run_meta.json."""
    if not tcfg.objectives:
        raise ValueError("pretraining needs a nonempty objective set")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenes, manifest = read_corpus(corpus_dir)
    dialect = corpus_dialect(manifest)
    dataset = SceneDataset(scenes, fusion=tcfg.fusion)
    model = build_pretrain_model(mcfg, dialect, tcfg.fusion, tcfg.seed)
    opt = torch.optim.AdamW(model.parameters(), lr=tcfg.lr, weight_decay=tcfg.weight_decay)
    record = RunRecord(pretrain_columns(tcfg.objectives))

    start = time.monotonic()
    step = 0
    n = len(dataset)
    view_counts = dataset.view_counts()
    for epoch in range(tcfg.epochs):
        lr = lr_at_epoch(tcfg.lr, epoch, tcfg.lr_decay, tcfg.lr_step_epochs)
        for group in opt.param_groups:
            group["lr"] = lr
        order = _epoch_order(n, tcfg.seed, epoch)
        for lo in range(0, n, tcfg.batch_size):
            idx = order[lo:lo + tcfg.batch_size]
            if idx.size < 2:
                continue  # correlation-based objective needs a real batch
            batch = dataset.batch(idx)
            seed = _step_seed(tcfg.seed, epoch, step)
            view_index = None
            if tcfg.fusion == "early":
                rng = np.random.default_rng([seed, 7])
                view_index = rng.integers(0, np.maximum(view_counts[idx], 1))
            losses = model.losses(batch, tcfg, mask_seed=seed, view_index=view_index)
            loss = losses["total"]
            if not bool(torch.isfinite(loss)):
                raise NonFiniteLossError(f"non-finite pretraining loss at step {step}")
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), tcfg.clip_norm)
            opt.step()
            row = {"step": step, "epoch": epoch, "wall_time_s": time.monotonic() - start,
                   "lr": lr, "loss_total": loss.item()}
            if SIMILARITY in tcfg.objectives:
                row["loss_similarity"] = losses[SIMILARITY].item()
            if RECONSTRUCTION in tcfg.objectives:
                row["loss_reconstruction"] = losses[RECONSTRUCTION].item()
                for m in MODALITIES:
                    row[f"loss_recon_{m}"] = losses[f"recon_{m}"].item()
            record.append(row)
            step += 1
        if tcfg.checkpoint_every and (epoch + 1) % tcfg.checkpoint_every == 0:
            save_checkpoint(out / f"checkpoint_epoch{epoch + 1}.json", model,
                            _pretrain_meta(mcfg, tcfg, dialect, time.monotonic() - start, epoch + 1))

    wall = time.monotonic() - start
    meta = _pretrain_meta(mcfg, tcfg, dialect, wall, tcfg.epochs)
    save_checkpoint(out / "checkpoint.json", model, meta)
    record.save(out / "record.csv")
    (out / "run_meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
    return model, record


def _pretrain_meta(mcfg, tcfg, dialect, wall, epochs) -> dict:
    return {"kind": "pretrain", "dialect": _dialect_meta(dialect),
            "fusion": tcfg.fusion, "objectives": list(tcfg.objectives),
            "model": config_to_dict(mcfg), "train": config_to_dict(tcfg),
            "wall_time_s": wall, "epochs_done": epochs}


# ---------------------------------------------------------------------------
# fine-tuning


def finetune(mcfg: ModelConfig, tcfg: TrainConfig, corpus_dir, out_dir,
             init_checkpoint=None, val_corpus_dir=None,
             ) -> tuple[PredictionModel, RunRecord, LoadReport | None]:
    """Fine-tune the joint-mode predictor, from scratch or a checkpoint.

    A checkpoint from a different dialect transfers: only the
    input-width-dependent embedding weights reinitialize, and the load
    report lists them.  Writes record.csv, val_metrics.csv (when a
    validation corpus is given), load_report.json, checkpoint.json.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenes, manifest = read_corpus(corpus_dir)
    dialect = corpus_dialect(manifest)
    dataset = SceneDataset(scenes, fusion=tcfg.fusion)
    val_dataset = None
    if val_corpus_dir is not None:
        val_dataset = load_dataset(val_corpus_dir, fusion=tcfg.fusion)

    model = build_prediction_model(mcfg, dialect, tcfg.fusion, tcfg.seed)
    report = None
    init_wall = 0.0
    if init_checkpoint is not None:
        ckpt_meta, params = read_checkpoint(init_checkpoint)
        report = load_into_model(model, params,
                                 drop_prefixes=PRETRAIN_ONLY_PREFIXES,
                                 reinit_prefixes=DIALECT_DEPENDENT_PREFIXES)
        init_wall = float(ckpt_meta.get("wall_time_s", 0.0))
        (out / "load_report.json").write_text(
            json.dumps(report.to_dict(), sort_keys=True, indent=1))

    opt = torch.optim.AdamW(model.parameters(), lr=tcfg.lr, weight_decay=tcfg.weight_decay)
    record = RunRecord(["step", "epoch", "wall_time_s", "lr", "loss_total",
                        "loss_regression", "loss_confidence"])
    val_record = RunRecord(["epoch", "wall_time_s", "min_ade", "min_fde",
                            "miss_rate", "map_simplified"])
    start = time.monotonic()
    step = 0
    n = len(dataset)
    for epoch in range(tcfg.epochs):
        lr = lr_at_epoch(tcfg.lr, epoch, tcfg.lr_decay, tcfg.lr_step_epochs)
        for group in opt.param_groups:
            group["lr"] = lr
        order = _epoch_order(n, tcfg.seed, epoch)
        for lo in range(0, n, tcfg.batch_size):
            idx = order[lo:lo + tcfg.batch_size]
            batch = dataset.batch(idx)
            losses = model.loss(batch, tcfg)
            loss = losses["total"]
            if not bool(torch.isfinite(loss)):
                raise NonFiniteLossError(f"non-finite fine-tuning loss at step {step}")
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), tcfg.clip_norm)
            opt.step()
            record.append({"step": step, "epoch": epoch,
                           "wall_time_s": time.monotonic() - start, "lr": lr,
                           "loss_total": loss.item(),
                           "loss_regression": losses["regression"].item(),
                           "loss_confidence": losses["confidence"].item()})
            step += 1
        if val_dataset is not None:
            metric = evaluate_model(model, val_dataset, tcfg)
            val_record.append({"epoch": epoch, "wall_time_s": time.monotonic() - start,
                               "min_ade": metric.min_ade, "min_fde": metric.min_fde,
                               "miss_rate": metric.miss_rate,
                               "map_simplified": metric.map_simplified})

    wall = time.monotonic() - start
    meta = {"kind": "finetune", "dialect": _dialect_meta(dialect), "fusion": tcfg.fusion,
            "model": config_to_dict(mcfg), "train": config_to_dict(tcfg),
            "wall_time_s": wall, "epochs_done": tcfg.epochs,
            "init": str(init_checkpoint) if init_checkpoint else "scratch",
            "init_wall_time_s": init_wall}
    save_checkpoint(out / "checkpoint.json", model, meta)
    record.save(out / "record.csv")
    if val_dataset is not None:
        val_record.save(out / "val_metrics.csv")
    (out / "run_meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
    return model, record, report


# ---------------------------------------------------------------------------
# evaluation


def predict_dataset(model: PredictionModel, dataset: SceneDataset,
                    tcfg: TrainConfig, batch_size: int = 32):
    """Run the model over a dataset; returns (instances, scene_ids) where
    each instance is (post-processed JointPrediction, gt, valid) with
    padded agents stripped."""
    instances, ids = [], []
    with torch.no_grad():
        for lo in range(0, len(dataset), batch_size):
            idx = np.arange(lo, min(lo + batch_size, len(dataset)))
            batch = dataset.batch(idx)
            modes, conf_logits = model(batch)
            conf = torch.softmax(conf_logits, dim=-1)
            for b in range(len(idx)):
                a_live = batch.agent_valid[b]
                pred = JointPrediction(
                    modes=modes[b][:, a_live].numpy().copy(),
                    confidences=conf[b].numpy().copy())
                pred = postprocess_confidences(pred, tcfg.redundancy_threshold,
                                               tcfg.redundancy_penalty)
                gt = batch.futures[b][a_live].numpy()
                valid = batch.future_valid[b][a_live].numpy()
                instances.append((pred, gt, valid))
                ids.append(batch.scene_ids[b])
    return instances, ids


def evaluate_model(model: PredictionModel, dataset: SceneDataset,
                   tcfg: TrainConfig) -> MetricReport:
    instances, ids = predict_dataset(model, dataset, tcfg)
    return evaluate_predictions(instances, ids)


def evaluate_checkpoint(checkpoint_path, corpus_dir, out_dir=None,
                        dump_predictions: bool = False,
                        threshold: float = 2.0) -> MetricReport:
    """Load a fine-tuned checkpoint, evaluate it on a corpus, emit reports."""
    meta, params = read_checkpoint(checkpoint_path)
    if meta.get("kind") != "finetune":
        raise DataError(f"{checkpoint_path} is not a fine-tuned model checkpoint")
    mcfg = model_config_from_dict(meta["model"])
    tcfg = train_config_from_dict(meta["train"])
    dd = meta["dialect"]
    dialect = DatasetDialect(dd["name"], dd["t_past"], dd["t_future"],
                             dd["has_traffic_lights"], dd["lane_class_count"])
    scenes, manifest = read_corpus(corpus_dir)
    corpus_d = corpus_dialect(manifest)
    if corpus_d != dialect:
        raise DataError(f"checkpoint dialect {dialect.name} does not match "
                        f"corpus dialect {corpus_d.name}")
    model = build_prediction_model(mcfg, dialect, meta.get("fusion", "late"), tcfg.seed)
    load_into_model(model, params, drop_prefixes=(), reinit_prefixes=())
    dataset = SceneDataset(scenes, fusion=meta.get("fusion", "late"))
    instances, ids = predict_dataset(model, dataset, tcfg)
    report = evaluate_predictions(instances, ids, threshold=threshold)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metric_report(out / "metrics.txt", report)
        append_history_row(out / "history.csv", report, corpus=str(corpus_dir))
        if dump_predictions:
            write_predictions(out / "predictions.json",
                              [(sid, inst[0]) for sid, inst in zip(ids, instances)])
    return report
