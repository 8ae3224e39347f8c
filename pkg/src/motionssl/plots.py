"""Static vector plots from run records.

Two families: per-modality pre-training loss curves (one SVG per
modality) and a metric-over-wall-time comparison across fine-tuning
runs.  Every plot is emitted together with a comma-separated table
containing exactly the plotted points, row for row.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .features import MODALITIES  # noqa: E402
from .scene import DataError  # noqa: E402
from .training import RunRecord  # noqa: E402

LOSS_LABELS = {"agent": "agent reconstruction loss",
               "lane": "lane reconstruction loss",
               "light": "traffic-light reconstruction loss"}


def _write_table(path, columns: list[str], rows) -> None:
    lines = [",".join(columns)]
    lines += [",".join(repr(float(v)) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def plot_modality_losses(record: RunRecord, out_dir, stem: str = "loss") -> list[Path]:
    """One loss-over-steps curve per modality present in the record.

    Emits ``{stem}_{modality}.svg`` and a matching ``.csv`` of the
    plotted (step, loss) pairs.  Returns the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    steps = record.column("step")
    for m in MODALITIES:
        col = f"loss_recon_{m}"
        if col not in record.columns:
            continue
        values = record.column(col)
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(steps, values, lw=1.2)
        ax.set_xlabel("training step")
        ax.set_ylabel(LOSS_LABELS[m])
        ax.set_title(f"{LOSS_LABELS[m]} over pre-training")
        fig.tight_layout()
        svg = out / f"{stem}_{m}.svg"
        fig.savefig(svg)
        plt.close(fig)
        _write_table(out / f"{stem}_{m}.csv", ["step", col], zip(steps, values))
        written += [svg, out / f"{stem}_{m}.csv"]
    if not written:
        raise DataError("record has no per-modality loss columns to plot")
    return written


def plot_metric_comparison(runs: list[tuple[str, RunRecord, float]], out_dir,
                           metric: str = "min_fde", stem: str = "compare") -> list[Path]:
    """Metric over wall time for several fine-tuning runs on shared axes.

    ``runs`` holds (label, validation record, wall-time offset in
    seconds); the offset front-loads a run's pre-training cost so
    curves compare total compute honestly.  Emits one SVG plus a table
    of exactly the plotted points.
    """
    if not runs:
        raise DataError("no runs to compare")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    rows = []
    for i, (label, record, offset) in enumerate(runs):
        if metric not in record.columns:
            raise DataError(f"run {label!r} has no column {metric!r}")
        times = record.column("wall_time_s") + offset
        values = record.column(metric)
        ax.plot(times, values, lw=1.4, label=label)
        rows += [[float(i), t, v] for t, v in zip(times, values)]
    ax.set_xlabel("wall time (s, including pre-training)")
    ax.set_ylabel(metric)
    ax.set_title(f"{metric} over wall time")
    ax.legend(fontsize=8)
    fig.tight_layout()
    svg = out / f"{stem}_{metric}.svg"
    fig.savefig(svg)
    plt.close(fig)
    table = out / f"{stem}_{metric}.csv"
    _write_table(table, ["run_index", "wall_time_s", metric], rows)
    (out / f"{stem}_{metric}_runs.json").write_text(
        json.dumps({str(i): label for i, (label, _, _) in enumerate(runs)},
                   sort_keys=True, indent=1))
    return [svg, table]


def load_run_for_comparison(run_dir) -> tuple[str, RunRecord, float]:
    """Read a fine-tune run directory into a comparison entry.

    Label is the directory name; the offset comes from the recorded
    pre-training wall time (zero for scratch runs).
    """
    run = Path(run_dir)
    val = run / "val_metrics.csv"
    if not val.exists():
        raise DataError(f"{run} has no val_metrics.csv (fine-tune with a validation corpus)")
    record = RunRecord.load(val)
    offset = 0.0
    meta_path = run / "run_meta.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        offset = float(meta.get("init_wall_time_s", 0.0))
    return run.name, record, offset
