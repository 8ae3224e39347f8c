"""
Pre-train, fine-tune, compare
=============================

The full loop at toy scale: pre-train the encoders with both
self-supervised objectives, then fine-tune the joint predictor twice --
once from scratch and once from the pre-trained checkpoint -- and
compare held-out metrics and loss curves.  Everything here also works
through the command line (see the README); this script uses the library
directly.  Runs in about a minute on one CPU core.
"""

import tempfile
from pathlib import Path

import torch

from motionssl.config import ModelConfig, TrainConfig
from motionssl.plots import load_run_for_comparison, plot_metric_comparison, \
    plot_modality_losses
from motionssl.scene import generate_corpus, get_dialect
from motionssl.training import RunRecord, evaluate_checkpoint, finetune, pretrain

torch.set_num_threads(1)

root = Path(tempfile.mkdtemp(prefix="motionssl_demo_"))
print(f"working under {root}")

# A small corpus and a small (but structurally complete) model keep the
# demo quick; scale both up for real experiments.
W = get_dialect("W")
train_dir = root / "train"
val_dir = root / "val"
generate_corpus(train_dir, W, n_scenes=48, base_seed=0, counts=(3, 5, 2), lane_points=8)
generate_corpus(val_dir, W, n_scenes=24, base_seed=500, counts=(3, 5, 2), lane_points=8)

mcfg = ModelConfig(width=24, heads=4, ff_hidden=96, projector_hidden=96,
                   projector_out=12)

# --- pre-training ------------------------------------------------------------
pre_cfg = TrainConfig(epochs=6, batch_size=16, seed=0)
model, record = pretrain(mcfg, pre_cfg, train_dir, root / "pretrain")
first, last = record.epoch_mean("loss_total", 0), record.epoch_mean("loss_total", 5)
print(f"\npre-training total loss: epoch 0 mean {first:.4f} -> epoch 5 mean {last:.4f}")
plot_modality_losses(record, root / "plots")
print(f"per-modality loss curves under {root / 'plots'}")

# --- fine-tuning, scratch vs warm ---------------------------------------------
ft_cfg = TrainConfig(epochs=8, batch_size=16, seed=0, lr=3e-4)
finetune(mcfg, ft_cfg, train_dir, root / "scratch", val_corpus_dir=val_dir)
finetune(mcfg, ft_cfg, train_dir, root / "warm",
         init_checkpoint=root / "pretrain" / "checkpoint.json",
         val_corpus_dir=val_dir)

for name in ("scratch", "warm"):
    report = evaluate_checkpoint(root / name / "checkpoint.json", val_dir)
    print(f"{name:8s}: held-out min_ade {report.min_ade:.3f}  "
          f"min_fde {report.min_fde:.3f}  miss rate {report.miss_rate:.2f}")

# The comparison plot shifts the warm curve right by the pre-training
# wall time, so the x axis is total compute spent.
entries = [load_run_for_comparison(root / "scratch"),
           load_run_for_comparison(root / "warm")]
plot_metric_comparison(entries, root / "plots", metric="min_fde")
print(f"comparison plot under {root / 'plots'} (warm curve offset by "
      f"{entries[1][2]:.1f}s of pre-training)")
