"""Checkpoint format and partial parameter transfer.

A checkpoint is canonical JSON: a meta block (dialect, fusion, model
config, training provenance) plus a named parameter map of dotted paths
to shape + row-major values.  Save -> load -> save is byte-identical.

Loading into a fine-tuning model is strict: every checkpoint parameter
must either load by name, belong to an explicitly dropped group (the
pre-training projectors and decoder), or -- when its shape changed
because the dialect changed -- belong to an input-width-dependent
embedding allowed to reinitialize.  Anything else raises.  Nothing is
ever frozen.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np
import torch

CHECKPOINT_FORMAT = "model-checkpoint"
CHECKPOINT_VERSION = 1

# parameter groups that exist only for pre-training and are intentionally
# dropped when initializing a fine-tuning model
PRETRAIN_ONLY_PREFIXES = ("projectors.", "decoder.")
# parameters whose shape legitimately depends on the dataset dialect
# (raw-feature widths contain T_past); these may reinitialize on transfer
DIALECT_DEPENDENT_PREFIXES = ("encoder.embed.",)


class CheckpointMismatchError(Exception):
    """Checkpoint and model disagree beyond the allowed groups."""


def save_checkpoint(path, model: torch.nn.Module, meta: dict) -> None:
    params = {
        name: {"shape": list(tensor.shape),
               "data": tensor.detach().cpu().double().reshape(-1).tolist()}
        for name, tensor in model.state_dict().items()
    }
    payload = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
               "meta": meta, "params": params}
    Path(path).write_bytes(json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8"))


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    p = Path(path)
    if not p.exists():
        raise CheckpointMismatchError(f"checkpoint not found: {p}")
    try:
        payload = json.loads(p.read_bytes().decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise CheckpointMismatchError(f"unreadable checkpoint {p}: {e}") from None
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointMismatchError(f"{p} is not a model checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointMismatchError(f"unsupported checkpoint version {payload.get('version')!r}")
    params = {}
    for name, entry in payload["params"].items():
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        params[name] = arr
    return payload.get("meta", {}), params


@dataclasses.dataclass
class LoadReport:
    """What happened to every parameter during a checkpoint load."""

    loaded: list[str]
    dropped: list[str]         # checkpoint groups intentionally not carried over
    reinitialized: list[str]   # dialect-dependent shapes, freshly initialized
    fresh: list[str]           # model parameters absent from the checkpoint
    frozen: list[str]          # always empty: nothing is frozen

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def summary_lines(self) -> list[str]:
        out = []
        for label, names in (("loaded", self.loaded), ("dropped", self.dropped),
                             ("reinitialized", self.reinitialized),
                             ("fresh", self.fresh), ("frozen", self.frozen)):
            out.append(f"{label} ({len(names)}):")
            out.extend(f"  {n}" for n in names)
        return out


def load_into_model(model: torch.nn.Module, params: dict[str, np.ndarray],
                    drop_prefixes: tuple[str, ...] = PRETRAIN_ONLY_PREFIXES,
                    reinit_prefixes: tuple[str, ...] = DIALECT_DEPENDENT_PREFIXES,
                    ) -> LoadReport:
    """Copy checkpoint parameters into a freshly built model by name.

    No parameter is silently unmatched: shape conflicts outside
    ``reinit_prefixes`` and checkpoint names outside the model and
    ``drop_prefixes`` raise CheckpointMismatchError.
    """
    state = model.state_dict()
    loaded, dropped, reinitialized = [], [], []
    with torch.no_grad():
        for name in sorted(params):
            value = params[name]
            if name in state:
                if tuple(state[name].shape) == value.shape:
                    state[name].copy_(torch.from_numpy(value))
                    loaded.append(name)
                elif any(name.startswith(p) for p in reinit_prefixes):
                    reinitialized.append(name)  # keep the model's fresh init
                else:
                    raise CheckpointMismatchError(
                        f"{name}: checkpoint shape {value.shape} vs model "
                        f"{tuple(state[name].shape)} outside reinitializable groups")
            elif any(name.startswith(p) for p in drop_prefixes):
                dropped.append(name)
            else:
                raise CheckpointMismatchError(
                    f"checkpoint parameter {name} has no home in the model "
                    f"and is not in a droppable group")
    fresh = sorted(set(state) - set(params))
    frozen = [n for n, p in model.named_parameters() if not p.requires_grad]
    if frozen:
        raise CheckpointMismatchError(f"parameters unexpectedly frozen: {frozen}")
    return LoadReport(loaded=loaded, dropped=dropped, reinitialized=reinitialized,
                      fresh=fresh, frozen=frozen)
