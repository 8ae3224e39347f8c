import json
from pathlib import Path

import pytest

from motionssl.cli import main
from motionssl.training import RunRecord

TINY = """
model.width = 16
model.heads = 2
model.ff_hidden = 32
model.agent_depth = 1
model.lane_depth = 1
model.light_depth = 1
model.latent_count = 4
model.early_self_depth = 1
model.decoder_depth = 1
model.projector_hidden = 16
model.projector_out = 8
model.k_modes = 2
model.head_depth = 1
train.epochs = 1
train.batch_size = 2
generate.scenes = 4
generate.agents = 2
generate.lanes = 3
generate.lights = 1
generate.lane_points = 6
"""


@pytest.fixture
def tiny_cfg_file(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return str(p)


def _tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_generate_is_deterministic(tmp_path, tiny_cfg_file, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["generate", "--config", tiny_cfg_file, str(a)]) == 0
    assert "wrote 4 scenes" in capsys.readouterr().out
    assert main(["generate", "--config", tiny_cfg_file, str(b)]) == 0
    assert _tree_bytes(a) == _tree_bytes(b)


def test_generate_refuses_overwrite(tmp_path, tiny_cfg_file):
    out = tmp_path / "c"
    assert main(["generate", "--config", tiny_cfg_file, str(out)]) == 0
    assert main(["generate", "--config", tiny_cfg_file, str(out)]) == 2
    assert main(["generate", "--config", tiny_cfg_file, str(out),
                 "--set", "generate.overwrite=true"]) == 0


def test_override_beats_config_file(tmp_path, tiny_cfg_file):
    out = tmp_path / "c"
    assert main(["generate", "--config", tiny_cfg_file, str(out),
                 "--set", "generate.scenes=6"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["scenes"]) == 6


def test_out_root_env(tmp_path, tiny_cfg_file, monkeypatch):
    monkeypatch.setenv("MOTIONSSL_OUT", str(tmp_path))
    assert main(["generate", "--config", tiny_cfg_file, "rel_corpus"]) == 0
    assert (tmp_path / "rel_corpus" / "manifest.json").exists()
    absolute = tmp_path / "abs_corpus"
    assert main(["generate", "--config", tiny_cfg_file, str(absolute)]) == 0
    assert (absolute / "manifest.json").exists()


def test_full_pipeline(tmp_path, tiny_cfg_file, capsys):
    corpus = tmp_path / "corpus"
    pre = tmp_path / "pre"
    scratch = tmp_path / "scratch"
    warm = tmp_path / "warm"
    ev = tmp_path / "eval"

    assert main(["generate", "--config", tiny_cfg_file, str(corpus)]) == 0
    assert main(["pretrain", "--config", tiny_cfg_file, str(corpus), str(pre)]) == 0
    assert (pre / "checkpoint.json").exists()

    assert main(["finetune", "--config", tiny_cfg_file, str(corpus), str(scratch),
                 "--val-corpus", str(corpus)]) == 0
    assert main(["finetune", "--config", tiny_cfg_file, str(corpus), str(warm),
                 "--init", str(pre / "checkpoint.json"),
                 "--val-corpus", str(corpus)]) == 0
    out = capsys.readouterr().out
    assert "loaded" in out  # load report summary surfaced
    assert (warm / "load_report.json").exists()

    assert main(["eval", "--config", tiny_cfg_file, str(warm / "checkpoint.json"),
                 str(corpus), str(ev), "--dump-predictions"]) == 0
    for name in ("metrics.txt", "history.csv", "predictions.json"):
        assert (ev / name).exists()
    assert "min_fde" in (ev / "metrics.txt").read_text()

    # per-modality pre-training loss curves, one svg+csv pair per modality
    plots = tmp_path / "plots"
    assert main(["plot", "--config", tiny_cfg_file, "losses", str(pre), str(plots)]) == 0
    record = RunRecord.load(pre / "record.csv")
    for m in ("agent", "lane", "light"):
        assert (plots / f"loss_{m}.svg").exists()
        table = RunRecord.load(plots / f"loss_{m}.csv")
        assert len(table.rows) == len(record.rows)
        assert table.column(f"loss_recon_{m}").tolist() == \
            record.column(f"loss_recon_{m}").tolist()

    # metric-over-time comparison across the two fine-tuning runs
    cmp_dir = tmp_path / "cmp"
    assert main(["plot", "--config", tiny_cfg_file, "compare",
                 str(scratch), str(warm), str(cmp_dir), "--metric", "min_fde"]) == 0
    assert (cmp_dir / "compare_min_fde.svg").exists()
    table = RunRecord.load(cmp_dir / "compare_min_fde.csv")
    assert set(table.column("run_index").tolist()) == {0.0, 1.0}
    labels = json.loads((cmp_dir / "compare_min_fde_runs.json").read_text())
    assert len(labels) == 2

    # evaluating a pre-training checkpoint is a data error
    assert main(["eval", "--config", tiny_cfg_file, str(pre / "checkpoint.json"),
                 str(corpus), str(tmp_path / "ev2")]) == 2


def test_exit_code_config_error(tmp_path):
    assert main(["pretrain", str(tmp_path), str(tmp_path / "o"),
                 "--set", "model.width=abc"]) == 1
    assert main(["pretrain", str(tmp_path), str(tmp_path / "o"),
                 "--set", "model.nonsense=1"]) == 1
    assert main(["generate", str(tmp_path / "g"),
                 "--config", str(tmp_path / "missing.cfg")]) == 1


def test_exit_code_data_error(tmp_path, tiny_cfg_file):
    assert main(["pretrain", "--config", tiny_cfg_file,
                 str(tmp_path / "no_such_corpus"), str(tmp_path / "o")]) == 2


def test_exit_code_numeric_error(tmp_path, tiny_cfg_file):
    corpus = tmp_path / "corpus"
    assert main(["generate", "--config", tiny_cfg_file, str(corpus)]) == 0
    assert main(["pretrain", "--config", tiny_cfg_file, str(corpus),
                 str(tmp_path / "o"), "--set", "train.lr=1e200",
                 "--set", "train.epochs=3"]) == 3


def test_unknown_subcommand_rejected():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
    with pytest.raises(SystemExit):
        main([])
