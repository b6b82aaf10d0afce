import json
import os

import h5py
import numpy as np
import pytest
import yaml

from cycleseg.cli import run
from cycleseg.config import ConfigError, load_experiment


def write_config(tmp_path, **entries) -> str:
    base = {
        "output_dir": str(tmp_path / "out"),
        "phantom": {
            "shape": [24, 32, 32],
            "n_instances": 6,
            "radius_range": [3.0, 5.0],
            "seed": 4,
        },
        "codec": {"min_instance_size": 8},
    }
    base.update(entries)
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(base))
    return str(path)


def test_synth_encode_decode_eval_chain(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    for sub in ("synth", "encode", "decode", "eval"):
        assert run(sub, cfg_path, []) == 0, f"{sub} failed"
    out = capsys.readouterr().out
    assert "ap50 = 1.0000" in out
    report = json.loads((tmp_path / "out" / "ap_report.json").read_text())
    assert report["ap50"] == 1.0
    assert report["fp"] == 0 and report["fn"] == 0
    # every run wrote its resolved config and hashes
    assert (tmp_path / "out" / "resolved_config.yaml").exists()
    info = json.loads((tmp_path / "out" / "run_info.json").read_text())
    assert len(info["config_hash"]) == 64 and len(info["code_hash"]) == 64


def test_validation_error_exits_2_and_writes_nothing(tmp_path, capsys):
    cfg_path = write_config(tmp_path, train={"patch_size": [10, 16, 16]})
    code = run("synth", cfg_path, [])
    assert code == 2
    err = capsys.readouterr().err
    assert "train.patch_size" in err
    assert not (tmp_path / "out").exists()


def test_unknown_key_reports_path(tmp_path, capsys):
    cfg_path = write_config(tmp_path, codec={"min_instance_size": 8, "bogus": 1})
    assert run("synth", cfg_path, []) == 2
    assert "codec" in capsys.readouterr().err


def test_override_applies(tmp_path):
    cfg_path = write_config(tmp_path)
    cfg = load_experiment(cfg_path, ["phantom.n_instances=3", "train.iterations=7"])
    assert cfg.phantom.n_instances == 3
    assert cfg.train.iterations == 7


def test_bad_override_exits_2(tmp_path):
    cfg_path = write_config(tmp_path)
    assert run("synth", cfg_path, ["phantom.n_instances"]) == 2


def test_histmatch_subcommand(tmp_path):
    cfg_path = write_config(tmp_path)
    assert run("synth", cfg_path, []) == 0
    assert run("histmatch", cfg_path, []) == 0
    with h5py.File(tmp_path / "out" / "matched.h5") as f:
        matched = f["main"][...]
    with h5py.File(tmp_path / "out" / "domain_a.h5") as f:
        ref = f["main"][...]
    ha, _ = np.histogram(matched, bins=64, range=(0, 1))
    hb, _ = np.histogram(ref, bins=64, range=(0, 1))
    ks = np.abs(np.cumsum(ha) / ha.sum() - np.cumsum(hb) / hb.sum()).max()
    assert ks < 0.05


def test_augment_preview_subcommand(tmp_path):
    cfg_path = write_config(
        tmp_path,
        augment={"p_missing_section": 1.0, "p_blur_region": 0.0, "p_noise_region": 0.0},
    )
    assert run("synth", cfg_path, []) == 0
    assert run("augment-preview", cfg_path, []) == 0
    with h5py.File(tmp_path / "out" / "augmented.h5") as f:
        aug = f["main"][...]
    with h5py.File(tmp_path / "out" / "clean.h5") as f:
        clean = f["main"][...]
    with h5py.File(tmp_path / "out" / "corruption_mask.h5") as f:
        mask = f["main"][...].astype(bool)
    assert mask.any()
    np.testing.assert_array_equal(aug[~mask], clean[~mask])
    assert not np.array_equal(aug, clean)


TINY_NETS = {
    "generator": {"depth": 2, "base_channels": [4, 6]},
    "discriminator": {"n_layers": 2, "base_channels": 4},
    "train": {
        "patch_size": [8, 16, 16],
        "batch_size": 1,
        "iterations": 2,
        "checkpoint_every": 0,
        "seed": 0,
    },
    "infer": {"patch_size": [8, 16, 16], "stride": [8, 16, 16]},
}


def test_train_and_infer_subcommands(tmp_path, capsys):
    cfg_path = write_config(tmp_path, **TINY_NETS)
    assert run("synth", cfg_path, []) == 0
    assert run("train", cfg_path, []) == 0
    assert (tmp_path / "out" / "train" / "checkpoint_final.pt").exists()
    log_lines = (tmp_path / "out" / "train" / "train_log.jsonl").read_text().splitlines()
    assert len(log_lines) == 2
    record = json.loads(log_lines[0])
    assert record["iteration"] == 1 and "total" in record
    assert run("infer", cfg_path, []) == 0
    assert (tmp_path / "out" / "pred_labels.h5").exists()
    assert (tmp_path / "out" / "translated.h5").exists()


def test_bench_emits_one_row_per_method(tmp_path, capsys):
    cfg_path = write_config(tmp_path, **TINY_NETS, bench_iterations=2)
    assert run("bench", cfg_path, []) == 0
    out = capsys.readouterr().out
    results = json.loads((tmp_path / "out" / "bench_results.json").read_text())
    assert set(results["ap50"]) == {"joint", "translation_only_decode", "histmatch_segment"}
    for name in results["ap50"]:
        assert name in out


def test_missing_config_file_exits_2(tmp_path):
    assert run("synth", str(tmp_path / "nope.yaml"), []) == 2


def test_runtime_error_exits_1(tmp_path):
    # decode before encode: the bcd file does not exist yet
    cfg_path = write_config(tmp_path)
    assert run("decode", cfg_path, []) == 1
