#!/usr/bin/env python3
"""
Tests for the sts-lab command line: stage wiring, run manifest, error lines
and the report command
"""

import json

import pandas as pd
import pytest

from sts_lab import cli
from sts_lab.cli import build_parser, main
from sts_lab.workspace_manager import WorkspaceManager

TINY = [
    "data.image_size=8", "data.num_samples=16", "data.num_eval=4",
    "schedule.num_inference_steps=2",
    "denoiser.base_channels=4", "denoiser.time_embed_dim=8", "denoiser.batch_size=8",
    "adapter.hint_width=4",
    "translator.base_channels=4", "translator.num_residual_blocks=1", "translator.num_downsampling=1",
    "translator.disc_channels=4", "translator.batch_size=4", "translator.pool_size=4",
    "translator.val_fraction=0.25",
    "pipeline.batch_size=8",
]


def run(root, *argv, extra=()) -> int:
    overrides = [f"workspace={root}", "run_name=cli", *TINY, *extra]
    return main([*argv, *[arg for key in overrides for arg in ("--set", key)]])


def error_line(capsys) -> dict:
    lines = [line for line in capsys.readouterr().err.splitlines() if line.startswith("{")]
    assert len(lines) == 1
    return json.loads(lines[0])


def test_parser_knows_every_stage():
    parser = build_parser()
    args = parser.parse_args(["cfg-sweep", "--omegas", "1", "2.5", "--seed", "3"])
    assert args.omegas == [1.0, 2.5] and args.seed == 3 and args.direction == "a2b"
    args = parser.parse_args(["translate", "--in", "x.bin", "--ablation", "ControlNet+Inv"])
    assert args.input == "x.bin" and args.out == "translate"


def test_usage_errors_exit_with_code_two():
    with pytest.raises(SystemExit) as info:
        main(["translate"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["ablate", "--direction", "sideways"])
    assert info.value.code == 2


def test_gen_data_writes_dataset_and_manifest(tmp_path):
    assert run(tmp_path, "gen-data") == 0
    workspace = WorkspaceManager(tmp_path / "cli")
    assert workspace.load_array("data/train_a").shape == (16, 3, 8, 8)
    assert workspace.load_array("data/eval_b").shape == (4, 3, 8, 8)
    assert workspace.load_json("resolved_config.json")["data"]["image_size"] == 8
    stage = workspace.load_json("run_manifest.json")["stages"]["gen-data"]
    assert len(stage["fingerprint"]) == 16 and stage["rng_seed"] == 0


def test_stage_before_its_inputs_prints_error_line(tmp_path, capsys):
    assert run(tmp_path, "train-denoiser") == 1
    error = error_line(capsys)
    assert error["error"] == "FileNotFoundError"
    assert error["stage"] is None
    assert "data" in error["details"]


def test_invalid_override_prints_error_line(tmp_path, capsys):
    assert run(tmp_path, "gen-data", extra=["pipeline.kid_subset_size=1"]) == 1
    assert error_line(capsys)["error"] == "ValidationError"


def test_translate_input_errors_print_error_line(tmp_path, capsys):
    (tmp_path / "folder.bin").mkdir()
    assert run(tmp_path, "translate", "--in", str(tmp_path / "folder.bin")) == 1
    assert error_line(capsys)["error"] == "FileNotFoundError"

    (tmp_path / "broken.bin").write_bytes(b"\x00" * 16)
    (tmp_path / "broken.json").write_text(json.dumps({"dtype": "<f4"}))
    assert run(tmp_path, "translate", "--in", str(tmp_path / "broken.bin")) == 1
    error = error_line(capsys)
    assert error["error"] == "ValueError" and "header" in error["details"]


@pytest.mark.parametrize("error", [IsADirectoryError("is a directory"), KeyError("shape")])
def test_os_and_key_errors_print_error_line(tmp_path, capsys, monkeypatch, error):
    def failing_stage(args, settings, workspace):
        raise error

    monkeypatch.setitem(cli.COMMANDS, "report", failing_stage)
    assert run(tmp_path, "report") == 1
    assert error_line(capsys)["error"] == type(error).__name__


def test_translate_does_not_create_input_directories(tmp_path, capsys):
    missing = tmp_path / "nowhere" / "images.bin"
    assert run(tmp_path, "translate", "--in", str(missing)) == 1
    assert error_line(capsys)["error"] == "FileNotFoundError"
    assert not missing.parent.exists()


def test_tiny_pipeline_through_translate(tmp_path):
    for argv in (["gen-data"], ["train-denoiser", "--steps", "2"], ["train-adapter", "--steps", "2"],
                 ["invert"], ["train-sts", "--epochs", "1"]):
        assert run(tmp_path, *argv) == 0, argv

    workspace = WorkspaceManager(tmp_path / "cli")
    assert workspace.has_checkpoint("denoiser") and workspace.has_checkpoint("translator")
    assert workspace.load_array("seeds/a").shape == (16, 3, 8, 8)
    assert len(pd.read_csv(workspace.path("logs/denoiser_loss.csv"))) == 2

    source = workspace.path("data/eval_a.bin")
    assert run(tmp_path, "translate", "--in", str(source), "--out", "out") == 0
    assert workspace.load_array("out/images").shape == (4, 3, 8, 8)
    assert workspace.load_array("out/spatial_maps").shape == (4, 1, 8, 8)

    stages = workspace.load_json("run_manifest.json")["stages"]
    assert stages["invert"]["checkpoint"] == stages["train-adapter"]["checkpoint"]
    assert stages["translate"]["count"] == 4


def test_report_from_tables(tmp_path):
    workspace = WorkspaceManager(tmp_path / "cli")
    workspace.save_table("ablation.csv", pd.DataFrame({
        "run_id": ["a-1", "a-2"], "config_name": ["ControlNet", "ControlNet+Inv+ST"], "omega": [5.0, 5.0],
        "KID": [2.0, 1.0], "MMD": [3.0, 1.5], "SSIM": [0.3, 0.6], "probe_acc": [0.7, 0.9],
    }))
    assert run(tmp_path, "report", "--no-pdf") == 0
    for metric in ("KID", "MMD", "SSIM", "probe_acc"):
        assert workspace.path(f"plots/ablation_{metric}.png").exists()
    assert not workspace.path("report.pdf").exists()

    assert run(tmp_path, "report") == 0
    assert workspace.path("report.pdf").read_bytes().startswith(b"%PDF")


def test_report_without_tables_fails(tmp_path, capsys):
    assert run(tmp_path, "report") == 1
    assert error_line(capsys)["error"] == "FileNotFoundError"


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
