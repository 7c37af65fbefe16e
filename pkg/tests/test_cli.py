import csv
import json

import numpy as np
import pytest

from app.cli import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, build_parser, main, resolve_options
from app.core.errors import ConfigError
from app.schemas.connector import ConnectorSpec
from app.services.checkpoint import load_params
from app.services.connectors import init_params
from app.services.manifest import read_manifest

TINY_TRAIN = [
    "--grid", "4", "--d-v", "8", "--d-llm", "8", "--tokens", "4", "--samples", "24",
    "--steps", "3", "--batch", "6", "--d-head", "8",
]


def _rows(path):
    with path.open(encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_advise_writes_advice_and_manifest(tmp_path):
    assert main(["advise", "--resolution", "336", "--priority", "fine", "--out", str(tmp_path)]) == EXIT_OK
    advice = json.loads((tmp_path / "advice.json").read_text(encoding="utf-8"))
    assert advice["recommended"] == ["mlp"]
    manifest = read_manifest(tmp_path)
    assert manifest.subcommand == "advise"
    assert manifest.outputs == ["advice.json"]
    assert manifest.config == {"seed": 0, "resolution": 336, "priority": "fine", "budget": "ample"}


def test_unsupported_resolution_is_a_validation_error(tmp_path, capsys):
    assert main(["advise", "--resolution", "300", "--out", str(tmp_path)]) == EXIT_VALIDATION
    assert "336" in capsys.readouterr().err


def test_missing_required_option(tmp_path):
    assert main(["advise", "--out", str(tmp_path)]) == EXIT_VALIDATION


def test_usage_errors_exit_one():
    assert main(["no-such-command"]) == EXIT_VALIDATION
    assert main(["advise", "--resolution", "many"]) == EXIT_VALIDATION
    assert main(["cost", "--stage", "3"]) == EXIT_VALIDATION


def test_failed_gradient_check_is_a_runtime_error(tmp_path):
    assert main(["gradcheck", "--tolerance", "0", "--out", str(tmp_path)]) == EXIT_RUNTIME


def test_gradcheck_all_connectors(tmp_path):
    assert main(["gradcheck", "--all", "--out", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "gradcheck.csv")
    connectors = {r["connector"].split("@")[0] for r in rows}
    assert connectors == {"linear", "mlp", "avgpool-4", "attnpool-4", "convmap-4"}
    assert all(r["passed"] == "True" for r in rows)


def test_cost_compressed_at_336_near_measured_reduction(tmp_path):
    argv = ["cost", "--resolution", "336", "--connector", "cabstractor", "--tokens", "144", "--stage", "1",
            "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    (row,) = _rows(tmp_path / "cost.csv")
    assert row["connector"] == "convmap-144"
    assert row["tokens"] == "144"
    assert abs(float(row["predicted_reduction_pct"]) - 67.0) <= 10.0


def test_cost_mlp_baseline_is_zero(tmp_path):
    argv = ["cost", "--resolution", "336", "--connector", "mlp", "--tokens", "576", "--stage", "1", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    (row,) = _rows(tmp_path / "cost.csv")
    assert float(row["predicted_reduction_pct"]) == 0.0
    assert row["reference_reduction_pct"] == ""


def test_cost_mlp_with_wrong_token_count(tmp_path):
    argv = ["cost", "--resolution", "336", "--connector", "mlp", "--tokens", "144", "--out", str(tmp_path)]
    assert main(argv) == EXIT_VALIDATION


def test_cost_sweep(tmp_path):
    assert main(["cost", "--sweep", "--out", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "cost.csv")
    assert len(rows) == 12
    assert [r["in_model_range"] for r in rows if r["resolution"] == "224"] == ["False"] * 4


def test_forward_with_interpolated_position_embeddings(tmp_path):
    argv = ["forward", "--connector", "avgpool", "--resolution", "336", "--pos-embed-from", "224",
            "--d-v", "4", "--d-llm", "6", "--tokens", "144", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    (row,) = _rows(tmp_path / "forward.csv")
    assert (row["patches"], row["tokens"], row["width"]) == ("576", "144", "6")
    assert len(_rows(tmp_path / "tokens.csv")) == 144


def test_config_file_sits_between_flags_and_defaults(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("# advisor\nresolution = 448\npriority = coarse\n", encoding="utf-8")
    args = build_parser().parse_args(["advise", "--config", str(config), "--resolution", "224"])
    resolved = resolve_options("advise", args)
    assert resolved["resolution"] == 224
    assert resolved["priority"] == "coarse"
    assert resolved["budget"] == "ample"


def test_config_file_unknown_key(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("colour=blue\n", encoding="utf-8")
    args = build_parser().parse_args(["advise", "--config", str(config)])
    with pytest.raises(ConfigError):
        resolve_options("advise", args)


def test_config_file_sets_output_directory(tmp_path):
    out = tmp_path / "from-config"
    config = tmp_path / "run.cfg"
    config.write_text(f"resolution=448\nout={out}\n", encoding="utf-8")
    assert main(["advise", "--config", str(config)]) == EXIT_OK
    assert (out / "advice.json").exists()
    assert "out" not in read_manifest(out).config


def test_score_writes_tables(tmp_path):
    results = tmp_path / "results.csv"
    results.write_text("benchmark,sub_task,correct,total\nMME,Color,1,2\nMMB,OCR,3,4\n", encoding="utf-8")
    out = tmp_path / "out"
    assert main(["score", "--results", str(results), "--mode", "micro", "--out", str(out)]) == EXIT_OK
    (pooled, *_) = _rows(out / "scores.csv")
    assert pooled["view"] == "pooled"
    assert float(pooled["fine"]) == pytest.approx(4 / 6)
    assert pooled["coarse"] == ""
    radar = _rows(out / "radar.csv")
    assert [r["sub_task"] for r in radar] == ["MME/Color", "MMBench/OCR"]
    assert "absent" in (out / "scores.md").read_text(encoding="utf-8")


def test_score_unknown_sub_task(tmp_path):
    results = tmp_path / "results.csv"
    results.write_text("benchmark,sub_task,correct,total\nMME,Colour,1,2\n", encoding="utf-8")
    assert main(["score", "--results", str(results), "--out", str(tmp_path / "out")]) == EXIT_VALIDATION


def test_toy_train_rerun_is_bit_identical(tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(["toy-train", "--connector", "convmap", "--task", "fine", *TINY_TRAIN, "--out", str(first)]) == EXIT_OK
    assert main(["rerun", str(first / "manifest.json"), "--out", str(second)]) == EXIT_OK
    for name in ("loss_curve.csv", "summary.csv", "params.bin", "manifest.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name
    assert len(_rows(first / "loss_curve.csv")) == 3
    assert read_manifest(first).outputs == ["loss_curve.csv", "summary.csv", "params.bin"]


def test_toy_train_params_load_back(tmp_path):
    assert main(["toy-train", "--connector", "convmap", *TINY_TRAIN, "--out", str(tmp_path)]) == EXIT_OK
    spec = ConnectorSpec(kind="convmap", d_v=8, d_llm=8, num_tokens=4)
    params = load_params(spec, tmp_path / "params.bin")
    assert not np.array_equal(params["proj_w"].data, init_params(spec)["proj_w"].data)


def test_compare_writes_ranking(tmp_path):
    argv = ["compare", "--connectors", "mlp,avgpool", "--tasks", "coarse", "--num-seeds", "2", *TINY_TRAIN,
            "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    rows = _rows(tmp_path / "compare.csv")
    assert [(r["connector"], r["task"]) for r in rows] == [("mlp", "coarse"), ("avgpool-4", "coarse")]
    assert len(_rows(tmp_path / "summary.csv")) == 4
    assert "| rank | connector |" in (tmp_path / "ranking.md").read_text(encoding="utf-8")


def test_rerun_missing_manifest(tmp_path):
    assert main(["rerun", str(tmp_path / "missing"), "--out", str(tmp_path)]) == EXIT_VALIDATION


def test_forward_writes_loadable_params(tmp_path):
    argv = ["forward", "--connector", "attnpool", "--resolution", "224", "--d-v", "4", "--d-llm", "6",
            "--tokens", "16", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    assert "params.bin" in read_manifest(tmp_path).outputs
    spec = ConnectorSpec(kind="attnpool", d_v=4, d_llm=6, num_tokens=16)
    params = load_params(spec, tmp_path / "params.bin")
    assert np.array_equal(params["queries"].data, init_params(spec)["queries"].data)


def test_compare_token_budgets_of_one_connector(tmp_path):
    argv = ["compare", "--connectors", "avgpool-4,avgpool-16", "--tasks", "coarse", "--num-seeds", "1", *TINY_TRAIN,
            "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    rows = _rows(tmp_path / "compare.csv")
    assert [r["connector"] for r in rows] == ["avgpool-4", "avgpool-16"]


def test_token_suffix_on_a_per_patch_connector(tmp_path, capsys):
    assert main(["toy-train", "--connector", "mlp-16", *TINY_TRAIN, "--out", str(tmp_path)]) == EXIT_VALIDATION
    assert "suffix" in capsys.readouterr().err


def test_unknown_task_lists_the_known_ones(tmp_path, capsys):
    argv = ["compare", "--connectors", "mlp", "--tasks", "texture", *TINY_TRAIN, "--out", str(tmp_path)]
    assert main(argv) == EXIT_VALIDATION
    err = capsys.readouterr().err
    assert "texture" in err
    assert "coarse, fine, reasoning" in err


def test_record_help_names_the_write_outside_out(capsys):
    assert main(["advise", "--help"]) == EXIT_OK
    assert "outside --out" in " ".join(capsys.readouterr().out.split())
