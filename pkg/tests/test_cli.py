"""End-to-end command-line behavior, exit codes, and run manifests."""

from __future__ import annotations

import hashlib
import json

import numpy as np
import pytest

from churnkit.cli import main
from churnkit.gaf import read_matrix_binary, read_matrix_csv
from churnkit.labeling import read_churn_labels, read_survival_labels
from churnkit.scoring import read_submission_track1, read_submission_track2


def run(*args) -> int:
    return main([str(a) for a in args])


def sha256(path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One small generated dataset pushed through every pipeline stage."""
    root = tmp_path_factory.mktemp("pipeline")
    data = root / "data"
    assert run("gen", "--out", data, "--players", 120, "--seed", 2,
               "--windows", "train,test1", "--signal-strength", "strong") == 0

    train_labels = root / "train_labels"
    assert run("label", "--log", data / "train.csv", "--obs-weeks", 6,
               "--censor-margin-days", 1, "--out", train_labels) == 0
    # test1 observation runs weeks 17-25; features use its trailing 6 weeks
    test_labels = root / "test_labels"
    assert run("label", "--log", data / "test1.csv", "--obs-start-week", 17,
               "--obs-weeks", 8, "--censor-margin-days", 1,
               "--out", test_labels) == 0

    train_feats = root / "train_features.csv"
    assert run("features", "--log", data / "train.csv", "--obs-weeks", 6,
               "--families", "daily-stats,overall",
               "--out", train_feats) == 0
    test_feats = root / "test_features.csv"
    assert run("features", "--log", data / "test1.csv", "--obs-start-week", 19,
               "--obs-weeks", 6, "--families", "daily-stats,overall",
               "--out", test_feats) == 0

    model = root / "model.json"
    assert run("train", "--features", train_feats, "--labels",
               train_labels / "churn.csv", "--model", "logistic",
               "--l2", 0.01, "--out", model) == 0

    raw_submission = root / "raw_submission.csv"
    assert run("predict", "--model", model, "--features", test_feats,
               "--out", raw_submission) == 0

    # Accounts active early in the 8-week test window but silent during the
    # trailing feature weeks carry labels yet produce no features; a complete
    # submission defaults them to churned.
    from churnkit.scoring import write_submission_track1

    predicted = read_submission_track1(raw_submission)
    cohort = read_churn_labels(test_labels / "churn.csv")
    complete = {a: predicted.get(a, True) for a in cohort}
    submission = root / "submission.csv"
    write_submission_track1(submission, complete)
    return {
        "root": root,
        "data": data,
        "train_labels": train_labels,
        "test_labels": test_labels,
        "train_feats": train_feats,
        "test_feats": test_feats,
        "model": model,
        "raw_submission": raw_submission,
        "submission": submission,
    }


# ---------------------------------------------------------------------------
# exit codes and error lines


def test_version_exits_zero(capsys):
    assert run("--version") == 0
    assert "churnkit" in capsys.readouterr().out


def test_usage_errors_exit_two(capsys):
    assert run("frobnicate") == 2
    assert run("gen") == 2  # --out is required
    assert run("score", "--track", 3) == 2


def test_missing_input_exits_one(tmp_path, capsys):
    code = run("label", "--log", tmp_path / "absent.csv", "--out", tmp_path / "o")
    assert code == 1
    err = capsys.readouterr().err
    assert err.startswith("io_error: ")
    assert err.count("\n") == 1


def test_domain_errors_exit_one_with_kind_prefix(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("not,the,right,header\n")
    code = run("label", "--log", bad, "--out", tmp_path / "o")
    assert code == 1
    assert capsys.readouterr().err.startswith("format_error: ")


def test_config_usage_errors_exit_two(pipeline, tmp_path, capsys):
    # train: exactly one target source
    code = run("train", "--features", pipeline["train_feats"],
               "--labels", pipeline["train_labels"] / "churn.csv",
               "--survival", pipeline["train_labels"] / "survival.csv",
               "--model", "logistic", "--out", tmp_path / "m.json")
    assert code == 2
    assert capsys.readouterr().err.startswith("config_error: ")
    code = run("train", "--features", pipeline["train_feats"],
               "--survival", pipeline["train_labels"] / "survival.csv",
               "--model", "logistic", "--out", tmp_path / "m.json")
    assert code == 2


# ---------------------------------------------------------------------------
# gen


def test_gen_manifest_records_digests(tmp_path):
    out = tmp_path / "data"
    argv = ["gen", "--out", str(out), "--players", "15", "--windows", "train"]
    assert main(argv) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == argv
    assert manifest["config"]["players"] == 15
    assert manifest["inputs"] == {}
    assert set(manifest["outputs"]) == {str(out / "train.csv"), str(out / "truth.csv")}
    for path, digest in manifest["outputs"].items():
        from pathlib import Path

        assert sha256(Path(path)) == digest
    assert manifest["duration_seconds"] >= 0.0
    assert "tool_version" in manifest


def test_gen_byte_identical_across_thread_counts(tmp_path):
    for threads, name in ((1, "a"), (8, "b")):
        assert run("gen", "--out", tmp_path / name, "--players", 40,
                   "--windows", "train", "--threads", threads) == 0
    assert (tmp_path / "a" / "train.csv").read_bytes() == (
        tmp_path / "b" / "train.csv"
    ).read_bytes()


def test_gen_zero_players(tmp_path):
    assert run("gen", "--out", tmp_path / "d", "--players", 0,
               "--windows", "train") == 0
    lines = (tmp_path / "d" / "train.csv").read_text().splitlines()
    assert len(lines) == 1


# ---------------------------------------------------------------------------
# the pipeline products


def test_labels_parse_and_cover_the_cohort(pipeline):
    churn = read_churn_labels(pipeline["train_labels"] / "churn.csv")
    survival = read_survival_labels(pipeline["train_labels"] / "survival.csv")
    assert set(churn) == set(survival)
    assert len(churn) > 0
    truth_churned = sum(churn.values()) / len(churn)
    assert 0.1 < truth_churned < 0.5


def test_submission_coverage(pipeline):
    from churnkit.features import FeatureMatrix

    raw = read_submission_track1(pipeline["raw_submission"])
    matrix = FeatureMatrix.from_csv(pipeline["test_feats"])
    assert set(raw) == set(matrix.accounts)
    complete = read_submission_track1(pipeline["submission"])
    cohort = read_churn_labels(pipeline["test_labels"] / "churn.csv")
    assert set(complete) == set(cohort)
    assert all(complete[a] for a in set(cohort) - set(raw))


def test_incomplete_submission_fails_coverage(pipeline, capsys):
    code = run("score", "--track", 1,
               "--submission", pipeline["raw_submission"],
               "--labels", pipeline["test_labels"] / "churn.csv")
    assert code == 1
    assert capsys.readouterr().err.startswith("coverage_error: ")


def test_score_single_report_to_stdout(pipeline, capsys):
    assert run("score", "--track", 1,
               "--submission", pipeline["submission"],
               "--labels", pipeline["test_labels"] / "churn.csv") == 0
    report = json.loads(capsys.readouterr().out)
    assert report["track"] == 1 and report["subset"] == "all"
    assert 0.0 <= report["f1"] <= 1.0
    assert report["n"] > 0


def test_score_pair_report_with_manifest(pipeline, tmp_path, capsys):
    out = tmp_path / "report.json"
    assert run("score", "--track", 1,
               "--test1-submission", pipeline["submission"],
               "--test1-labels", pipeline["test_labels"] / "churn.csv",
               "--test2-submission", pipeline["submission"],
               "--test2-labels", pipeline["test_labels"] / "churn.csv",
               "--out", out) == 0
    assert capsys.readouterr().out == ""
    report = json.loads(out.read_text())
    assert report["final"] == pytest.approx(report["test1"]["f1"])
    manifest = json.loads((tmp_path / "report.json.manifest.json").read_text())
    assert str(out) in manifest["outputs"]


def test_score_pair_mode_needs_all_four_flags(pipeline, capsys):
    code = run("score", "--track", 1,
               "--test1-submission", pipeline["submission"],
               "--test1-labels", pipeline["test_labels"] / "churn.csv")
    assert code == 2
    assert "pair scoring" in capsys.readouterr().err


def test_ridge_survival_pipeline(pipeline, tmp_path, capsys):
    model = tmp_path / "ridge.json"
    assert run("train", "--features", pipeline["train_feats"],
               "--survival", pipeline["train_labels"] / "survival.csv",
               "--model", "ridge", "--l2", 1.0, "--out", model) == 0
    submission = tmp_path / "days.csv"
    assert run("predict", "--model", model,
               "--features", pipeline["test_feats"], "--out", submission) == 0
    values = read_submission_track2(submission)
    assert all(v >= 0.0 for v in values.values())
    # complete coverage: silent-in-trailing-window accounts default to 0 days
    from churnkit.scoring import write_submission_track2

    cohort = read_survival_labels(pipeline["test_labels"] / "survival.csv")
    write_submission_track2(submission, {a: values.get(a, 0.0) for a in cohort})
    assert run("score", "--track", 2, "--submission", submission,
               "--labels", pipeline["test_labels"] / "survival.csv") == 0
    report = json.loads(capsys.readouterr().out)
    assert report["rmsle"] >= 0.0
    assert "clamped_count" in report


def test_rerunning_a_stage_is_byte_identical(pipeline, tmp_path):
    again = tmp_path / "again.csv"
    assert run("features", "--log", pipeline["data"] / "train.csv",
               "--obs-weeks", 6, "--families", "daily-stats,overall",
               "--out", again) == 0
    assert again.read_bytes() == pipeline["train_feats"].read_bytes()


def test_manifest_override_path(pipeline, tmp_path):
    manifest = tmp_path / "elsewhere.json"
    out = tmp_path / "feats.csv"
    assert run("features", "--log", pipeline["data"] / "train.csv",
               "--obs-weeks", 6, "--families", "overall",
               "--out", out, "--manifest", manifest) == 0
    assert manifest.exists()
    assert not (tmp_path / "feats.csv.manifest.json").exists()


# ---------------------------------------------------------------------------
# feature-matrix extras


def test_quantile_map_save_and_reuse(pipeline, tmp_path):
    maps = tmp_path / "maps.json"
    scaled = tmp_path / "scaled.csv"
    assert run("features", "--log", pipeline["data"] / "train.csv",
               "--obs-weeks", 6, "--families", "overall",
               "--quantile", "--save-quantile", maps, "--out", scaled) == 0
    reused = tmp_path / "reused.csv"
    assert run("features", "--log", pipeline["data"] / "train.csv",
               "--obs-weeks", 6, "--families", "overall",
               "--quantile", "--quantile-map", maps, "--out", reused) == 0
    assert scaled.read_bytes() == reused.read_bytes()
    from churnkit.features import FeatureMatrix

    matrix = FeatureMatrix.from_csv(scaled)
    assert matrix.values.min() >= 0.0 and matrix.values.max() <= 1.0


# ---------------------------------------------------------------------------
# activity images


def test_gaf_image_and_matrix_formats(pipeline, tmp_path):
    account = sorted(read_churn_labels(pipeline["train_labels"] / "churn.csv"))[0]
    image_csv = tmp_path / "image.csv"
    assert run("gaf", "--log", pipeline["data"] / "train.csv", "--account", account,
               "--obs-weeks", 6, "--days", 42, "--out", image_csv) == 0
    image = read_matrix_csv(image_csv)
    assert image.shape == (13, 42)

    mat_csv = tmp_path / "field.csv"
    mat_bin = tmp_path / "field.bin"
    common = ["gaf", "--log", pipeline["data"] / "train.csv", "--account", account,
              "--obs-weeks", 6, "--mode", "matrix", "--channel", "playtime_minutes"]
    assert run(*common, "--format", "csv", "--out", mat_csv) == 0
    assert run(*common, "--format", "binary", "--out", mat_bin) == 0
    csv_matrix = read_matrix_csv(mat_csv)
    bin_matrix = read_matrix_binary(mat_bin)
    assert csv_matrix.shape == (42, 42)
    assert np.array_equal(csv_matrix, bin_matrix)


def test_gaf_matrix_mode_requires_channel(pipeline, capsys):
    code = run("gaf", "--log", pipeline["data"] / "train.csv", "--account", "tr000000",
               "--obs-weeks", 6, "--mode", "matrix", "--out", "ignored.csv")
    assert code == 2
    assert "--channel" in capsys.readouterr().err


def test_gaf_unknown_account(pipeline, capsys):
    code = run("gaf", "--log", pipeline["data"] / "train.csv",
               "--account", "nobody", "--obs-weeks", 6, "--out", "ignored.csv")
    assert code == 1
    assert capsys.readouterr().err.startswith("coverage_error: ")


# ---------------------------------------------------------------------------
# config files


def test_config_file_layering(tmp_path):
    config = tmp_path / "gen.cfg"
    config.write_text(
        "# generator settings\n"
        "players = 7\n"
        "windows = train\n"
        "seed = 5\n"
    )
    out_file = tmp_path / "from_file"
    assert run("gen", "--config", config, "--out", out_file) == 0
    manifest = json.loads((out_file / "manifest.json").read_text())
    assert manifest["config"]["players"] == 7
    assert manifest["config"]["seed"] == 5

    out_flag = tmp_path / "flag_wins"
    assert run("gen", "--config", config, "--out", out_flag, "--players", 9) == 0
    manifest = json.loads((out_flag / "manifest.json").read_text())
    assert manifest["config"]["players"] == 9  # explicit flag beats the file
    assert manifest["config"]["seed"] == 5  # file still beats the default


def test_config_file_rejects_unknown_keys(tmp_path, capsys):
    config = tmp_path / "bad.cfg"
    config.write_text("playerz = 7\n")
    assert run("gen", "--config", config, "--out", tmp_path / "x") == 2
    assert capsys.readouterr().err.startswith("config_error: ")


def test_config_file_rejects_bad_syntax(tmp_path, capsys):
    config = tmp_path / "bad.cfg"
    config.write_text("players 7\n")
    assert run("gen", "--config", config, "--out", tmp_path / "x") == 2
    assert "key = value" in capsys.readouterr().err
