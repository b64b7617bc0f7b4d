#!/usr/bin/env python3
"""Drive the full benchmark pipeline on generated data, end to end.

Generates a dataset (train + both test windows), labels every window,
builds matching feature matrices, trains one baseline model, predicts both
test sets, completes the submissions against the label cohorts, and scores
the pair.  Every stage goes through the ``churnkit`` command line, so a run
of this script doubles as a smoke test of the whole toolchain; the JSON
report and all intermediate files land in the chosen working directory.

The test windows are observed for 8 weeks but features must line up with
the 6-week training observation, so test features are built over the
trailing 6 weeks of each test observation.  Accounts that were active early
in a test window yet silent during those trailing weeks carry labels but
produce no feature row; the completion step defaults them to the
pessimistic answer (churned on track 1, 0 remaining days on track 2).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from churnkit.cli import main as churnkit
from churnkit.labeling import read_churn_labels, read_survival_labels
from churnkit.scoring import (
    read_submission_track1,
    read_submission_track2,
    write_submission_track1,
    write_submission_track2,
)

# Test observations start these many weeks after the epoch and run 8 weeks.
TEST_START_WEEK = {"test1": 17, "test2": 37}
TEST_OBS_WEEKS = 8


def run(argv: list[str]) -> None:
    print("  $ churnkit " + " ".join(argv), flush=True)
    code = churnkit(argv)
    if code != 0:
        raise SystemExit(code)


def stage(title: str) -> None:
    print(f"\n== {title}", flush=True)


def complete_submission(track: int, raw: Path, labels: Path, out: Path) -> int:
    """Extend a raw submission to the full label cohort; return the count
    of accounts that had to be defaulted."""
    if track == 1:
        predicted = read_submission_track1(raw)
        cohort = read_churn_labels(labels)
        write_submission_track1(out, {a: predicted.get(a, True) for a in cohort})
    else:
        predicted = read_submission_track2(raw)
        cohort = read_survival_labels(labels)
        write_submission_track2(out, {a: predicted.get(a, 0.0) for a in cohort})
    return sum(1 for a in cohort if a not in predicted)


def parse_args(argv: list[str] | None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--workdir", type=Path, default=Path("pipeline_run"))
    parser.add_argument("--players", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--signal-strength", default="strong")
    parser.add_argument("--track", type=int, choices=(1, 2), default=1)
    parser.add_argument(
        "--model",
        choices=("logistic", "ridge", "extra-trees"),
        default=None,
        help="defaults to logistic on track 1 and ridge on track 2",
    )
    parser.add_argument("--l2", type=float, default=0.01)
    parser.add_argument("--trees", type=int, default=50)
    parser.add_argument("--min-split", type=int, default=50)
    parser.add_argument("--obs-weeks", type=int, default=6)
    parser.add_argument("--families", default="daily-stats,overall")
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    args = parse_args(argv)
    model_kind = args.model or ("logistic" if args.track == 1 else "ridge")
    work = args.workdir
    data = work / "data"
    target_file = "churn.csv" if args.track == 1 else "survival.csv"

    stage("generate")
    run(["gen", "--out", str(data), "--players", str(args.players),
         "--seed", str(args.seed), "--signal-strength", str(args.signal_strength),
         "--windows", "train,test1,test2"])

    stage("label")
    run(["label", "--log", str(data / "train.csv"),
         "--obs-weeks", str(args.obs_weeks), "--censor-margin-days", "1",
         "--out", str(work / "labels_train")])
    for name, start in TEST_START_WEEK.items():
        run(["label", "--log", str(data / f"{name}.csv"),
             "--obs-start-week", str(start), "--obs-weeks", str(TEST_OBS_WEEKS),
             "--censor-margin-days", "1", "--out", str(work / f"labels_{name}")])

    stage("features")
    run(["features", "--log", str(data / "train.csv"),
         "--obs-weeks", str(args.obs_weeks), "--families", args.families,
         "--out", str(work / "features_train.csv")])
    for name, start in TEST_START_WEEK.items():
        trailing_start = start + TEST_OBS_WEEKS - args.obs_weeks
        run(["features", "--log", str(data / f"{name}.csv"),
             "--obs-start-week", str(trailing_start),
             "--obs-weeks", str(args.obs_weeks), "--families", args.families,
             "--out", str(work / f"features_{name}.csv")])

    stage("train")
    model = work / "model.json"
    target_flag = "--labels" if args.track == 1 else "--survival"
    train_argv = ["train", "--features", str(work / "features_train.csv"),
                  target_flag, str(work / "labels_train" / target_file),
                  "--model", model_kind, "--out", str(model)]
    if model_kind == "extra-trees":
        train_argv += ["--trees", str(args.trees), "--min-split", str(args.min_split)]
    else:
        train_argv += ["--l2", str(args.l2)]
    run(train_argv)

    stage("predict and complete submissions")
    for name in TEST_START_WEEK:
        raw = work / f"raw_submission_{name}.csv"
        run(["predict", "--model", str(model),
             "--features", str(work / f"features_{name}.csv"), "--out", str(raw)])
        defaulted = complete_submission(
            args.track, raw, work / f"labels_{name}" / target_file,
            work / f"submission_{name}.csv")
        if defaulted:
            print(f"  {name}: defaulted {defaulted} accounts with no feature row")

    stage("score")
    report_path = work / "report.json"
    run(["score", "--track", str(args.track),
         "--test1-submission", str(work / "submission_test1.csv"),
         "--test1-labels", str(work / "labels_test1" / target_file),
         "--test2-submission", str(work / "submission_test2.csv"),
         "--test2-labels", str(work / "labels_test2" / target_file),
         "--out", str(report_path)])
    report = json.loads(report_path.read_text())
    print(json.dumps(report, indent=2))
    print(f"\nartifacts in {work}/ ; full report at {report_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
