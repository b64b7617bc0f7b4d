"""Competition evaluation: F1, censoring-aware RMSLE, and final standings.

Track 1 (churn classification) is scored by precision/recall/F1 with
churned as the positive class.  Track 2 (survival regression) is scored by
RMSLE over natural logarithms, where a censored record whose prediction
meets or exceeds the observed lower bound contributes zero error — the
observation only says the player survived *at least* that long, so any
larger prediction is accepted as correct.  A team's standing on either
track is the harmonic mean of its two per-test-set scores.

The leaderboard split mirrors the test-server protocol: a keyed hash
orders the cohort, the lowest ~10% become the public subset scored during
the competition, and the rest stay private for the final standings.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .errors import (
    CardinalityError,
    ConfigError,
    CoverageError,
    FormatError,
    UndefinedScoreError,
    ValidationError,
)
from .labeling import SurvivalLabel


@dataclass(frozen=True)
class ClassificationScore:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    diagnostics: tuple[str, ...] = ()


@dataclass(frozen=True)
class SurvivalScore:
    rmsle: float
    n: int
    clamped_count: int


@dataclass(frozen=True)
class FinalScore:
    test1: float
    test2: float
    final: float


@dataclass(frozen=True)
class LeaderboardSplit:
    public: frozenset[str]
    private: frozenset[str]
    seed: int


def _check_coverage(predicted: Mapping[str, object], actual: Mapping[str, object]) -> None:
    missing = sorted(a for a in actual if a not in predicted)
    if missing:
        shown = ", ".join(missing[:5])
        more = f" (+{len(missing) - 5} more)" if len(missing) > 5 else ""
        raise CoverageError(f"missing predictions for {len(missing)} accounts: {shown}{more}")


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def score_classification(
    predicted: Mapping[str, bool], actual: Mapping[str, bool]
) -> ClassificationScore:
    """Confusion counts and F1 with churned as the positive class.

    Zero-denominator precision or recall is defined as 0 and noted in the
    diagnostics rather than raising.
    """
    if not actual:
        raise ValidationError("no accounts to score")
    _check_coverage(predicted, actual)
    tp = fp = fn = tn = 0
    for account, truth in actual.items():
        guess = bool(predicted[account])
        if guess and truth:
            tp += 1
        elif guess and not truth:
            fp += 1
        elif not guess and truth:
            fn += 1
        else:
            tn += 1
    diagnostics: list[str] = []
    if tp + fp == 0:
        diagnostics.append("no predicted positives; precision defined as 0")
        precision = 0.0
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        diagnostics.append("no actual positives; recall defined as 0")
        recall = 0.0
    else:
        recall = tp / (tp + fn)
    return ClassificationScore(
        precision, recall, f1_score(precision, recall), tp, fp, fn, tn, tuple(diagnostics)
    )


def score_survival(
    predicted: Mapping[str, float], actual: Mapping[str, SurvivalLabel]
) -> SurvivalScore:
    """Censoring-aware RMSLE over natural logs.

    Each record contributes ``(log(p+1) - log(a+1))^2`` except censored
    records with ``p >= a``, which contribute exactly zero: the actual
    value is only a lower bound there, so over-predictions are accepted.
    """
    if not actual:
        raise ValidationError("no accounts to score")
    _check_coverage(predicted, actual)
    total = 0.0
    clamped = 0
    for account, label in actual.items():
        p = float(predicted[account])
        if not math.isfinite(p) or p < 0.0:
            raise ValidationError(f"prediction for {account} must be finite and >= 0")
        a = float(label.survival_days)
        if label.censored and p >= a:
            clamped += 1
            continue
        diff = math.log1p(p) - math.log1p(a)
        total += diff * diff
    return SurvivalScore(math.sqrt(total / len(actual)), len(actual), clamped)


def final_score(test1: float, test2: float) -> FinalScore:
    """Harmonic mean of the two per-test-set scores."""
    if test1 <= 0.0 or test2 <= 0.0:
        raise UndefinedScoreError("harmonic mean needs two positive scores")
    return FinalScore(test1, test2, 2.0 / (1.0 / test1 + 1.0 / test2))


def split_account(seed: int, account_id: str) -> str:
    """The keyed hash that orders a cohort for the leaderboard split."""
    return hashlib.sha256(f"{seed}:{account_id}".encode()).hexdigest()


def split_leaderboard(cohort: set[str] | frozenset[str], seed: int = 0) -> LeaderboardSplit:
    """Deterministic ~10% public / ~90% private partition of a cohort.

    Accounts are ranked by a keyed hash so the split is stable across
    runs and platforms yet unpredictable without the seed; the lowest
    ``round(0.10 n)`` hashes form the public subset.
    """
    accounts = sorted(cohort)
    n = len(accounts)
    if n < 10:
        raise CardinalityError(f"cohort of {n} is too small to split (need >= 10)")
    ranked = sorted(accounts, key=lambda a: (split_account(seed, a), a))
    n_public = int(n * 0.10 + 0.5)
    public = frozenset(ranked[:n_public])
    return LeaderboardSplit(public, frozenset(accounts) - public, seed)


# ---------------------------------------------------------------------------
# submission files


def read_submission_track1(path: str | Path) -> dict[str, bool]:
    """Track 1 submission: ``account_id,churn_yn`` with 1/0 values."""
    out: dict[str, bool] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = tuple(next(reader, ()))
        if header != ("account_id", "churn_yn"):
            raise FormatError("submission header must be account_id,churn_yn")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise FormatError(f"line {line_no}: expected 2 fields")
            account, value = row
            if account in out:
                raise FormatError(f"line {line_no}: duplicate account {account!r}")
            if value not in ("0", "1"):
                raise FormatError(f"line {line_no}: churn_yn must be 0 or 1, got {value!r}")
            out[account] = value == "1"
    return out


def read_submission_track2(path: str | Path) -> dict[str, float]:
    """Track 2 submission: ``account_id,survival`` non-negative decimals.

    Unlike label files, submissions commit to a value — a ``+`` suffix is
    rejected.
    """
    out: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = tuple(next(reader, ()))
        if header != ("account_id", "survival"):
            raise FormatError("submission header must be account_id,survival")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise FormatError(f"line {line_no}: expected 2 fields")
            account, value = row
            if account in out:
                raise FormatError(f"line {line_no}: duplicate account {account!r}")
            if value.endswith("+"):
                raise FormatError(
                    f"line {line_no}: submissions must commit to a value, got {value!r}"
                )
            try:
                days = float(value)
            except ValueError:
                raise FormatError(f"line {line_no}: bad survival value {value!r}") from None
            if not math.isfinite(days) or days < 0.0:
                raise FormatError(f"line {line_no}: survival must be finite and >= 0")
            out[account] = days
    return out


def write_submission_track1(path: str | Path, predicted: Mapping[str, bool]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(("account_id", "churn_yn"))
        for account in sorted(predicted):
            writer.writerow((account, "1" if predicted[account] else "0"))


def write_submission_track2(path: str | Path, predicted: Mapping[str, float]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(("account_id", "survival"))
        for account in sorted(predicted):
            value = predicted[account]
            if not math.isfinite(value) or value < 0.0:
                raise ValidationError(f"survival for {account} must be finite and >= 0")
            writer.writerow((account, repr(float(value))))


def _restrict(labels: Mapping[str, object], subset: str, seed: int) -> dict[str, object]:
    if subset == "all":
        return dict(labels)
    split = split_leaderboard(set(labels), seed)
    keep = split.public if subset == "public" else split.private
    return {a: v for a, v in labels.items() if a in keep}


def score_submission(
    track: int,
    submission_path: str | Path,
    labels: Mapping[str, bool] | Mapping[str, SurvivalLabel],
    subset: str = "all",
    split_seed: int = 0,
) -> dict:
    """Score one submission file against labels, optionally on a subset.

    Returns the score-report dict: ``track, subset, n`` plus either
    ``precision, recall, f1`` (Track 1) or ``rmsle, clamped_count``
    (Track 2).
    """
    if track not in (1, 2):
        raise ConfigError(f"track must be 1 or 2, got {track}")
    if subset not in ("all", "public", "private"):
        raise ConfigError(f"subset must be all, public, or private, got {subset!r}")
    target = _restrict(labels, subset, split_seed)
    if track == 1:
        predicted = read_submission_track1(submission_path)
        score = score_classification(predicted, target)  # type: ignore[arg-type]
        return {
            "track": 1,
            "subset": subset,
            "n": len(target),
            "precision": score.precision,
            "recall": score.recall,
            "f1": score.f1,
        }
    predicted2 = read_submission_track2(submission_path)
    score2 = score_survival(predicted2, target)  # type: ignore[arg-type]
    return {
        "track": 2,
        "subset": subset,
        "n": len(target),
        "rmsle": score2.rmsle,
        "clamped_count": score2.clamped_count,
    }


def pair_report(report1: dict, report2: dict) -> dict:
    """Combine two per-test-set reports into one with the final standing.

    Track 1 standings combine F1 scores; Track 2 standings combine RMSLE
    values the same way (harmonic mean), matching how totals were ranked.
    """
    if report1["track"] != report2["track"]:
        raise ConfigError("cannot combine reports from different tracks")
    key = "f1" if report1["track"] == 1 else "rmsle"
    combined = final_score(report1[key], report2[key])
    return {
        "track": report1["track"],
        "test1": report1,
        "test2": report2,
        "final": combined.final,
    }
