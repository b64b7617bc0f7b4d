"""Window-based churn and survival labeling, plus loyalty grading.

The labeling protocol fixes three consecutive intervals on the week grid:
an observation window whose logs feed the features, a gap that is ignored
entirely, and a churn window.  An account churned iff it has zero events
inside the churn window; gap activity never changes the label.  Survival
counts calendar days between the last observed event inside the observation
window and the most recent event known at an evaluation instant, rendered
with a ``+`` suffix when the account was still active at evaluation
(right-censored).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    AlignmentError,
    CardinalityError,
    CohortError,
    ConfigError,
    FormatError,
    ValidationError,
    WindowError,
)
from .events import WEEK, PlayerTimeline, WeekGrid, day_index

DEFAULT_GAP_WEEKS = 3
DEFAULT_CHURN_WEEKS = 5


@dataclass(frozen=True)
class WindowLayout:
    """Observation window, gap, and churn window on a shared week grid."""

    grid: WeekGrid
    observation_start: datetime
    observation_end: datetime
    gap_end: datetime
    churn_end: datetime

    @property
    def observation(self) -> tuple[datetime, datetime]:
        return (self.observation_start, self.observation_end)

    @property
    def gap(self) -> tuple[datetime, datetime]:
        return (self.observation_end, self.gap_end)

    @property
    def churn_window(self) -> tuple[datetime, datetime]:
        return (self.gap_end, self.churn_end)

    @property
    def observation_days(self) -> int:
        return (self.observation_end - self.observation_start).days


def make_layout(
    grid: WeekGrid,
    observation_start: datetime,
    observation_weeks: int,
    gap_weeks: int = DEFAULT_GAP_WEEKS,
    churn_weeks: int = DEFAULT_CHURN_WEEKS,
) -> WindowLayout:
    """Build a layout with contiguous windows starting at a week boundary."""
    if observation_weeks < 1:
        raise ConfigError("observation_weeks must be >= 1")
    if gap_weeks < 0:
        raise ConfigError("gap_weeks must be >= 0")
    if churn_weeks < 1:
        raise ConfigError("churn_weeks must be >= 1")
    offset = observation_start - grid.epoch
    if offset % WEEK != timedelta(0):
        raise AlignmentError(
            "observation_start must lie on a week boundary of the grid"
        )
    obs_end = observation_start + observation_weeks * WEEK
    gap_end = obs_end + gap_weeks * WEEK
    churn_end = gap_end + churn_weeks * WEEK
    return WindowLayout(grid, observation_start, obs_end, gap_end, churn_end)


@dataclass(frozen=True)
class ChurnLabel:
    account_id: str
    churned: bool


@dataclass(frozen=True)
class SurvivalLabel:
    account_id: str
    survival_days: int
    censored: bool


def _last_observed(timeline: PlayerTimeline, layout: WindowLayout) -> datetime:
    last = None
    for event in timeline.events:
        ts = event.timestamp
        if layout.observation_start <= ts < layout.observation_end:
            last = ts  # events are chronological, so the final hit wins
    if last is None:
        raise CohortError(
            f"account {timeline.account_id} has no observation-window activity"
        )
    return last


def label_churn(timeline: PlayerTimeline, layout: WindowLayout) -> ChurnLabel:
    """Churned iff zero events inside the churn window; the gap is ignored."""
    _last_observed(timeline, layout)  # cohort membership check
    start, end = layout.churn_window
    active = any(start <= e.timestamp < end for e in timeline.events)
    return ChurnLabel(timeline.account_id, not active)


def label_survival(
    timeline: PlayerTimeline,
    layout: WindowLayout,
    evaluation_instant: datetime,
    full_history: PlayerTimeline | None = None,
    censor_margin: timedelta = timedelta(0),
) -> SurvivalLabel:
    """Calendar days survived past the last observed event.

    ``survival_days`` is the day-index difference between the most recent
    event known by ``evaluation_instant`` (taken from ``full_history`` when
    provided, else from ``timeline``) and the last event inside the
    observation window.  The label is censored when the account shows
    activity at or after ``evaluation_instant - censor_margin``: the account
    was still alive when measured, so the true value is only bounded below.
    """
    if evaluation_instant < layout.observation_end:
        raise WindowError("evaluation instant precedes the observation window end")
    last_obs = _last_observed(timeline, layout)
    history = full_history if full_history is not None else timeline
    known = [e.timestamp for e in history.events if e.timestamp <= evaluation_instant]
    if not known:
        raise CohortError(
            f"account {timeline.account_id} has no history before evaluation"
        )
    last_known = max(known)
    if last_known < last_obs:
        last_known = last_obs
    survival = day_index(layout.grid, last_known) - day_index(layout.grid, last_obs)
    cutoff = evaluation_instant - censor_margin
    censored = any(e.timestamp >= cutoff for e in history.events)
    return SurvivalLabel(timeline.account_id, survival, censored)


def render_survival(label: SurvivalLabel) -> str:
    return f"{label.survival_days}+" if label.censored else str(label.survival_days)


def parse_survival(text: str) -> tuple[int, bool]:
    """Parse a survival value: a decimal integer, optionally ``+``-suffixed."""
    censored = text.endswith("+")
    body = text[:-1] if censored else text
    if not body.isdigit():
        raise FormatError(f"bad survival value {text!r}")
    return int(body), censored


# ---------------------------------------------------------------------------
# label file round trips


def write_churn_labels(path: str | Path, labels: Mapping[str, bool]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        handle.write("account_id,churned\n")
        for account in sorted(labels):
            handle.write(f"{account},{1 if labels[account] else 0}\n")


def read_churn_labels(path: str | Path) -> dict[str, bool]:
    out: dict[str, bool] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = tuple(next(reader, ()))
        if header != ("account_id", "churned"):
            raise FormatError("labels header must be account_id,churned")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 or row[1] not in ("0", "1"):
                raise FormatError(f"labels line {line_no}: expected account_id,0|1")
            if row[0] in out:
                raise FormatError(f"labels line {line_no}: duplicate {row[0]}")
            out[row[0]] = row[1] == "1"
    return out


def write_survival_labels(path: str | Path, labels: Mapping[str, SurvivalLabel]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        handle.write("account_id,survival\n")
        for account in sorted(labels):
            handle.write(f"{account},{render_survival(labels[account])}\n")


def read_survival_labels(path: str | Path) -> dict[str, SurvivalLabel]:
    out: dict[str, SurvivalLabel] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = tuple(next(reader, ()))
        if header != ("account_id", "survival"):
            raise FormatError("survival header must be account_id,survival")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise FormatError(f"survival line {line_no}: expected 2 fields")
            if row[0] in out:
                raise FormatError(f"survival line {line_no}: duplicate {row[0]}")
            days, censored = parse_survival(row[1])
            out[row[0]] = SurvivalLabel(row[0], days, censored)
    return out


# ---------------------------------------------------------------------------
# loyalty grading (cohort assembly)


@dataclass
class GradeAssignment:
    """Grades per (account, month); grade 1 is the most loyal cluster."""

    k: int
    grades: dict[tuple[str, int], int] = field(default_factory=dict)
    diagnostics: list[str] = field(default_factory=list)

    def merge(self, other: "GradeAssignment") -> "GradeAssignment":
        if other.k != self.k:
            raise ValidationError("cannot merge assignments with different k")
        merged = GradeAssignment(self.k, dict(self.grades), list(self.diagnostics))
        for key, grade in other.grades.items():
            if key in merged.grades:
                raise ValidationError(f"duplicate grade for {key}")
            merged.grades[key] = grade
        merged.diagnostics.extend(other.diagnostics)
        return merged


def _zscore(matrix: np.ndarray) -> np.ndarray:
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return (matrix - mean) / std


def _kmeans(points: np.ndarray, k: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic k-means: seeded first pick, then farthest-point seeding,
    Lloyd iterations until assignments stabilize or 100 rounds.

    Points must arrive in a canonical (sorted-key) order; everything after
    the seeded first pick is deterministic in that order, which makes the
    outcome invariant to permutations of the caller's input mapping.
    """
    n = points.shape[0]
    rng = np.random.default_rng((seed, 0x6C6F79))
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[int(rng.integers(n))]
    dist = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        centers[j] = points[int(np.argmax(dist))]  # ties: lowest index
        dist = np.minimum(dist, np.sum((points - centers[j]) ** 2, axis=1))
    assign = np.full(n, -1)
    for _ in range(100):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2, axis=1)  # ties: lowest center index
        for j in range(k):
            members = new_assign == j
            if members.any():
                centers[j] = points[members].mean(axis=0)
            else:
                # re-seed an empty cluster at the point farthest from its center
                far = int(np.argmax(d2[np.arange(n), new_assign]))
                centers[j] = points[far]
                new_assign[far] = j
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return assign, centers


def assign_grades(
    monthly_features: Mapping[str, tuple[float, float, float]],
    k: int = 14,
    seed: int = 0,
    month: int = 0,
) -> GradeAssignment:
    """Cluster accounts into ``k`` loyalty grades for one month.

    Features are the (payment, play time, contents usage rate) triple per
    account, z-scored before clustering.  Clusters are ranked by the sum of
    their standardized centroid coordinates, descending, so grade 1 is the
    most engaged cluster and grade ``k`` the least.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    accounts = sorted(monthly_features)
    n = len(accounts)
    if n < k:
        raise CardinalityError(f"need at least {k} accounts to form {k} grades")
    matrix = np.array([monthly_features[a] for a in accounts], dtype=float)
    if matrix.shape != (n, 3):
        raise ValidationError("monthly features must be triples")
    if not np.isfinite(matrix).all():
        raise ValidationError("monthly features must be finite")

    out = GradeAssignment(k)
    if np.all(matrix == matrix[0]):
        out.diagnostics.append("all accounts identical; everyone graded 1")
        for account in accounts:
            out.grades[(account, month)] = 1
        return out

    points = _zscore(matrix)
    assign, centers = _kmeans(points, k, seed)
    loyalty = centers.sum(axis=1)
    # rank clusters by loyalty score, descending; ties keep cluster order
    order = np.lexsort((np.arange(k), -loyalty))
    grade_of_cluster = np.empty(k, dtype=int)
    grade_of_cluster[order] = np.arange(1, k + 1)
    for account, cluster in zip(accounts, assign):
        out.grades[(account, month)] = int(grade_of_cluster[cluster])
    return out


def select_loyal(
    grades: GradeAssignment,
    trailing_months: int = 3,
    threshold_grade: int = 9,
    min_occurrences: int = 1,
) -> set[str]:
    """Accounts graded at or below the threshold often enough recently.

    Looks at the last ``trailing_months`` month indices present in the
    assignment and keeps accounts whose grade was ``<= threshold_grade`` in
    at least ``min_occurrences`` of them.  With the default of one
    occurrence this is a minimum-grade rule over the trailing window.
    """
    if trailing_months < 1:
        raise ConfigError("trailing_months must be >= 1")
    if min_occurrences < 1:
        raise ConfigError("min_occurrences must be >= 1")
    if not grades.grades:
        return set()
    months = sorted({month for _, month in grades.grades})
    window = set(months[-trailing_months:])
    hits: dict[str, int] = {}
    for (account, month), grade in grades.grades.items():
        if month in window and grade <= threshold_grade:
            hits[account] = hits.get(account, 0) + 1
    return {account for account, count in hits.items() if count >= min_occurrences}
