"""Feature engineering over observation-window timelines.

Every account is first expanded into a :class:`DailySeries`: one row per
observation day and one column per daily channel (per-group action counts,
session count, playtime, levels, money, characters, equipment).  Feature
families then reduce the series to scalars:

``daily-stats``
    mean / population std / sum per channel plus the difference between the
    first three and last three days' totals.
``overall``
    whole-window scalars: loyalty index, distinct guilds, weekday
    distribution, inter-session gap statistics, current absence.
``weekly``
    per-channel weekly sums, coefficient of variation, and degree-1 and
    degree-2 least-squares trend coefficients.
``time-weighted``
    recency-weighted channel sums where the day ``d`` days before the query
    day (the day after the window ends) weighs ``1/d``.
``frequency``
    dominant non-DC frequency bin and amplitude per channel from a direct
    discrete Fourier transform.

A :class:`QuantileMap` can remap any column through the training
distribution's mid-rank quantiles; maps are fit once on the training matrix
and reused verbatim for test matrices.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from datetime import timedelta
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    FitError,
    FormatError,
    SchemaError,
    ValidationError,
)
from .events import (
    DEFAULT_CATALOG,
    DEFAULT_SESSION_GAP_MINUTES,
    EventCatalog,
    PlayerTimeline,
    WEEKDAY_LABELS,
    WeekGrid,
    _sessionize_sorted,
    restrict_events,
)
from .labeling import WindowLayout

FAMILIES: tuple[str, ...] = (
    "daily-stats",
    "overall",
    "weekly",
    "time-weighted",
    "frequency",
)

_BASE_CHANNELS = (
    "distinct_chars",
    "equip_score",
    "last_level",
    "level_ups",
    "money_earned",
    "money_spent",
    "playtime_minutes",
    "session_count",
    "target_level",
)

#: Channels whose value persists on inactive days instead of zero-filling.
CARRY_FORWARD_CHANNELS = ("equip_score", "target_level")


def channel_names(catalog: EventCatalog) -> tuple[str, ...]:
    groups = catalog.group_names()
    return tuple(sorted([f"actions_{g}" for g in groups] + list(_BASE_CHANNELS)))


@dataclass
class DailySeries:
    """Per-account day-by-channel observation matrix."""

    account_id: str
    channels: tuple[str, ...]
    values: np.ndarray  # (n_days, n_channels) float64
    start_day: int  # grid day index of row 0

    @property
    def n_days(self) -> int:
        return self.values.shape[0]

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.channels.index(name)]
        except ValueError as exc:
            raise SchemaError(f"no channel named {name!r}") from exc


def daily_series(
    timeline: PlayerTimeline,
    layout: WindowLayout,
    catalog: EventCatalog = DEFAULT_CATALOG,
    gap_minutes: float = DEFAULT_SESSION_GAP_MINUTES,
) -> DailySeries:
    """Expand one timeline into its daily channels over the observation window.

    Inactive days hold zeros except the carry-forward channels (equipment
    score, battle-target level), which repeat the previous day's value.
    Sessions are split at midnight so each day is credited with the playtime
    that actually happened inside it.
    """
    obs_start, obs_end = layout.observation
    n_days = layout.observation_days
    events = restrict_events(timeline.events, obs_start, obs_end)
    names = channel_names(catalog)
    col = {name: i for i, name in enumerate(names)}
    values = np.zeros((n_days, len(names)))
    start_ordinal = obs_start.toordinal()

    last_level_events: list[tuple[int, int]] = []  # (day, level) in time order
    level_prev: dict[str, int] = {}
    day_chars: dict[int, set[str]] = {}
    day_target: dict[int, int] = {}
    day_equip: dict[int, float] = {}

    for e in events:
        day = e.timestamp.toordinal() - start_ordinal
        values[day, col[f"actions_{catalog.group_of(e.log_id)}"]] += 1.0
        if e.char_id:
            day_chars.setdefault(day, set()).add(e.char_id)
        if e.money_delta is not None:
            if e.money_delta >= 0:
                values[day, col["money_earned"]] += e.money_delta
            else:
                values[day, col["money_spent"]] += -e.money_delta
        if e.actor_level is not None:
            last_level_events.append((day, e.actor_level))
            prev = level_prev.get(e.char_id)
            if prev is not None and e.actor_level > prev:
                values[day, col["level_ups"]] += e.actor_level - prev
            level_prev[e.char_id] = e.actor_level
        if e.target_level is not None:
            current = day_target.get(day)
            if current is None or e.target_level > current:
                day_target[day] = e.target_level
        if e.equip_score is not None:
            day_equip[day] = e.equip_score  # last occurrence of the day wins

    for day, level in last_level_events:
        values[day, col["last_level"]] = level  # last event of the day wins
    for day, chars in day_chars.items():
        values[day, col["distinct_chars"]] = len(chars)

    # carry-forward channels
    tgt = values[:, col["target_level"]]
    eq = values[:, col["equip_score"]]
    tgt_cur = 0.0
    eq_cur = 0.0
    for day in range(n_days):
        if day in day_target:
            tgt_cur = float(day_target[day])
        if day in day_equip:
            eq_cur = float(day_equip[day])
        tgt[day] = tgt_cur
        eq[day] = eq_cur

    # sessions, split at day boundaries (obs_start is midnight-aligned)
    for session in _sessionize_sorted(timeline.account_id, events, gap_minutes):
        cursor = session.start
        d = cursor.toordinal() - start_ordinal
        while True:
            next_midnight = obs_start + timedelta(days=d + 1)
            segment_end = min(session.end, next_midnight)
            values[d, col["session_count"]] += 1.0
            values[d, col["playtime_minutes"]] += (
                (segment_end - cursor).total_seconds() / 60.0
            )
            if segment_end >= session.end:
                break
            cursor = next_midnight
            d += 1

    return DailySeries(
        timeline.account_id,
        names,
        values,
        start_day=obs_start.toordinal() - layout.grid.epoch.toordinal(),
    )


def channel_stats(series: DailySeries) -> dict[str, float]:
    """Per-channel mean, population std, sum, and first-3 minus last-3 days."""
    out: dict[str, float] = {}
    v = series.values
    means = v.mean(axis=0)
    stds = v.std(axis=0)
    sums = v.sum(axis=0)
    first3 = v[:3].sum(axis=0)
    last3 = v[-3:].sum(axis=0)
    for i, ch in enumerate(series.channels):
        out[f"{ch}_mean"] = float(means[i])
        out[f"{ch}_std"] = float(stds[i])
        out[f"{ch}_sum"] = float(sums[i])
        out[f"{ch}_first3_minus_last3"] = float(first3[i] - last3[i])
    return out


def period_summary(
    series: DailySeries,
    timeline: PlayerTimeline,
    layout: WindowLayout,
    gap_minutes: float = DEFAULT_SESSION_GAP_MINUTES,
) -> dict[str, float]:
    """Whole-window scalars: loyalty, guilds, weekday mix, session gaps."""
    out: dict[str, float] = {}
    action_cols = [i for i, ch in enumerate(series.channels) if ch.startswith("actions_")]
    daily_events = series.values[:, action_cols].sum(axis=1)
    active = np.nonzero(daily_events > 0)[0]

    if active.size:
        span = active[-1] - active[0] + 1
        out["loyalty_index"] = float(active.size / span)
        out["absence_days"] = float(series.n_days - 1 - active[-1])
    else:
        out["loyalty_index"] = 0.0
        out["absence_days"] = float(series.n_days)

    obs_events = restrict_events(timeline.events, *layout.observation)
    out["guild_count"] = float(
        len({e.guild_id for e in obs_events if e.guild_id is not None})
    )

    total = daily_events.sum()
    weekday_of_row = (series.start_day + np.arange(series.n_days)) % 7
    for w, label in enumerate(WEEKDAY_LABELS):
        share = daily_events[weekday_of_row == w].sum() / total if total > 0 else 0.0
        out[f"weekday_share_{label}"] = float(share)

    sessions = _sessionize_sorted(series.account_id, obs_events, gap_minutes)
    if len(sessions) >= 2:
        gaps = [
            (b.start - a.end).total_seconds() / 60.0
            for a, b in zip(sessions, sessions[1:])
        ]
        out["intersession_gap_mean_minutes"] = float(np.mean(gaps))
        out["intersession_gap_max_minutes"] = float(np.max(gaps))
    else:
        out["intersession_gap_mean_minutes"] = 0.0
        out["intersession_gap_max_minutes"] = 0.0
    return out


def overall_features(
    series: DailySeries,
    timeline: PlayerTimeline,
    layout: WindowLayout,
    gap_minutes: float = DEFAULT_SESSION_GAP_MINUTES,
) -> dict[str, float]:
    """Channel statistics plus whole-window scalars, merged."""
    out = channel_stats(series)
    out.update(period_summary(series, timeline, layout, gap_minutes))
    return out


def _polyfit_padded(
    x: np.ndarray, y: np.ndarray, degree: int, diagnostics: list[str], label: str
) -> np.ndarray:
    """Least-squares polynomial coefficients (low order first), zero-padded
    to ``degree + 1`` when fewer points force a lower degree."""
    usable = min(degree, x.size - 1)
    if usable < degree:
        diagnostics.append(
            f"{label}: only {x.size} weeks; degree reduced to {usable}"
        )
    coeffs = np.polynomial.polynomial.polyfit(x, y, usable)
    out = np.zeros(degree + 1)
    out[: usable + 1] = coeffs
    return out


def weekly_features(
    series: DailySeries, grid: WeekGrid
) -> tuple[dict[str, float], list[str]]:
    """Weekly sums and their dispersion/trend summaries per channel."""
    if series.n_days % 7 != 0:
        raise ValidationError("observation span must cover whole weeks")
    n_weeks = series.n_days // 7
    sums = series.values.reshape(n_weeks, 7, len(series.channels)).sum(axis=1)
    weeks = np.arange(n_weeks, dtype=float)
    out: dict[str, float] = {}
    diagnostics: list[str] = []
    for i, ch in enumerate(series.channels):
        y = sums[:, i]
        for w in range(n_weeks):
            out[f"{ch}_week_sum_w{w:02d}"] = float(y[w])
        mean = y.mean()
        out[f"{ch}_weekly_cv"] = float(y.std() / mean) if mean != 0.0 else 0.0
        lin = _polyfit_padded(weeks, y, 1, diagnostics, f"{ch} linear")
        out[f"{ch}_weekly_lin_c0"] = float(lin[0])
        out[f"{ch}_weekly_lin_c1"] = float(lin[1])
        quad = _polyfit_padded(weeks, y, 2, diagnostics, f"{ch} quadratic")
        out[f"{ch}_weekly_quad_c0"] = float(quad[0])
        out[f"{ch}_weekly_quad_c1"] = float(quad[1])
        out[f"{ch}_weekly_quad_c2"] = float(quad[2])
    return out, diagnostics


def time_weights(n_days: int) -> np.ndarray:
    """Recency weights: the most recent day weighs 1, k days earlier 1/(k+1).

    The query day is the day after the window's final day, and a value on
    day ``t`` is weighted by the reciprocal of its distance in days to the
    query day.
    """
    if n_days < 1:
        raise ValidationError("need at least one day")
    return 1.0 / (n_days - np.arange(n_days, dtype=float))


def time_weighted(series: DailySeries) -> dict[str, float]:
    """Recency-weighted sum of every channel."""
    w = time_weights(series.n_days)
    totals = w @ series.values
    return {
        f"{ch}_timeweighted": float(totals[i]) for i, ch in enumerate(series.channels)
    }


def dominant_frequency(
    values: Sequence[float] | np.ndarray, exclude_dc: bool = True
) -> tuple[int, float]:
    """Strongest frequency bin of a series via a direct DFT.

    Scans bins ``1 .. N//2`` (or from 0 when ``exclude_dc`` is false) of the
    plain O(N^2) transform, returning ``(bin, amplitude)`` with ties broken
    toward the lowest bin.  A constant series has no non-DC energy and
    returns the ``(0, 0.0)`` sentinel.
    """
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValidationError("dominant_frequency needs a 1-D series of length >= 2")
    if not np.isfinite(x).all():
        raise ValidationError("series must be finite")
    n = x.size
    start = 1 if exclude_dc else 0
    bins = np.arange(start, n // 2 + 1)
    angles = 2.0 * np.pi * np.outer(bins, np.arange(n)) / n
    re = np.cos(angles) @ x
    im = -np.sin(angles) @ x
    mags = np.hypot(re, im)
    dc = abs(x.sum())
    best = int(np.argmax(mags))
    if exclude_dc and mags[best] <= 1e-9 * max(1.0, dc):
        return 0, 0.0
    return int(bins[best]), float(mags[best])


def frequency_features(series: DailySeries) -> dict[str, float]:
    out: dict[str, float] = {}
    for i, ch in enumerate(series.channels):
        bin_, amp = dominant_frequency(series.values[:, i])
        out[f"{ch}_domfreq_bin"] = float(bin_)
        out[f"{ch}_domfreq_amp"] = amp
    return out


# ---------------------------------------------------------------------------
# quantile remapping


@dataclass
class QuantileMap:
    """Mid-rank empirical CDF of a training column."""

    sorted_values: np.ndarray

    @classmethod
    def fit(cls, values: Sequence[float] | np.ndarray) -> "QuantileMap":
        arr = np.asarray(values, dtype=float)
        if arr.size == 0:
            raise FitError("cannot fit a quantile map on an empty column")
        if not np.isfinite(arr).all():
            raise ValidationError("quantile map input must be finite")
        return cls(np.sort(arr))


def fit_quantile_map(values: Sequence[float] | np.ndarray) -> QuantileMap:
    return QuantileMap.fit(values)


def apply_quantile(qmap: QuantileMap, x: float | np.ndarray) -> float | np.ndarray:
    """Map values through ``(count_less + 0.5 * count_equal) / n``.

    Monotone non-decreasing in ``x``; values below the training minimum map
    to 0 and above the maximum to 1.
    """
    arr = np.asarray(x, dtype=float)
    n = qmap.sorted_values.size
    lo = np.searchsorted(qmap.sorted_values, arr, side="left")
    hi = np.searchsorted(qmap.sorted_values, arr, side="right")
    out = (lo + 0.5 * (hi - lo)) / n
    if np.isscalar(x) or arr.ndim == 0:
        return float(out)
    return out


def save_quantile_maps(path: str | Path, maps: Mapping[str, QuantileMap]) -> None:
    payload = {
        "format_version": 1,
        "columns": {name: maps[name].sorted_values.tolist() for name in sorted(maps)},
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle)
        handle.write("\n")


def load_quantile_maps(path: str | Path) -> dict[str, QuantileMap]:
    with open(path, encoding="utf-8") as handle:
        payload = json.load(handle)
    if payload.get("format_version") != 1 or "columns" not in payload:
        raise FormatError("unrecognized quantile map file")
    return {
        name: QuantileMap(np.asarray(vals, dtype=float))
        for name, vals in payload["columns"].items()
    }


# ---------------------------------------------------------------------------
# the feature matrix


@dataclass
class FeatureMatrix:
    """Accounts x named columns, accounts sorted, columns lexicographic."""

    accounts: tuple[str, ...]
    columns: tuple[str, ...]
    values: np.ndarray  # (n_accounts, n_columns) float64

    def __post_init__(self) -> None:
        if self.values.shape != (len(self.accounts), len(self.columns)):
            raise ValidationError("matrix shape does not match its labels")
        if list(self.accounts) != sorted(self.accounts):
            raise ValidationError("accounts must be sorted")
        if list(self.columns) != sorted(self.columns):
            raise ValidationError("columns must be lexicographically sorted")
        if len(set(self.columns)) != len(self.columns):
            raise ValidationError("duplicate column names")
        if not np.isfinite(self.values).all():
            raise ValidationError("matrix values must be finite")

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.columns.index(name)]
        except ValueError as exc:
            raise SchemaError(f"no column named {name!r}") from exc

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            handle.write("account_id," + ",".join(self.columns) + "\n")
            for i, account in enumerate(self.accounts):
                rendered = ",".join(repr(float(v)) for v in self.values[i])
                handle.write(f"{account},{rendered}\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "FeatureMatrix":
        with open(path, newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if not header or header[0] != "account_id":
                raise FormatError("feature matrix must start with account_id")
            columns = tuple(header[1:])
            accounts: list[str] = []
            rows: list[list[float]] = []
            for line_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(columns) + 1:
                    raise FormatError(f"matrix line {line_no}: wrong field count")
                accounts.append(row[0])
                try:
                    rows.append([float(v) for v in row[1:]])
                except ValueError as exc:
                    raise FormatError(f"matrix line {line_no}: bad float") from exc
        values = np.asarray(rows, dtype=float) if rows else np.empty((0, len(columns)))
        return cls(tuple(accounts), columns, values)


def build_matrix(
    timelines: Mapping[str, PlayerTimeline],
    layout: WindowLayout,
    catalog: EventCatalog = DEFAULT_CATALOG,
    families: Sequence[str] = FAMILIES,
    quantile: bool = False,
    quantile_maps: Mapping[str, QuantileMap] | None = None,
    gap_minutes: float = DEFAULT_SESSION_GAP_MINUTES,
) -> FeatureMatrix:
    """Assemble the feature matrix for every account with observed activity.

    ``families`` selects which feature families contribute columns.  With
    ``quantile`` set, every column is remapped through mid-rank quantile
    maps; pass ``quantile_maps`` (fit on the training matrix) to transform a
    test cohort, otherwise maps are fit on this matrix itself.  Accounts
    without observation-window events carry no label and are skipped.
    """
    bad = [f for f in families if f not in FAMILIES]
    if bad:
        raise ConfigError(f"unknown feature families: {', '.join(bad)}")
    if not families:
        raise ConfigError("at least one feature family is required")

    obs_start, obs_end = layout.observation
    cohort = sorted(
        a
        for a, tl in timelines.items()
        if any(obs_start <= e.timestamp < obs_end for e in tl.events)
    )
    if not cohort:
        raise ValidationError("no account has observation-window activity")

    rows: list[np.ndarray] = []
    columns: tuple[str, ...] | None = None
    wants = set(families)
    for account in cohort:
        tl = timelines[account]
        series = daily_series(tl, layout, catalog, gap_minutes)
        feats: dict[str, float] = {}
        if "daily-stats" in wants:
            feats.update(channel_stats(series))
        if "overall" in wants:
            feats.update(period_summary(series, tl, layout, gap_minutes))
        if "weekly" in wants:
            weekly, _ = weekly_features(series, layout.grid)
            feats.update(weekly)
        if "time-weighted" in wants:
            feats.update(time_weighted(series))
        if "frequency" in wants:
            feats.update(frequency_features(series))
        names = tuple(sorted(feats))
        if columns is None:
            columns = names
        elif names != columns:
            raise ValidationError("inconsistent feature names across accounts")
        rows.append(np.array([feats[c] for c in columns]))

    matrix = FeatureMatrix(tuple(cohort), columns or (), np.vstack(rows))
    if quantile:
        maps = (
            dict(quantile_maps)
            if quantile_maps is not None
            else fit_matrix_quantiles(matrix)
        )
        matrix = apply_matrix_quantiles(matrix, maps)
    return matrix


def fit_matrix_quantiles(matrix: FeatureMatrix) -> dict[str, QuantileMap]:
    return {
        name: QuantileMap.fit(matrix.values[:, i])
        for i, name in enumerate(matrix.columns)
    }


def apply_matrix_quantiles(
    matrix: FeatureMatrix, maps: Mapping[str, QuantileMap]
) -> FeatureMatrix:
    missing = [c for c in matrix.columns if c not in maps]
    if missing:
        raise SchemaError(f"quantile maps missing columns: {', '.join(missing[:5])}")
    transformed = np.column_stack(
        [apply_quantile(maps[name], matrix.column(name)) for name in matrix.columns]
    )
    return FeatureMatrix(matrix.accounts, matrix.columns, transformed)
