"""Deterministic synthetic event-log generator with a planted churn signal.

One :func:`generate` call emits up to three dataset windows (``train``,
``test1``, ``test2``) as canonical log CSV files plus a ``truth.csv`` with
per-account ground truth.  Each window covers observation + gap + churn
weeks on the shared Wednesday grid; the test windows use eight observation
weeks and start 17 and 37 weeks after the epoch so the three periods never
overlap, and each holds three quarters of the train population size.

Every player draws from an independent PRNG substream keyed by
``(seed, global player index)``, so output is byte-identical across runs
and independent of generation order.  Churners receive a quit day at or
before the churn-window start (never inside it), with daily activity
fading linearly over their final two weeks in proportion to
``signal_strength``; ground truth is then derived from the realized events,
which makes it agree with the labeling rules by construction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, FormatError
from .events import (
    DEFAULT_CATALOG,
    Event,
    WeekGrid,
    WEEKEND_DAY_INDICES,
    format_timestamp,
    serialize_events,
)
from .labeling import SurvivalLabel, WindowLayout, make_layout

#: Default grid epoch: a Wednesday 00:00 UTC in spring 2016.
DEFAULT_EPOCH = datetime(2016, 4, 6, tzinfo=timezone.utc)

#: Named signal-strength presets; ``strong`` fades a churner's activity all
#: the way to zero by the quit day, ``weak`` only dims it.
SIGNAL_PRESETS: dict[str, float] = {"weak": 0.35, "medium": 0.7, "strong": 1.0}

#: An account counts as still alive (right-censored) when its final event
#: falls within this many days of the end of the generated period.
CENSOR_MARGIN_DAYS = 1

#: Days over which a churner's activity decays before the quit day.
DECAY_DAYS = 14

#: Earliest quit day (players always get two weeks of history first).
MIN_QUIT_DAY = 14

WINDOW_NAMES = ("train", "test1", "test2")
TRUTH_HEADER = ("account_id", "churned", "survival_days", "censored")

_TEST_OBS_WEEKS = 8
_TEST_START_WEEKS = {"test1": 17, "test2": 37}

# Non-first event kinds are drawn with geometrically decaying weights, so
# low ids dominate; the first event of every session is EnterWorld (id 0).
_KIND_IDS = np.arange(1, 20)
_KIND_PROBS = 0.78 ** _KIND_IDS.astype(float)
_KIND_PROBS /= _KIND_PROBS.sum()

_COMBAT_KINDS = frozenset((2, 3, 4, 5))
_OBJECT_KINDS = frozenset((8, 9, 10, 11, 12))
_GUILD_KINDS = frozenset((16, 17, 18))


@dataclass(frozen=True)
class GenConfig:
    """Generator knobs; defaults mirror the benchmark's training window."""

    seed: int = 0
    n_players: int = 4000
    churn_rate: float = 0.30
    observation_weeks: int = 6
    gap_weeks: int = 3
    churn_window_weeks: int = 5
    signal_strength: float = 1.0
    weekend_boost: float = 1.5
    events_per_active_day_mean: float = 6.0

    def validate(self) -> None:
        if self.n_players < 0:
            raise ConfigError("n_players must be >= 0")
        if not 0.0 <= self.churn_rate <= 1.0:
            raise ConfigError("churn_rate must be within [0, 1]")
        if self.observation_weeks < 1:
            raise ConfigError("observation_weeks must be >= 1")
        if self.gap_weeks < 0:
            raise ConfigError("gap_weeks must be >= 0")
        if self.churn_window_weeks < 1:
            raise ConfigError("churn_window_weeks must be >= 1")
        if self.signal_strength < 0.0:
            raise ConfigError("signal_strength must be >= 0")
        if self.weekend_boost <= 0.0:
            raise ConfigError("weekend_boost must be > 0")
        if self.events_per_active_day_mean <= 0.0:
            raise ConfigError("events_per_active_day_mean must be > 0")


@dataclass(frozen=True)
class TruthRecord:
    account_id: str
    churned: bool
    last_activity_day: int  # day index on the grid (epoch-based)
    survival_days: int
    censored: bool


@dataclass
class GroundTruth:
    records: dict[str, TruthRecord] = field(default_factory=dict)

    def churn_labels(self) -> dict[str, bool]:
        return {a: r.churned for a, r in self.records.items()}

    def survival_labels(self) -> dict[str, SurvivalLabel]:
        return {
            a: SurvivalLabel(a, r.survival_days, r.censored)
            for a, r in self.records.items()
        }


@dataclass(frozen=True)
class WindowSpec:
    name: str
    start_week: int
    observation_weeks: int
    n_players: int
    prefix: str
    seed_base: int  # first global player index of this window


@dataclass
class GenResult:
    files: dict[str, Path]
    truth_file: Path
    truth: GroundTruth
    layouts: dict[str, WindowLayout]


def window_specs(config: GenConfig) -> dict[str, WindowSpec]:
    """Window geometry and population sizes implied by a config."""
    n_test = int(round(0.75 * config.n_players))
    return {
        "train": WindowSpec("train", 0, config.observation_weeks, config.n_players, "tr", 0),
        "test1": WindowSpec(
            "test1", _TEST_START_WEEKS["test1"], _TEST_OBS_WEEKS, n_test, "t1",
            config.n_players,
        ),
        "test2": WindowSpec(
            "test2", _TEST_START_WEEKS["test2"], _TEST_OBS_WEEKS, n_test, "t2",
            config.n_players + n_test,
        ),
    }


def window_layouts(
    config: GenConfig, epoch: datetime = DEFAULT_EPOCH
) -> dict[str, WindowLayout]:
    layouts = {}
    for name, spec in window_specs(config).items():
        total = spec.observation_weeks + config.gap_weeks + config.churn_window_weeks
        grid = WeekGrid.spanning(epoch, spec.start_week, total)
        layouts[name] = make_layout(
            grid,
            grid.period_start,
            spec.observation_weeks,
            config.gap_weeks,
            config.churn_window_weeks,
        )
    return layouts


def _plant_session(
    account: str, char_id: str, level: int, day_start: datetime
) -> list[Event]:
    """A minimal fixed midday session used to guarantee window activity."""
    noon = day_start + timedelta(hours=12)
    return [
        Event(account, char_id, 0, noon, level),
        Event(account, char_id, 2, noon + timedelta(seconds=60), level, level),
        Event(account, char_id, 19, noon + timedelta(seconds=120), level),
    ]


def _simulate_player(
    account: str,
    rng: np.random.Generator,
    config: GenConfig,
    day0: int,
    n_days: int,
    obs_days: int,
    churn_start: int,
    quit_day: int | None,
    epoch: datetime,
) -> list[Event]:
    """Chronological events for one player over the window period."""
    horizon = n_days if quit_day is None else quit_day

    n_chars = 1 + int(rng.random() < 0.35) + int(rng.random() < 0.15)
    char_ids = [f"{account}c{j}" for j in range(n_chars)]
    base_levels = rng.integers(10, 46, n_chars)
    growth = rng.uniform(0.05, 0.5, n_chars)
    n_guilds = 1 + int(rng.random() < 0.3)
    guild_ids = [f"g{int(g):04d}" for g in rng.integers(0, 500, n_guilds)]

    lam_base = config.events_per_active_day_mean * rng.lognormal(-0.125, 0.5)
    p_active = 0.55 + 0.35 * rng.random()

    days = np.arange(horizon)
    weekday = (day0 + days) % 7
    boost = np.where(np.isin(weekday, WEEKEND_DAY_INDICES), config.weekend_boost, 1.0)
    decay = np.ones(horizon)
    if quit_day is not None and config.signal_strength > 0.0:
        tail = days >= quit_day - DECAY_DAYS
        ramp = (quit_day - days[tail]) / float(DECAY_DAYS)
        decay[tail] = np.clip(1.0 - config.signal_strength * (1.0 - ramp), 0.0, 1.0)

    active = rng.random(horizon) < p_active * decay
    counts = rng.poisson(lam_base * boost * decay * active)
    active_days = np.nonzero(counts)[0]
    day_counts = counts[active_days]
    total = int(day_counts.sum())

    n_sessions = np.minimum(1 + rng.poisson(0.5, active_days.size), day_counts)
    total_sessions = int(n_sessions.sum())

    mix = rng.random(total_sessions) < 0.6
    hours = np.where(
        mix,
        rng.normal(19.5, 2.5, total_sessions),
        rng.normal(13.5, 3.5, total_sessions),
    )
    start_secs = (np.clip(hours, 0.2, 23.4) * 3600.0).astype(np.int64)
    session_chars = rng.integers(0, n_chars, total_sessions)

    kind_pool = rng.choice(_KIND_IDS, max(total - total_sessions, 0), p=_KIND_PROBS)
    gap_pool = rng.uniform(18.0, 480.0, total)  # seconds between session events
    tgt_pool = rng.integers(-2, 4, total)
    money_pool = rng.integers(10, 500, total)
    obj_pool = rng.integers(1, 200, total)
    cnt_pool = rng.integers(1, 6, total)
    equip_pool = rng.uniform(0.0, 50.0, total)
    guild_pool = rng.integers(0, n_guilds, total)

    char_levels = np.minimum(
        60, base_levels[:, None] + (growth[:, None] * days[None, :]).astype(np.int64)
    )

    events: list[Event] = []
    si = 0  # session cursor
    ki = 0  # sampled-kind cursor
    ei = 0  # per-event pool cursor
    for d_pos, day in enumerate(active_days):
        remaining = int(day_counts[d_pos])
        k_sessions = int(n_sessions[d_pos])
        if k_sessions > 1:
            parts = rng.multinomial(remaining - k_sessions, [1.0 / k_sessions] * k_sessions) + 1
        else:
            parts = np.array([remaining])
        day_session_secs = np.sort(start_secs[si : si + k_sessions])
        day_start = epoch + timedelta(days=int(day0 + day))
        for s_pos in range(k_sessions):
            char_idx = int(session_chars[si + s_pos])
            char_id = char_ids[char_idx]
            level = int(char_levels[char_idx, day])
            sec = float(day_session_secs[s_pos])
            for e_pos in range(int(parts[s_pos])):
                if e_pos == 0:
                    kind = 0
                else:
                    kind = int(kind_pool[ki])
                    ki += 1
                    sec = min(sec + gap_pool[ei], 86399.0)
                ts = day_start + timedelta(seconds=int(sec))
                target_level = None
                money = None
                equip = None
                obj_id = None
                obj_cnt = None
                guild = None
                if kind in _COMBAT_KINDS:
                    target_level = max(1, level + int(tgt_pool[ei]))
                elif kind in (13, 11):
                    money = int(money_pool[ei])
                elif kind in (14, 12):
                    money = -int(money_pool[ei])
                if kind in _OBJECT_KINDS:
                    obj_id = f"item{int(obj_pool[ei]):04d}"
                    obj_cnt = int(cnt_pool[ei])
                    if kind == 10:
                        equip = round(100.0 + 10.0 * level + float(equip_pool[ei]), 2)
                elif kind in _GUILD_KINDS:
                    guild = guild_ids[int(guild_pool[ei])]
                events.append(
                    Event(
                        account, char_id, kind, ts, level,
                        target_level, money, equip, obj_id, obj_cnt, guild,
                    )
                )
                ei += 1
        si += k_sessions

    # Guarantee cohort membership and (for stayers) churn-window activity so
    # realized ground truth matches the designations exactly.
    has_obs = any(day < obs_days for day in active_days)
    if not has_obs:
        lvl = int(char_levels[0, 0])
        events = _plant_session(account, char_ids[0], lvl, epoch + timedelta(days=day0)) + events
    if quit_day is None and not any(day >= churn_start for day in active_days):
        day = churn_start + (n_days - churn_start) // 2
        lvl = int(char_levels[0, min(day, horizon - 1)])
        events.extend(
            _plant_session(account, char_ids[0], lvl, epoch + timedelta(days=int(day0 + day)))
        )

    events.sort(key=lambda e: e.timestamp)
    return events


def _truth_from_events(
    account: str, events: Sequence[Event], day0: int, n_days: int,
    obs_days: int, churn_start: int, epoch: datetime,
) -> TruthRecord:
    epoch_ordinal = epoch.toordinal()
    locals_ = [e.timestamp.toordinal() - epoch_ordinal - day0 for e in events]
    last_local = max(locals_)
    last_obs_local = max(d for d in locals_ if d < obs_days)
    churned = not any(d >= churn_start for d in locals_)
    censored = last_local >= n_days - CENSOR_MARGIN_DAYS
    return TruthRecord(
        account,
        churned,
        day0 + last_local,
        last_local - last_obs_local,
        censored,
    )


def generate(
    config: GenConfig,
    out_dir: str | Path,
    windows: Sequence[str] = WINDOW_NAMES,
    epoch: datetime = DEFAULT_EPOCH,
) -> GenResult:
    """Write one log CSV per requested window plus ``truth.csv``.

    Files are account-major (ascending account id, chronological within an
    account).  Repeated calls with one config produce byte-identical files;
    window content does not depend on which other windows were requested.
    """
    config.validate()
    for name in windows:
        if name not in WINDOW_NAMES:
            raise ConfigError(f"unknown window {name!r}; expected {WINDOW_NAMES}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    specs = window_specs(config)
    layouts = window_layouts(config, epoch)
    truth = GroundTruth()
    files: dict[str, Path] = {}

    for name in WINDOW_NAMES:
        if name not in windows:
            continue
        spec = specs[name]
        n_days = (spec.observation_weeks + config.gap_weeks + config.churn_window_weeks) * 7
        obs_days = spec.observation_weeks * 7
        churn_start = (spec.observation_weeks + config.gap_weeks) * 7
        day0 = spec.start_week * 7

        churn_rng = np.random.default_rng((config.seed, 0xC4, spec.seed_base))
        n_churn = int(round(config.churn_rate * spec.n_players))
        churners = set(
            int(i) for i in churn_rng.choice(spec.n_players, n_churn, replace=False)
        ) if spec.n_players else set()
        quit_lo = max(1, min(MIN_QUIT_DAY, churn_start - 1))

        path = out / f"{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as handle:
            header_only = serialize_events([])
            handle.write(header_only)
            for i in range(spec.n_players):
                account = f"{spec.prefix}{i:06d}"
                rng = np.random.default_rng((config.seed, spec.seed_base + i))
                quit_day = None
                if i in churners:
                    quit_day = int(rng.integers(quit_lo, churn_start + 1))
                else:
                    rng.integers(quit_lo, churn_start + 1)  # keep streams aligned
                events = _simulate_player(
                    account, rng, config, day0, n_days, obs_days, churn_start,
                    quit_day, epoch,
                )
                for event in events:
                    handle.write(_row(event))
                truth.records[account] = _truth_from_events(
                    account, events, day0, n_days, obs_days, churn_start, epoch
                )
        files[name] = path

    truth_file = out / "truth.csv"
    write_truth(truth_file, truth)
    return GenResult(files, truth_file, truth, {n: layouts[n] for n in windows})


def _row(e: Event) -> str:
    # mirror events.serialize_events row formatting, streaming-friendly
    return (
        f"{e.account_id},{e.char_id},{e.log_id},{format_timestamp(e.timestamp)},"
        f"{'' if e.actor_level is None else e.actor_level},"
        f"{'' if e.target_level is None else e.target_level},"
        f"{'' if e.money_delta is None else e.money_delta},"
        f"{'' if e.equip_score is None else repr(e.equip_score)},"
        f"{'' if e.object_id is None else e.object_id},"
        f"{'' if e.object_count is None else e.object_count},"
        f"{'' if e.guild_id is None else e.guild_id}\n"
    )


def write_truth(path: str | Path, truth: GroundTruth) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        handle.write(",".join(TRUTH_HEADER) + "\n")
        for account in sorted(truth.records):
            r = truth.records[account]
            handle.write(
                f"{account},{1 if r.churned else 0},{r.survival_days},"
                f"{1 if r.censored else 0}\n"
            )


def read_truth(path: str | Path) -> dict[str, tuple[bool, int, bool]]:
    """Read ``truth.csv`` as account -> (churned, survival_days, censored)."""
    out: dict[str, tuple[bool, int, bool]] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = tuple(next(reader, ()))
        if header != TRUTH_HEADER:
            raise FormatError(f"truth header must be {','.join(TRUTH_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4 or row[1] not in "01" or row[3] not in "01":
                raise FormatError(f"truth line {line_no}: malformed row")
            if row[0] in out:
                raise FormatError(f"truth line {line_no}: duplicate {row[0]}")
            out[row[0]] = (row[1] == "1", int(row[2]), row[3] == "1")
    return out


def resolve_signal(value: str) -> float:
    """Interpret a CLI signal-strength value: preset name or float literal."""
    if value in SIGNAL_PRESETS:
        return SIGNAL_PRESETS[value]
    try:
        return float(value)
    except ValueError as exc:
        raise ConfigError(
            f"signal strength {value!r} is neither a preset "
            f"({', '.join(SIGNAL_PRESETS)}) nor a number"
        ) from exc
