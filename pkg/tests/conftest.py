"""Shared fixtures: compact event builders and a small generated dataset."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

import pytest

from churnkit.events import Event, WeekGrid

EPOCH = datetime(2016, 4, 6, tzinfo=timezone.utc)  # a Wednesday


def at(day: float, hour: float = 12.0) -> datetime:
    """An instant ``day`` days and ``hour`` hours after the epoch."""
    return EPOCH + timedelta(days=day, hours=hour)


def ev(account: str, when: datetime, log_id: int = 0, **fields) -> Event:
    return Event(account, f"{account}.c0", log_id, when, **fields)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """One generated train window shared by tests that just need real files."""
    from churnkit.synth import GenConfig, generate

    out = tmp_path_factory.mktemp("smalldata")
    config = GenConfig(seed=11, n_players=60, events_per_active_day_mean=4.0)
    result = generate(config, out, windows=("train",))
    return result


@pytest.fixture()
def grid() -> WeekGrid:
    return WeekGrid.spanning(EPOCH, 0, 14)
