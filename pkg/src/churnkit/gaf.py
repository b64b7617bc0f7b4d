"""Gramian angular field encodings of daily activity series.

A series is min-max rescaled into ``[-1, 1]``, read as cosines of polar
angles, and expanded into the symmetric matrix ``G[j, k] =
cos(phi_j + phi_k)``.  The module also stacks a fixed-size multi-channel
image (13 channels x 56 days by default) of per-row rescaled daily
channels, which is the raw input format for image-based models downstream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, FormatError, ValidationError
from .features import DailySeries

IMAGE_CHANNELS = 13
IMAGE_DAYS = 56

_CLAMP_TOL = 1e-12


@dataclass
class NormalizedSeries:
    """A series rescaled into [-1, 1]; degenerate inputs map to all zeros."""

    values: np.ndarray
    source_min: float
    source_max: float
    diagnostics: list[str] = field(default_factory=list)


def normalize(series: Sequence[float] | np.ndarray) -> NormalizedSeries:
    """Rescale so the minimum maps to -1 and the maximum to +1, exactly.

    Uses ``((x - max) + (x - min)) / (max - min)``.  The extreme elements
    are snapped to exactly +-1 so downstream ``arccos`` stays inside its
    domain regardless of rounding; a constant series has no scale and maps
    to all zeros with a diagnostic.  The result is invariant under
    positive-affine transforms of the input.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValidationError("normalize expects a non-empty 1-D series")
    if not np.isfinite(x).all():
        raise ValidationError("series must be finite")
    lo = float(x.min())
    hi = float(x.max())
    if hi == lo:
        return NormalizedSeries(
            np.zeros_like(x), lo, hi, ["constant series mapped to zeros"]
        )
    scaled = ((x - hi) + (x - lo)) / (hi - lo)
    scaled[x == hi] = 1.0
    scaled[x == lo] = -1.0
    return NormalizedSeries(scaled, lo, hi)


@dataclass
class PolarSeries:
    angles: np.ndarray  # phi = arccos(scaled value), in [0, pi]
    radii: np.ndarray  # i / N for 1-based positions


def to_polar(norm: NormalizedSeries) -> PolarSeries:
    """Angles via arccos with tolerance-limited clamping at the domain edge."""
    v = norm.values
    beyond = np.maximum(np.abs(v) - 1.0, 0.0)
    if beyond.max(initial=0.0) > _CLAMP_TOL:
        raise ValidationError(
            f"normalized value exits [-1, 1] by {beyond.max():.3e}"
        )
    clamped = np.clip(v, -1.0, 1.0)
    n = v.size
    return PolarSeries(np.arccos(clamped), np.arange(1, n + 1) / n)


def gaf_encode(series: Sequence[float] | np.ndarray) -> np.ndarray:
    """The N x N field ``cos(phi_j + phi_k)`` of a series.

    Exactly symmetric (the angle sums are computed once per unordered
    pair position), with diagonal ``cos(2 phi_j) = 2 v_j^2 - 1``.
    """
    polar = to_polar(normalize(series))
    return np.cos(np.add.outer(polar.angles, polar.angles))


def select_image_channels(
    series_list: Sequence[DailySeries], count: int = IMAGE_CHANNELS
) -> list[str]:
    """The ``count`` channels with the highest pooled day-to-day variance.

    Ties break toward the lexicographically smaller channel name so the
    selection is deterministic for any input order.
    """
    if not series_list:
        raise ValidationError("need at least one series to rank channels")
    channels = series_list[0].channels
    if count > len(channels):
        raise ConfigError(
            f"asked for {count} channels but only {len(channels)} exist"
        )
    pooled = np.zeros(len(channels))
    for series in series_list:
        if series.channels != channels:
            raise ValidationError("series disagree on channel names")
        pooled += series.values.var(axis=0)
    ranked = sorted(zip(-pooled, channels))  # variance desc, then name asc
    return [name for _, name in ranked[:count]]


def stack_image(
    series: DailySeries,
    channels: Sequence[str],
    days: int = IMAGE_DAYS,
) -> tuple[np.ndarray, list[str]]:
    """Stack selected channels into a (len(channels), days) image.

    Takes the trailing ``days`` observation days (zero-padding on the left,
    with a diagnostic, when the window is shorter) and rescales each row
    into [-1, 1] independently; constant rows become all zeros.
    """
    if len(channels) != IMAGE_CHANNELS:
        raise ConfigError(
            f"an image needs exactly {IMAGE_CHANNELS} channels, got {len(channels)}"
        )
    if days < 1:
        raise ConfigError("days must be >= 1")
    diagnostics: list[str] = []
    image = np.zeros((len(channels), days))
    for r, name in enumerate(channels):
        raw = series.channel(name)
        if raw.size >= days:
            window = raw[-days:]
        else:
            diagnostics.append(
                f"{name}: only {raw.size} days available; left-padded with zeros"
            )
            window = np.concatenate([np.zeros(days - raw.size), raw])
        norm = normalize(window)
        diagnostics.extend(f"{name}: {msg}" for msg in norm.diagnostics)
        image[r] = norm.values
    return image, diagnostics


# ---------------------------------------------------------------------------
# matrix dumps (CSV and binary)


def write_matrix_csv(path: str | Path, matrix: np.ndarray) -> None:
    if matrix.ndim != 2:
        raise ValidationError("expected a 2-D matrix")
    with open(path, "w", newline="", encoding="utf-8") as handle:
        for row in matrix:
            handle.write(",".join(repr(float(v)) for v in row) + "\n")


def read_matrix_csv(path: str | Path) -> np.ndarray:
    rows = []
    with open(path, newline="", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    return np.asarray(rows, dtype=float)


def write_matrix_binary(path: str | Path, matrix: np.ndarray) -> None:
    """Little-endian dump: u32 rows, u32 cols, then row-major float64."""
    if matrix.ndim != 2:
        raise ValidationError("expected a 2-D matrix")
    rows, cols = matrix.shape
    with open(path, "wb") as handle:
        handle.write(struct.pack("<II", rows, cols))
        handle.write(np.ascontiguousarray(matrix, dtype="<f8").tobytes())


def read_matrix_binary(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise FormatError("binary matrix file is truncated")
    rows, cols = struct.unpack("<II", blob[:8])
    expected = 8 + rows * cols * 8
    if len(blob) != expected:
        raise FormatError(
            f"binary matrix length {len(blob)} != expected {expected}"
        )
    return np.frombuffer(blob[8:], dtype="<f8").reshape(rows, cols).copy()
