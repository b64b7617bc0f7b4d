"""Churn prediction and survival analysis toolkit for online-game event logs.

The package covers the full benchmark protocol end to end: canonical event-log
parsing and sessionization on a Wednesday-aligned week grid, a deterministic
synthetic log generator with planted churn signal, window-based churn and
survival labeling, hand-rolled feature families, Gramian angular field
encodings, from-scratch baseline models, and the two-track scoring rules.
"""

from __future__ import annotations

__version__ = "0.1.0"
