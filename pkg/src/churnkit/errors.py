"""Exception hierarchy shared by every pipeline stage.

Each error carries a stable machine-readable ``kind`` so the command line
front end can emit single-line ``kind: message`` diagnostics on stderr and
map kinds to exit codes (2 for configuration mistakes, 1 for everything
else that is recoverable).
"""

from __future__ import annotations


class ToolkitError(Exception):
    """Base class for all recoverable toolkit errors."""

    kind = "error"
    exit_code = 1

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ConfigError(ToolkitError):
    """Bad flag value, unknown option combination, malformed config file."""

    kind = "config_error"
    exit_code = 2


class FormatError(ToolkitError):
    """Malformed external file: header, grammar, duplicate keys."""

    kind = "format_error"


class ValidationError(ToolkitError):
    """Well-formed input whose values violate a contract (NaN, negatives)."""

    kind = "validation_error"


class AlignmentError(ToolkitError):
    """An instant that must sit on a week boundary does not."""

    kind = "alignment_error"


class WindowError(ToolkitError):
    """Evaluation instant or window geometry is inconsistent."""

    kind = "window_error"


class CohortError(ToolkitError):
    """Account lacks observation-window activity and has no label."""

    kind = "cohort_error"


class CardinalityError(ToolkitError):
    """Too few rows for the requested operation (clusters, split)."""

    kind = "cardinality_error"


class SchemaError(ToolkitError):
    """Feature columns do not match what a model was trained on."""

    kind = "schema_error"


class CoverageError(ToolkitError):
    """A submission or prediction set misses required accounts."""

    kind = "coverage_error"


class DegenerateLabelsError(ToolkitError):
    """Classification target contains a single class."""

    kind = "degenerate_labels_error"


class SingularSystemError(ToolkitError):
    """Linear system has no unique solution; regularization required."""

    kind = "singular_system_error"


class UndefinedScoreError(ToolkitError):
    """Score combination undefined for the given inputs (zero divisor)."""

    kind = "undefined_score_error"


class FitError(ToolkitError):
    """Estimator cannot be fit on the provided data."""

    kind = "fit_error"
