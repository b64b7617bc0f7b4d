"""Baseline models trained from scratch on a feature matrix.

Three estimators cover the benchmark's reference approaches:

* **Logistic regression with elastic-net penalty**, minimized by proximal
  gradient descent (ISTA) with backtracking line search.  The l1 term is
  handled by soft-thresholding; the intercept is never penalized.
* **Ridge regression** by solving the normal equations
  ``(X'X + l2 I) w = X'y`` directly.
* **Extremely randomized trees**: no bootstrap resampling; every node draws
  a random feature subset and a single uniform threshold per candidate
  feature, and keeps the candidate with the best impurity decrease (Gini
  for classification, variance for regression).

Linear models standardize features internally (zero-variance columns get a
unit-std sentinel and a zero weight).  All fits are deterministic given the
config seed and invariant to row order: rows are canonicalized by account
id before training.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DegenerateLabelsError,
    FormatError,
    SchemaError,
    SingularSystemError,
    ValidationError,
)
from .features import FeatureMatrix

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by every estimator (unused fields ignored)."""

    l1: float = 0.0
    l2: float = 0.0
    max_iters: int = 2000
    tol: float = 1e-8
    n_trees: int = 50
    min_samples_split: int = 50
    k_features: int | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.l1 < 0 or self.l2 < 0:
            raise ConfigError("penalties must be non-negative")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ConfigError("tol must be > 0")
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        if self.min_samples_split < 2:
            raise ConfigError("min_samples_split must be >= 2")
        if self.k_features is not None and self.k_features < 1:
            raise ConfigError("k_features must be >= 1")


@dataclass
class LinearModel:
    kind: str  # "logistic" | "ridge"
    columns: tuple[str, ...]
    weights: np.ndarray
    intercept: float
    means: np.ndarray
    stds: np.ndarray
    objective_history: list[float] = field(default_factory=list)


def _canonical(matrix: FeatureMatrix, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float)
    if y.shape != (len(matrix.accounts),):
        raise ValidationError("label vector length does not match matrix rows")
    if not np.isfinite(y).all():
        raise ValidationError("labels must be finite")
    # FeatureMatrix guarantees sorted accounts and finite values already.
    return matrix.values.astype(float, copy=True), y


def _standardize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    means = x.mean(axis=0)
    stds = x.std(axis=0)
    stds = np.where(stds == 0.0, 1.0, stds)  # zero-variance sentinel
    return (x - means) / stds, means, stds


def _nll(z: np.ndarray, y: np.ndarray) -> float:
    # mean negative log-likelihood; log(1 + e^z) - y z, computed stably
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def logistic_objective(
    x: np.ndarray, y: np.ndarray, w: np.ndarray, b: float, l1: float, l2: float
) -> float:
    z = x @ w + b
    return _nll(z, y) + l1 * float(np.abs(w).sum()) + 0.5 * l2 * float(w @ w)


def logistic_gradient(
    x: np.ndarray, y: np.ndarray, w: np.ndarray, b: float, l2: float
) -> tuple[np.ndarray, float]:
    """Gradient of the smooth part (NLL + l2 ridge term; l1 excluded)."""
    p = _sigmoid(x @ w + b)
    resid = (p - y) / y.size
    return x.T @ resid + l2 * w, float(resid.sum())


def _soft_threshold(v: np.ndarray, amount: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - amount, 0.0)


def fit_logistic(
    matrix: FeatureMatrix,
    y: Sequence[float] | np.ndarray,
    cfg: TrainConfig = TrainConfig(),
    *,
    standardize: bool = True,
    fit_intercept: bool = True,
) -> LinearModel:
    """Elastic-net logistic regression via fixed-step proximal gradient.

    Minimizes ``mean_nll + l1 ||w||_1 + (l2 / 2) ||w||_2^2`` from a zero
    start with step size ``1 / L``, where ``L`` is the exact global
    Lipschitz bound ``lam_max(X'X) / (4n) + l2`` (intercept column
    included).  Fixed-step ISTA descends monotonically, so the recorded
    objective history is non-increasing.  Stops when the gradient mapping
    ``(old - new) / step`` has inf-norm at most ``tol``, a first-order
    optimality bound: with ``l1 = 0`` the returned point's gradient
    inf-norm is itself on the order of ``tol``.
    """
    cfg.validate()
    x, y = _canonical(matrix, y)
    classes = np.unique(y)
    if not np.isin(classes, (0.0, 1.0)).all():
        raise ValidationError("logistic labels must be 0/1")
    if classes.size < 2:
        raise DegenerateLabelsError("labels contain a single class")

    if standardize:
        xs, means, stds = _standardize(x)
    else:
        xs = x
        means = np.zeros(x.shape[1])
        stds = np.ones(x.shape[1])

    n = xs.shape[0]
    design = np.hstack([xs, np.ones((n, 1))]) if fit_intercept else xs
    lam_max = float(np.linalg.eigvalsh(design.T @ design)[-1]) if design.size else 0.0
    lipschitz = lam_max / (4.0 * n) + cfg.l2
    step = 1.0 / max(lipschitz, 1e-12)

    w = np.zeros(xs.shape[1])
    b = 0.0
    history = [logistic_objective(xs, y, w, b, cfg.l1, cfg.l2)]
    for _ in range(cfg.max_iters):
        grad_w, grad_b = logistic_gradient(xs, y, w, b, cfg.l2)
        w_new = _soft_threshold(w - step * grad_w, step * cfg.l1)
        b_new = b - step * grad_b if fit_intercept else 0.0
        mapping = max(
            float(np.abs(w_new - w).max(initial=0.0)), abs(b_new - b)
        ) / step
        w, b = w_new, b_new
        history.append(logistic_objective(xs, y, w, b, cfg.l1, cfg.l2))
        if mapping <= cfg.tol:
            break

    return LinearModel("logistic", matrix.columns, w, float(b), means, stds, history)


def fit_ridge(
    matrix: FeatureMatrix,
    y: Sequence[float] | np.ndarray,
    cfg: TrainConfig = TrainConfig(),
    *,
    standardize: bool = True,
) -> LinearModel:
    """Ridge regression by the normal equations on standardized features.

    Solves ``(X'X + l2 I) w = X'y`` with centered targets; the intercept is
    the target mean.  With ``standardize`` off the raw system is solved and
    the intercept is zero.  With ``l2 = 0`` the system is solved in the
    least-squares sense (centering itself always costs one rank, which is
    harmless), but genuinely collinear feature columns raise a
    singular-system error suggesting regularization.
    """
    cfg.validate()
    x, y = _canonical(matrix, y)
    n, d = x.shape
    if standardize:
        xs, means, stds = _standardize(x)
        intercept = float(y.mean())
        target = y - intercept
    else:
        xs = x
        means = np.zeros(d)
        stds = np.ones(d)
        intercept = 0.0
        target = y

    if cfg.l2 == 0.0:
        design = np.hstack([xs, np.ones((n, 1))]) if standardize else xs
        if np.linalg.matrix_rank(design) < min(n, design.shape[1]):
            raise SingularSystemError(
                "features are collinear; set l2 > 0 to regularize"
            )
        w = np.linalg.lstsq(xs, target, rcond=None)[0]
    else:
        gram = xs.T @ xs + cfg.l2 * np.eye(d)
        w = np.linalg.solve(gram, xs.T @ target)
    return LinearModel("ridge", matrix.columns, w, intercept, means, stds)


# ---------------------------------------------------------------------------
# extremely randomized trees


@dataclass
class TreeSplit:
    feature: int
    threshold: float
    left: "TreeSplit | TreeLeaf"
    right: "TreeSplit | TreeLeaf"


@dataclass
class TreeLeaf:
    n: int
    value: float  # class-1 fraction (classification) or mean target
    counts: tuple[int, int] | None = None  # (n0, n1) for classification


@dataclass
class ExtraTreesModel:
    task: str  # "classification" | "regression"
    columns: tuple[str, ...]
    trees: list["TreeSplit | TreeLeaf"]
    n_trees: int
    min_samples_split: int
    k_features: int
    seed: int


def _gini(counts: np.ndarray, total: np.ndarray) -> np.ndarray:
    # Binary Gini impurity from class-1 counts; vectorized over candidates.
    p = np.divide(counts, total, out=np.zeros_like(counts, dtype=float), where=total > 0)
    return 2.0 * p * (1.0 - p)


def _leaf(y: np.ndarray, task: str) -> TreeLeaf:
    if task == "classification":
        ones = int(y.sum())
        return TreeLeaf(y.size, ones / y.size, (y.size - ones, ones))
    return TreeLeaf(y.size, float(y.mean()))


def _grow(
    x: np.ndarray,
    y: np.ndarray,
    idx: np.ndarray,
    rng: np.random.Generator,
    k: int,
    min_split: int,
    task: str,
) -> "TreeSplit | TreeLeaf":
    """Grow one node depth-first; the RNG is consumed in visiting order."""
    sub_y = y[idx]
    if idx.size < min_split or np.all(sub_y == sub_y[0]):
        return _leaf(sub_y, task)

    d = x.shape[1]
    feats = rng.choice(d, size=min(k, d), replace=False)
    sub_x = x[np.ix_(idx, feats)]
    lo = sub_x.min(axis=0)
    hi = sub_x.max(axis=0)
    usable = lo < hi
    if not usable.any():
        return _leaf(sub_y, task)
    thresholds = np.where(usable, rng.uniform(lo, np.where(usable, hi, lo + 1.0)), lo)

    left_mask = sub_x < thresholds[None, :]
    n_left = left_mask.sum(axis=0)
    valid = usable & (n_left > 0) & (n_left < idx.size)
    if not valid.any():
        return _leaf(sub_y, task)

    n = float(idx.size)
    if task == "classification":
        ones_left = (left_mask & (sub_y[:, None] == 1.0)).sum(axis=0)
        ones_total = float(sub_y.sum())
        n_right = idx.size - n_left
        ones_right = ones_total - ones_left
        parent = _gini(np.array([ones_total]), np.array([n]))[0]
        child = (
            n_left / n * _gini(ones_left.astype(float), n_left.astype(float))
            + n_right / n * _gini(ones_right.astype(float), n_right.astype(float))
        )
        gains = np.where(valid, parent - child, -np.inf)
    else:
        sums_left = left_mask.T @ sub_y
        sq_left = left_mask.T @ (sub_y * sub_y)
        total_sum = float(sub_y.sum())
        total_sq = float((sub_y * sub_y).sum())
        n_l = n_left.astype(float)
        n_r = n - n_l
        with np.errstate(invalid="ignore", divide="ignore"):
            var_left = sq_left / np.maximum(n_l, 1.0) - (sums_left / np.maximum(n_l, 1.0)) ** 2
            sums_right = total_sum - sums_left
            sq_right = total_sq - sq_left
            var_right = sq_right / np.maximum(n_r, 1.0) - (sums_right / np.maximum(n_r, 1.0)) ** 2
        parent_var = total_sq / n - (total_sum / n) ** 2
        child = (n_l / n) * var_left + (n_r / n) * var_right
        gains = np.where(valid, parent_var - child, -np.inf)

    best = int(np.argmax(gains))  # ties keep the first candidate drawn
    if not np.isfinite(gains[best]):
        return _leaf(sub_y, task)

    feature = int(feats[best])
    threshold = float(thresholds[best])
    go_left = x[idx, feature] < threshold
    left_idx = idx[go_left]
    right_idx = idx[~go_left]
    return TreeSplit(
        feature,
        threshold,
        _grow(x, y, left_idx, rng, k, min_split, task),
        _grow(x, y, right_idx, rng, k, min_split, task),
    )


def fit_extra_trees(
    matrix: FeatureMatrix,
    y: Sequence[float] | np.ndarray,
    cfg: TrainConfig = TrainConfig(),
    task: str = "classification",
) -> ExtraTreesModel:
    """Extremely randomized trees on the full training set (no bootstrap).

    Each tree draws its own PRNG substream keyed by ``(seed, tree index)``
    and consumes it depth-first, so training is reproducible and, because
    matrix rows are already canonicalized by account id, independent of the
    caller's row order.  Candidate features per node default to
    ``ceil(sqrt(d))`` for classification and ``ceil(d / 3)`` for regression.
    """
    cfg.validate()
    if task not in ("classification", "regression"):
        raise ConfigError(f"unknown task {task!r}")
    x, y = _canonical(matrix, y)
    if task == "classification":
        classes = np.unique(y)
        if not np.isin(classes, (0.0, 1.0)).all():
            raise ValidationError("classification labels must be 0/1")
        if classes.size < 2:
            raise DegenerateLabelsError("labels contain a single class")
    d = x.shape[1]
    if d == 0:
        raise ValidationError("feature matrix has no columns")
    if cfg.k_features is not None:
        k = cfg.k_features
    elif task == "classification":
        k = max(1, math.ceil(math.sqrt(d)))
    else:
        k = max(1, math.ceil(d / 3))

    trees = []
    all_idx = np.arange(x.shape[0])
    for t in range(cfg.n_trees):
        rng = np.random.default_rng((cfg.seed, t))
        trees.append(_grow(x, y, all_idx, rng, k, cfg.min_samples_split, task))
    return ExtraTreesModel(
        task, matrix.columns, trees, cfg.n_trees, cfg.min_samples_split, k, cfg.seed
    )


def _tree_predict(node: "TreeSplit | TreeLeaf", row: np.ndarray) -> float:
    while isinstance(node, TreeSplit):
        node = node.left if row[node.feature] < node.threshold else node.right
    return node.value


# ---------------------------------------------------------------------------
# prediction and persistence


def _check_schema(model_columns: tuple[str, ...], matrix: FeatureMatrix) -> None:
    if tuple(matrix.columns) == tuple(model_columns):
        return
    missing = sorted(set(model_columns) - set(matrix.columns))
    extra = sorted(set(matrix.columns) - set(model_columns))
    parts = []
    if missing:
        parts.append(f"missing: {', '.join(missing[:5])}")
    if extra:
        parts.append(f"unexpected: {', '.join(extra[:5])}")
    if not parts:
        parts.append("column order differs")
    raise SchemaError("feature columns do not match the model (" + "; ".join(parts) + ")")


def predict(model: LinearModel | ExtraTreesModel, matrix: FeatureMatrix) -> np.ndarray:
    """Scores aligned to matrix rows: probabilities for classifiers,
    real values for regressors."""
    if isinstance(model, LinearModel):
        _check_schema(model.columns, matrix)
        xs = (matrix.values - model.means) / model.stds
        z = xs @ model.weights + model.intercept
        return _sigmoid(z) if model.kind == "logistic" else z
    _check_schema(model.columns, matrix)
    scores = np.empty(len(matrix.accounts))
    for i in range(len(matrix.accounts)):
        row = matrix.values[i]
        scores[i] = sum(_tree_predict(tree, row) for tree in model.trees) / len(model.trees)
    return scores


def predict_classes(
    model: LinearModel | ExtraTreesModel,
    matrix: FeatureMatrix,
    threshold: float = 0.5,
) -> np.ndarray:
    """Boolean churn decisions at the given probability threshold."""
    if isinstance(model, LinearModel) and model.kind != "logistic":
        raise ValidationError("ridge models produce values, not classes")
    if isinstance(model, ExtraTreesModel) and model.task != "classification":
        raise ValidationError("regression forests produce values, not classes")
    return predict(model, matrix) >= threshold


def _node_to_json(node: "TreeSplit | TreeLeaf") -> dict:
    if isinstance(node, TreeLeaf):
        out: dict = {"leaf": True, "n": node.n}
        if node.counts is not None:
            out["counts"] = list(node.counts)
        else:
            out["mean"] = node.value
        return out
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _node_to_json(node.left),
        "right": _node_to_json(node.right),
    }


def _node_from_json(payload: dict) -> "TreeSplit | TreeLeaf":
    if payload.get("leaf"):
        if "counts" in payload:
            n0, n1 = payload["counts"]
            total = n0 + n1
            return TreeLeaf(total, n1 / total, (n0, n1))
        return TreeLeaf(payload["n"], payload["mean"])
    return TreeSplit(
        payload["feature"],
        payload["threshold"],
        _node_from_json(payload["left"]),
        _node_from_json(payload["right"]),
    )


def save_model(model: LinearModel | ExtraTreesModel, path: str | Path) -> None:
    if isinstance(model, LinearModel):
        payload = {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": model.kind,
            "columns": list(model.columns),
            "weights": [float(v) for v in model.weights],
            "intercept": model.intercept,
            "standardization": {
                "means": [float(v) for v in model.means],
                "stds": [float(v) for v in model.stds],
            },
        }
    else:
        payload = {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": "extra_trees",
            "task": model.task,
            "columns": list(model.columns),
            "n_trees": model.n_trees,
            "min_samples_split": model.min_samples_split,
            "k_features": model.k_features,
            "seed": model.seed,
            "trees": [_node_to_json(t) for t in model.trees],
        }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle)
        handle.write("\n")


def load_model(path: str | Path) -> LinearModel | ExtraTreesModel:
    with open(path, encoding="utf-8") as handle:
        payload = json.load(handle)
    if payload.get("format_version") != MODEL_FORMAT_VERSION:
        raise FormatError("unsupported model format version")
    kind = payload.get("kind")
    if kind in ("logistic", "ridge"):
        std = payload["standardization"]
        return LinearModel(
            kind,
            tuple(payload["columns"]),
            np.asarray(payload["weights"], dtype=float),
            float(payload["intercept"]),
            np.asarray(std["means"], dtype=float),
            np.asarray(std["stds"], dtype=float),
        )
    if kind == "extra_trees":
        return ExtraTreesModel(
            payload["task"],
            tuple(payload["columns"]),
            [_node_from_json(t) for t in payload["trees"]],
            payload["n_trees"],
            payload["min_samples_split"],
            payload["k_features"],
            payload["seed"],
        )
    raise FormatError(f"unknown model kind {kind!r}")
