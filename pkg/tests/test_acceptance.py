"""Release gates for the toolkit.

Each test pins one gate: reproducing the published competition standings
from their own precision/recall figures, exact censoring semantics in the
survival metric, the angular-field identities, agreement between the data
generator's ground truth and the labelers, closed-form oracles for both
estimators, end-to-end recovery of a planted churn signal, determinism
across thread counts, ingest throughput, and frozen feature anchors.
"""

from __future__ import annotations

import time
from datetime import timedelta

import numpy as np
import pytest

from churnkit.cli import main
from churnkit.events import Event, WeekGrid, build_timelines, parse_log_file
from churnkit.features import (
    FeatureMatrix,
    apply_quantile,
    build_matrix,
    daily_series,
    dominant_frequency,
    fit_quantile_map,
    period_summary,
    time_weights,
)
from churnkit.gaf import gaf_encode
from churnkit.labeling import SurvivalLabel, label_churn, label_survival, make_layout
from churnkit.models import (
    TrainConfig,
    fit_extra_trees,
    fit_logistic,
    fit_ridge,
    logistic_gradient,
    logistic_objective,
    predict_classes,
)
from churnkit.scoring import f1_score, final_score, score_classification, score_survival
from churnkit.synth import DEFAULT_EPOCH, GenConfig, generate

from conftest import EPOCH, at, ev

# ---------------------------------------------------------------------------
# published standings (team names anonymized)
#
# Track 1 rows: per test set the published precision, recall, and F1, plus
# the published final score.  Three of the 26 (team, test set) F1 entries
# are internally inconsistent with their own precision/recall at the +-0.01
# gate (team04/test2 and team07/test2 recompute 0.0101-0.0102 away,
# team11/test1 recomputes 0.0125 away); those three rows fail here by
# design rather than loosening the gate for everyone else.

TRACK1 = (
    # team,  (P, R, F1) on test1,  (P, R, F1) on test2,  final
    ("team01", (0.55, 0.69, 0.61), (0.54, 0.76, 0.63), 0.62),
    ("team02", (0.53, 0.71, 0.60), (0.60, 0.60, 0.60), 0.60),
    ("team03", (0.54, 0.62, 0.57), (0.56, 0.71, 0.62), 0.60),
    ("team04", (0.55, 0.64, 0.59), (0.56, 0.67, 0.60), 0.60),
    ("team05", (0.55, 0.60, 0.57), (0.58, 0.62, 0.60), 0.58),
    ("team06", (0.51, 0.62, 0.55), (0.51, 0.62, 0.56), 0.56),
    ("team07", (0.51, 0.49, 0.49), (0.50, 0.72, 0.58), 0.53),
    ("team08", (0.55, 0.58, 0.56), (0.72, 0.37, 0.48), 0.52),
    ("team09", (0.50, 0.40, 0.44), (0.38, 0.44, 0.40), 0.42),
    ("team10", (0.63, 0.40, 0.49), (0.64, 0.22, 0.33), 0.39),
    ("team11", (0.29, 0.85, 0.42), (0.31, 0.31, 0.31), 0.35),
    ("team12", (0.31, 0.30, 0.30), (0.31, 0.31, 0.31), 0.30),
    ("team13", (0.30, 0.29, 0.29), (0.29, 0.29, 0.29), 0.29),
)

# Track 2 rows: published RMSLE on each test set and the published total.
TRACK2 = (
    ("team01", 0.88, 0.61, 0.72),
    ("team02", 1.03, 0.67, 0.81),
    ("team03", 0.92, 0.89, 0.91),
    ("team04", 0.95, 0.89, 0.92),
    ("team05", 1.03, 0.93, 0.97),
)

F1_ROWS = [
    (team, which, cell)
    for team, test1, test2, _ in TRACK1
    for which, cell in (("test1", test1), ("test2", test2))
]


@pytest.mark.parametrize(
    "team,which,cell", F1_ROWS, ids=[f"{t}-{w}" for t, w, _ in F1_ROWS]
)
def test_published_f1_recomputed_from_precision_recall(team, which, cell):
    precision, recall, published = cell
    assert abs(f1_score(precision, recall) - published) <= 0.01


@pytest.mark.parametrize("row", TRACK1, ids=[r[0] for r in TRACK1])
def test_published_final_is_harmonic_of_test_scores(row):
    _, (_, _, f1_test1), (_, _, f1_test2), published = row
    assert abs(final_score(f1_test1, f1_test2).final - published) <= 0.01


def test_reference_table_recomputes_in_under_a_second():
    start = time.perf_counter()
    for _, (p1, r1, f1), (p2, r2, f2), final in TRACK1:
        f1_score(p1, r1)
        f1_score(p2, r2)
        final_score(f1, f2)
    for _, rmsle1, rmsle2, _ in TRACK2:
        final_score(rmsle1, rmsle2)
    assert time.perf_counter() - start < 1.0


@pytest.mark.parametrize("row", TRACK2, ids=[r[0] for r in TRACK2])
def test_published_survival_total_is_harmonic_of_test_scores(row):
    _, rmsle1, rmsle2, published = row
    assert abs(final_score(rmsle1, rmsle2).final - published) <= 0.01


def test_final_score_worked_examples():
    assert final_score(0.88, 0.61).final == pytest.approx(0.72, abs=0.01)
    assert final_score(1.03, 0.67).final == pytest.approx(0.81, abs=0.01)


# ---------------------------------------------------------------------------
# censoring semantics of the survival metric


def _random_survival_instance(rng):
    n = int(rng.integers(1, 40))
    accounts = [f"a{i:05d}" for i in range(n)]
    days = rng.integers(0, 140, n)
    censored = rng.random(n) < 0.5
    censored[0] = True  # every instance keeps at least one censored row
    actual = {
        a: SurvivalLabel(a, int(d), bool(c))
        for a, d, c in zip(accounts, days, censored)
    }
    return accounts, actual


def test_matching_censored_predictions_score_exactly_zero():
    rng = np.random.default_rng(2026)
    for _ in range(1000):
        accounts, actual = _random_survival_instance(rng)
        predicted = {}
        for a in accounts:
            label = actual[a]
            overshoot = float(rng.uniform(0.0, 200.0)) if label.censored else 0.0
            predicted[a] = float(label.survival_days) + overshoot
        score = score_survival(predicted, actual)
        assert score.rmsle == 0.0


def test_raising_censored_predictions_never_raises_the_error():
    rng = np.random.default_rng(2027)
    for _ in range(1000):
        accounts, actual = _random_survival_instance(rng)
        base = {a: float(rng.uniform(0.0, 200.0)) for a in accounts}
        raised = {
            a: base[a] + float(rng.uniform(0.0, 100.0))
            if actual[a].censored
            else base[a]
            for a in accounts
        }
        assert score_survival(raised, actual).rmsle <= (
            score_survival(base, actual).rmsle + 1e-12
        )


# ---------------------------------------------------------------------------
# angular-field identities


def test_two_point_field_golden():
    rng = np.random.default_rng(41)
    for _ in range(100):
        low, high = np.sort(rng.uniform(-50.0, 50.0, 2))
        if high - low < 1e-6:
            continue
        field = gaf_encode(np.array([low, high]))
        assert np.allclose(field, [[1.0, -1.0], [-1.0, 1.0]], atol=1e-12)


def test_field_symmetry_and_diagonal_identity():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        n = int(rng.integers(2, 57))
        series = rng.uniform(0.0, 10.0, n)
        field = gaf_encode(series)
        assert np.array_equal(field, field.T)
        spread = series.max() - series.min()
        normalized = (series - series.min()) * 2.0 / spread - 1.0
        assert np.allclose(np.diag(field), 2.0 * normalized**2 - 1.0, atol=1e-12)


def test_field_invariant_under_positive_affine_maps():
    # Values on a 1/1024 grid with dyadic scale/shift make the affine map
    # exact in floats, so the two encodings must match bit for bit.
    rng = np.random.default_rng(43)
    for _ in range(1000):
        n = int(rng.integers(2, 57))
        series = rng.integers(0, 10241, n) / 1024.0
        if series.max() == series.min():
            series[0] += 1.0 / 1024.0
        scale = int(rng.integers(1, 1025)) / 256.0
        shift = int(rng.integers(-2560, 2561)) / 256.0
        assert np.array_equal(gaf_encode(series), gaf_encode(series * scale + shift))


# ---------------------------------------------------------------------------
# generator ground truth vs. the labelers


@pytest.fixture(scope="module")
def labeled_cohort(tmp_path_factory):
    out = tmp_path_factory.mktemp("labelcheck")
    result = generate(GenConfig(seed=7, n_players=2000), out, windows=("train",))
    events, _ = parse_log_file(result.files["train"])
    layout = result.layouts["train"]
    timelines = build_timelines(events, layout.grid)
    return result, layout, timelines


def test_labels_match_generator_truth_exactly(labeled_cohort):
    result, layout, timelines = labeled_cohort
    truth = result.truth.records
    assert set(timelines) == set(truth)
    margin = timedelta(days=1)
    for account, record in truth.items():
        timeline = timelines[account]
        assert label_churn(timeline, layout).churned == record.churned
        survival = label_survival(
            timeline, layout, layout.churn_end, censor_margin=margin
        )
        assert survival.survival_days == record.survival_days
        assert survival.censored == record.censored


def test_churn_label_ignores_gap_activity(labeled_cohort):
    _, layout, timelines = labeled_cohort
    accounts = sorted(timelines)
    gap_seconds = (layout.gap_end - layout.observation_end).total_seconds()
    rng = np.random.default_rng(99)
    for _ in range(500):
        account = accounts[int(rng.integers(len(accounts)))]
        timeline = timelines[account]
        before = label_churn(timeline, layout).churned
        extra = [
            Event(
                account,
                f"{account}.gap",
                0,
                layout.observation_end
                + timedelta(seconds=float(rng.uniform(0.0, gap_seconds - 1.0))),
            )
            for _ in range(int(rng.integers(1, 4)))
        ]
        rebuilt = build_timelines(list(timeline.events) + extra, layout.grid)
        assert label_churn(rebuilt[account], layout).churned == before


# ---------------------------------------------------------------------------
# estimator oracles


def _solve_by_elimination(a, b):
    """Gaussian elimination with partial pivoting, in plain Python."""
    a = [list(row) for row in a]
    b = list(b)
    n = len(b)
    for col in range(n):
        pivot = max(range(col, n), key=lambda r: abs(a[r][col]))
        a[col], a[pivot] = a[pivot], a[col]
        b[col], b[pivot] = b[pivot], b[col]
        for row in range(col + 1, n):
            factor = a[row][col] / a[col][col]
            for c in range(col, n):
                a[row][c] -= factor * a[col][c]
            b[row] -= factor * b[col]
    x = [0.0] * n
    for row in reversed(range(n)):
        tail = sum(a[row][c] * x[c] for c in range(row + 1, n))
        x[row] = (b[row] - tail) / a[row][row]
    return np.array(x)


def _matrix_of(values):
    values = np.asarray(values, dtype=float)
    accounts = tuple(f"a{i:04d}" for i in range(values.shape[0]))
    columns = tuple(f"c{j:02d}" for j in range(values.shape[1]))
    return FeatureMatrix(accounts, columns, values)


def test_ridge_matches_elimination_oracle():
    rng = np.random.default_rng(7)
    for _ in range(100):
        x = rng.normal(size=(5, 3))
        y = rng.normal(size=5)
        l2 = float(rng.uniform(0.1, 2.0))
        model = fit_ridge(_matrix_of(x), y, TrainConfig(l2=l2), standardize=False)
        expected = _solve_by_elimination(x.T @ x + l2 * np.eye(3), x.T @ y)
        assert np.max(np.abs(model.weights - expected)) <= 1e-8


def _ternary_search_1d(x, y):
    """Minimize the one-weight logistic loss by ternary search."""

    def loss(w):
        z = x * w
        return float(np.mean(np.logaddexp(0.0, z) - y * z))

    low, high = -50.0, 50.0
    for _ in range(200):
        third = (high - low) / 3.0
        if loss(low + third) <= loss(high - third):
            high = high - third
        else:
            low = low + third
    return 0.5 * (low + high)


def test_logistic_matches_ternary_search_in_one_dimension():
    checked = 0
    seed = 0
    while checked < 20:
        rng = np.random.default_rng((100, seed))
        seed += 1
        x = rng.normal(size=60)
        y = (rng.random(60) < 1.0 / (1.0 + np.exp(-1.5 * x))).astype(float)
        if len(np.unique(y)) < 2:
            continue
        model = fit_logistic(
            _matrix_of(x[:, None]),
            y,
            TrainConfig(tol=1e-10, max_iters=100000),
            standardize=False,
            fit_intercept=False,
        )
        assert abs(float(model.weights[0]) - _ternary_search_1d(x, y)) <= 1e-4
        checked += 1


def test_logistic_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(50, 4))
    y = rng.integers(0, 2, 50).astype(float)
    w = 0.5 * rng.normal(size=4)
    b = 0.3
    l2 = 0.3
    grad_w, grad_b = logistic_gradient(x, y, w, b, l2)
    step = 1e-6

    def objective(w_probe, b_probe):
        return logistic_objective(x, y, w_probe, b_probe, 0.0, l2)

    for j in range(4):
        bump = np.zeros(4)
        bump[j] = step
        fd = (objective(w + bump, b) - objective(w - bump, b)) / (2 * step)
        assert abs(fd - grad_w[j]) <= 1e-4 * max(1.0, abs(grad_w[j]))
    fd_b = (objective(w, b + step) - objective(w, b - step)) / (2 * step)
    assert abs(fd_b - grad_b) <= 1e-4 * max(1.0, abs(grad_b))


# ---------------------------------------------------------------------------
# end-to-end recovery of the planted churn signal


@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    """A full-size planted-signal run: train on one window, predict another.

    Test accounts active early in their 8-week observation but silent in
    the trailing 6 feature weeks carry labels without features; a complete
    submission defaults them to churned.
    """
    out = tmp_path_factory.mktemp("benchmark")
    config = GenConfig(seed=1, n_players=4000, signal_strength=1.0)
    result = generate(config, out, windows=("train", "test1"))

    families = ("daily-stats", "overall")
    train_events, _ = parse_log_file(result.files["train"])
    train_layout = result.layouts["train"]
    train_matrix = build_matrix(
        build_timelines(train_events, train_layout.grid), train_layout, families=families
    )

    test_events, _ = parse_log_file(result.files["test1"])
    test_grid = WeekGrid.spanning(DEFAULT_EPOCH, 19, 7)
    test_layout = make_layout(
        test_grid, DEFAULT_EPOCH + timedelta(weeks=19), 6, gap_weeks=0, churn_weeks=1
    )
    test_matrix = build_matrix(
        build_timelines(test_events, test_grid), test_layout, families=families
    )
    assert test_matrix.columns == train_matrix.columns

    truth = result.truth.churn_labels()
    y = np.array([1.0 if truth[a] else 0.0 for a in train_matrix.accounts])
    actual = {a: flag for a, flag in truth.items() if a.startswith("t1")}
    return train_matrix, test_matrix, y, actual


def _score_on_test(model, test_matrix, actual):
    flags = predict_classes(model, test_matrix)
    predicted = {a: bool(v) for a, v in zip(test_matrix.accounts, flags)}
    submission = {a: predicted.get(a, True) for a in actual}
    return score_classification(submission, actual)


def test_logistic_baseline_beats_predicting_everyone_churns(benchmark):
    train_matrix, test_matrix, y, actual = benchmark
    model = fit_logistic(train_matrix, y, TrainConfig(l2=1e-2))
    score = _score_on_test(model, test_matrix, actual)
    naive = score_classification({a: True for a in actual}, actual)
    assert score.f1 >= naive.f1 + 0.15


def test_extra_trees_keeps_pace_with_the_logistic_baseline(benchmark):
    train_matrix, test_matrix, y, actual = benchmark
    logistic = fit_logistic(train_matrix, y, TrainConfig(l2=1e-2))
    trees = fit_extra_trees(
        train_matrix, y, TrainConfig(n_trees=50, min_samples_split=50, seed=0)
    )
    logistic_f1 = _score_on_test(logistic, test_matrix, actual).f1
    trees_f1 = _score_on_test(trees, test_matrix, actual).f1
    assert trees_f1 >= logistic_f1 - 0.05


# ---------------------------------------------------------------------------
# determinism across thread counts, and ingest throughput


def test_outputs_are_identical_across_thread_counts(tmp_path):
    for threads, name in ((1, "one"), (8, "eight")):
        assert (
            main(
                [
                    "gen",
                    "--out",
                    str(tmp_path / name),
                    "--players",
                    "60",
                    "--seed",
                    "5",
                    "--windows",
                    "train",
                    "--threads",
                    str(threads),
                ]
            )
            == 0
        )
        assert (
            main(
                [
                    "features",
                    "--log",
                    str(tmp_path / name / "train.csv"),
                    "--obs-weeks",
                    "6",
                    "--threads",
                    str(threads),
                    "--out",
                    str(tmp_path / f"features_{name}.csv"),
                ]
            )
            == 0
        )
    for filename in ("train.csv", "truth.csv"):
        one = (tmp_path / "one" / filename).read_bytes()
        eight = (tmp_path / "eight" / filename).read_bytes()
        assert one == eight
    assert (tmp_path / "features_one.csv").read_bytes() == (
        tmp_path / "features_eight.csv"
    ).read_bytes()


def test_ingest_handles_a_million_events_in_ten_seconds(tmp_path):
    result = generate(GenConfig(seed=3, n_players=2800), tmp_path, windows=("train",))
    start = time.perf_counter()
    events, report = parse_log_file(result.files["train"])
    build_timelines(events, result.layouts["train"].grid)
    elapsed = time.perf_counter() - start
    assert report.parsed >= 1_000_000
    assert elapsed <= 10.0


# ---------------------------------------------------------------------------
# frozen feature anchors


def test_quantile_transform_is_monotone_and_bounded():
    rng = np.random.default_rng(17)
    qmap = fit_quantile_map(rng.normal(size=200))
    probes = np.sort(rng.uniform(-4.0, 4.0, 500))
    mapped = apply_quantile(qmap, probes)
    assert np.all(np.diff(mapped) >= 0.0)
    assert mapped.min() >= 0.0 and mapped.max() <= 1.0


def test_loyalty_anchor_three_active_days_spanning_five():
    grid = WeekGrid.spanning(EPOCH, 0, 2)
    layout = make_layout(grid, EPOCH, 1, gap_weeks=0, churn_weeks=1)
    events = [ev("a1", at(day, 10)) for day in (1, 3, 5)]
    timeline = build_timelines(events, grid)["a1"]
    summary = period_summary(daily_series(timeline, layout), timeline, layout)
    assert summary["loyalty_index"] == pytest.approx(0.6)


def test_time_weight_anchors():
    weights = time_weights(7)
    assert weights[-1] == 1.0
    assert weights[0] == pytest.approx(1.0 / 7.0)


def test_weekly_cycle_lands_in_the_seven_day_bin():
    days = np.arange(56)
    series = 10.0 + np.cos(2.0 * np.pi * days / 7.0)
    bin_index, amplitude = dominant_frequency(series)
    assert bin_index == 8
    assert amplitude == pytest.approx(28.0)
