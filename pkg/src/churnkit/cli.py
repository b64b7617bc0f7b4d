"""Command-line entry point wiring the pipeline end to end.

Subcommands mirror the pipeline stages::

    churnkit gen       synthesize benchmark datasets with planted signal
    churnkit label     derive churn + survival labels from a log file
    churnkit features  build a feature matrix from a log file
    churnkit gaf       dump a polar-encoded image or matrix for one account
    churnkit train     fit a model on a feature matrix
    churnkit predict   produce a submission file from a fitted model
    churnkit score     evaluate a submission (or a test1/test2 pair)

Every command that writes files also writes a run manifest recording the
tool version, the exact command, the resolved configuration, and SHA-256
digests of all inputs and outputs, so a run can be re-verified later.
Flags may be seeded from a flat ``key = value`` config file via
``--config``; explicit flags always win.  Exit codes: 0 success, 1
runtime/data error, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, CoverageError, ToolkitError
from .events import (
    DEFAULT_CATALOG,
    DEFAULT_SESSION_GAP_MINUTES,
    EventCatalog,
    WeekGrid,
    build_timelines,
    format_timestamp,
    parse_log_file,
    parse_timestamp,
)
from .features import (
    FAMILIES,
    FeatureMatrix,
    build_matrix,
    daily_series,
    fit_matrix_quantiles,
    load_quantile_maps,
    save_quantile_maps,
)
from .gaf import (
    IMAGE_CHANNELS,
    IMAGE_DAYS,
    gaf_encode,
    select_image_channels,
    stack_image,
    write_matrix_binary,
    write_matrix_csv,
)
from .labeling import (
    DEFAULT_CHURN_WEEKS,
    DEFAULT_GAP_WEEKS,
    label_churn,
    label_survival,
    make_layout,
    read_churn_labels,
    read_survival_labels,
    write_churn_labels,
    write_survival_labels,
)
from .models import (
    ExtraTreesModel,
    LinearModel,
    TrainConfig,
    fit_extra_trees,
    fit_logistic,
    fit_ridge,
    load_model,
    predict as model_predict,
    predict_classes,
    save_model,
)
from .scoring import (
    pair_report,
    score_submission,
    write_submission_track1,
    write_submission_track2,
)
from .synth import DEFAULT_EPOCH, GenConfig, WINDOW_NAMES, generate, resolve_signal


# ---------------------------------------------------------------------------
# manifest


def _sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(
    path: str | Path,
    command: list[str],
    config: dict,
    inputs: list[str | Path],
    outputs: list[str | Path],
    started: float,
) -> None:
    manifest = {
        "tool_version": __version__,
        "command": command,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in sorted(str(q) for q in inputs)},
        "outputs": {str(p): _sha256(p) for p in sorted(str(q) for q in outputs)},
        "duration_seconds": time.monotonic() - started,
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _resolved_config(args: argparse.Namespace) -> dict:
    skip = {"func", "config", "manifest"}
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip or callable(value):
            continue
        if isinstance(value, Path):
            value = str(value)
        elif isinstance(value, datetime):
            value = format_timestamp(value)
        elif isinstance(value, tuple):
            value = list(value)
        out[key] = value
    return out


# ---------------------------------------------------------------------------
# shared argument plumbing


def _instant(text: str) -> datetime:
    try:
        return parse_timestamp(text)
    except ToolkitError:
        raise ConfigError(f"bad timestamp {text!r}; expected e.g. 2016-04-06T00:00:00Z") from None


def _positive_threads(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return n


def _comma_list(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="flat key = value file supplying flag defaults")
    parser.add_argument("--manifest", type=Path, default=None,
                        help="override the run-manifest path")
    parser.add_argument("--threads", type=_positive_threads, default=1,
                        help="worker cap (results are identical for any value)")


def _add_window_flags(parser: argparse.ArgumentParser, obs_default: int = 6) -> None:
    parser.add_argument("--epoch", type=_instant,
                        default=DEFAULT_EPOCH,
                        help="week-grid epoch (a Wednesday 00:00 UTC)")
    parser.add_argument("--obs-start-week", type=int, default=0,
                        help="observation start, in weeks after the epoch")
    parser.add_argument("--obs-weeks", type=int, default=obs_default)


def _layout(args: argparse.Namespace, gap_weeks: int, churn_weeks: int):
    total = args.obs_weeks + gap_weeks + churn_weeks
    grid = WeekGrid.spanning(args.epoch, args.obs_start_week, total)
    start = args.epoch + timedelta(weeks=args.obs_start_week)
    return make_layout(grid, start, args.obs_weeks, gap_weeks, churn_weeks)


def _read_timelines(args: argparse.Namespace, grid: WeekGrid, catalog: EventCatalog):
    events, _report = parse_log_file(args.log, catalog, strict=args.strict)
    return build_timelines(events, grid, args.gap_minutes)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args: argparse.Namespace, argv: list[str], started: float) -> int:
    config = GenConfig(
        seed=args.seed,
        n_players=args.players,
        churn_rate=args.churn_rate,
        observation_weeks=args.obs_weeks,
        gap_weeks=args.gap_weeks,
        churn_window_weeks=args.churn_weeks,
        signal_strength=resolve_signal(args.signal_strength),
        weekend_boost=args.weekend_boost,
        events_per_active_day_mean=args.events_per_day,
    )
    result = generate(config, args.out, windows=args.windows, epoch=args.epoch)
    outputs = list(result.files.values()) + [result.truth_file]
    manifest = args.manifest or Path(args.out) / "manifest.json"
    _write_manifest(manifest, argv, _resolved_config(args), [], outputs, started)
    return 0


def cmd_label(args: argparse.Namespace, argv: list[str], started: float) -> int:
    layout = _layout(args, args.gap_weeks, args.churn_weeks)
    timelines = _read_timelines(args, layout.grid, DEFAULT_CATALOG)
    evaluation = layout.churn_end if args.eval_instant is None else args.eval_instant
    margin = timedelta(days=args.censor_margin_days)

    obs_start, obs_end = layout.observation
    churn: dict[str, bool] = {}
    survival = {}
    for account in sorted(timelines):
        timeline = timelines[account]
        if not any(obs_start <= e.timestamp < obs_end for e in timeline.events):
            continue
        churn[account] = label_churn(timeline, layout).churned
        label = label_survival(timeline, layout, evaluation, censor_margin=margin)
        survival[account] = label

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    churn_path = out / "churn.csv"
    survival_path = out / "survival.csv"
    write_churn_labels(churn_path, churn)
    write_survival_labels(survival_path, survival)
    manifest = args.manifest or out / "manifest.json"
    _write_manifest(manifest, argv, _resolved_config(args), [args.log],
                    [churn_path, survival_path], started)
    return 0


def cmd_features(args: argparse.Namespace, argv: list[str], started: float) -> int:
    catalog = EventCatalog.from_csv(args.catalog) if args.catalog else DEFAULT_CATALOG
    layout = _layout(args, 0, 1)
    timelines = _read_timelines(args, layout.grid, catalog)

    quantile_maps = load_quantile_maps(args.quantile_map) if args.quantile_map else None
    matrix = build_matrix(
        timelines,
        layout,
        catalog,
        families=args.families,
        quantile=args.quantile or quantile_maps is not None,
        quantile_maps=quantile_maps,
        gap_minutes=args.gap_minutes,
    )
    matrix.to_csv(args.out)
    inputs: list[str | Path] = [args.log]
    outputs: list[str | Path] = [args.out]
    if args.catalog:
        inputs.append(args.catalog)
    if args.quantile_map:
        inputs.append(args.quantile_map)
    if args.save_quantile:
        raw = build_matrix(timelines, layout, catalog, families=args.families,
                           gap_minutes=args.gap_minutes)
        save_quantile_maps(args.save_quantile, fit_matrix_quantiles(raw))
        outputs.append(args.save_quantile)
    manifest = args.manifest or Path(str(args.out) + ".manifest.json")
    _write_manifest(manifest, argv, _resolved_config(args), inputs, outputs, started)
    return 0


def cmd_gaf(args: argparse.Namespace, argv: list[str], started: float) -> int:
    layout = _layout(args, 0, 1)
    timelines = _read_timelines(args, layout.grid, DEFAULT_CATALOG)
    if args.account not in timelines:
        raise CoverageError(f"account {args.account!r} has no events in the log")
    series = daily_series(timelines[args.account], layout)

    if args.mode == "image":
        if args.channels:
            channels = list(args.channels)
        else:
            channels = select_image_channels([series], IMAGE_CHANNELS)
        for name in channels:
            if name not in series.channels:
                raise ConfigError(f"unknown channel {name!r}")
        days = args.days if args.days is not None else IMAGE_DAYS
        matrix, _diags = stack_image(series, channels, days)
    else:
        if not args.channel:
            raise ConfigError("--channel is required in matrix mode")
        if args.channel not in series.channels:
            raise ConfigError(f"unknown channel {args.channel!r}")
        column = series.values[:, series.channels.index(args.channel)]
        if args.days is not None and args.days < column.size:
            column = column[column.size - args.days:]
        matrix = gaf_encode(column)

    if args.format == "csv":
        write_matrix_csv(args.out, matrix)
    else:
        write_matrix_binary(args.out, matrix)
    manifest = args.manifest or Path(str(args.out) + ".manifest.json")
    _write_manifest(manifest, argv, _resolved_config(args), [args.log], [args.out], started)
    return 0


def _aligned_targets(matrix: FeatureMatrix, labels: dict, kind: str) -> np.ndarray:
    missing = [a for a in matrix.accounts if a not in labels]
    if missing:
        shown = ", ".join(missing[:5])
        more = f" (+{len(missing) - 5} more)" if len(missing) > 5 else ""
        raise CoverageError(f"{kind} missing for {len(missing)} accounts: {shown}{more}")
    if kind == "labels":
        return np.array([1.0 if labels[a] else 0.0 for a in matrix.accounts])
    return np.array([float(labels[a].survival_days) for a in matrix.accounts])


def cmd_train(args: argparse.Namespace, argv: list[str], started: float) -> int:
    if (args.labels is None) == (args.survival is None):
        raise ConfigError("exactly one of --labels or --survival is required")
    if args.model == "logistic" and args.labels is None:
        raise ConfigError("logistic models train on --labels")
    if args.model == "ridge" and args.survival is None:
        raise ConfigError("ridge models train on --survival")

    matrix = FeatureMatrix.from_csv(args.features)
    cfg = TrainConfig(
        l1=args.l1,
        l2=args.l2,
        max_iters=args.max_iters,
        tol=args.tol,
        n_trees=args.trees,
        min_samples_split=args.min_split,
        k_features=args.k_features,
        seed=args.seed,
    )
    if args.labels is not None:
        y = _aligned_targets(matrix, read_churn_labels(args.labels), "labels")
        target_path = args.labels
    else:
        y = _aligned_targets(matrix, read_survival_labels(args.survival), "survival")
        target_path = args.survival

    if args.model == "logistic":
        model = fit_logistic(matrix, y, cfg)
    elif args.model == "ridge":
        model = fit_ridge(matrix, y, cfg)
    else:
        task = "classification" if args.labels is not None else "regression"
        model = fit_extra_trees(matrix, y, cfg, task=task)
    save_model(model, args.out)
    manifest = args.manifest or Path(str(args.out) + ".manifest.json")
    _write_manifest(manifest, argv, _resolved_config(args),
                    [args.features, target_path], [args.out], started)
    return 0


def cmd_predict(args: argparse.Namespace, argv: list[str], started: float) -> int:
    model = load_model(args.model)
    matrix = FeatureMatrix.from_csv(args.features)
    classifier = (isinstance(model, LinearModel) and model.kind == "logistic") or (
        isinstance(model, ExtraTreesModel) and model.task == "classification"
    )
    if classifier:
        flags = predict_classes(model, matrix, args.threshold)
        predicted = {a: bool(v) for a, v in zip(matrix.accounts, flags)}
        write_submission_track1(args.out, predicted)
    else:
        scores = np.maximum(model_predict(model, matrix), 0.0)
        write_submission_track2(args.out, dict(zip(matrix.accounts, scores)))
    manifest = args.manifest or Path(str(args.out) + ".manifest.json")
    _write_manifest(manifest, argv, _resolved_config(args),
                    [args.model, args.features], [args.out], started)
    return 0


def cmd_score(args: argparse.Namespace, argv: list[str], started: float) -> int:
    pair_flags = (args.test1_submission, args.test1_labels,
                  args.test2_submission, args.test2_labels)
    pair_mode = any(p is not None for p in pair_flags)
    read_labels = read_churn_labels if args.track == 1 else read_survival_labels

    if pair_mode:
        if any(p is None for p in pair_flags):
            raise ConfigError("pair scoring needs all four --test1-*/--test2-* flags")
        if args.submission or args.labels:
            raise ConfigError("use either --submission/--labels or the pair flags, not both")
        report1 = score_submission(args.track, args.test1_submission,
                                   read_labels(args.test1_labels),
                                   args.subset, args.split_seed)
        report2 = score_submission(args.track, args.test2_submission,
                                   read_labels(args.test2_labels),
                                   args.subset, args.split_seed)
        report = pair_report(report1, report2)
        inputs = list(pair_flags)
    else:
        if args.submission is None or args.labels is None:
            raise ConfigError("--submission and --labels are required")
        report = score_submission(args.track, args.submission,
                                  read_labels(args.labels),
                                  args.subset, args.split_seed)
        inputs = [args.submission, args.labels]

    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(text)
        manifest = args.manifest or Path(str(args.out) + ".manifest.json")
        _write_manifest(manifest, argv, _resolved_config(args), inputs, [args.out], started)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="churnkit",
        description="Churn prediction and survival analysis over game event logs.",
    )
    parser.add_argument("--version", action="version", version=f"churnkit {__version__}")
    subs = parser.add_subparsers(dest="cmd", required=True)
    by_name: dict[str, argparse.ArgumentParser] = {}

    gen = subs.add_parser("gen", help="synthesize benchmark datasets")
    gen.add_argument("--out", type=Path, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--players", type=int, default=4000)
    gen.add_argument("--churn-rate", type=float, default=0.30)
    gen.add_argument("--obs-weeks", type=int, default=6)
    gen.add_argument("--gap-weeks", type=int, default=3)
    gen.add_argument("--churn-weeks", type=int, default=5)
    gen.add_argument("--signal-strength", default="1.0",
                     help="weak | medium | strong or a float in [0, inf)")
    gen.add_argument("--weekend-boost", type=float, default=1.5)
    gen.add_argument("--events-per-day", type=float, default=6.0)
    gen.add_argument("--windows", type=_comma_list, default=WINDOW_NAMES,
                     help="comma-separated subset of train,test1,test2")
    gen.add_argument("--epoch", type=_instant, default=DEFAULT_EPOCH)
    _add_common(gen)
    gen.set_defaults(func=cmd_gen)
    by_name["gen"] = gen

    label = subs.add_parser("label", help="derive churn and survival labels")
    label.add_argument("--log", type=Path, required=True)
    _add_window_flags(label)
    label.add_argument("--gap-weeks", type=int, default=DEFAULT_GAP_WEEKS)
    label.add_argument("--churn-weeks", type=int, default=DEFAULT_CHURN_WEEKS)
    label.add_argument("--eval-instant", type=_instant, default=None,
                       help="survival evaluation instant (default: churn-window end)")
    label.add_argument("--censor-margin-days", type=float, default=0.0)
    label.add_argument("--gap-minutes", type=float, default=DEFAULT_SESSION_GAP_MINUTES)
    label.add_argument("--strict", dest="strict", action="store_true", default=True)
    label.add_argument("--lenient", dest="strict", action="store_false")
    label.add_argument("--out", type=Path, required=True)
    _add_common(label)
    label.set_defaults(func=cmd_label)
    by_name["label"] = label

    features = subs.add_parser("features", help="build a feature matrix")
    features.add_argument("--log", type=Path, required=True)
    features.add_argument("--catalog", type=Path, default=None)
    _add_window_flags(features)
    features.add_argument("--families", type=_comma_list, default=FAMILIES,
                          help=f"comma-separated subset of {','.join(FAMILIES)}")
    features.add_argument("--quantile", action="store_true",
                          help="remap every column through mid-rank quantiles")
    features.add_argument("--quantile-map", type=Path, default=None,
                          help="apply quantile maps fit on a training matrix")
    features.add_argument("--save-quantile", type=Path, default=None,
                          help="fit quantile maps on this cohort and save them")
    features.add_argument("--gap-minutes", type=float, default=DEFAULT_SESSION_GAP_MINUTES)
    features.add_argument("--strict", dest="strict", action="store_true", default=True)
    features.add_argument("--lenient", dest="strict", action="store_false")
    features.add_argument("--out", type=Path, required=True)
    _add_common(features)
    features.set_defaults(func=cmd_features)
    by_name["features"] = features

    gaf = subs.add_parser("gaf", help="dump an activity image or angular matrix")
    gaf.add_argument("--log", type=Path, required=True)
    gaf.add_argument("--account", required=True)
    _add_window_flags(gaf, obs_default=8)
    gaf.add_argument("--mode", choices=("image", "matrix"), default="image")
    gaf.add_argument("--channel", default=None, help="channel for matrix mode")
    gaf.add_argument("--channels", type=_comma_list, default=None,
                     help=f"exactly {IMAGE_CHANNELS} channels for image mode "
                          "(default: highest-variance channels)")
    gaf.add_argument("--days", type=int, default=None,
                     help=f"trailing day count (image default {IMAGE_DAYS})")
    gaf.add_argument("--format", choices=("csv", "binary"), default="csv")
    gaf.add_argument("--gap-minutes", type=float, default=DEFAULT_SESSION_GAP_MINUTES)
    gaf.add_argument("--strict", dest="strict", action="store_true", default=True)
    gaf.add_argument("--lenient", dest="strict", action="store_false")
    gaf.add_argument("--out", type=Path, required=True)
    _add_common(gaf)
    gaf.set_defaults(func=cmd_gaf)
    by_name["gaf"] = gaf

    train = subs.add_parser("train", help="fit a model on a feature matrix")
    train.add_argument("--features", type=Path, required=True)
    train.add_argument("--labels", type=Path, default=None,
                       help="churn labels (classification target)")
    train.add_argument("--survival", type=Path, default=None,
                       help="survival labels (regression target)")
    train.add_argument("--model", choices=("logistic", "ridge", "extra-trees"),
                       required=True)
    train.add_argument("--l1", type=float, default=0.0)
    train.add_argument("--l2", type=float, default=0.0)
    train.add_argument("--trees", type=int, default=50)
    train.add_argument("--min-split", type=int, default=50)
    train.add_argument("--k-features", type=int, default=None)
    train.add_argument("--max-iters", type=int, default=2000)
    train.add_argument("--tol", type=float, default=1e-8)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--out", type=Path, required=True)
    _add_common(train)
    train.set_defaults(func=cmd_train)
    by_name["train"] = train

    predict = subs.add_parser("predict", help="write a submission from a model")
    predict.add_argument("--model", type=Path, required=True)
    predict.add_argument("--features", type=Path, required=True)
    predict.add_argument("--threshold", type=float, default=0.5)
    predict.add_argument("--out", type=Path, required=True)
    _add_common(predict)
    predict.set_defaults(func=cmd_predict)
    by_name["predict"] = predict

    score = subs.add_parser("score", help="evaluate a submission")
    score.add_argument("--track", type=int, choices=(1, 2), required=True)
    score.add_argument("--submission", type=Path, default=None)
    score.add_argument("--labels", type=Path, default=None)
    score.add_argument("--test1-submission", type=Path, default=None)
    score.add_argument("--test1-labels", type=Path, default=None)
    score.add_argument("--test2-submission", type=Path, default=None)
    score.add_argument("--test2-labels", type=Path, default=None)
    score.add_argument("--subset", choices=("all", "public", "private"), default="all")
    score.add_argument("--split-seed", type=int, default=0)
    score.add_argument("--out", type=Path, default=None,
                       help="write the JSON report here instead of stdout")
    _add_common(score)
    score.set_defaults(func=cmd_score)
    by_name["score"] = score

    return parser, by_name


# ---------------------------------------------------------------------------
# config-file layering


def _load_config_file(path: Path) -> dict[str, str]:
    values: dict[str, str] = {}
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {line_no}: expected key = value")
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


_TRUE_WORDS = ("1", "true", "yes", "on")
_FALSE_WORDS = ("0", "false", "no", "off")


def _namespace_from_config(
    sub: argparse.ArgumentParser, values: dict[str, str]
) -> argparse.Namespace:
    converters = {}
    flag_dests = set()
    for action in sub._actions:  # argparse keeps the full action list here
        converters[action.dest] = action.type
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            flag_dests.add(action.dest)
    seed = argparse.Namespace()
    for key, raw in values.items():
        if key not in converters:
            raise ConfigError(f"unknown config key {key!r}")
        if key in flag_dests:
            lowered = raw.lower()
            if lowered in _TRUE_WORDS:
                value: object = True
            elif lowered in _FALSE_WORDS:
                value = False
            else:
                raise ConfigError(f"config key {key!r} expects a boolean, got {raw!r}")
        else:
            convert = converters[key]
            try:
                value = convert(raw) if convert is not None else raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from exc
        setattr(seed, key, value)
    return seed


# ---------------------------------------------------------------------------
# entry point


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, by_name = build_parser()
    started = time.monotonic()
    try:
        args = parser.parse_args(argv)
        if args.config is not None:
            # Re-parse with the subparser onto a namespace pre-seeded from
            # the file: explicit flags override file values, which override
            # defaults.  (Subparsers start from a fresh namespace when the
            # top-level parser delegates, so the seed must go to the
            # subparser directly.)
            command = args.cmd
            sub = by_name[command]
            seed = _namespace_from_config(sub, _load_config_file(args.config))
            args = sub.parse_args(argv[argv.index(command) + 1:], namespace=seed)
            args.cmd = command
        return args.func(args, argv, started)
    except ToolkitError as exc:
        print(f"{exc.kind}: {exc.message}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"io_error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse usage errors and --version
        code = exc.code
        return code if isinstance(code, int) else 2


if __name__ == "__main__":
    sys.exit(main())
