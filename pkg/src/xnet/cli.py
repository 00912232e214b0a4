"""Command-line entry point: ``xnet <command> [options]``."""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from logging import getLogger
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np
from sklearn.datasets import load_iris

from xnet.benchmarks.nguyen import get_task, nguyen_suite, sample_task
from xnet.benchmarks.tables import (
    BenchConfig,
    evaluate_extrapolation,
    run_ada_alpha_comparison,
    run_table1,
    run_table2,
)
from xnet.data_io import (
    DISCOVERY_DATASETS,
    Dataset,
    fetch_dataset,
    linear_baseline_r2,
    load_csv,
    split,
    standardize,
    unstandardize_tree,
)
from xnet.expression import load_tree, save_tree, to_formula
from xnet.numerics import evaluate, r_squared
from xnet.trainer import (
    FLAT_CONFIG_KEYS,
    RunReport,
    TrainConfig,
    train,
    train_classifier,
)

logger = getLogger(__name__)

SEED_ENV_VAR = "XNET_SEED"
_BENCH_KEYS = ("train_points", "test_points", "n_seeds", "n_jobs")


class ConfigKeyError(ValueError):
    """A config file names a key that is not a setting."""


class ConfigValueError(ValueError):
    """A config value cannot be parsed or is out of range."""


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _key_parsers() -> Dict[str, Callable[[str], object]]:
    parsers = {}
    for key, default in TrainConfig().to_flat_dict().items():
        if isinstance(default, bool):
            parsers[key] = _parse_bool
        elif isinstance(default, int):
            parsers[key] = int
        else:
            parsers[key] = float
    parsers.update({key: int for key in _BENCH_KEYS})
    return parsers


CONFIG_KEYS = _key_parsers()


def load_config(path: Union[str, Path]) -> dict:
    """Read ``key=value`` lines into typed overrides.

    Blank lines and lines starting with ``#`` are skipped.

    Raises
    ------
    ConfigKeyError
        For a key that is not a setting.
    ConfigValueError
        For a malformed line or a value of the wrong type.
    """
    overrides = {}
    text = Path(path).read_text(encoding="utf-8")
    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigValueError(f"{path}:{line_number}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigKeyError(f"Unknown config key {key!r} ({path}:{line_number})")
        try:
            overrides[key] = CONFIG_KEYS[key](value)
        except ValueError as error:
            raise ConfigValueError(f"{key}={value!r}: {error}") from error
    return overrides


def resolve_seed(flag_seed: Optional[int], overrides: dict) -> int:
    """``--seed``, then ``XNET_SEED``, then the config file, then 0."""
    if flag_seed is not None:
        return flag_seed
    if os.environ.get(SEED_ENV_VAR):
        return int(os.environ[SEED_ENV_VAR])
    return int(overrides.get("seed", 0))


def build_train_config(overrides: dict, seed: int, progress: bool) -> TrainConfig:
    flat = TrainConfig().to_flat_dict()
    flat.update(
        {key: value for key, value in overrides.items() if key in FLAT_CONFIG_KEYS}
    )
    flat["seed"] = seed
    flat["disable_progress_bar"] = not progress
    try:
        return TrainConfig.from_flat_dict(flat)
    except ValueError as error:
        raise ConfigValueError(str(error)) from error


def _write_json(document: dict, filename: Path) -> None:
    filename.parent.mkdir(parents=True, exist_ok=True)
    filename.write_text(
        json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    logger.info(f"Wrote {filename}")


def _summary_line(report: RunReport) -> str:
    return (
        f"R2={report.r2_train:.4f} nodes={report.operator_nodes} "
        f"params={report.parameters} formula={report.formula}"
    )


def _cmd_train(args, cfg: TrainConfig, overrides: dict) -> int:
    task = get_task(args.task)
    sizes = {
        key: value
        for key, value in overrides.items()
        if key in ("train_points", "test_points")
    }
    task = replace(task, **sizes)
    rng = np.random.default_rng(cfg.seed)
    train_set = sample_task(task, "train", rng, grid=args.grid)
    cfg = replace(cfg, no_parameter_mode=cfg.no_parameter_mode or args.no_parameter)
    report = train(train_set, cfg)
    r2_in, r2_out = evaluate_extrapolation(report, task)

    document = report.to_dict(include_timing=not args.no_timing)
    document.update(task=task.name, r2_in=r2_in, r2_out=r2_out)
    document["config"].update(
        {key: overrides[key] for key in _BENCH_KEYS if key in overrides}
    )
    _write_json(document, args.output_dir / f"{task.name}_seed{cfg.seed}.json")
    save_tree(report.best_tree, args.output_dir / f"{task.name}_seed{cfg.seed}.xnet")
    print(
        f"{task.name}: {_summary_line(report)} "
        f"r2_in={r2_in:.4f} r2_out={r2_out:.4f}"
    )
    return 0


def _bench_config(args, cfg: TrainConfig, overrides: dict) -> BenchConfig:
    return BenchConfig(
        task_names=tuple(args.tasks or [task.name for task in nguyen_suite()]),
        n_seeds=args.n_seeds or overrides.get("n_seeds", 10),
        base_seed=cfg.seed,
        train_config=cfg,
        train_points=overrides.get("train_points"),
        test_points=overrides.get("test_points"),
        output_dir=args.output_dir,
        n_jobs=args.n_jobs or overrides.get("n_jobs", 1),
        include_timing=not args.no_timing,
    )


def _print_summary(document: dict) -> None:
    for row in document["summary"]:
        print(
            f"{row['task']:>10} {row['method']:>14} "
            f"r2_train={row.get('r2_train_mean')} nodes={row.get('nodes_mean')} "
            f"params={row.get('params_mean')} n={row['n_runs']}"
        )


def _cmd_bench(args, cfg: TrainConfig, overrides: dict) -> int:
    bench = _bench_config(args, cfg, overrides)
    if args.command == "bench-table1":
        document = run_table1(bench)
    elif args.command == "bench-table2":
        document = run_table2(bench)
    else:
        document = run_ada_alpha_comparison(bench, args.task)
    _print_summary(document)
    return 0


def _load_fit_data(args) -> tuple:
    if args.dataset is not None:
        entry = DISCOVERY_DATASETS[args.dataset]
        dataset = fetch_dataset(
            args.dataset, args.cache_dir, args.data, use_sample=args.sample
        )
        return dataset, entry.split_fraction, entry.split_mode, entry.standardize
    if args.data is None:
        raise ValueError("Pass a CSV file or --dataset")
    if args.target is None:
        raise ValueError("--target is required with a CSV file")
    dataset = load_csv(args.data, _column(args.target), _columns(args.features))
    return dataset, 0.8, "random", True


def _column(text: str) -> Union[str, int]:
    return int(text) if text.lstrip("-").isdigit() else text


def _columns(names: Optional[Sequence[str]]) -> Optional[list]:
    return None if names is None else [_column(name) for name in names]


def _cmd_fit_csv(args, cfg: TrainConfig, overrides: dict) -> int:
    dataset, fraction, mode, scale_inputs = _load_fit_data(args)
    if args.standardize is not None:
        scale_inputs = args.standardize
    train_set, test_set = split(
        dataset, args.split or fraction, args.split_mode or mode, cfg.seed
    )
    transform = None
    if scale_inputs:
        train_set, test_set, transform = standardize(train_set, test_set)

    report = train(train_set, cfg, test_set)
    raw_tree = (
        report.best_tree
        if transform is None
        else unstandardize_tree(report.best_tree, transform)
    )
    report = replace(
        report,
        best_tree=raw_tree,
        formula=to_formula(raw_tree, feature_names=dataset.feature_names),
    )
    baseline = linear_baseline_r2(train_set, test_set)

    name = args.dataset or Path(args.data).stem
    document = report.to_dict(include_timing=not args.no_timing)
    document.update(
        dataset=dataset.provenance,
        target=dataset.target_name,
        features=dataset.feature_names,
        standardized=scale_inputs,
        n_dropped=dataset.n_dropped,
        linear_baseline_r2=baseline,
    )
    _write_json(document, args.output_dir / f"{name}_report.json")
    save_tree(raw_tree, args.save_model or args.output_dir / f"{name}.xnet")
    print(
        f"{name}: {_summary_line(report)} r2_test={report.r2_test:.4f} "
        f"linear_r2_test={baseline:.4f}"
    )
    return 0


def _cmd_classify(args, cfg: TrainConfig, overrides: dict) -> int:
    if args.data is None:
        iris = load_iris()
        dataset = Dataset(
            x=iris.data,
            y=iris.target,
            feature_names=[
                name.replace(" (cm)", "").replace(" ", "_")
                for name in iris.feature_names
            ],
            target_name="species",
            provenance="iris",
        )
    else:
        dataset = load_csv(args.data, _column(args.target), _columns(args.features))
    n_classes = int(dataset.y.max()) + 1
    report = train_classifier(
        dataset, n_classes, cfg, test_fraction=args.test_fraction
    )

    name = Path(args.data).stem if args.data else "iris"
    _write_json(
        report.to_dict(include_timing=not args.no_timing),
        args.output_dir / f"{name}_classification.json",
    )
    print(
        f"{name}: accuracy={report.accuracy:.4f} nodes={report.operator_nodes} "
        f"params={report.parameters}"
    )
    return 0


def _cmd_eval(args, cfg: TrainConfig, overrides: dict) -> int:
    tree = load_tree(args.model)
    dataset = load_csv(args.data, _column(args.target), _columns(args.features))
    r2 = r_squared(dataset.y, evaluate(tree, dataset.x, cfg.limits))
    print(f"R2={r2:.6f}")
    return 0


def _cmd_export(args, cfg: TrainConfig, overrides: dict) -> int:
    tree = load_tree(args.model)
    precision = None if args.full_precision else args.precision
    print(to_formula(tree, precision, args.feature_names))
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "bench-table1": _cmd_bench,
    "bench-table2": _cmd_bench,
    "bench-ada": _cmd_bench,
    "fit-csv": _cmd_fit_csv,
    "classify": _cmd_classify,
    "eval": _cmd_eval,
    "export": _cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", type=Path, help="key=value file overriding defaults"
    )
    common.add_argument("--output-dir", type=Path, default=Path("results"))
    common.add_argument("--seed", type=int, help=f"falls back to ${SEED_ENV_VAR}")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument(
        "--no-timing", action="store_true", help="omit wall time from reports"
    )
    common.add_argument("--progress", action="store_true", help="show progress bars")

    parser = argparse.ArgumentParser(
        prog="xnet", description="Expression-tree networks for symbolic regression"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    train_parser = commands.add_parser(
        "train", parents=[common], help="fit a Nguyen task"
    )
    train_parser.add_argument("--task", required=True, help="e.g. nguyen-1")
    train_parser.add_argument("--no-parameter", action="store_true")
    train_parser.add_argument(
        "--grid", action="store_true", help="grid training points"
    )

    for name, help_text in (
        ("bench-table1", "extrapolation sweep"),
        ("bench-table2", "model size against an MLP"),
        ("bench-ada", "adaptive against fixed step size"),
    ):
        bench_parser = commands.add_parser(name, parents=[common], help=help_text)
        bench_parser.add_argument("--tasks", nargs="+")
        bench_parser.add_argument("--task", default="nguyen-6")
        bench_parser.add_argument("--n-seeds", type=int)
        bench_parser.add_argument("--n-jobs", type=int)

    def _add_data_options(subparser, target_required=False):
        subparser.add_argument("--target", required=target_required)
        subparser.add_argument("--features", nargs="+")

    fit_parser = commands.add_parser("fit-csv", parents=[common], help="fit a CSV file")
    fit_parser.add_argument("data", nargs="?")
    fit_parser.add_argument("--dataset", choices=sorted(DISCOVERY_DATASETS))
    fit_parser.add_argument("--cache-dir", type=Path, default=Path("data"))
    fit_parser.add_argument(
        "--sample", action="store_true", help="use the copy bundled with xnet"
    )
    _add_data_options(fit_parser)
    fit_parser.add_argument("--split", type=float)
    fit_parser.add_argument("--split-mode", choices=("random", "chronological"))
    fit_parser.add_argument(
        "--standardize", action=argparse.BooleanOptionalAction, default=None
    )
    fit_parser.add_argument("--save-model", type=Path)

    classify_parser = commands.add_parser(
        "classify", parents=[common], help="one tree per class (Iris by default)"
    )
    classify_parser.add_argument("--data")
    _add_data_options(classify_parser)
    classify_parser.add_argument("--test-fraction", type=float, default=0.3)

    eval_parser = commands.add_parser(
        "eval", parents=[common], help="score a saved tree"
    )
    eval_parser.add_argument("--model", type=Path, required=True)
    eval_parser.add_argument("--data", required=True)
    _add_data_options(eval_parser, target_required=True)

    export_parser = commands.add_parser(
        "export", parents=[common], help="print a formula"
    )
    export_parser.add_argument("--model", type=Path, required=True)
    export_parser.add_argument("--precision", type=int, default=2)
    export_parser.add_argument("--full-precision", action="store_true")
    export_parser.add_argument("--feature-names", nargs="+")

    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Execute one command.

    Returns
    -------
    status : int
        0 on success, 2 for usage errors, 1 for failures (with an
        ``error: <Type>: <message>`` line on stderr).
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_request:
        return int(exit_request.code or 0)

    logging.basicConfig(
        level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
    )
    try:
        overrides = load_config(args.config) if args.config is not None else {}
        seed = resolve_seed(args.seed, overrides)
        cfg = build_train_config(overrides, seed, args.progress)
        return _COMMANDS[args.command](args, cfg, overrides)
    except Exception as error:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {type(error).__name__}: {error}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
