"""Benchmark sweeps over the Nguyen suite: extrapolation, model size against
an MLP, and the adaptive step-size comparison."""

import json
import time
from dataclasses import dataclass, field, fields, replace
from logging import getLogger
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm.autonotebook import tqdm

from xnet.baseline_mlp import DEFAULT_HIDDEN_SIZES, MlpSpec, smallest_successful_mlp
from xnet.benchmarks.nguyen import (
    BenchmarkTask,
    get_task,
    in_box,
    nguyen_suite,
    sample_task,
)
from xnet.numerics import evaluate, r_squared
from xnet.trainer import RunReport, TrainConfig, train

logger = getLogger(__name__)

REPORT_COLUMNS = [
    "task",
    "method",
    "seed",
    "r2_train",
    "r2_in",
    "r2_out",
    "nodes",
    "params",
    "epochs",
    "seconds",
    "formula",
    "error",
]
_NUMERIC_COLUMNS = REPORT_COLUMNS[3:10]
# Test samples are drawn from a stream offset from the training seed.
_TEST_SEED_OFFSET = 1_000_003


@dataclass
class BenchConfig:
    """Settings for a benchmark sweep.

    Attributes
    ----------
    task_names : tuple of str
    n_seeds : int
        Cells per (task, method); seeds ``base_seed ... base_seed + n_seeds - 1``.
    base_seed : int
    train_config : TrainConfig
        Its ``seed`` is replaced per cell.
    train_points, test_points : int, optional
        Override the task defaults.
    mlp_spec : MlpSpec
        Template for the baseline; layer sizes are set by the sweep.
    hidden_sizes : tuple of int
    output_dir : Path
    n_jobs : int
        Cells run in parallel with joblib.
    include_timing : bool
        Keep the ``seconds`` column.
    """

    task_names: Tuple[str, ...] = tuple(task.name for task in nguyen_suite())
    n_seeds: int = 10
    base_seed: int = 0
    train_config: TrainConfig = field(default_factory=TrainConfig)
    train_points: Optional[int] = None
    test_points: Optional[int] = None
    mlp_spec: MlpSpec = field(default_factory=MlpSpec)
    hidden_sizes: Tuple[int, ...] = DEFAULT_HIDDEN_SIZES
    output_dir: Path = Path("results")
    n_jobs: int = 1
    include_timing: bool = True

    def __post_init__(self) -> None:
        if self.n_seeds < 1:
            raise ValueError(f"n_seeds must be at least 1, got {self.n_seeds}")
        for name in self.task_names:
            get_task(name)
        self.output_dir = Path(self.output_dir)

    def tasks(self) -> List[BenchmarkTask]:
        overrides = {
            name: value
            for name, value in (
                ("train_points", self.train_points),
                ("test_points", self.test_points),
            )
            if value is not None
        }
        return [replace(get_task(name), **overrides) for name in self.task_names]

    def to_flat_dict(self) -> dict:
        echo = {
            item.name: getattr(self, item.name)
            for item in fields(self)
            if item.name not in ("train_config", "mlp_spec")
        }
        echo["task_names"] = list(self.task_names)
        echo["hidden_sizes"] = list(self.hidden_sizes)
        echo["output_dir"] = str(self.output_dir)
        echo.update(self.train_config.to_flat_dict())
        echo.update(
            {
                f"mlp_{name}": getattr(self.mlp_spec, name)
                for name in ("activation", "learning_rate", "epochs")
            }
        )
        return echo


def evaluate_extrapolation(
    report: RunReport,
    task: BenchmarkTask,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, float]:
    """R^2 of the best tree inside and strictly outside the training box.

    Both are scored on a fresh test sample of the task.

    Returns
    -------
    r2_in_range : float
    r2_out_of_range : float
    """
    if rng is None:
        rng = np.random.default_rng(report.seed + _TEST_SEED_OFFSET)
    test = sample_task(task, "test", rng)
    y_hat = evaluate(report.best_tree, test.x)
    inside = in_box(test.x, task.train_range)
    return (
        r_squared(test.y[inside], y_hat[inside]),
        r_squared(test.y[~inside], y_hat[~inside]),
    )


def _empty_row(task: BenchmarkTask, method: str, seed: int) -> dict:
    row = {column: np.nan for column in _NUMERIC_COLUMNS}
    row.update(task=task.name, method=method, seed=seed, formula="", error="")
    return row


def _xnet_cell(
    task: BenchmarkTask, method: str, seed: int, train_config: TrainConfig
) -> dict:
    row = _empty_row(task, method, seed)
    start_time = time.perf_counter()
    try:
        train_set = sample_task(task, "train", np.random.default_rng(seed))
        cfg = replace(
            train_config,
            seed=seed,
            no_parameter_mode=method == "xnet-no-param",
            disable_progress_bar=True,
        )
        report = train(train_set, cfg)
        r2_in, r2_out = evaluate_extrapolation(report, task)
        row.update(
            r2_train=report.r2_train,
            r2_in=r2_in,
            r2_out=r2_out,
            nodes=report.operator_nodes,
            params=report.parameters,
            epochs=report.epochs_used,
            formula=report.formula,
        )
    except Exception as error:
        logger.warning(f"{task.name}/{method}/seed {seed} failed: {error}")
        row["error"] = f"{type(error).__name__}: {error}"
    row["seconds"] = time.perf_counter() - start_time
    return row


def _mlp_cell(
    task: BenchmarkTask,
    seed: int,
    mlp_spec: MlpSpec,
    hidden_sizes: Sequence[int],
    target_r2: float,
) -> dict:
    row = _empty_row(task, "mlp", seed)
    start_time = time.perf_counter()
    try:
        train_set = sample_task(task, "train", np.random.default_rng(seed))
        result = smallest_successful_mlp(
            train_set, replace(mlp_spec, seed=seed), hidden_sizes, target_r2
        )
        row.update(
            r2_train=result.r2_train,
            nodes=result.hidden_node_count,
            params=result.param_count,
            epochs=result.epochs_used,
            formula=f"mlp{list(result.layer_sizes)}",
        )
    except Exception as error:
        logger.warning(f"{task.name}/mlp/seed {seed} failed: {error}")
        row["error"] = f"{type(error).__name__}: {error}"
    row["seconds"] = time.perf_counter() - start_time
    return row


def _run_cells(cfg: BenchConfig, methods: Sequence[str], desc: str) -> List[dict]:
    cells = [
        (task, method, cfg.base_seed + offset)
        for task in cfg.tasks()
        for method in methods
        for offset in range(cfg.n_seeds)
    ]

    def _cell(task: BenchmarkTask, method: str, seed: int) -> dict:
        if method == "mlp":
            return _mlp_cell(
                task,
                seed,
                cfg.mlp_spec,
                cfg.hidden_sizes,
                cfg.train_config.target_r2,
            )
        return _xnet_cell(task, method, seed, cfg.train_config)

    return Parallel(n_jobs=cfg.n_jobs)(
        delayed(_cell)(*cell)
        for cell in tqdm(
            cells, desc=desc, disable=cfg.train_config.disable_progress_bar
        )
    )


def summarize(rows: Sequence[dict]) -> pd.DataFrame:
    """Mean and standard deviation of the numeric columns per (task, method).

    Failed cells are left out; ``n_runs`` counts the rest.
    """
    frame = pd.DataFrame(list(rows), columns=REPORT_COLUMNS)
    frame = frame.loc[frame["error"].fillna("") == ""]
    if frame.empty:
        return pd.DataFrame(columns=["task", "method", "n_runs"])
    numeric = [column for column in _NUMERIC_COLUMNS if column in frame]
    grouped = frame.groupby(["task", "method"], sort=False)[numeric]
    summary = grouped.agg(["mean", "std"])
    summary.columns = [f"{column}_{statistic}" for column, statistic in summary.columns]
    summary["n_runs"] = grouped.size()
    return summary.reset_index()


def _records(frame: pd.DataFrame) -> list:
    return json.loads(frame.to_json(orient="records"))


def _write_outputs(
    name: str, rows: List[dict], summary: pd.DataFrame, cfg: BenchConfig
) -> dict:
    frame = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    if not cfg.include_timing:
        frame = frame.drop(columns="seconds")
        summary = summary.drop(
            columns=[column for column in summary if column.startswith("seconds")]
        )
    document = {
        "name": name,
        "n_seeds": cfg.n_seeds,
        "config": cfg.to_flat_dict(),
        "rows": _records(frame),
        "summary": _records(summary),
    }
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    frame.to_csv(cfg.output_dir / f"{name}.csv", index=False)
    (cfg.output_dir / f"{name}.json").write_text(
        json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    logger.info(f"Wrote {name}.csv and {name}.json to {cfg.output_dir}")
    return document


def run_table1(cfg: Optional[BenchConfig] = None) -> dict:
    """Extrapolation sweep: X-Net with and without parameters.

    Writes ``table1.csv`` (one row per task, method and seed) and
    ``table1.json`` (rows, per-cell summary and config echo).
    """
    cfg = cfg or BenchConfig()
    rows = _run_cells(cfg, ("xnet", "xnet-no-param"), "table1")
    return _write_outputs("table1", rows, summarize(rows), cfg)


def run_table2(cfg: Optional[BenchConfig] = None) -> dict:
    """Model size sweep: X-Net against the smallest MLP reaching the target R^2."""
    cfg = cfg or BenchConfig()
    rows = _run_cells(cfg, ("xnet", "mlp"), "table2")
    return _write_outputs("table2", rows, summarize(rows), cfg)


def run_ada_alpha_comparison(
    cfg: Optional[BenchConfig] = None, task_name: str = "nguyen-6"
) -> dict:
    """Epochs to the target R^2 with the adaptive step against the fixed step.

    Each seed is a single restart. Runs that miss the target count the full
    epoch budget. Writes ``ada_alpha.csv`` and ``ada_alpha.json``.
    """
    cfg = cfg or BenchConfig()
    task = get_task(task_name)
    if cfg.train_points is not None:
        task = replace(task, train_points=cfg.train_points)
    single = replace(cfg.train_config, restarts=1)
    step_variants = {
        "ada-alpha": replace(single.step, ada_enabled=True),
        "fixed-alpha": replace(single.step, ada_enabled=False),
    }

    rows = []
    for method, step in step_variants.items():
        for offset in tqdm(
            range(cfg.n_seeds), desc=method, disable=single.disable_progress_bar
        ):
            seed = cfg.base_seed + offset
            row = _xnet_cell(task, "xnet", seed, replace(single, step=step))
            row["method"] = method
            if not row["r2_train"] >= single.target_r2:
                row["epochs"] = single.max_epochs
            rows.append(row)

    summary = summarize(rows)
    frame = pd.DataFrame(rows)
    medians = frame.groupby("method")["epochs"].median()
    summary["epochs_median"] = summary["method"].map(medians)
    logger.info(
        "Median epochs to target: "
        + ", ".join(f"{method} {value:g}" for method, value in medians.items())
    )
    return _write_outputs("ada_alpha", rows, summary, cfg)
