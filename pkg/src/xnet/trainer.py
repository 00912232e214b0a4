"""Outer training loop: the alternating parameter/structure schedule, best-tree
tracking, stagnation handling, restarts and the one-tree-per-class classifier."""

import json
import time
from dataclasses import dataclass, field, fields, replace
from logging import getLogger
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import xarray as xr
from sklearn.model_selection import train_test_split
from tqdm.autonotebook import tqdm

from xnet.backprop import (
    StepState,
    ada_alpha,
    backward,
    sgd_step_outputs,
    sgd_step_params_backtracking,
)
from xnet.data_io import Dataset, standardize
from xnet.evolve import SelectionConfig, perturb_on_stagnation, update_all_kinds
from xnet.expression import (
    ExprTree,
    count_nodes,
    init_default_tree,
    to_formula,
    tree_to_text,
)
from xnet.numerics import NumericLimits, evaluate, forward, r_squared

logger = getLogger(__name__)

_STAGNATION_RTOL = 1e-9


class ConfigurationError(ValueError):
    """Raised before training when the dataset or the configuration is unusable."""


@dataclass
class TrainConfig:
    """Settings for one training run.

    Attributes
    ----------
    max_epochs : int
        Epoch budget per restart.
    target_r2 : float
        Training stops once the best training R^2 reaches this.
    restarts : int
        Independent attempts, seeded ``seed, seed + 1, ...``.
    no_parameter_mode : bool
        Freeze every node at ``w = 1, b = 0``.
    selection : SelectionConfig
    step : StepState
        Template for the step-size state; each restart gets a fresh copy.
    limits : NumericLimits
    seed : int
    inner_steps : int
        Update steps taken on each sample before moving to the next.
    restore_best_each_epoch : bool
        Start every epoch from the best tree found so far.
    save_best_every : int
        Update steps between full-dataset R^2 checks of the live tree; 0
        checks only at the end of each epoch.
    max_step_halvings : int
        Retries with a halved step when a (w, b) step would increase the
        sample loss.
    disable_progress_bar : bool
    """

    max_epochs: int = 2000
    target_r2: float = 0.99
    restarts: int = 10
    no_parameter_mode: bool = False
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    step: StepState = field(default_factory=StepState)
    limits: NumericLimits = field(default_factory=NumericLimits)
    seed: int = 0
    inner_steps: int = 1
    restore_best_each_epoch: bool = True
    save_best_every: int = 1
    max_step_halvings: int = 8
    disable_progress_bar: bool = False

    def __post_init__(self) -> None:
        if self.max_epochs < 1:
            raise ConfigurationError(
                f"max_epochs must be at least 1, got {self.max_epochs}"
            )
        if not 0 < self.target_r2 <= 1:
            raise ConfigurationError(
                f"target_r2 must lie in (0, 1], got {self.target_r2}"
            )
        if self.restarts < 1:
            raise ConfigurationError(
                f"restarts must be at least 1, got {self.restarts}"
            )
        if self.inner_steps < 1:
            raise ConfigurationError(
                f"inner_steps must be at least 1, got {self.inner_steps}"
            )
        if self.save_best_every < 0:
            raise ConfigurationError(
                f"save_best_every must be non-negative, got {self.save_best_every}"
            )
        if self.max_step_halvings < 0:
            raise ConfigurationError(
                f"max_step_halvings must be non-negative, got {self.max_step_halvings}"
            )

    def to_flat_dict(self) -> dict:
        """Every setting under a single flat key, nested configs included."""
        flat = {
            item.name: getattr(self, item.name)
            for item in fields(self)
            if item.name not in ("selection", "step", "limits")
        }
        flat.update(
            {
                item.name: getattr(self.selection, item.name)
                for item in fields(self.selection)
            }
        )
        flat.update(
            {
                name: getattr(self.step, name)
                for name in ("a", "alpha_fixed", "ada_enabled")
            }
        )
        flat.update(
            {item.name: getattr(self.limits, item.name) for item in fields(self.limits)}
        )
        return flat

    @classmethod
    def from_flat_dict(cls, values: dict) -> "TrainConfig":
        """Build a config from flat keys as produced by `to_flat_dict`.

        Raises
        ------
        KeyError
            For a key that is not a setting.
        """
        groups = {"": {}, "selection": {}, "step": {}, "limits": {}}
        for key, value in values.items():
            groups[_flat_key_group(key)][key] = value
        return cls(
            selection=SelectionConfig(**groups["selection"]),
            step=StepState(**groups["step"]),
            limits=NumericLimits(**groups["limits"]),
            **groups[""],
        )


def _flat_key_group(key: str) -> str:
    if key in {item.name for item in fields(SelectionConfig)}:
        return "selection"
    if key in ("a", "alpha_fixed", "ada_enabled"):
        return "step"
    if key in {item.name for item in fields(NumericLimits)}:
        return "limits"
    if key in {item.name for item in fields(TrainConfig)} - {
        "selection",
        "step",
        "limits",
    }:
        return ""
    raise KeyError(key)


FLAT_CONFIG_KEYS = tuple(TrainConfig().to_flat_dict())


def _json_values(values: np.ndarray) -> list:
    """NaN becomes null."""
    return [
        None if isinstance(value, float) and np.isnan(value) else value
        for value in values.tolist()
    ]


@dataclass
class RunReport:
    """Outcome of a training run.

    Attributes
    ----------
    r2_train : float
    r2_test : float or None
    operator_nodes : int
    parameters : int
        Two per node of `best_tree`.
    epochs_used : int
    formula : str
    best_tree : ExprTree
    seed : int
        Seed of the restart that produced `best_tree`.
    wall_time : float
        Seconds.
    no_parameter_mode : bool
    restarts_used : int
    config : dict
        Flat echo of the `TrainConfig`.
    history : xr.Dataset, optional
        Per-epoch loss, R^2, best R^2, step size and operator count of the
        winning restart.
    """

    r2_train: float
    r2_test: Optional[float]
    operator_nodes: int
    parameters: int
    epochs_used: int
    formula: str
    best_tree: ExprTree
    seed: int
    wall_time: float
    no_parameter_mode: bool = False
    restarts_used: int = 1
    config: dict = field(default_factory=dict)
    history: Optional[xr.Dataset] = field(default=None, repr=False)

    def to_dict(self, include_timing: bool = True) -> dict:
        document = {
            "r2_train": self.r2_train,
            "r2_test": self.r2_test,
            "operator_nodes": self.operator_nodes,
            "parameters": self.parameters,
            "epochs_used": self.epochs_used,
            "formula": self.formula,
            "best_tree": tree_to_text(self.best_tree),
            "seed": self.seed,
            "no_parameter_mode": self.no_parameter_mode,
            "restarts_used": self.restarts_used,
            "config": self.config,
        }
        if include_timing:
            document["wall_time"] = self.wall_time
        if self.history is not None:
            document["history"] = {
                "epoch": self.history["epoch"].values.tolist(),
                **{
                    name: _json_values(self.history[name].values)
                    for name in self.history.data_vars
                },
            }
        return document

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)


def save_report(
    report: RunReport,
    filename: Union[str, Path] = "report.json",
    include_timing: bool = True,
) -> None:
    """Write the report as JSON."""
    Path(filename).write_text(report.to_json(include_timing) + "\n", encoding="utf-8")


def save_best(
    current: Tuple[ExprTree, float], best: Tuple[Optional[ExprTree], float]
) -> Tuple[ExprTree, float]:
    """Keep `current` when its R^2 is at least the best so far.

    The stored tree is a deep copy, so later mutation of `current` does not
    reach it.

    Parameters
    ----------
    current : (ExprTree, float)
    best : (ExprTree or None, float)

    Returns
    -------
    best : (ExprTree, float)
    """
    tree, r2 = current
    best_tree, best_r2 = best
    if best_tree is None or r2 >= best_r2:
        return tree.copy(), r2
    return best


def _validate_dataset(dataset: Dataset) -> None:
    if dataset.x.shape[0] < 2:
        raise ConfigurationError(
            f"Need at least 2 samples to train, got {dataset.x.shape[0]}"
        )
    if not (np.all(np.isfinite(dataset.x)) and np.all(np.isfinite(dataset.y))):
        raise ConfigurationError("Dataset contains non-finite values")
    if np.ptp(dataset.y) == 0.0:
        raise ConfigurationError("Target is constant; R^2 is undefined")


def _assert_parameter_free(tree: ExprTree) -> None:
    for node in tree.nodes():
        assert node.w == 1.0 and node.b == 0.0, (
            f"{node.kind.name} has w={node.w}, b={node.b} in no-parameter mode"
        )


def _mean_half_squared_loss(y: np.ndarray, y_hat: np.ndarray) -> float:
    return float(np.mean(0.5 * (y - y_hat) ** 2))


def _train_restart(
    dataset: Dataset, cfg: TrainConfig, seed: int
) -> Tuple[ExprTree, float, int, xr.Dataset]:
    rng = np.random.default_rng(seed)
    selection = replace(cfg.selection, rng_seed=seed)
    limits = cfg.limits
    X, y = dataset.x, dataset.y
    n_samples = X.shape[0]

    tree = init_default_tree(dataset.input_dim)
    y_hat = evaluate(tree, X, limits)
    loss = _mean_half_squared_loss(y, y_hat)
    best_tree, best_r2 = save_best((tree, r_squared(y, y_hat)), (None, -np.inf))
    step = replace(cfg.step, loss_prev=loss, loss_curr=loss)
    lowest_loss = loss
    stagnation_count = 0
    update_count = 0
    epochs_used = 0

    history = {name: [] for name in ("loss", "r2", "best_r2", "alpha", "operators")}

    def _record(alpha: float, r2: float) -> None:
        history["loss"].append(loss)
        history["r2"].append(r2)
        history["best_r2"].append(best_r2)
        history["alpha"].append(alpha)
        history["operators"].append(tree.node_count_operator)

    _record(np.nan, best_r2)

    if best_r2 < cfg.target_r2:
        for epoch in tqdm(
            range(1, cfg.max_epochs + 1),
            desc=f"seed {seed}",
            disable=cfg.disable_progress_bar,
            leave=False,
        ):
            if cfg.restore_best_each_epoch:
                tree = best_tree.copy()
            tree, stagnation_count = perturb_on_stagnation(
                tree, stagnation_count, selection, rng, X, limits
            )
            alpha = ada_alpha(step)

            for sample in rng.permutation(n_samples):
                for _ in range(cfg.inner_steps):
                    update_count += 1
                    forward(tree, X[sample], limits)
                    gradients = backward(tree, X[sample], y[sample], limits)
                    if cfg.no_parameter_mode or update_count % selection.ite == 0:
                        e_new = sgd_step_outputs(tree, gradients, alpha)
                        update_all_kinds(tree, e_new, X[sample], selection, X, limits)
                    else:
                        sgd_step_params_backtracking(
                            tree,
                            X[sample],
                            y[sample],
                            gradients,
                            alpha,
                            cfg.max_step_halvings,
                            limits,
                        )
                    if cfg.no_parameter_mode:
                        _assert_parameter_free(tree)
                    if cfg.save_best_every and update_count % cfg.save_best_every == 0:
                        best_tree, best_r2 = save_best(
                            (tree, r_squared(y, evaluate(tree, X, limits))),
                            (best_tree, best_r2),
                        )
                        if best_r2 >= cfg.target_r2:
                            break
                if best_r2 >= cfg.target_r2:
                    break

            y_hat = evaluate(tree, X, limits)
            loss = _mean_half_squared_loss(y, y_hat)
            r2 = r_squared(y, y_hat)
            best_tree, best_r2 = save_best((tree, r2), (best_tree, best_r2))
            step.record(loss)

            best_loss = _mean_half_squared_loss(y, evaluate(best_tree, X, limits))
            if best_loss < lowest_loss - _STAGNATION_RTOL * abs(lowest_loss):
                lowest_loss = best_loss
                stagnation_count = 0
            else:
                stagnation_count += 1

            epochs_used = epoch
            _record(alpha, r2)
            if best_r2 >= cfg.target_r2:
                break

    history = xr.Dataset(
        {name: ("epoch", np.asarray(values)) for name, values in history.items()},
        coords={"epoch": np.arange(len(history["loss"]))},
    )
    return best_tree, best_r2, epochs_used, history


def train(
    dataset: Dataset,
    cfg: Optional[TrainConfig] = None,
    test_dataset: Optional[Dataset] = None,
) -> RunReport:
    """Fit an expression tree to `dataset`.

    Each restart starts from the default tree, and each epoch from the best
    tree found so far (unless ``restore_best_each_epoch`` is off). Within an
    epoch samples are visited in a seeded random order; every ``ite``-th
    update step moves the node outputs and reselects activations, all other
    steps move ``(w, b)`` without raising the sample loss. The live tree is
    scored on the full dataset every ``save_best_every`` steps and at the end
    of each epoch. The epoch loss feeds the adaptive step size, and a best
    loss that stops falling triggers a random perturbation at the start of
    the next epoch. Restarts stop as soon as one reaches ``target_r2``.

    Parameters
    ----------
    dataset : Dataset
    cfg : TrainConfig, optional
    test_dataset : Dataset, optional
        If given, the best tree is scored on it.

    Returns
    -------
    report : RunReport
        The best restart.

    Raises
    ------
    ConfigurationError
        Before any training.
    """
    if cfg is None:
        cfg = TrainConfig()
    _validate_dataset(dataset)
    if test_dataset is not None and test_dataset.input_dim != dataset.input_dim:
        raise ConfigurationError(
            f"Test inputs have {test_dataset.input_dim} features, "
            f"training inputs have {dataset.input_dim}"
        )

    start_time = time.perf_counter()
    best = None
    restarts_used = 0
    for restart in range(cfg.restarts):
        seed = cfg.seed + restart
        restarts_used += 1
        logger.info(f"Restart {restart + 1}/{cfg.restarts} (seed {seed})")
        tree, r2, epochs_used, history = _train_restart(dataset, cfg, seed)
        logger.info(f"Seed {seed}: best R^2 {r2:.4f} after {epochs_used} epochs")
        if best is None or r2 > best[1]:
            best = (tree, r2, epochs_used, history, seed)
        if r2 >= cfg.target_r2:
            logger.info(f"Reached target R^2 {cfg.target_r2} with seed {seed}")
            break

    tree, r2, epochs_used, history, seed = best
    counts = count_nodes(tree)
    r2_test = None
    if test_dataset is not None:
        r2_test = r_squared(test_dataset.y, evaluate(tree, test_dataset.x, cfg.limits))

    return RunReport(
        r2_train=r2,
        r2_test=r2_test,
        operator_nodes=counts.operator_count,
        parameters=counts.parameter_count,
        epochs_used=epochs_used,
        formula=to_formula(tree, feature_names=dataset.feature_names),
        best_tree=tree,
        seed=seed,
        wall_time=time.perf_counter() - start_time,
        no_parameter_mode=cfg.no_parameter_mode,
        restarts_used=restarts_used,
        config=cfg.to_flat_dict(),
        history=history,
    )


def train_no_parameter(
    dataset: Dataset,
    cfg: Optional[TrainConfig] = None,
    test_dataset: Optional[Dataset] = None,
) -> RunReport:
    """`train` with every ``(w, b)`` frozen at ``(1, 0)``; only structure is learned."""
    cfg = replace(cfg or TrainConfig(), no_parameter_mode=True)
    return train(dataset, cfg, test_dataset)


@dataclass
class ClassificationReport:
    """Outcome of one-tree-per-class training.

    Attributes
    ----------
    accuracy : float
        Held-out accuracy.
    train_accuracy : float
    class_reports : list of RunReport
        One per class, in label order.
    operator_nodes : int
        Summed over the class trees.
    parameters : int
        Summed over the class trees.
    n_classes : int
    """

    accuracy: float
    train_accuracy: float
    class_reports: List[RunReport]
    operator_nodes: int
    parameters: int
    n_classes: int

    def to_dict(self, include_timing: bool = True) -> dict:
        return {
            "accuracy": self.accuracy,
            "train_accuracy": self.train_accuracy,
            "operator_nodes": self.operator_nodes,
            "parameters": self.parameters,
            "n_classes": self.n_classes,
            "class_reports": [
                report.to_dict(include_timing) for report in self.class_reports
            ],
        }

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)


def _check_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    if np.any(labels != np.round(labels)):
        raise ConfigurationError("Class labels must be integers")
    labels = labels.astype(int)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ConfigurationError(
            f"Class labels must lie in 0..{n_classes - 1}, "
            f"got {labels.min()}..{labels.max()}"
        )
    if np.unique(labels).size < 2:
        raise ConfigurationError("Classification needs at least two classes")
    return labels


def fit_one_vs_rest(
    x: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    cfg: Optional[TrainConfig] = None,
    feature_names: Optional[Sequence[str]] = None,
) -> List[RunReport]:
    """Train one tree per class against its one-hot target.

    Parameters
    ----------
    x : np.ndarray, shape (n_samples, n_features)
    labels : np.ndarray, shape (n_samples,)
        Integers in ``0..n_classes - 1``.
    n_classes : int
    cfg : TrainConfig, optional
    feature_names : sequence of str, optional

    Returns
    -------
    reports : list of RunReport
    """
    labels = _check_labels(np.asarray(labels, dtype=float), n_classes)
    reports = []
    for label in range(n_classes):
        logger.info(f"Fitting class {label + 1}/{n_classes}")
        one_hot = Dataset(
            x=x,
            y=(labels == label).astype(float),
            feature_names=feature_names,
            target_name=f"class_{label}",
            provenance="one-vs-rest",
        )
        if np.ptp(one_hot.y) == 0.0:
            raise ConfigurationError(f"Class {label} has no training samples")
        reports.append(train(one_hot, cfg))
    return reports


def predict_classes(
    trees: Sequence[ExprTree],
    x: np.ndarray,
    limits: Optional[NumericLimits] = None,
) -> np.ndarray:
    """Index of the class tree with the largest output, per sample."""
    limits = limits or NumericLimits()
    outputs = np.stack([evaluate(tree, x, limits) for tree in trees], axis=1)
    return np.argmax(outputs, axis=1)


def train_classifier(
    dataset: Dataset,
    n_classes: int,
    cfg: Optional[TrainConfig] = None,
    test_fraction: float = 0.3,
    split_seed: Optional[int] = None,
    standardize_features: bool = True,
) -> ClassificationReport:
    """Held-out evaluation of one-tree-per-class classification.

    Parameters
    ----------
    dataset : Dataset
        `y` holds the class labels.
    n_classes : int
    cfg : TrainConfig, optional
    test_fraction : float, optional
        Stratified held-out share.
    split_seed : int, optional
        Defaults to ``cfg.seed``.
    standardize_features : bool, optional
        Scale features with training statistics.

    Returns
    -------
    report : ClassificationReport

    Raises
    ------
    ConfigurationError
        For single-class data or labels outside ``0..n_classes - 1``.
    """
    cfg = cfg or TrainConfig()
    labels = _check_labels(dataset.y, n_classes)
    if not 0 < test_fraction < 1:
        raise ConfigurationError(
            f"test_fraction must lie in (0, 1), got {test_fraction}"
        )
    x_train, x_test, labels_train, labels_test = train_test_split(
        dataset.x,
        labels,
        test_size=test_fraction,
        stratify=labels,
        random_state=cfg.seed if split_seed is None else split_seed,
    )
    train_set = replace(dataset, x=x_train, y=labels_train.astype(float))
    test_set = replace(dataset, x=x_test, y=labels_test.astype(float))
    if standardize_features:
        train_set, test_set, _ = standardize(train_set, test_set)

    reports = fit_one_vs_rest(
        train_set.x, labels_train, n_classes, cfg, dataset.feature_names
    )
    trees = [report.best_tree for report in reports]
    accuracy = float(
        np.mean(predict_classes(trees, test_set.x, cfg.limits) == labels_test)
    )
    train_accuracy = float(
        np.mean(predict_classes(trees, train_set.x, cfg.limits) == labels_train)
    )
    logger.info(f"Held-out accuracy {accuracy:.3f} over {n_classes} classes")

    return ClassificationReport(
        accuracy=accuracy,
        train_accuracy=train_accuracy,
        class_reports=reports,
        operator_nodes=sum(report.operator_nodes for report in reports),
        parameters=sum(report.parameters for report in reports),
        n_classes=n_classes,
    )
