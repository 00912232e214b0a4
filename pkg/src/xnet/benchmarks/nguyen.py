"""The twelve Nguyen regression tasks and their train/test samplers."""

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from xnet.data_io import Dataset
from xnet.types import Interval, Which

_FIT_RANGE = (-2.0, 2.0)
_EXTRAPOLATION_RANGE = (-5.0, 5.0)


@dataclass(frozen=True)
class BenchmarkTask:
    """A closed-form target with its sampling boxes.

    Attributes
    ----------
    name : str
    expression : str
        Human-readable ground truth.
    ground_truth : callable
        Maps inputs of shape (n_samples, input_dim) to targets.
    input_dim : int
    train_range : tuple of (float, float)
        One interval per input dimension.
    test_range : tuple of (float, float)
        Must contain `train_range`.
    train_points : int
    test_points : int
    """

    name: str
    expression: str
    ground_truth: Callable[[np.ndarray], np.ndarray]
    input_dim: int
    train_range: Tuple[Interval, ...]
    test_range: Tuple[Interval, ...]
    train_points: int = 100
    test_points: int = 500

    def __post_init__(self) -> None:
        if self.input_dim not in (1, 2):
            raise ValueError(f"{self.name}: input_dim must be 1 or 2")
        if not len(self.train_range) == len(self.test_range) == self.input_dim:
            raise ValueError(f"{self.name}: need one interval per input dimension")
        for (train_low, train_high), (test_low, test_high) in zip(
            self.train_range, self.test_range
        ):
            if not test_low <= train_low < train_high <= test_high:
                raise ValueError(
                    f"{self.name}: train range must lie inside the test range"
                )
        if min(self.train_points, self.test_points) < 2:
            raise ValueError(f"{self.name}: need at least 2 points per sample")

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, np.newaxis]
        return np.asarray(self.ground_truth(x), dtype=float)


def _task(name, expression, ground_truth, input_dim=1, train=None, test=None):
    train = train or (_FIT_RANGE,) * input_dim
    test = test or (_EXTRAPOLATION_RANGE,) * input_dim
    return BenchmarkTask(name, expression, ground_truth, input_dim, train, test)


def nguyen_suite() -> Tuple[BenchmarkTask, ...]:
    """Nguyen-1 to Nguyen-12.

    Tasks with log, sqrt or power terms sample non-negative inputs; the base
    of ``x1 ** x2`` starts at 0.1.
    """
    positive_train, positive_test = ((0.0, 2.0),), ((0.0, 5.0),)
    return (
        _task(
            "nguyen-1",
            "x1^3 + x1^2 + x1",
            lambda x: x[:, 0] ** 3 + x[:, 0] ** 2 + x[:, 0],
        ),
        _task(
            "nguyen-2",
            "x1^4 + x1^3 + x1^2 + x1",
            lambda x: x[:, 0] ** 4 + x[:, 0] ** 3 + x[:, 0] ** 2 + x[:, 0],
        ),
        _task(
            "nguyen-3",
            "x1^5 + x1^4 + x1^3 + x1^2 + x1",
            lambda x: sum(x[:, 0] ** power for power in range(1, 6)),
        ),
        _task(
            "nguyen-4",
            "x1^6 + x1^5 + x1^4 + x1^3 + x1^2 + x1",
            lambda x: sum(x[:, 0] ** power for power in range(1, 7)),
        ),
        _task(
            "nguyen-5",
            "sin(x1^2)*cos(x1) - 1",
            lambda x: np.sin(x[:, 0] ** 2) * np.cos(x[:, 0]) - 1.0,
        ),
        _task(
            "nguyen-6",
            "sin(x1) + sin(x1 + x1^2)",
            lambda x: np.sin(x[:, 0]) + np.sin(x[:, 0] + x[:, 0] ** 2),
        ),
        _task(
            "nguyen-7",
            "log(x1 + 1) + log(x1^2 + 1)",
            lambda x: np.log(x[:, 0] + 1.0) + np.log(x[:, 0] ** 2 + 1.0),
            train=positive_train,
            test=positive_test,
        ),
        _task(
            "nguyen-8",
            "sqrt(x1)",
            lambda x: np.sqrt(x[:, 0]),
            train=positive_train,
            test=positive_test,
        ),
        _task(
            "nguyen-9",
            "sin(x1) + sin(x2^2)",
            lambda x: np.sin(x[:, 0]) + np.sin(x[:, 1] ** 2),
            input_dim=2,
        ),
        _task(
            "nguyen-10",
            "2*sin(x1)*cos(x2)",
            lambda x: 2.0 * np.sin(x[:, 0]) * np.cos(x[:, 1]),
            input_dim=2,
        ),
        _task(
            "nguyen-11",
            "x1^x2",
            lambda x: np.power(x[:, 0], x[:, 1]),
            input_dim=2,
            train=((0.1, 2.0), (0.0, 2.0)),
            test=((0.1, 5.0), (0.0, 5.0)),
        ),
        _task(
            "nguyen-12",
            "x1^4 - x1^3 + 0.5*x2^2 - x2",
            lambda x: x[:, 0] ** 4 - x[:, 0] ** 3 + 0.5 * x[:, 1] ** 2 - x[:, 1],
            input_dim=2,
        ),
    )


def get_task(name: str) -> BenchmarkTask:
    """Look up a task by name, e.g. ``"nguyen-6"`` or ``"Nguyen-6"``."""
    tasks = {task.name: task for task in nguyen_suite()}
    try:
        return tasks[name.lower()]
    except KeyError:
        raise KeyError(f"Unknown task {name!r}; choose from {list(tasks)}") from None


def in_box(x: np.ndarray, ranges: Tuple[Interval, ...]) -> np.ndarray:
    """Rows of `x` with every coordinate inside its interval."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, np.newaxis]
    low = np.array([interval[0] for interval in ranges])
    high = np.array([interval[1] for interval in ranges])
    return np.all((x >= low) & (x <= high), axis=1)


def _uniform_box(
    rng: np.random.Generator, ranges: Tuple[Interval, ...], n_points: int
) -> np.ndarray:
    low = np.array([interval[0] for interval in ranges])
    high = np.array([interval[1] for interval in ranges])
    return rng.uniform(low, high, size=(n_points, len(ranges)))


def _uniform_outside(
    rng: np.random.Generator,
    inner: Tuple[Interval, ...],
    outer: Tuple[Interval, ...],
    n_points: int,
) -> np.ndarray:
    """Uniform in `outer` minus `inner`, by rejection."""
    accepted = []
    n_accepted = 0
    while n_accepted < n_points:
        proposal = _uniform_box(rng, outer, 2 * n_points)
        proposal = proposal[~in_box(proposal, inner)]
        accepted.append(proposal)
        n_accepted += proposal.shape[0]
    return np.concatenate(accepted)[:n_points]


def _grid(ranges: Tuple[Interval, ...], n_points: int) -> np.ndarray:
    """Regular grid with about `n_points` points (``k ** input_dim``)."""
    per_dim = max(2, int(round(n_points ** (1.0 / len(ranges)))))
    axes = [np.linspace(low, high, per_dim) for low, high in ranges]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([axis.ravel() for axis in mesh], axis=1)


def sample_task(
    task: BenchmarkTask,
    which: Which,
    rng: np.random.Generator,
    grid: bool = False,
) -> Dataset:
    """Draw a labelled sample for training or testing.

    Training points are uniform in the training box. Test points are split
    into a half inside the training box and a half strictly outside it (but
    inside the test box), so both interpolation and extrapolation are
    always scored.

    Parameters
    ----------
    task : BenchmarkTask
    which : {"train", "test"}
    rng : np.random.Generator
    grid : bool, optional
        Regular grid over the relevant box instead of random points.

    Returns
    -------
    dataset : Dataset
    """
    if which == "train":
        n_points = task.train_points
        if grid:
            x = _grid(task.train_range, n_points)
        else:
            x = _uniform_box(rng, task.train_range, n_points)
    elif which == "test":
        n_points = task.test_points
        if grid:
            x = _grid(task.test_range, n_points)
        else:
            n_inside = n_points // 2
            x = np.concatenate(
                [
                    _uniform_box(rng, task.train_range, n_inside),
                    _uniform_outside(
                        rng, task.train_range, task.test_range, n_points - n_inside
                    ),
                ]
            )
    else:
        raise ValueError(f"which must be 'train' or 'test', got {which!r}")

    return Dataset(
        x=x,
        y=task.evaluate(x),
        target_name=task.name,
        provenance=f"{task.name}/{which}",
    )
