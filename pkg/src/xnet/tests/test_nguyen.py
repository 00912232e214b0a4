import numpy as np
import pytest

from xnet.benchmarks.nguyen import (
    BenchmarkTask,
    get_task,
    in_box,
    nguyen_suite,
    sample_task,
)


def test_suite_has_twelve_tasks():
    tasks = nguyen_suite()
    assert [task.name for task in tasks] == [f"nguyen-{i}" for i in range(1, 13)]
    assert sum(task.input_dim == 2 for task in tasks) == 4


@pytest.mark.parametrize(
    "name, x, expected",
    [
        ("nguyen-1", [1.0], 3.0),
        ("nguyen-2", [2.0], 30.0),
        ("nguyen-8", [4.0], 2.0),
        ("nguyen-10", [0.0, 0.0], 0.0),
        ("nguyen-11", [2.0, 3.0], 8.0),
        ("nguyen-12", [1.0, 2.0], 0.0),
    ],
)
def test_ground_truth(name, x, expected):
    assert get_task(name).evaluate(np.array([x]))[0] == pytest.approx(expected)


def test_get_task_is_case_insensitive():
    assert get_task("Nguyen-6").name == "nguyen-6"
    with pytest.raises(KeyError):
        get_task("nguyen-13")


def test_domain_restricted_tasks_sample_positive_inputs():
    assert get_task("nguyen-8").train_range == ((0.0, 2.0),)
    assert get_task("nguyen-11").train_range == ((0.1, 2.0), (0.0, 2.0))
    assert get_task("nguyen-11").test_range == ((0.1, 5.0), (0.0, 5.0))


def test_task_validation():
    def truth(x):
        return x[:, 0]

    with pytest.raises(ValueError):
        BenchmarkTask("bad", "x", truth, 1, ((-2.0, 2.0),), ((-1.0, 1.0),))
    with pytest.raises(ValueError):
        BenchmarkTask("bad", "x", truth, 2, ((-2.0, 2.0),), ((-5.0, 5.0),))
    with pytest.raises(ValueError):
        BenchmarkTask("bad", "x", truth, 3, ((-2.0, 2.0),) * 3, ((-5.0, 5.0),) * 3)


def test_train_sample_inside_box():
    task = get_task("nguyen-9")
    dataset = sample_task(task, "train", np.random.default_rng(0))
    assert dataset.x.shape == (100, 2)
    assert np.all(in_box(dataset.x, task.train_range))
    assert dataset.y == pytest.approx(task.evaluate(dataset.x))
    assert dataset.provenance == "nguyen-9/train"


@pytest.mark.parametrize("name", ["nguyen-1", "nguyen-7", "nguyen-12"])
def test_test_sample_splits_inside_and_outside(name):
    task = get_task(name)
    dataset = sample_task(task, "test", np.random.default_rng(1))
    inside = in_box(dataset.x, task.train_range)
    assert dataset.x.shape[0] == 500
    assert inside.sum() == 250
    assert np.all(in_box(dataset.x, task.test_range))


def test_samples_are_reproducible():
    task = get_task("nguyen-5")
    first = sample_task(task, "train", np.random.default_rng(7))
    second = sample_task(task, "train", np.random.default_rng(7))
    np.testing.assert_array_equal(first.x, second.x)


def test_grid_sample():
    task = get_task("nguyen-10")
    dataset = sample_task(task, "train", np.random.default_rng(0), grid=True)
    assert dataset.x.shape == (100, 2)
    assert dataset.x.min() == -2.0 and dataset.x.max() == 2.0


def test_sample_rejects_unknown_split():
    with pytest.raises(ValueError):
        sample_task(get_task("nguyen-1"), "validation", np.random.default_rng(0))
