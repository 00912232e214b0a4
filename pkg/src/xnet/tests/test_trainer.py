import json

import numpy as np
import pytest
from formula_parser import evaluate_formula

from xnet.backprop import StepState
from xnet.data_io import Dataset
from xnet.evolve import SelectionConfig
from xnet.expression import ExprTree, Node, init_default_tree, to_formula, var
from xnet.benchmarks.nguyen import get_task, sample_task
from xnet.numerics import evaluate, r_squared
from xnet.trainer import (
    FLAT_CONFIG_KEYS,
    ConfigurationError,
    TrainConfig,
    fit_one_vs_rest,
    predict_classes,
    save_best,
    save_report,
    train,
    train_classifier,
    train_no_parameter,
)


@pytest.fixture
def exact_dataset():
    x = np.linspace(-2.0, 2.0, 40)
    return Dataset(x=x, y=x**2 + np.sin(x), provenance="x^2 + sin(x)")


@pytest.fixture
def identity_dataset():
    x = np.linspace(-1.0, 1.0, 30)
    return Dataset(x=x, y=x.copy(), provenance="identity")


def _quick_config(**kwargs) -> TrainConfig:
    settings = dict(max_epochs=3, restarts=1, disable_progress_bar=True)
    settings.update(kwargs)
    return TrainConfig(**settings)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(max_epochs=0),
        dict(target_r2=0.0),
        dict(target_r2=1.5),
        dict(restarts=0),
        dict(inner_steps=0),
        dict(save_best_every=-1),
        dict(max_step_halvings=-1),
    ],
)
def test_train_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kwargs)


def test_flat_config_round_trip():
    cfg = TrainConfig(
        max_epochs=50,
        selection=SelectionConfig(ite=7, accept_threshold=0.05),
        step=StepState(a=5.0, ada_enabled=False),
        seed=3,
    )
    flat = cfg.to_flat_dict()
    assert flat["ite"] == 7
    assert flat["a"] == 5.0
    assert flat["v_max"] == 1e6
    assert TrainConfig.from_flat_dict(flat).to_flat_dict() == flat


def test_flat_config_rejects_unknown_key():
    with pytest.raises(KeyError):
        TrainConfig.from_flat_dict({"learning_rate": 0.1})


def test_flat_config_keys():
    for key in ("max_epochs", "target_r2", "ite", "stagnation_limit", "a", "g_max"):
        assert key in FLAT_CONFIG_KEYS
    assert "loss_prev" not in FLAT_CONFIG_KEYS


def test_save_best_keeps_ties_and_copies():
    first = init_default_tree(1)
    best_tree, best_r2 = save_best((first, 0.5), (None, -np.inf))
    assert best_tree is not first and best_tree == first

    second = ExprTree(Node(var(0)), 1)
    best_tree, best_r2 = save_best((second, 0.5), (best_tree, best_r2))
    assert best_tree == second

    best_tree, best_r2 = save_best((first, 0.4), (best_tree, best_r2))
    assert best_tree == second and best_r2 == 0.5

    second.root.w = 9.0
    assert best_tree.root.w == 1.0


def test_exact_fit_stops_before_training(exact_dataset):
    report = train(exact_dataset, _quick_config(no_parameter_mode=True))
    assert report.r2_train == pytest.approx(1.0)
    assert report.epochs_used == 0
    assert report.operator_nodes == 3
    assert report.parameters == 12
    assert report.restarts_used == 1
    assert report.formula == "((x1*x1) + sin(x1))"
    assert report.history.sizes["epoch"] == 1


def test_train_fits_identity(identity_dataset):
    cfg = TrainConfig(max_epochs=300, restarts=3, disable_progress_bar=True)
    report = train(identity_dataset, cfg, test_dataset=identity_dataset)
    assert report.r2_train >= 0.99
    assert report.r2_test == pytest.approx(report.r2_train)
    assert report.epochs_used <= 300
    assert report.parameters == 2 * report.best_tree.node_count_total
    y_hat = evaluate(report.best_tree, identity_dataset.x)
    assert np.corrcoef(y_hat, identity_dataset.y)[0, 1] > 0.99


def test_train_is_reproducible(identity_dataset):
    first = train(identity_dataset, _quick_config(max_epochs=5, seed=11))
    second = train(identity_dataset, _quick_config(max_epochs=5, seed=11))
    assert first.best_tree == second.best_tree
    assert first.r2_train == second.r2_train
    assert first.seed == 11


def test_all_restarts_used_when_target_missed():
    rng = np.random.default_rng(0)
    dataset = Dataset(x=rng.uniform(-1, 1, 30), y=rng.normal(size=30))
    report = train(dataset, _quick_config(max_epochs=2, restarts=2, seed=5))
    assert report.restarts_used == 2
    assert report.seed in (5, 6)
    assert report.r2_train < 0.99


def test_history_tracks_best_r2(identity_dataset):
    report = train(identity_dataset, _quick_config(max_epochs=4))
    history = report.history
    assert history.sizes["epoch"] == report.epochs_used + 1
    assert list(history["epoch"].values) == list(range(report.epochs_used + 1))
    assert np.all(np.diff(history["best_r2"].values) >= 0)
    assert np.isnan(history["alpha"].values[0])
    assert history["alpha"].values[1] == pytest.approx(np.tanh(1.0) / 10.0)


def test_report_formula_reproduces_r2(identity_dataset):
    cfg = TrainConfig(max_epochs=300, restarts=3, disable_progress_bar=True)
    report = train(identity_dataset, cfg)
    x, y = identity_dataset.x, identity_dataset.y

    rounded = r_squared(y, evaluate_formula(report.formula, x))
    assert rounded == pytest.approx(report.r2_train, abs=0.01)
    exact = evaluate_formula(to_formula(report.best_tree, precision=None), x)
    assert r_squared(y, exact) == pytest.approx(report.r2_train, abs=1e-9)


def test_training_stays_bounded_on_a_cubic():
    task = get_task("nguyen-1")
    dataset = sample_task(task, "train", np.random.default_rng(0))
    report = train(dataset, _quick_config(max_epochs=40, target_r2=0.999))
    history = report.history
    assert np.all(np.isfinite(history["loss"].values))
    assert np.max(history["loss"].values) < 1e4
    assert np.all(history["alpha"].values[1:] > 0.0)
    assert np.all(np.diff(history["best_r2"].values) >= 0)
    assert report.r2_train >= history["r2"].values[0]


def test_step_scoring_can_be_limited_to_epoch_ends(identity_dataset):
    report = train(identity_dataset, _quick_config(max_epochs=4, save_best_every=0))
    assert report.epochs_used >= 1
    assert np.all(np.diff(report.history["best_r2"].values) >= 0)


def test_fixed_step_history(identity_dataset):
    step = StepState(ada_enabled=False, alpha_fixed=0.02)
    cfg = _quick_config(max_epochs=2, step=step)
    report = train(identity_dataset, cfg)
    assert np.all(report.history["alpha"].values[1:] == 0.02)


def test_no_parameter_mode_keeps_constants(identity_dataset):
    report = train_no_parameter(identity_dataset, _quick_config(max_epochs=5))
    assert report.no_parameter_mode
    assert all(node.w == 1.0 and node.b == 0.0 for node in report.best_tree.nodes())
    assert report.config["no_parameter_mode"] is True


@pytest.mark.parametrize(
    "x, y",
    [
        (np.array([1.0]), np.array([2.0])),
        (np.array([1.0, 2.0, 3.0]), np.array([1.0, 1.0, 1.0])),
        (np.array([1.0, np.nan, 3.0]), np.array([1.0, 2.0, 3.0])),
    ],
)
def test_train_rejects_unusable_data(x, y):
    with pytest.raises(ConfigurationError):
        train(Dataset(x=x, y=y), _quick_config())


def test_train_rejects_mismatched_test_set(identity_dataset):
    test_set = Dataset(x=np.ones((3, 2)), y=np.arange(3.0))
    with pytest.raises(ConfigurationError):
        train(identity_dataset, _quick_config(), test_dataset=test_set)


def test_report_json(tmp_path, exact_dataset):
    report = train(exact_dataset, _quick_config(no_parameter_mode=True))
    filename = tmp_path / "report.json"
    save_report(report, filename, include_timing=False)
    document = json.loads(filename.read_text())
    assert "wall_time" not in document
    assert document["parameters"] == 12
    assert document["best_tree"].startswith("# xnet input_dim=1")
    assert document["history"]["alpha"] == [None]
    assert document["config"]["max_epochs"] == 3
    assert "wall_time" in json.loads(report.to_json())


def test_predict_classes():
    up = ExprTree(Node(var(0)), 1)
    down = ExprTree(Node(var(0), w=-1.0), 1)
    x = np.array([[-2.0], [0.5], [3.0], [-0.1]])
    np.testing.assert_array_equal(predict_classes([up, down], x), [1, 0, 0, 1])


def test_fit_one_vs_rest_label_checks():
    x = np.linspace(0, 1, 6)[:, np.newaxis]
    with pytest.raises(ConfigurationError):
        fit_one_vs_rest(x, np.array([0, 0, 1, 1, 2, 2]), 2, _quick_config())
    with pytest.raises(ConfigurationError):
        fit_one_vs_rest(x, np.zeros(6), 2, _quick_config())
    with pytest.raises(ConfigurationError):
        fit_one_vs_rest(x, np.array([0, 0.5, 1, 1, 0, 1]), 2, _quick_config())
    with pytest.raises(ConfigurationError):
        fit_one_vs_rest(x, np.array([0, 0, 0, 2, 2, 2]), 3, _quick_config())


def test_train_classifier_separates_blobs():
    rng = np.random.default_rng(0)
    centers = np.array([[-2.0, -2.0], [2.0, 2.0]])
    labels = np.repeat([0, 1], 25)
    x = centers[labels] + rng.normal(scale=0.5, size=(50, 2))
    dataset = Dataset(x=x, y=labels)
    report = train_classifier(
        dataset, 2, _quick_config(max_epochs=100), test_fraction=0.3, split_seed=0
    )
    assert report.n_classes == 2
    assert len(report.class_reports) == 2
    assert report.accuracy >= 0.95
    assert report.operator_nodes == sum(r.operator_nodes for r in report.class_reports)
    assert json.loads(report.to_json())["n_classes"] == 2


def test_train_classifier_rejects_single_class():
    dataset = Dataset(x=np.arange(10.0), y=np.zeros(10))
    with pytest.raises(ConfigurationError):
        train_classifier(dataset, 2, _quick_config())
