"""Guarded node evaluation, forward passes, loss and goodness-of-fit metrics."""

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Tuple, Union

import numpy as np
from scipy.special import expit

from xnet.expression import ExprTree, Node, NodeKind, Op

if TYPE_CHECKING:
    from xnet.data_io import Dataset

Scalar = Union[float, np.ndarray]


class InvalidInputError(ValueError):
    """Raised when inputs have the wrong shape or are empty."""


class UndefinedRSquaredError(ValueError):
    """Raised when R^2 is requested for a constant target."""


@dataclass(frozen=True)
class NumericLimits:
    """Clamps and guards that keep evaluation and gradients finite.

    Attributes
    ----------
    v_max : float
        Node outputs are clamped to ``[-v_max, v_max]``.
    g_max : float
        Ceiling on gradient magnitudes.
    g_min : float
        Floor on nonzero gradient magnitudes.
    div_eps : float
        Denominators are pushed away from zero to at least this magnitude.
    domain_eps : float
        log and sqrt evaluate on ``max(argument, domain_eps)``.
    """

    v_max: float = 1e6
    g_max: float = 1e3
    g_min: float = 1e-8
    div_eps: float = 1e-12
    domain_eps: float = 1e-12

    def __post_init__(self) -> None:
        if self.v_max <= 0:
            raise ValueError(f"v_max must be positive, got {self.v_max}")
        if not 0 < self.g_min < self.g_max:
            raise ValueError(
                f"Need 0 < g_min < g_max, got g_min={self.g_min}, g_max={self.g_max}"
            )
        if self.div_eps <= 0 or self.domain_eps <= 0:
            raise ValueError("div_eps and domain_eps must be positive")


DEFAULT_LIMITS = NumericLimits()


def clamp_output(value: Scalar, limits: NumericLimits = DEFAULT_LIMITS) -> Scalar:
    """Force ``|E| >= V`` to ``sign(E) * V``; NaN maps to ``+V``."""
    v_max = limits.v_max
    if np.ndim(value) == 0:
        value = float(value)
        if value != value:
            return v_max
        return min(max(value, -v_max), v_max)
    value = np.nan_to_num(value, nan=v_max, posinf=v_max, neginf=-v_max)
    return np.clip(value, -v_max, v_max)


def guard_denominator(right: Scalar, limits: NumericLimits = DEFAULT_LIMITS) -> Scalar:
    """``sign(r) * max(|r|, div_eps)`` with ``sign(0) = +1``."""
    if np.ndim(right) == 0:
        return math.copysign(max(abs(right), limits.div_eps), right)
    sign = np.where(right < 0, -1.0, 1.0)
    return sign * np.maximum(np.abs(right), limits.div_eps)


def _scalar_activation(
    op: Op, left: float, right: Optional[float], limits: NumericLimits
) -> float:
    if op == Op.ADD:
        return left + right
    if op == Op.SUB:
        return left - right
    if op == Op.MUL:
        return left * right
    if op == Op.DIV:
        return left / guard_denominator(right, limits)
    if op == Op.SIN:
        return math.sin(left)
    if op == Op.COS:
        return math.cos(left)
    if op == Op.LOG:
        argument = max(left, limits.domain_eps)
        assert argument >= limits.domain_eps
        return math.log(argument)
    if op == Op.SQRT:
        argument = max(left, limits.domain_eps)
        assert argument >= limits.domain_eps
        return math.sqrt(argument)
    if op == Op.EXP:
        return math.exp(min(left, 700.0))
    if op == Op.RELU:
        return max(left, 0.0)
    if op == Op.SIGMOID:
        return float(expit(left))
    return left


def _array_activation(
    op: Op, left: np.ndarray, right: Optional[np.ndarray], limits: NumericLimits
) -> np.ndarray:
    with np.errstate(all="ignore"):
        if op == Op.ADD:
            return left + right
        if op == Op.SUB:
            return left - right
        if op == Op.MUL:
            return left * right
        if op == Op.DIV:
            return left / guard_denominator(right, limits)
        if op == Op.SIN:
            return np.sin(left)
        if op == Op.COS:
            return np.cos(left)
        if op == Op.LOG:
            return np.log(np.maximum(left, limits.domain_eps))
        if op == Op.SQRT:
            return np.sqrt(np.maximum(left, limits.domain_eps))
        if op == Op.EXP:
            return np.exp(np.minimum(left, 700.0))
        if op == Op.RELU:
            return np.maximum(left, 0.0)
        if op == Op.SIGMOID:
            return expit(left)
        return np.asarray(left, dtype=float)


def eval_node(
    kind: NodeKind,
    left: Scalar,
    right: Optional[Scalar] = None,
    limits: NumericLimits = DEFAULT_LIMITS,
) -> Scalar:
    """Apply the activation of `kind`, guarded and clamped.

    For a variable leaf `left` is the input value and is passed through.

    Parameters
    ----------
    kind : NodeKind
    left : float or np.ndarray
    right : float or np.ndarray, optional
        Required exactly when `kind` is binary.
    limits : NumericLimits, optional

    Returns
    -------
    value : float or np.ndarray
    """
    if (right is not None) != kind.is_binary:
        raise ValueError(
            f"{kind.name} takes {kind.arity or 1} argument(s); "
            f"right operand {'missing' if right is None else 'unexpected'}"
        )
    if np.ndim(left) == 0 and (right is None or np.ndim(right) == 0):
        value = _scalar_activation(
            kind.op, float(left), None if right is None else float(right), limits
        )
    else:
        value = _array_activation(
            kind.op,
            np.asarray(left, dtype=float),
            None if right is None else np.asarray(right, dtype=float),
            limits,
        )
    return clamp_output(value, limits)


def _forward_node(node: Node, x: list, limits: NumericLimits) -> float:
    kind = node.kind
    if kind.is_leaf:
        activation = eval_node(kind, x[kind.index], None, limits)
    elif kind.is_unary:
        activation = eval_node(kind, _forward_node(node.left, x, limits), None, limits)
    else:
        activation = eval_node(
            kind,
            _forward_node(node.left, x, limits),
            _forward_node(node.right, x, limits),
            limits,
        )
    node.f_cached = activation
    node.e_cached = clamp_output(node.w * activation + node.b, limits)
    return node.e_cached


def forward(
    tree: ExprTree, x: np.ndarray, limits: NumericLimits = DEFAULT_LIMITS
) -> float:
    """Evaluate one sample post-order, caching every node's output.

    Parameters
    ----------
    tree : ExprTree
    x : np.ndarray, shape (input_dim,)
    limits : NumericLimits, optional

    Returns
    -------
    y_hat : float
        Output of the root.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != tree.input_dim:
        raise InvalidInputError(
            f"Expected {tree.input_dim} input values, got {x.shape[0]}"
        )
    values = x.tolist()
    y_hat = _forward_node(tree.root, values, limits)
    tree.cache_valid = True
    tree.cached_input = tuple(values)
    return y_hat


def _as_design_matrix(X: np.ndarray, input_dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, np.newaxis]
    if X.ndim != 2 or X.shape[1] != input_dim:
        raise InvalidInputError(
            f"Expected inputs of shape (n_samples, {input_dim}), got {X.shape}"
        )
    return X


def evaluate_subtree(
    node: Node, X: np.ndarray, limits: NumericLimits = DEFAULT_LIMITS
) -> np.ndarray:
    """Outputs of the subtree rooted at `node` for every row of `X` (no caching)."""
    kind = node.kind
    if kind.is_leaf:
        activation = eval_node(kind, X[:, kind.index], None, limits)
    elif kind.is_unary:
        activation = eval_node(
            kind, evaluate_subtree(node.left, X, limits), None, limits
        )
    else:
        activation = eval_node(
            kind,
            evaluate_subtree(node.left, X, limits),
            evaluate_subtree(node.right, X, limits),
            limits,
        )
    return clamp_output(node.w * activation + node.b, limits)


def evaluate(
    tree: ExprTree, X: np.ndarray, limits: NumericLimits = DEFAULT_LIMITS
) -> np.ndarray:
    """Vectorised prediction.

    Parameters
    ----------
    tree : ExprTree
    X : np.ndarray, shape (n_samples, input_dim) or (n_samples,) when univariate
    limits : NumericLimits, optional

    Returns
    -------
    y_hat : np.ndarray, shape (n_samples,)
    """
    X = _as_design_matrix(X, tree.input_dim)
    return np.broadcast_to(evaluate_subtree(tree.root, X, limits), (X.shape[0],))


def _check_pair(y: np.ndarray, y_hat: np.ndarray, min_length: int) -> Tuple:
    y = np.asarray(y, dtype=float).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=float).reshape(-1)
    if y.shape != y_hat.shape:
        raise InvalidInputError(
            f"y and y_hat lengths differ: {y.shape[0]} != {y_hat.shape[0]}"
        )
    if y.shape[0] < min_length:
        raise InvalidInputError(
            f"Need at least {min_length} samples, got {y.shape[0]}"
        )
    return y, y_hat


def mse_loss(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Mean squared error ``(1/N) * sum((y - y_hat)^2)``."""
    y, y_hat = _check_pair(y, y_hat, min_length=1)
    return float(np.mean((y - y_hat) ** 2))


def half_squared_loss(y: float, y_hat: float) -> float:
    """Per-sample training loss ``0.5 * (y - y_hat)^2``."""
    return 0.5 * (y - y_hat) ** 2


def r_squared(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``.

    Raises
    ------
    UndefinedRSquaredError
        If `y` is constant.
    """
    y, y_hat = _check_pair(y, y_hat, min_length=2)
    total = np.sum((y - y.mean()) ** 2)
    if total == 0.0:
        raise UndefinedRSquaredError("R^2 is undefined for a constant target")
    return float(1.0 - np.sum((y - y_hat) ** 2) / total)


def finite_diff_grads(
    tree: ExprTree,
    dataset: "Dataset",
    h: float = 1e-6,
    limits: NumericLimits = DEFAULT_LIMITS,
) -> Tuple[np.ndarray, np.ndarray]:
    """Central-difference gradients of the mean half-squared loss.

    Parameters
    ----------
    tree : ExprTree
    dataset : Dataset
        Anything with ``x`` of shape (n_samples, input_dim) and ``y``.
    h : float, optional
        Step, in ``[1e-7, 1e-4]``.
    limits : NumericLimits, optional

    Returns
    -------
    dw, db : np.ndarray, shape (n_nodes,)
        Preorder gradient estimates.
    """
    if not 1e-7 <= h <= 1e-4:
        raise ValueError(f"h must lie in [1e-7, 1e-4], got {h}")
    X = _as_design_matrix(dataset.x, tree.input_dim)
    y = np.asarray(dataset.y, dtype=float).reshape(-1)
    probe = tree.copy()
    nodes = probe.nodes()

    def _loss() -> float:
        return float(np.mean(0.5 * (y - evaluate(probe, X, limits)) ** 2))

    gradients = np.zeros((2, len(nodes)))
    for position, node in enumerate(nodes):
        for row, name in enumerate(("w", "b")):
            original = getattr(node, name)
            setattr(node, name, original + h)
            loss_plus = _loss()
            setattr(node, name, original - h)
            loss_minus = _loss()
            setattr(node, name, original)
            gradients[row, position] = (loss_plus - loss_minus) / (2.0 * h)
    return gradients[0], gradients[1]
