"""Alternating backpropagation: gradients for node constants and node outputs,
SGD steps for both, and the adaptive step size."""

import math
import sys
from dataclasses import dataclass
from logging import getLogger
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from xnet.expression import ExprTree, NodeKind, Op
from xnet.numerics import (
    DEFAULT_LIMITS,
    NumericLimits,
    forward,
    guard_denominator,
    half_squared_loss,
)

logger = getLogger(__name__)


class StaleCacheError(RuntimeError):
    """Raised when gradients are requested without a current forward pass."""


@dataclass
class GradientSet:
    """Preorder-indexed gradients of the per-sample loss.

    Attributes
    ----------
    dw : np.ndarray, shape (n_nodes,)
    db : np.ndarray, shape (n_nodes,)
    de : np.ndarray, shape (n_nodes,)
        Gradient with respect to each node's output.
    """

    dw: np.ndarray
    db: np.ndarray
    de: np.ndarray

    def __len__(self) -> int:
        return self.dw.shape[0]


@dataclass
class StepState:
    """Loss history and settings for the adaptive step size.

    Attributes
    ----------
    loss_prev : float
        Loss one record before the latest.
    loss_curr : float
        Latest recorded loss.
    a : float
        Divisor setting the range of the adaptive step.
    alpha_fixed : float
        Constant step used when adaptation is off or the losses are not finite.
    ada_enabled : bool
    """

    loss_prev: float = np.nan
    loss_curr: float = np.nan
    a: float = 10.0
    alpha_fixed: float = 0.01
    ada_enabled: bool = True

    def __post_init__(self) -> None:
        if self.a <= 0:
            raise ValueError(f"a must be positive, got {self.a}")
        if self.alpha_fixed <= 0:
            raise ValueError(f"alpha_fixed must be positive, got {self.alpha_fixed}")

    def record(self, loss: float) -> None:
        self.loss_prev, self.loss_curr = self.loss_curr, float(loss)


def clamp_gradients(
    gradients: np.ndarray, limits: NumericLimits = DEFAULT_LIMITS
) -> np.ndarray:
    """Clip magnitudes into ``[g_min, g_max]`` keeping the sign.

    Exact zeros stay zero and NaN becomes zero.
    """
    gradients = np.nan_to_num(
        np.asarray(gradients, dtype=float),
        nan=0.0,
        posinf=limits.g_max,
        neginf=-limits.g_max,
    )
    magnitude = np.clip(np.abs(gradients), limits.g_min, limits.g_max)
    return np.where(gradients == 0.0, 0.0, np.sign(gradients) * magnitude)


def local_derivatives(
    kind: NodeKind,
    left: float,
    right: Optional[float] = None,
    limits: NumericLimits = DEFAULT_LIMITS,
) -> Tuple[float, Optional[float]]:
    """Partial derivatives of the activation with respect to its inputs.

    Parameters
    ----------
    kind : NodeKind
    left : float
        Cached output of the left child.
    right : float, optional
        Cached output of the right child, for binary kinds.
    limits : NumericLimits, optional

    Returns
    -------
    d_left : float
    d_right : float or None
    """
    op = kind.op
    if op == Op.ADD:
        return 1.0, 1.0
    if op == Op.SUB:
        return 1.0, -1.0
    if op == Op.MUL:
        return right, left
    if op == Op.DIV:
        denominator = guard_denominator(right, limits)
        return 1.0 / denominator, -left / denominator**2
    if op == Op.SIN:
        return math.cos(left), None
    if op == Op.COS:
        return -math.sin(left), None
    if op == Op.LOG:
        return 1.0 / max(left, limits.domain_eps), None
    if op == Op.SQRT:
        return 0.5 / math.sqrt(max(left, limits.domain_eps)), None
    if op == Op.EXP:
        return min(math.exp(min(left, 700.0)), limits.v_max), None
    if op == Op.RELU:
        return (1.0 if left > 0 else 0.0), None
    if op == Op.SIGMOID:
        sigmoid = float(expit(left))
        return sigmoid * (1.0 - sigmoid), None
    raise ValueError(f"Variable leaves have no inputs to differentiate: {kind.name}")


def backward(
    tree: ExprTree,
    x: np.ndarray,
    y: float,
    limits: NumericLimits = DEFAULT_LIMITS,
) -> GradientSet:
    """Reverse-mode gradients of ``0.5 * (y - y_hat)^2`` for one sample.

    Parameters
    ----------
    tree : ExprTree
        Must hold the outputs of a forward pass on `x`.
    x : np.ndarray, shape (input_dim,)
    y : float
    limits : NumericLimits, optional

    Returns
    -------
    gradients : GradientSet
    """
    if np.size(x) != tree.input_dim:
        raise ValueError(f"Expected {tree.input_dim} input values, got {np.size(x)}")
    if not tree.cache_valid:
        raise StaleCacheError("Run forward on the current tree before backward")
    if tree.cached_input != tuple(np.asarray(x, dtype=float).reshape(-1).tolist()):
        raise StaleCacheError(
            f"Cached outputs belong to input {tree.cached_input}, not {x}"
        )

    entries = tree.preorder_entries()
    n_nodes = len(entries)
    de = np.zeros((n_nodes,))
    dw = np.zeros((n_nodes,))
    db = np.zeros((n_nodes,))
    de[0] = entries[0][0].e_cached - y

    with np.errstate(all="ignore"):
        for position, (node, left_position, right_position) in enumerate(entries):
            gradient = de[position]
            dw[position] = gradient * node.f_cached
            db[position] = gradient
            if left_position is None:
                continue
            left = entries[left_position][0].e_cached
            right = (
                None if right_position is None else entries[right_position][0].e_cached
            )
            d_left, d_right = local_derivatives(node.kind, left, right, limits)
            de[left_position] = gradient * node.w * d_left
            if right_position is not None:
                de[right_position] = gradient * node.w * d_right

    return GradientSet(
        dw=clamp_gradients(dw, limits),
        db=clamp_gradients(db, limits),
        de=clamp_gradients(de, limits),
    )


def _check_alignment(tree: ExprTree, gradients: GradientSet) -> list:
    nodes = tree.nodes()
    if len(nodes) != len(gradients):
        raise ValueError(
            f"Gradients cover {len(gradients)} nodes but the tree has {len(nodes)}"
        )
    return nodes


def sgd_step_params(tree: ExprTree, gradients: GradientSet, alpha: float) -> ExprTree:
    """``w <- w - alpha * dw`` and ``b <- b - alpha * db`` at every node."""
    nodes = _check_alignment(tree, gradients)
    if alpha == 0.0:
        return tree
    for node, dw, db in zip(nodes, gradients.dw, gradients.db):
        node.w = float(node.w - alpha * dw)
        node.b = float(node.b - alpha * db)
    tree.cache_valid = False
    return tree


def sgd_step_params_backtracking(
    tree: ExprTree,
    x: np.ndarray,
    y: float,
    gradients: GradientSet,
    alpha: float,
    max_halvings: int = 8,
    limits: NumericLimits = DEFAULT_LIMITS,
) -> float:
    """`sgd_step_params` that never increases the loss on the sample.

    The step is retried with ``alpha / 2, alpha / 4, ...`` while the sample
    loss grows or turns non-finite. If every try fails the constants are left
    as they were.

    Parameters
    ----------
    tree : ExprTree
        Must hold the outputs of a forward pass on `x`.
    x : np.ndarray, shape (input_dim,)
    y : float
    gradients : GradientSet
        From `backward` on the same sample.
    alpha : float
    max_halvings : int, optional
    limits : NumericLimits, optional

    Returns
    -------
    alpha_taken : float
        0.0 when the step was refused.
    """
    nodes = _check_alignment(tree, gradients)
    saved = [(node.w, node.b) for node in nodes]
    loss_before = half_squared_loss(y, tree.root.e_cached)
    for _ in range(max_halvings + 1):
        sgd_step_params(tree, gradients, alpha)
        loss_after = half_squared_loss(y, forward(tree, x, limits))
        if np.isfinite(loss_after) and loss_after <= loss_before:
            return alpha
        for node, (w, b) in zip(nodes, saved):
            node.w, node.b = w, b
        alpha /= 2.0
    tree.cache_valid = False
    return 0.0


def sgd_step_outputs(
    tree: ExprTree, gradients: GradientSet, alpha: float
) -> np.ndarray:
    """Gradient-descent targets for node outputs, ``E - alpha * dE``.

    The tree is not modified.

    Returns
    -------
    e_new : np.ndarray, shape (n_nodes,)
        Preorder.
    """
    nodes = _check_alignment(tree, gradients)
    e_cached = np.asarray([node.e_cached for node in nodes], dtype=float)
    return e_cached - alpha * gradients.de


def ada_alpha(state: StepState) -> float:
    """Adaptive step ``tanh(exp(-|loss_prev - loss_curr|)) / a``.

    Large loss changes shrink the step, plateaus enlarge it. Falls back to
    ``alpha_fixed`` when adaptation is off or a loss is not finite, and to
    ``min(alpha_fixed, tanh(1) / a)`` when the step underflows, so the result
    is always positive.
    """
    if not state.ada_enabled:
        return state.alpha_fixed
    delta = abs(state.loss_prev - state.loss_curr)
    if not np.isfinite(delta):
        logger.warning(
            f"Non-finite loss history ({state.loss_prev}, {state.loss_curr}); "
            f"using alpha_fixed={state.alpha_fixed}"
        )
        return state.alpha_fixed
    alpha = math.tanh(math.exp(-delta)) / state.a
    if alpha < sys.float_info.min:
        fallback = min(state.alpha_fixed, math.tanh(1.0) / state.a)
        logger.debug(f"Step size underflowed at loss change {delta:.3g}")
        return fallback
    return alpha
