"""Activation reselection from gradient-updated node outputs, the structural
substitution rules that keep a tree well formed, and the stagnation escape."""

from dataclasses import dataclass, replace
from logging import getLogger
from typing import List, Optional, Tuple

import numpy as np

from xnet.expression import (
    DEFAULT_MAX_DEPTH,
    ExprTree,
    Node,
    NodeKind,
    Op,
    library,
    var,
)
from xnet.numerics import DEFAULT_LIMITS, NumericLimits, eval_node, evaluate_subtree
from xnet.types import Side

logger = getLogger(__name__)

_DOMAIN_RESTRICTED = frozenset({Op.LOG, Op.SQRT})


class MutationRejected(Exception):
    """A substitution would break the depth limit or a log/sqrt domain."""


@dataclass
class SelectionConfig:
    """Settings for activation selection and structural search.

    Attributes
    ----------
    accept_threshold : float
        A candidate is accepted only if its residual is strictly below this.
    ite : int
        Every `ite`-th update step is a selection step.
    stagnation_limit : int
        Epochs without improvement before a random perturbation.
    max_depth : int
        Mutations that would make the tree deeper are rejected.
    rng_seed : int
        Seed used when no generator is passed to `perturb_on_stagnation`.
    """

    accept_threshold: float = 0.01
    ite: int = 50
    stagnation_limit: int = 20
    max_depth: int = DEFAULT_MAX_DEPTH
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.accept_threshold < 0:
            raise ValueError(
                f"accept_threshold must be non-negative, got {self.accept_threshold}"
            )
        if self.ite < 1:
            raise ValueError(f"ite must be at least 1, got {self.ite}")
        if self.stagnation_limit < 1:
            raise ValueError(
                f"stagnation_limit must be at least 1, got {self.stagnation_limit}"
            )
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be at least 1, got {self.max_depth}")


@dataclass(frozen=True)
class CandidateScore:
    """Output of one library entry on the current node inputs.

    Attributes
    ----------
    kind : NodeKind
    value : float
        Candidate activation value.
    residual : float, optional
        ``|w * value + b - E_new|`` once scored.
    admissible : bool
        False for log/sqrt on a non-positive input.
    """

    kind: NodeKind
    value: float
    residual: Optional[float] = None
    admissible: bool = True


def candidate_outputs(
    e_left: float,
    e_right: Optional[float],
    x: np.ndarray,
    limits: NumericLimits = DEFAULT_LIMITS,
) -> List[CandidateScore]:
    """Evaluate the whole library on the given child outputs.

    Parameters
    ----------
    e_left : float
    e_right : float, optional
        Without it the binary candidates are left out.
    x : np.ndarray, shape (input_dim,)
        Current sample; each variable candidate takes its value.
    limits : NumericLimits, optional

    Returns
    -------
    candidates : list of CandidateScore
        Canonical order, residuals unset.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    candidates = []
    for kind in library(x.shape[0]):
        if kind.is_binary:
            if e_right is None:
                continue
            value = eval_node(kind, e_left, e_right, limits)
        elif kind.is_unary:
            value = eval_node(kind, e_left, None, limits)
        else:
            value = x[kind.index]
        admissible = not (kind.op in _DOMAIN_RESTRICTED and e_left <= 0)
        candidates.append(CandidateScore(kind, float(value), admissible=admissible))
    return candidates


def rank_candidates(
    node: Node,
    e_new: float,
    e_left: float,
    e_right: Optional[float],
    x: np.ndarray,
    limits: NumericLimits = DEFAULT_LIMITS,
) -> List[CandidateScore]:
    """Admissible candidates sorted by residual, ties in canonical order.

    Residuals map each candidate through the node's own ``(w, b)``, which
    the node keeps if its kind changes.
    """
    scored = [
        replace(candidate, residual=abs(node.w * candidate.value + node.b - e_new))
        for candidate in candidate_outputs(e_left, e_right, x, limits)
        if candidate.admissible
    ]
    return sorted(scored, key=lambda candidate: (candidate.residual, candidate.kind))


def select_kind(
    node: Node,
    e_new: float,
    e_left_new: float,
    e_right_new: Optional[float],
    x: np.ndarray,
    cfg: SelectionConfig,
    limits: NumericLimits = DEFAULT_LIMITS,
) -> Optional[NodeKind]:
    """Kind whose output is closest to `e_new`, if closer than the threshold.

    Returns
    -------
    kind : NodeKind or None
        None means no change.
    """
    ranked = rank_candidates(node, e_new, e_left_new, e_right_new, x, limits)
    if ranked and ranked[0].residual < cfg.accept_threshold:
        return ranked[0].kind
    return None


def choose_side(
    node: Node,
    kind: NodeKind,
    e_new: float,
    e_left: float,
    e_right: Optional[float],
    limits: NumericLimits = DEFAULT_LIMITS,
) -> Side:
    """Child to keep when a binary node turns unary: the one whose output
    fed to `kind` lands closer to `e_new`."""
    if e_right is None or not kind.is_unary:
        return "left"

    def _residual(value: float) -> float:
        if kind.op in _DOMAIN_RESTRICTED and value <= 0:
            return np.inf
        return abs(node.w * eval_node(kind, value, None, limits) + node.b - e_new)

    return "right" if _residual(e_right) < _residual(e_left) else "left"


def _best_variable(ranked: List[CandidateScore]) -> int:
    for candidate in ranked:
        if candidate.kind.is_leaf:
            return candidate.kind.index
    return 0


def _substitute_node(
    tree: ExprTree,
    node: Node,
    new_kind: NodeKind,
    side_hint: Side = "none",
    fresh_var: int = 0,
    max_depth: int = DEFAULT_MAX_DEPTH,
    x_domain: Optional[np.ndarray] = None,
    limits: NumericLimits = DEFAULT_LIMITS,
) -> None:
    old_kind = node.kind
    if new_kind == old_kind:
        raise ValueError(f"Node is already {new_kind.name}")
    for index in (new_kind.index if new_kind.is_leaf else 0, fresh_var):
        if index >= tree.input_dim:
            raise ValueError(
                f"Variable index {index} out of range for input_dim={tree.input_dim}"
            )

    saved = (node.kind, node.left, node.right)
    if new_kind.is_leaf:
        node.left = node.right = None
    elif old_kind.is_leaf:
        node.left = Node(var(fresh_var))
        node.right = Node(var(fresh_var)) if new_kind.is_binary else None
    elif old_kind.is_unary:
        if new_kind.is_binary:
            node.right = Node(var(fresh_var))
    elif new_kind.is_unary:
        if side_hint == "right":
            node.left = node.right
        node.right = None
    node.kind = new_kind
    tree.refresh()

    reason = None
    if tree.depth() > max_depth:
        reason = f"depth {tree.depth()} exceeds {max_depth}"
    elif x_domain is not None and new_kind.op in _DOMAIN_RESTRICTED:
        child_outputs = evaluate_subtree(node.left, np.asarray(x_domain), limits)
        if np.any(child_outputs <= 0):
            reason = f"{new_kind.name} input is non-positive on the training data"

    if reason is not None:
        node.kind, node.left, node.right = saved
        tree.refresh()
        raise MutationRejected(f"{old_kind.name} -> {new_kind.name}: {reason}")


def substitute(
    tree: ExprTree,
    node_position: int,
    new_kind: NodeKind,
    side_hint: Side = "none",
    fresh_var: int = 0,
    max_depth: int = DEFAULT_MAX_DEPTH,
    x_domain: Optional[np.ndarray] = None,
    limits: NumericLimits = DEFAULT_LIMITS,
) -> ExprTree:
    """Change the kind of one node and repair its children.

    Rules, by (old arity -> new arity):

    - unary -> unary, binary -> binary: kind replaced, children kept.
    - unary -> binary: child kept on the left, a fresh leaf on the right.
    - binary -> unary: only the `side_hint` child is kept (left by default).
    - anything -> variable: the whole subtree collapses to the leaf.
    - variable -> unary or binary: fresh leaves are added as children.

    Fresh leaves read `fresh_var` and start at ``w = 1, b = 0``; surviving
    nodes keep their constants.

    Parameters
    ----------
    tree : ExprTree
    node_position : int
        Preorder index of the node.
    new_kind : NodeKind
    side_hint : {"left", "right", "none"}, optional
    fresh_var : int, optional
    max_depth : int, optional
    x_domain : np.ndarray, shape (n_samples, input_dim), optional
        If given, a log/sqrt node is only accepted when its input is
        positive on every row.
    limits : NumericLimits, optional

    Returns
    -------
    tree : ExprTree
        The same, mutated tree.

    Raises
    ------
    MutationRejected
        The tree is left unchanged.
    """
    nodes = tree.nodes()
    if not 0 <= node_position < len(nodes):
        raise ValueError(
            f"node_position {node_position} out of range for {len(nodes)} nodes"
        )
    _substitute_node(
        tree,
        nodes[node_position],
        new_kind,
        side_hint,
        fresh_var,
        max_depth,
        x_domain,
        limits,
    )
    return tree


def update_all_kinds(
    tree: ExprTree,
    e_new: np.ndarray,
    x: np.ndarray,
    cfg: SelectionConfig,
    x_domain: Optional[np.ndarray] = None,
    limits: NumericLimits = DEFAULT_LIMITS,
) -> ExprTree:
    """Reselect activations over the whole tree in preorder.

    Child targets come from the same `e_new` vector (computed before any
    mutation). Nodes removed by an earlier rewrite in the same pass are
    skipped. A rejected mutation falls through to the next-best candidate.

    Parameters
    ----------
    tree : ExprTree
    e_new : np.ndarray, shape (n_nodes,)
        Preorder output targets from `sgd_step_outputs`.
    x : np.ndarray, shape (input_dim,)
        The sample that produced `e_new`.
    cfg : SelectionConfig
    x_domain : np.ndarray, shape (n_samples, input_dim), optional
        Training inputs for the log/sqrt domain scan.
    limits : NumericLimits, optional

    Returns
    -------
    tree : ExprTree
    """
    entries = tree.preorder_entries()
    e_new = np.asarray(e_new, dtype=float)
    if e_new.shape[0] != len(entries):
        raise ValueError(
            f"e_new has {e_new.shape[0]} entries but the tree has {len(entries)} nodes"
        )
    x = np.asarray(x, dtype=float).reshape(-1)
    alive = None

    for position, (node, left_position, right_position) in enumerate(entries):
        if alive is not None and id(node) not in alive:
            continue
        if node.kind.is_leaf:
            e_left = e_right = float(x[node.kind.index])
        else:
            e_left = e_new[left_position]
            e_right = None if right_position is None else e_new[right_position]

        ranked = rank_candidates(node, e_new[position], e_left, e_right, x, limits)
        for candidate in ranked:
            if (
                candidate.residual >= cfg.accept_threshold
                or candidate.kind == node.kind
            ):
                break
            old_name = node.kind.name
            try:
                _substitute_node(
                    tree,
                    node,
                    candidate.kind,
                    choose_side(
                        node, candidate.kind, e_new[position], e_left, e_right, limits
                    ),
                    _best_variable(ranked),
                    cfg.max_depth,
                    x_domain,
                    limits,
                )
            except MutationRejected as rejection:
                logger.debug(f"Rejected mutation: {rejection}")
                continue
            logger.debug(
                f"Node {position}: {old_name} -> {candidate.kind.name} "
                f"(residual {candidate.residual:.3g})"
            )
            alive = {id(survivor) for survivor in tree.root.iter_preorder()}
            break

    return tree


def perturb_on_stagnation(
    tree: ExprTree,
    stagnation_count: int,
    cfg: SelectionConfig,
    rng: Optional[np.random.Generator] = None,
    x_domain: Optional[np.ndarray] = None,
    limits: NumericLimits = DEFAULT_LIMITS,
) -> Tuple[ExprTree, int]:
    """Randomly re-assign one node's kind once the loss has stalled long enough.

    Parameters
    ----------
    tree : ExprTree
    stagnation_count : int
    cfg : SelectionConfig
    rng : np.random.Generator, optional
        Defaults to a generator seeded with ``cfg.rng_seed``.
    x_domain : np.ndarray, optional
        Training inputs for the log/sqrt domain scan.
    limits : NumericLimits, optional

    Returns
    -------
    tree : ExprTree
    stagnation_count : int
        Reset to 0 when a perturbation was attempted.
    """
    if stagnation_count < cfg.stagnation_limit:
        return tree, stagnation_count
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)

    nodes = tree.nodes()
    node = nodes[int(rng.integers(len(nodes)))]
    choices = [kind for kind in library(tree.input_dim) if kind != node.kind]
    for choice_index in rng.permutation(len(choices)):
        new_kind = choices[choice_index]
        side = "left" if rng.random() < 0.5 else "right"
        fresh_var = int(rng.integers(tree.input_dim))
        old_name = node.kind.name
        try:
            _substitute_node(
                tree, node, new_kind, side, fresh_var, cfg.max_depth, x_domain, limits
            )
        except MutationRejected:
            continue
        logger.debug(f"Stagnation perturbation: {old_name} -> {new_kind.name}")
        break

    return tree, 0
