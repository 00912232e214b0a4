import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from random_trees import random_tree

from xnet.evolve import (
    MutationRejected,
    SelectionConfig,
    candidate_outputs,
    choose_side,
    perturb_on_stagnation,
    rank_candidates,
    select_kind,
    substitute,
    update_all_kinds,
)
from xnet.expression import (
    ADD,
    COS,
    LOG,
    MUL,
    SIN,
    SQRT,
    SUB,
    ExprTree,
    Node,
    audit_tree,
    init_default_tree,
    library,
    serialize_preorder,
    var,
)
from xnet.numerics import forward


def _kinds(tree: ExprTree) -> list:
    return [kind for kind, _, _ in serialize_preorder(tree)]


def _binary_node() -> Node:
    return Node(ADD, left=Node(var(0)), right=Node(var(0)))


def test_selection_config_validation():
    with pytest.raises(ValueError):
        SelectionConfig(ite=0)
    with pytest.raises(ValueError):
        SelectionConfig(accept_threshold=-0.1)
    with pytest.raises(ValueError):
        SelectionConfig(stagnation_limit=0)
    with pytest.raises(ValueError):
        SelectionConfig(max_depth=0)


def test_candidate_outputs_counts():
    assert len(candidate_outputs(1.0, 2.0, np.array([5.0]))) == 12
    assert len(candidate_outputs(1.0, None, np.array([5.0]))) == 8
    assert len(candidate_outputs(1.0, 2.0, np.array([5.0, 6.0]))) == 13


def test_candidate_outputs_values():
    candidates = {c.kind: c for c in candidate_outputs(1.0, 2.0, np.array([5.0]))}
    assert candidates[ADD].value == 3.0
    assert candidates[MUL].value == 2.0
    assert candidates[SIN].value == pytest.approx(math.sin(1.0))
    assert candidates[var(0)].value == 5.0


def test_log_and_sqrt_inadmissible_for_non_positive_input():
    candidates = {c.kind: c for c in candidate_outputs(0.0, None, np.array([1.0]))}
    assert not candidates[LOG].admissible
    assert not candidates[SQRT].admissible
    assert candidates[SIN].admissible
    ranked = rank_candidates(Node(SIN, left=Node(var(0))), 0.0, -1.0, None, [1.0])
    assert LOG not in [candidate.kind for candidate in ranked]


@pytest.mark.parametrize(
    "e_new, expected", [(3.0, ADD), (2.0, MUL), (-1.0, SUB), (100.0, None)]
)
def test_select_kind(e_new, expected):
    kind = select_kind(
        _binary_node(), e_new, 1.0, 2.0, np.array([5.0]), SelectionConfig()
    )
    assert kind == expected


def test_select_kind_breaks_ties_in_canonical_order():
    cfg = SelectionConfig()
    kind = select_kind(_binary_node(), 0.0, 0.0, 0.0, np.array([0.0]), cfg)
    assert kind == ADD


def test_select_kind_uses_node_constants():
    node = Node(ADD, w=2.0, b=1.0, left=Node(var(0)), right=Node(var(0)))
    assert select_kind(node, 7.0, 1.0, 2.0, np.array([5.0]), SelectionConfig()) == ADD


def test_select_kind_threshold_is_strict():
    kind = select_kind(
        _binary_node(),
        3.0,
        1.0,
        2.0,
        np.array([5.0]),
        SelectionConfig(accept_threshold=0.0),
    )
    assert kind is None


_QUARTERS = st.integers(-12, 12).map(lambda k: k / 4)


def _brute_force_kind(w, b, e_new, e_left, e_right, x, threshold):
    options = []
    if e_right is not None:
        options += [
            ("add", e_left + e_right),
            ("sub", e_left - e_right),
            ("mul", e_left * e_right),
            ("div", e_left / e_right),
        ]
    options += [("sin", math.sin(e_left)), ("cos", math.cos(e_left))]
    if e_left > 0:
        options += [("log", math.log(e_left)), ("sqrt", math.sqrt(e_left))]
    options += [
        ("exp", math.exp(e_left)),
        ("relu", max(e_left, 0.0)),
        ("sigmoid", 1.0 / (1.0 + math.exp(-e_left))),
    ]
    options += [(f"x{j + 1}", value) for j, value in enumerate(x)]

    residuals = [abs(w * value + b - e_new) for _, value in options]
    best = min(residuals)
    if not best < threshold:
        return None
    return next(
        name
        for (name, _), residual in zip(options, residuals)
        if residual <= best + 1e-12
    )


@settings(max_examples=1000, deadline=None)
@given(
    w=_QUARTERS,
    b=_QUARTERS,
    e_new=_QUARTERS,
    e_left=_QUARTERS,
    e_right=st.one_of(st.none(), _QUARTERS.filter(lambda value: value != 0.0)),
    x=st.lists(_QUARTERS, min_size=1, max_size=3),
    threshold=st.sampled_from([0.01, 0.5, 2.0]),
)
def test_select_kind_matches_brute_force(w, b, e_new, e_left, e_right, x, threshold):
    if e_right is None:
        node = Node(SIN, w=w, b=b, left=Node(var(0)))
    else:
        node = Node(ADD, w=w, b=b, left=Node(var(0)), right=Node(var(0)))
    kind = select_kind(
        node,
        e_new,
        e_left,
        e_right,
        np.array(x),
        SelectionConfig(accept_threshold=threshold),
    )
    expected = _brute_force_kind(w, b, e_new, e_left, e_right, x, threshold)
    assert (None if kind is None else kind.name) == expected


def test_rank_candidates_sorted():
    ranked = rank_candidates(_binary_node(), 0.4, 0.3, -0.2, np.array([1.0]))
    residuals = [candidate.residual for candidate in ranked]
    assert residuals == sorted(residuals)


def test_choose_side():
    node = _binary_node()
    assert choose_side(node, SIN, math.sin(2.0), 1.0, 2.0) == "right"
    assert choose_side(node, SIN, math.sin(1.0), 1.0, 2.0) == "left"
    assert choose_side(node, LOG, 0.0, 1.0, -2.0) == "left"
    assert choose_side(node, MUL, 0.0, 1.0, 2.0) == "left"


def test_substitute_unary_to_unary_keeps_child():
    tree = ExprTree(Node(SIN, w=2.0, b=0.5, left=Node(var(0), w=3.0)), 1)
    substitute(tree, 0, COS)
    assert _kinds(tree) == [COS, var(0)]
    assert (tree.root.w, tree.root.b) == (2.0, 0.5)
    assert tree.root.left.w == 3.0


def test_substitute_binary_to_binary_keeps_children():
    tree = init_default_tree(1)
    substitute(tree, 0, MUL)
    assert _kinds(tree) == [MUL, MUL, var(0), var(0), SIN, var(0)]


def test_substitute_unary_to_binary_adds_fresh_leaf():
    tree = ExprTree(Node(SIN, left=Node(var(0), w=3.0)), 2)
    substitute(tree, 0, SUB, fresh_var=1)
    assert _kinds(tree) == [SUB, var(0), var(1)]
    assert tree.root.left.w == 3.0
    assert (tree.root.right.w, tree.root.right.b) == (1.0, 0.0)
    assert tree.node_count_total == 3


def test_substitute_binary_to_unary_keeps_hinted_side():
    tree = init_default_tree(1)
    substitute(tree, 0, COS, side_hint="right")
    assert _kinds(tree) == [COS, SIN, var(0)]
    assert tree.node_count_total == 3
    assert tree.node_count_operator == 2

    tree = init_default_tree(1)
    substitute(tree, 0, COS)
    assert _kinds(tree) == [COS, MUL, var(0), var(0)]


def test_substitute_to_variable_collapses_subtree():
    tree = init_default_tree(1)
    tree.root.w = 4.0
    substitute(tree, 0, var(0))
    assert _kinds(tree) == [var(0)]
    assert tree.root.w == 4.0
    assert tree.node_count_total == 1


def test_substitute_variable_to_operator():
    tree = ExprTree(Node(var(1), w=2.0), 2)
    substitute(tree, 0, MUL, fresh_var=1)
    assert _kinds(tree) == [MUL, var(1), var(1)]
    substitute(tree, 1, SQRT)
    assert _kinds(tree) == [MUL, SQRT, var(0), var(1)]


def test_substitute_rejects_depth():
    node = Node(var(0))
    for _ in range(9):
        node = Node(SIN, left=node)
    tree = ExprTree(node, 1)
    before = tree.copy()
    with pytest.raises(MutationRejected):
        substitute(tree, 9, COS, max_depth=10)
    assert tree == before
    audit_tree(tree, max_depth=10)


def test_substitute_rejects_non_positive_log_input():
    tree = ExprTree(Node(SIN, left=Node(var(0))), 1)
    before = tree.copy()
    with pytest.raises(MutationRejected):
        substitute(tree, 0, LOG, x_domain=np.array([[-1.0], [2.0]]))
    assert tree == before
    substitute(tree, 0, LOG, x_domain=np.array([[0.5], [2.0]]))
    assert _kinds(tree) == [LOG, var(0)]


def test_substitute_argument_errors():
    tree = init_default_tree(1)
    with pytest.raises(ValueError):
        substitute(tree, 0, ADD)
    with pytest.raises(ValueError):
        substitute(tree, 0, var(1))
    with pytest.raises(ValueError):
        substitute(tree, 6, SIN)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), input_dim=st.integers(1, 3))
def test_random_substitutions_keep_tree_well_formed(seed, input_dim):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, input_dim, max_depth=4)
    kinds = library(input_dim)
    x_domain = rng.uniform(-2, 2, size=(10, input_dim))
    for _ in range(25):
        position = int(rng.integers(tree.node_count_total))
        new_kind = kinds[int(rng.integers(len(kinds)))]
        if tree.nodes()[position].kind == new_kind:
            continue
        before = tree.copy()
        try:
            substitute(
                tree,
                position,
                new_kind,
                side_hint=["left", "right", "none"][int(rng.integers(3))],
                fresh_var=int(rng.integers(input_dim)),
                max_depth=6,
                x_domain=x_domain,
            )
        except MutationRejected:
            assert tree == before
        audit_tree(tree, max_depth=6)


def test_update_all_kinds_switches_root_to_sub():
    tree = init_default_tree(1)
    x = np.array([-0.7])
    forward(tree, x)
    e_new = np.array([node.e_cached for node in tree.nodes()])
    e_new[0] = 0.49 - math.sin(-0.7)
    update_all_kinds(tree, e_new, x, SelectionConfig())
    assert _kinds(tree) == [SUB, MUL, var(0), var(0), SIN, var(0)]


def test_update_all_kinds_keeps_tree_at_its_own_outputs():
    tree = init_default_tree(1)
    x = np.array([-0.7])
    forward(tree, x)
    before = tree.copy()
    e_new = np.array([node.e_cached for node in tree.nodes()])
    update_all_kinds(tree, e_new, x, SelectionConfig())
    assert tree == before


def test_update_all_kinds_skips_removed_nodes():
    tree = init_default_tree(1)
    x = np.array([-1.5])
    forward(tree, x)
    e_new = np.array([node.e_cached for node in tree.nodes()])
    e_new[0] = -1.5
    update_all_kinds(tree, e_new, x, SelectionConfig())
    assert _kinds(tree) == [var(0)]
    assert tree.node_count_total == 1


def test_update_all_kinds_falls_through_rejected_mutation():
    tree = ExprTree(Node(ADD, left=Node(var(0)), right=Node(var(0))), 2)
    x = np.array([0.5, math.sin(0.5)])
    e_new = np.array([math.sin(0.5) + 0.5, math.sin(0.5), 0.5])
    update_all_kinds(tree, e_new, x, SelectionConfig(max_depth=2))
    assert _kinds(tree) == [ADD, var(1), var(0)]
    assert tree.depth() == 2


def test_update_all_kinds_checks_length():
    with pytest.raises(ValueError):
        update_all_kinds(
            init_default_tree(1), np.zeros(3), np.array([1.0]), SelectionConfig()
        )


def test_perturb_waits_for_stagnation_limit():
    tree = init_default_tree(1)
    before = tree.copy()
    result, count = perturb_on_stagnation(tree, 19, SelectionConfig())
    assert count == 19
    assert result == before


def test_perturb_changes_one_node_and_resets_count():
    tree = init_default_tree(1)
    before = tree.copy()
    result, count = perturb_on_stagnation(
        tree, 20, SelectionConfig(), np.random.default_rng(0)
    )
    assert count == 0
    assert _kinds(result) != _kinds(before)
    audit_tree(result, max_depth=10)


def test_perturb_is_reproducible():
    first, _ = perturb_on_stagnation(
        init_default_tree(1), 25, SelectionConfig(rng_seed=4)
    )
    second, _ = perturb_on_stagnation(
        init_default_tree(1), 25, SelectionConfig(rng_seed=4)
    )
    assert first == second
