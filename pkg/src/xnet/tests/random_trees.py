"""Random trees for property tests."""

from typing import Optional, Sequence

import numpy as np

from xnet.expression import OPERATORS, ExprTree, Node, NodeKind, var


def random_tree(
    rng: np.random.Generator,
    input_dim: int = 1,
    max_depth: int = 5,
    kinds: Optional[Sequence[NodeKind]] = None,
    leaf_probability: float = 0.3,
    random_constants: bool = True,
) -> ExprTree:
    kinds = list(OPERATORS if kinds is None else kinds)

    def _constants():
        if not random_constants:
            return 1.0, 0.0
        weight = rng.uniform(0.5, 1.5) * rng.choice([-1.0, 1.0])
        return float(weight), float(rng.uniform(-0.5, 0.5))

    def _build(depth: int) -> Node:
        w, b = _constants()
        if depth >= max_depth or (depth > 1 and rng.random() < leaf_probability):
            return Node(var(int(rng.integers(input_dim))), w, b)
        kind = kinds[int(rng.integers(len(kinds)))]
        node = Node(kind, w, b, left=_build(depth + 1))
        if kind.is_binary:
            node.right = _build(depth + 1)
        return node

    return ExprTree(_build(1), input_dim)
