"""Tree-shaped networks: the activation library, nodes, preorder encoding
and formula rendering."""

import copy
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

DEFAULT_MAX_DEPTH = 10


class InvalidDimensionError(ValueError):
    """Raised when a tree is requested for a non-positive input dimension."""


class MalformedEncodingError(ValueError):
    """Raised when a preorder encoding does not describe exactly one tree."""


class MalformedTreeError(ValueError):
    """Raised when a tree fails the arity or depth audit."""


class Op(IntEnum):
    """Activation/operator tags in canonical library order."""

    ADD = 0
    SUB = 1
    MUL = 2
    DIV = 3
    SIN = 4
    COS = 5
    LOG = 6
    SQRT = 7
    EXP = 8
    RELU = 9
    SIGMOID = 10
    VAR = 11


_BINARY_OPS = frozenset({Op.ADD, Op.SUB, Op.MUL, Op.DIV})
_OP_NAMES = {
    Op.ADD: "add",
    Op.SUB: "sub",
    Op.MUL: "mul",
    Op.DIV: "div",
    Op.SIN: "sin",
    Op.COS: "cos",
    Op.LOG: "log",
    Op.SQRT: "sqrt",
    Op.EXP: "exp",
    Op.RELU: "relu",
    Op.SIGMOID: "sigmoid",
}
_NAME_TO_OP = {name: op for op, name in _OP_NAMES.items()}
_INFIX_SYMBOLS = {Op.ADD: " + ", Op.SUB: " - ", Op.MUL: "*", Op.DIV: "/"}


@dataclass(frozen=True, order=True)
class NodeKind:
    """Activation function of a node, or a variable leaf.

    Ordering follows the canonical library order
    ``[add, sub, mul, div, sin, cos, log, sqrt, exp, relu, sigmoid, x1, x2, ...]``,
    which is the tie-break order everywhere.

    Attributes
    ----------
    op : Op
    index : int, optional
        Input-dimension ordinal, only meaningful for ``Op.VAR``.
    """

    op: Op
    index: int = 0

    def __post_init__(self) -> None:
        if self.op != Op.VAR and self.index != 0:
            raise ValueError(f"Only variable leaves carry an index, got {self.op!r}")
        if self.index < 0:
            raise ValueError(f"Variable index must be non-negative, got {self.index}")

    @property
    def arity(self) -> int:
        if self.op == Op.VAR:
            return 0
        return 2 if self.op in _BINARY_OPS else 1

    @property
    def is_binary(self) -> bool:
        return self.arity == 2

    @property
    def is_unary(self) -> bool:
        return self.arity == 1

    @property
    def is_leaf(self) -> bool:
        return self.op == Op.VAR

    @property
    def name(self) -> str:
        """Text spelling used by the ``.xnet`` format (``x1`` is variable 0)."""
        if self.op == Op.VAR:
            return f"x{self.index + 1}"
        return _OP_NAMES[self.op]

    @classmethod
    def from_name(cls, name: str) -> "NodeKind":
        name = name.strip().lower()
        if name in _NAME_TO_OP:
            return cls(_NAME_TO_OP[name])
        if name.startswith("x") and name[1:].isdigit() and int(name[1:]) >= 1:
            return cls(Op.VAR, int(name[1:]) - 1)
        raise MalformedEncodingError(f"Unknown node kind {name!r}")

    def __str__(self) -> str:
        return self.name


ADD = NodeKind(Op.ADD)
SUB = NodeKind(Op.SUB)
MUL = NodeKind(Op.MUL)
DIV = NodeKind(Op.DIV)
SIN = NodeKind(Op.SIN)
COS = NodeKind(Op.COS)
LOG = NodeKind(Op.LOG)
SQRT = NodeKind(Op.SQRT)
EXP = NodeKind(Op.EXP)
RELU = NodeKind(Op.RELU)
SIGMOID = NodeKind(Op.SIGMOID)

OPERATORS = (ADD, SUB, MUL, DIV, SIN, COS, LOG, SQRT, EXP, RELU, SIGMOID)


def var(index: int) -> NodeKind:
    """Variable leaf reading input dimension `index`."""
    return NodeKind(Op.VAR, index)


def library(input_dim: int) -> Tuple[NodeKind, ...]:
    """Candidate kinds in canonical order: operators, then one leaf per variable.

    Parameters
    ----------
    input_dim : int

    Returns
    -------
    kinds : tuple of NodeKind, length 11 + input_dim
    """
    return OPERATORS + tuple(var(index) for index in range(input_dim))


@dataclass(eq=False)
class Node:
    """One neuron: output ``E = w * f(children) + b``.

    Attributes
    ----------
    kind : NodeKind
    w : float
        Multiplicative weight.
    b : float
        Additive bias.
    left, right : Node, optional
        Children, present exactly as ``kind.arity`` requires.
    e_cached : float
        Output of this node in the last forward pass.
    f_cached : float
        Activation value ``f(children)`` in the last forward pass.
    """

    kind: NodeKind
    w: float = 1.0
    b: float = 0.0
    left: Optional["Node"] = None
    right: Optional["Node"] = None
    e_cached: float = field(default=np.nan, repr=False)
    f_cached: float = field(default=np.nan, repr=False)

    def children(self) -> list:
        return [child for child in (self.left, self.right) if child is not None]

    def iter_preorder(self) -> Iterator["Node"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            if node.right is not None:
                stack.append(node.right)
            if node.left is not None:
                stack.append(node.left)

    def depth(self) -> int:
        """Number of nodes on the longest path from this node to a leaf."""
        return 1 + max((child.depth() for child in self.children()), default=0)


class NodeCounts(NamedTuple):
    operator_count: int
    total_count: int
    parameter_count: int


@dataclass(eq=False)
class ExprTree:
    """A binary expression tree used as a network.

    Attributes
    ----------
    root : Node
    input_dim : int
        Number of input variables the leaves may read.
    node_count_total : int
        All nodes including leaves. Recomputed by `refresh`.
    node_count_operator : int
        Non-leaf nodes. Recomputed by `refresh`.
    """

    root: Node
    input_dim: int
    node_count_total: int = field(init=False, default=0)
    node_count_operator: int = field(init=False, default=0)
    cache_valid: bool = field(init=False, default=False, repr=False)
    cached_input: Optional[tuple] = field(init=False, default=None, repr=False)

    def __post_init__(self) -> None:
        if self.input_dim < 1:
            raise InvalidDimensionError(
                f"input_dim must be at least 1, got {self.input_dim}"
            )
        self.refresh()

    def refresh(self) -> None:
        """Recount nodes after a mutation and mark cached outputs stale."""
        nodes = self.nodes()
        self.node_count_total = len(nodes)
        self.node_count_operator = sum(not node.kind.is_leaf for node in nodes)
        self.cache_valid = False

    def nodes(self) -> list:
        """Nodes in preorder."""
        return list(self.root.iter_preorder())

    def preorder_entries(self) -> list:
        """Nodes in preorder with the preorder positions of their children.

        Returns
        -------
        entries : list of (Node, int or None, int or None)
        """
        entries = []

        def _visit(node: Node) -> int:
            position = len(entries)
            entries.append([node, None, None])
            if node.left is not None:
                entries[position][1] = _visit(node.left)
            if node.right is not None:
                entries[position][2] = _visit(node.right)
            return position

        _visit(self.root)
        return [tuple(entry) for entry in entries]

    def depth(self) -> int:
        return self.root.depth()

    def copy(self) -> "ExprTree":
        return copy.deepcopy(self)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ExprTree):
            return NotImplemented
        return self.input_dim == other.input_dim and serialize_preorder(
            self
        ) == serialize_preorder(other)

    def __str__(self) -> str:
        return to_formula(self)


Encoding = Sequence[Tuple[NodeKind, float, float]]


def init_default_tree(input_dim: int) -> ExprTree:
    """Initial network ``x^2 + sin(x)`` with all ``w = 1`` and ``b = 0``.

    Only the first variable is used; selection introduces the others.

    Parameters
    ----------
    input_dim : int

    Returns
    -------
    tree : ExprTree
    """
    if input_dim < 1:
        raise InvalidDimensionError(f"input_dim must be at least 1, got {input_dim}")
    x = var(0)
    root = Node(
        ADD,
        left=Node(MUL, left=Node(x), right=Node(x)),
        right=Node(SIN, left=Node(x)),
    )
    return ExprTree(root, input_dim)


def serialize_preorder(tree: ExprTree) -> list:
    """Preorder list of ``(kind, w, b)``."""
    return [(node.kind, float(node.w), float(node.b)) for node in tree.nodes()]


def deserialize_preorder(sequence: Encoding, input_dim: int) -> ExprTree:
    """Rebuild a tree from its preorder encoding.

    Parameters
    ----------
    sequence : sequence of (NodeKind, float, float)
    input_dim : int

    Returns
    -------
    tree : ExprTree

    Raises
    ------
    MalformedEncodingError
        If the arities do not consume exactly the whole sequence, or a
        variable leaf reads past `input_dim`.
    """
    sequence = list(sequence)
    if not sequence:
        raise MalformedEncodingError("Empty encoding")
    position = 0

    def _build() -> Node:
        nonlocal position
        if position >= len(sequence):
            raise MalformedEncodingError(
                f"Encoding truncated after {len(sequence)} entries"
            )
        kind, w, b = sequence[position]
        position += 1
        if kind.is_leaf and kind.index >= input_dim:
            raise MalformedEncodingError(
                f"{kind.name} reads past input_dim={input_dim}"
            )
        node = Node(kind, float(w), float(b))
        if kind.arity >= 1:
            node.left = _build()
        if kind.arity == 2:
            node.right = _build()
        return node

    root = _build()
    if position != len(sequence):
        raise MalformedEncodingError(
            f"Encoding has {len(sequence) - position} trailing entries"
        )
    return ExprTree(root, input_dim)


def count_nodes(tree: ExprTree) -> NodeCounts:
    """Operator nodes, all nodes, and parameters (one w and one b per node)."""
    nodes = tree.nodes()
    n_operators = sum(not node.kind.is_leaf for node in nodes)
    return NodeCounts(n_operators, len(nodes), 2 * len(nodes))


def audit_tree(tree: ExprTree, max_depth: Optional[int] = None) -> None:
    """Check arity, variable indices, node counts and depth.

    Raises
    ------
    MalformedTreeError
    """
    nodes = tree.nodes()
    for node in nodes:
        n_children = len(node.children())
        if n_children != node.kind.arity:
            raise MalformedTreeError(
                f"{node.kind.name} has {n_children} children, "
                f"expected {node.kind.arity}"
            )
        if node.kind.arity == 1 and node.right is not None:
            raise MalformedTreeError(f"{node.kind.name} carries a right child")
        if node.kind.is_leaf and node.kind.index >= tree.input_dim:
            raise MalformedTreeError(
                f"{node.kind.name} reads past input_dim={tree.input_dim}"
            )
    counts = count_nodes(tree)
    if (counts.operator_count, counts.total_count) != (
        tree.node_count_operator,
        tree.node_count_total,
    ):
        raise MalformedTreeError("Stored node counts are out of date")
    if max_depth is not None and tree.depth() > max_depth:
        raise MalformedTreeError(
            f"Tree depth {tree.depth()} exceeds maximum {max_depth}"
        )


def _format_number(value: float, precision: Optional[int]) -> str:
    if precision is None:
        return repr(float(value))
    return f"{value:.{precision}f}"


def _rounds_to(value: float, target: float, precision: Optional[int]) -> bool:
    if precision is None:
        return value == target
    return round(value, precision) == target


def _render(
    node: Node, names: Sequence[str], precision: Optional[int], wrap: bool
) -> str:
    kind = node.kind
    if kind.is_leaf:
        text = names[kind.index]
    elif kind.is_unary:
        text = f"{kind.name}({_render(node.left, names, precision, wrap=False)})"
    else:
        left = _render(node.left, names, precision, wrap=True)
        right = _render(node.right, names, precision, wrap=True)
        text = f"({left}{_INFIX_SYMBOLS[kind.op]}{right})"

    has_affine = False
    if not _rounds_to(node.w, 1.0, precision):
        text = f"{_format_number(node.w, precision)}*{text}"
        has_affine = True
    if not _rounds_to(node.b, 0.0, precision):
        sign = "-" if node.b < 0 else "+"
        text = f"{text} {sign} {_format_number(abs(node.b), precision)}"
        has_affine = True
    if wrap and has_affine:
        text = f"({text})"
    return text


def to_formula(
    tree: ExprTree,
    precision: Optional[int] = 2,
    feature_names: Optional[Sequence[str]] = None,
) -> str:
    """Render the tree as an infix formula.

    Each node renders as ``w*f(children) + b``; ``w = 1`` drops the factor and
    ``b = 0`` drops the addend.

    Parameters
    ----------
    tree : ExprTree
    precision : int or None, optional
        Decimal places for constants, by default 2. None writes every constant
        at full precision.
    feature_names : sequence of str, optional
        Names for the variables, by default ``x1, x2, ...``.

    Returns
    -------
    formula : str
    """
    if feature_names is None:
        feature_names = [f"x{index + 1}" for index in range(tree.input_dim)]
    if len(feature_names) < tree.input_dim:
        raise ValueError(
            f"Need {tree.input_dim} feature names, got {len(feature_names)}"
        )
    return _render(tree.root, feature_names, precision, wrap=False)


def tree_to_text(tree: ExprTree) -> str:
    """Canonical ``.xnet`` text: a header then one ``KIND w b`` line per node."""
    lines = [f"# xnet input_dim={tree.input_dim}"]
    lines.extend(
        f"{kind.name} {w!r} {b!r}" for kind, w, b in serialize_preorder(tree)
    )
    return "\n".join(lines) + "\n"


def tree_from_text(text: str, input_dim: Optional[int] = None) -> ExprTree:
    """Parse ``.xnet`` text.

    Parameters
    ----------
    text : str
    input_dim : int, optional
        Overrides the header. Without either, the highest variable index
        read by a leaf decides.

    Returns
    -------
    tree : ExprTree
    """
    header_dim = None
    sequence = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "input_dim=" in line:
                header_dim = int(line.split("input_dim=")[1].split()[0])
            continue
        fields = line.split()
        if len(fields) != 3:
            raise MalformedEncodingError(
                f"Line {line_number}: expected 'KIND w b', got {line!r}"
            )
        try:
            weight, bias = float(fields[1]), float(fields[2])
        except ValueError as error:
            raise MalformedEncodingError(f"Line {line_number}: {error}") from error
        sequence.append((NodeKind.from_name(fields[0]), weight, bias))

    if input_dim is None:
        input_dim = header_dim
    if input_dim is None:
        input_dim = 1 + max(
            (kind.index for kind, _, _ in sequence if kind.is_leaf), default=0
        )
    return deserialize_preorder(sequence, input_dim)


def save_tree(tree: ExprTree, filename: Union[str, Path] = "model.xnet") -> None:
    """Write the tree in ``.xnet`` text form."""
    Path(filename).write_text(tree_to_text(tree), encoding="utf-8")


def load_tree(
    filename: Union[str, Path] = "model.xnet", input_dim: Optional[int] = None
) -> ExprTree:
    """Read a tree from an ``.xnet`` file."""
    return tree_from_text(Path(filename).read_text(encoding="utf-8"), input_dim)
