"""Test-only parser for rendered formulas.

Evaluates the infix text written by ``to_formula`` with the same guarded
semantics as the trees (denominators pushed away from zero, log and sqrt
on a floored argument) so a rendered formula can be scored on its own.
"""

import re
from typing import Callable, Dict, List

import numpy as np
from scipy.special import expit

EPS = 1e-12
_TOKEN = re.compile(
    r"\s*(?:(?P<number>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_]\w*)"
    r"|(?P<op>[-+*/()]))"
)
_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "log": lambda v: np.log(np.maximum(v, EPS)),
    "sqrt": lambda v: np.sqrt(np.maximum(v, EPS)),
    "exp": lambda v: np.exp(np.minimum(v, 700.0)),
    "relu": lambda v: np.maximum(v, 0.0),
    "sigmoid": expit,
}

Expression = Callable[[Dict[str, np.ndarray]], np.ndarray]


def _tokenize(text: str) -> List[tuple]:
    tokens = []
    position = 0
    text = text.strip()
    while position < len(text):
        match = _TOKEN.match(text, position)
        if match is None or match.end() == position:
            raise ValueError(f"Cannot parse {text[position:]!r}")
        kind = match.lastgroup
        tokens.append((kind, match.group(kind)))
        position = match.end()
    return tokens


def _guarded_divide(numerator, denominator):
    sign = np.where(denominator < 0, -1.0, 1.0)
    return numerator / (sign * np.maximum(np.abs(denominator), EPS))


class _Parser:
    def __init__(self, text: str) -> None:
        self.tokens = _tokenize(text)
        self.position = 0

    def _peek(self):
        if self.position < len(self.tokens):
            return self.tokens[self.position]
        return (None, None)

    def _take(self, expected=None):
        token = self._peek()
        if expected is not None and token[1] != expected:
            raise ValueError(f"Expected {expected!r}, got {token[1]!r}")
        self.position += 1
        return token

    def parse(self) -> Expression:
        expression = self._sum()
        if self.position != len(self.tokens):
            raise ValueError(f"Trailing tokens from {self._peek()[1]!r}")
        return expression

    def _sum(self) -> Expression:
        left = self._product()
        while self._peek()[1] in ("+", "-"):
            op = self._take()[1]
            right = self._product()
            if op == "+":
                left = (lambda a, b: lambda env: a(env) + b(env))(left, right)
            else:
                left = (lambda a, b: lambda env: a(env) - b(env))(left, right)
        return left

    def _product(self) -> Expression:
        left = self._unary()
        while self._peek()[1] in ("*", "/"):
            op = self._take()[1]
            right = self._unary()
            if op == "*":
                left = (lambda a, b: lambda env: a(env) * b(env))(left, right)
            else:
                left = (lambda a, b: lambda env: _guarded_divide(a(env), b(env)))(
                    left, right
                )
        return left

    def _unary(self) -> Expression:
        if self._peek()[1] == "-":
            self._take()
            operand = self._unary()
            return lambda env: -operand(env)
        return self._primary()

    def _primary(self) -> Expression:
        kind, value = self._take()
        if kind == "number":
            constant = float(value)
            return lambda env: constant
        if value == "(":
            inner = self._sum()
            self._take(")")
            return inner
        if kind == "name" and value in _FUNCTIONS and self._peek()[1] == "(":
            self._take("(")
            argument = self._sum()
            self._take(")")
            function = _FUNCTIONS[value]
            return lambda env: function(argument(env))
        if kind == "name":
            return lambda env: env[value]
        raise ValueError(f"Unexpected token {value!r}")


def evaluate_formula(text: str, x: np.ndarray, names=None) -> np.ndarray:
    """Evaluate a rendered formula on the columns of `x`."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, np.newaxis]
    if names is None:
        names = [f"x{index + 1}" for index in range(x.shape[1])]
    env = {name: x[:, index] for index, name in enumerate(names)}
    return np.broadcast_to(_Parser(text).parse()(env), (x.shape[0],)).astype(float)
