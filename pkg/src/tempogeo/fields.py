"""Scalar fields of (t, x1..xd) written in a small expression language.

Grammar::

    expr   := term (("+"|"-") term)*
    term   := factor (("*"|"/") factor)*
    factor := "-" factor | power
    power  := atom ("^" factor)?
    atom   := NUMBER | IDENT | IDENT "(" expr ("," expr)* ")" | "(" expr ")"

Expressions compile to closures that accept floats, ndarrays or
:class:`~tempogeo.dual.Dual` values, so the same compiled field yields values
on a batch of points and exact derivatives by forward-mode AD.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from tempogeo import dual as D
from tempogeo.dual import Dual

# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expression"


@dataclass(frozen=True)
class Add:
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Sub:
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Mul:
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Div:
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Pow:
    base: "Expression"
    exponent: "Expression"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Expression = Union[Num, Var, Neg, Add, Sub, Mul, Div, Pow, Call]

FUNCTIONS: dict[str, int] = {
    "exp": 1,
    "log": 1,
    "sin": 1,
    "cos": 1,
    "sqrt": 1,
    "tanh": 1,
    "abs": 1,
    "min": 2,
    "max": 2,
}

_VAR_RE = re.compile(r"x([1-9][0-9]*)\Z")


# ---------------------------------------------------------------------------
# errors


class FieldError(Exception):
    """Base class for expression errors."""


class ParseError(FieldError):
    def __init__(self, message: str, offset: int, expected: frozenset = frozenset()):
        self.offset = offset
        self.expected = frozenset(expected)
        detail = f"{message} at byte {offset}"
        if self.expected:
            detail += " (expected one of: " + ", ".join(sorted(self.expected)) + ")"
        super().__init__(detail)
        self.message = message


class UnknownIdentifierError(ParseError):
    def __init__(self, name: str, offset: int):
        self.name = name
        super().__init__(f"unknown identifier `{name}`", offset)


class ArityError(ParseError):
    def __init__(self, func: str, got: int, offset: int):
        self.func = func
        super().__init__(f"`{func}` takes {FUNCTIONS[func]} argument(s), got {got}", offset)


class EvaluationDomainError(FieldError):
    """Raised when an evaluation leaves the domain of log, sqrt, / or ^.

    ``expression`` is the offending subexpression; ``index`` holds the flat
    indices of the offending batch elements.
    """

    def __init__(self, message: str, expression: Expression, index=None):
        self.expression = expression
        self.index = np.atleast_1d(index) if index is not None else np.array([0])
        super().__init__(f"{message} in `{unparse(expression)}`")


# ---------------------------------------------------------------------------
# tokenizer / parser

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<ident>[a-z][a-z0-9]*)|(?P<op>[-+*/^(),]))"
)


@dataclass
class _Token:
    kind: str  # "num", "ident", "op", "end"
    text: str
    offset: int  # byte offset into the UTF-8 source


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    byte = 0
    while True:
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            rest = source[pos:]
            stripped = rest.lstrip()
            byte += len(rest[: len(rest) - len(stripped)].encode())
            if not stripped:
                tokens.append(_Token("end", "", byte))
                return tokens
            raise ParseError(
                f"unexpected character {stripped[0]!r}",
                byte,
                frozenset({"number", "identifier", "(", "-"}),
            )
        kind = m.lastgroup
        start = m.start(kind)
        byte += len(source[pos:start].encode())
        tokens.append(_Token(kind, m.group(kind), byte))
        byte += len(m.group(kind).encode())
        pos = m.end()


class _Parser:
    def __init__(self, source: str, dim: int | None):
        self.tokens = _tokenize(source)
        self.i = 0
        self.dim = dim

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def _accept(self, text: str) -> bool:
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def _expect(self, text: str, expected: frozenset):
        if not self._accept(text):
            got = self.tok.text or "end of input"
            raise ParseError(f"unexpected {got!r}", self.tok.offset, expected)

    def parse(self) -> Expression:
        node = self.expr()
        if self.tok.kind != "end":
            raise ParseError(
                f"unexpected {self.tok.text!r}",
                self.tok.offset,
                frozenset({"+", "-", "*", "/", "^", "end of input"}),
            )
        return node

    def expr(self) -> Expression:
        node = self.term()
        while True:
            if self._accept("+"):
                node = Add(node, self.term())
            elif self._accept("-"):
                node = Sub(node, self.term())
            else:
                return node

    def term(self) -> Expression:
        node = self.factor()
        while True:
            if self._accept("*"):
                node = Mul(node, self.factor())
            elif self._accept("/"):
                node = Div(node, self.factor())
            else:
                return node

    def factor(self) -> Expression:
        if self._accept("-"):
            return Neg(self.factor())
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        if self._accept("^"):
            return Pow(base, self.factor())
        return base

    def atom(self) -> Expression:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Num(float(tok.text))
        if tok.kind == "ident":
            self.i += 1
            if tok.text in FUNCTIONS:
                if not (self.tok.kind == "op" and self.tok.text == "("):
                    raise ParseError(
                        f"function `{tok.text}` must be called", self.tok.offset, frozenset({"("})
                    )
                self.i += 1
                args = [self.expr()]
                while self._accept(","):
                    args.append(self.expr())
                self._expect(")", frozenset({")", ","}))
                if len(args) != FUNCTIONS[tok.text]:
                    raise ArityError(tok.text, len(args), tok.offset)
                return Call(tok.text, tuple(args))
            if tok.text == "t":
                return Var("t")
            m = _VAR_RE.match(tok.text)
            if m and (self.dim is None or int(m.group(1)) <= self.dim):
                return Var(tok.text)
            raise UnknownIdentifierError(tok.text, tok.offset)
        if self._accept("("):
            node = self.expr()
            self._expect(")", frozenset({")"}))
            return node
        got = tok.text or "end of input"
        raise ParseError(
            f"unexpected {got!r}", tok.offset, frozenset({"number", "identifier", "(", "-"})
        )


def parse(source: str, dim: int | None = None) -> Expression:
    """Parse DSL source into an AST.

    With ``dim`` given, variables ``x{i}`` with ``i > dim`` are rejected as
    unknown identifiers.
    """
    return _Parser(source, dim).parse()


# ---------------------------------------------------------------------------
# printing

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}


def _prec(node) -> int:
    return _PREC.get(type(node), 5)


def _wrap(node, needed: int) -> str:
    s = unparse(node)
    return f"({s})" if _prec(node) < needed else s


def unparse(node: Expression) -> str:
    """Render an AST back to source with minimal parentheses."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}(" + ", ".join(unparse(a) for a in node.args) + ")"
    if isinstance(node, Neg):
        return "-" + _wrap(node.operand, 3)
    if isinstance(node, Pow):
        return _wrap(node.base, 5) + "^" + _wrap(node.exponent, 3)
    op = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(node)]
    p = _prec(node)
    return f"{_wrap(node.left, p)} {op} {_wrap(node.right, p + 1)}"


def variables(node: Expression) -> frozenset:
    if isinstance(node, Var):
        return frozenset({node.name})
    if isinstance(node, Num):
        return frozenset()
    if isinstance(node, Call):
        return frozenset().union(*(variables(a) for a in node.args))
    if isinstance(node, Neg):
        return variables(node.operand)
    if isinstance(node, Pow):
        return variables(node.base) | variables(node.exponent)
    return variables(node.left) | variables(node.right)


# ---------------------------------------------------------------------------
# compilation

Env = dict


def _bad(cond, node, message):
    cond = np.asarray(cond)
    if cond.any():
        raise EvaluationDomainError(message, node, np.flatnonzero(cond))


def _compile(node: Expression) -> Callable[[Env], object]:
    if isinstance(node, Num):
        v = float(node.value)
        return lambda env: v
    if isinstance(node, Var):
        name = node.name
        return lambda env: env[name]
    if isinstance(node, Neg):
        f = _compile(node.operand)
        return lambda env: -f(env)
    if isinstance(node, (Add, Sub, Mul)):
        fl, fr = _compile(node.left), _compile(node.right)
        if isinstance(node, Add):
            return lambda env: fl(env) + fr(env)
        if isinstance(node, Sub):
            return lambda env: fl(env) - fr(env)
        return lambda env: fl(env) * fr(env)
    if isinstance(node, Div):
        fl, fr = _compile(node.left), _compile(node.right)

        def div(env):
            den = fr(env)
            _bad(D.primal(den) == 0, node, "division by zero")
            return fl(env) / den

        return div
    if isinstance(node, Pow):
        return _compile_pow(node)
    if isinstance(node, Call):
        return _compile_call(node)
    raise TypeError(f"not an expression node: {node!r}")


def _compile_pow(node: Pow):
    fb = _compile(node.base)
    if not variables(node.exponent):
        n = _compile(node.exponent)({})
        if float(n).is_integer() and abs(n) <= 64:
            n = int(n)

            def ipow(env):
                b = fb(env)
                if n < 0:
                    _bad(D.primal(b) == 0, node, "zero base with negative exponent")
                return D.ipow(b, n)

            return ipow
    fe = _compile(node.exponent)

    def rpow(env):
        b = fb(env)
        _bad(np.asarray(D.primal(b)) <= 0, node, "non-integer power of non-positive base")
        return D.exp(fe(env) * D.log(b))

    return rpow


def _compile_call(node: Call):
    args = [_compile(a) for a in node.args]
    name = node.func
    if name == "log":
        (f,) = args

        def log(env):
            a = f(env)
            _bad(np.asarray(D.primal(a)) <= 0, node, "log of non-positive argument")
            return D.log(a)

        return log
    if name == "sqrt":
        (f,) = args

        def sqrt(env):
            a = f(env)
            _bad(np.asarray(D.primal(a)) <= 0, node, "sqrt of non-positive argument")
            return D.sqrt(a)

        return sqrt
    if name in ("min", "max"):
        fa, fb = args
        op = D.minimum if name == "min" else D.maximum
        return lambda env: op(fa(env), fb(env))
    op = {"exp": D.exp, "sin": D.sin, "cos": D.cos, "tanh": D.tanh, "abs": D.absolute}[name]
    (f,) = args
    return lambda env: op(f(env))


# ---------------------------------------------------------------------------
# fields


def _var_names(dim: int) -> list[str]:
    return [f"x{i + 1}" for i in range(dim)]


@dataclass(frozen=True, eq=False)
class ScalarField:
    """A DSL expression in ``t`` and ``x1..x{dim}``.

    Calling the field evaluates it on a point or a batch of points; ``x`` has
    shape ``(..., dim)`` and the result has the batch shape ``(...)``.
    """

    expression: Expression
    dim: int
    source: str = ""
    _fn: Callable = field(init=False, repr=False)
    _vars: frozenset = field(init=False, repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("field dimension must be positive")
        for name in variables(self.expression):
            m = _VAR_RE.match(name)
            if m and int(m.group(1)) > self.dim:
                raise UnknownIdentifierError(name, 0)
        object.__setattr__(self, "_fn", _compile(self.expression))
        object.__setattr__(self, "_vars", variables(self.expression))
        if not self.source:
            object.__setattr__(self, "source", unparse(self.expression))

    @classmethod
    def parse(cls, source: str, dim: int) -> "ScalarField":
        return cls(parse(source, dim), dim, source)

    def depends_on(self, name: str) -> bool:
        return name in self._vars

    def env(self, t, x) -> Env:
        env = {"t": t}
        for i, name in enumerate(_var_names(self.dim)):
            env[name] = x[..., i]
        return env

    def evaluate_env(self, env: Env):
        with np.errstate(over="ignore", invalid="ignore"):
            return self._fn(env)

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise ValueError(f"expected coordinates with trailing dimension {self.dim}")
        value = self.evaluate_env(self.env(t, x))
        return np.broadcast_to(np.asarray(value, dtype=float), x.shape[:-1]).copy()

    def __str__(self) -> str:
        return self.source


def as_field(value, dim: int) -> ScalarField:
    if isinstance(value, ScalarField):
        return value
    if isinstance(value, (int, float)):
        value = repr(float(value))
    return ScalarField.parse(value, dim)


def _seeded_env(f: ScalarField, t, x, wrt: tuple[str, ...]) -> Env:
    env = f.env(t, x)
    if len(wrt) == 1:
        (a,) = wrt
        env[a] = Dual(env[a], 1.0)
    elif len(wrt) == 2:
        a, b = wrt
        for name in {a, b}:
            inner = Dual(env[name], 1.0 if name == a else 0.0)
            env[name] = Dual(inner, Dual(1.0 if name == b else 0.0, 0.0))
    else:
        raise ValueError("only first and second derivatives are supported")
    return env


def _check_wrt(f: ScalarField, wrt: tuple[str, ...]):
    allowed = {"t", *_var_names(f.dim)}
    for name in wrt:
        if name not in allowed:
            raise ValueError(f"cannot differentiate with respect to {name!r} in a {f.dim}-d field")


def derivative(f: ScalarField, *wrt: str) -> Callable:
    """Return an evaluator of the exact partial derivative of ``f``.

    ``derivative(f, "x1")`` is the first partial in x1, ``derivative(f, "x1",
    "x2")`` the mixed second partial, ``derivative(f, "t")`` the time partial.
    """
    _check_wrt(f, wrt)

    def evaluator(t, x):
        x = np.asarray(x, dtype=float)
        out = f.evaluate_env(_seeded_env(f, t, x, wrt))
        if len(wrt) == 1:
            out = D.tangent(out)
        else:
            out = D.tangent(D.tangent(out))
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1]).copy()

    return evaluator


def _as_batch(v, shape):
    return np.broadcast_to(np.asarray(v, dtype=float), shape)


def gradient(f: ScalarField, t, x):
    """Value and spatial gradient: arrays of shape ``(...)`` and ``(..., d)``."""
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1]
    d = f.dim
    names = _var_names(d)
    value = None
    grad = np.zeros(shape + (d,))
    for i, name in enumerate(names):
        if not f.depends_on(name):
            continue
        out = f.evaluate_env(_seeded_env(f, t, x, (name,)))
        value = D.primal(out)
        grad[..., i] = _as_batch(D.tangent(out), shape)
    if value is None:
        value = f.evaluate_env(f.env(t, x))
    return _as_batch(value, shape).copy(), grad


def hessian(f: ScalarField, t, x):
    """Value, spatial gradient and spatial Hessian of ``f`` at ``(t, x)``."""
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1]
    d = f.dim
    names = _var_names(d)
    value, grad = gradient(f, t, x)
    hess = np.zeros(shape + (d, d))
    for i in range(d):
        if not f.depends_on(names[i]):
            continue
        for j in range(i, d):
            if not f.depends_on(names[j]):
                continue
            out = f.evaluate_env(_seeded_env(f, t, x, (names[i], names[j])))
            hij = _as_batch(D.tangent(D.tangent(out)), shape)
            hess[..., i, j] = hij
            hess[..., j, i] = hij
    return value, grad, hess


def time_derivative(f: ScalarField, t, x, t_of=None):
    """Exact ∂f/∂t; ``t_of`` optionally reparametrizes time (AD flows through it)."""
    x = np.asarray(x, dtype=float)
    env = f.env(Dual(t, 1.0) if t_of is None else t_of(Dual(t, 1.0)), x)
    out = f.evaluate_env(env)
    return _as_batch(D.tangent(out), x.shape[:-1]).copy()


def is_constant(f: ScalarField) -> bool:
    return not variables(f.expression)


def constant_value(f: ScalarField) -> float:
    if not is_constant(f):
        raise ValueError(f"field `{f}` is not constant")
    return float(f.evaluate_env({}))


__all__ = [
    "Num",
    "Var",
    "Neg",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Pow",
    "Call",
    "Expression",
    "FieldError",
    "ParseError",
    "UnknownIdentifierError",
    "ArityError",
    "EvaluationDomainError",
    "ScalarField",
    "parse",
    "unparse",
    "variables",
    "as_field",
    "derivative",
    "gradient",
    "hessian",
    "time_derivative",
    "is_constant",
    "constant_value",
]
