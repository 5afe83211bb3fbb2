"""Size-bounded expression trees for genetic programming.

Trees are immutable tuples of nodes in prefix order. Every node, including a
scaled binary feature ``c * x_j``, counts as one toward the size cap.

Infix grammar (fully parenthesized on output)::

    expr   := term (('+' | '-') term)*
    term   := factor ('*' factor)*
    factor := number | number '·' feature | feature
            | ('sq' | 'plog' | 'log') '(' expr ')'
            | 'aq' '(' expr ',' expr ')'
            | '(' expr ')'
    feature := 'x' digits | column name
    number := ['-'] decimal ['{' hex-float '}']

The optional ``{...}`` suffix on a number carries its exact value.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_MAX_NODES = 7
CONST_RANGE = (-5.0, 5.0)
RAMP_DEPTHS = (1, 2)
# every intermediate value is clipped here so that no chain of squares/products can overflow
VALUE_BOUND = 1e150

UNARY = ("Square", "ProtectedLog")
BINARY = ("Add", "Sub", "Mul", "AQ")
ARITY = {"Add": 2, "Sub": 2, "Mul": 2, "AQ": 2, "Square": 1, "ProtectedLog": 1}


@dataclass(frozen=True, slots=True)
class Op:
    name: str

    @property
    def arity(self) -> int:
        return ARITY[self.name]


@dataclass(frozen=True, slots=True)
class Feature:
    index: int
    arity = 0


@dataclass(frozen=True, slots=True)
class Constant:
    value: float
    arity = 0


@dataclass(frozen=True, slots=True)
class ScaledBinaryFeature:
    index: int
    coef: float
    arity = 0


Node = Op | Feature | Constant | ScaledBinaryFeature


def _subtree_end(nodes: Sequence[Node], start: int) -> int:
    need, i = 1, start
    while need:
        if i >= len(nodes):
            raise ValueError("malformed prefix sequence: missing children")
        need += nodes[i].arity - 1
        i += 1
    return i


@dataclass(frozen=True)
class ExprTree:
    nodes: tuple
    feature_set: frozenset = field(init=False, compare=False)

    def __post_init__(self):
        nodes = tuple(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        if not nodes or _subtree_end(nodes, 0) != len(nodes):
            raise ValueError("node sequence is not a single well-formed tree")
        feats = frozenset(n.index for n in nodes if isinstance(n, (Feature, ScaledBinaryFeature)))
        object.__setattr__(self, "feature_set", feats)

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def root(self) -> Node:
        return self.nodes[0]

    def subtree_end(self, i: int) -> int:
        return _subtree_end(self.nodes, i)

    def depth(self) -> int:
        def rec(i):
            node = self.nodes[i]
            if node.arity == 0:
                return 0, i + 1
            best, j = 0, i + 1
            for _ in range(node.arity):
                dep, j = rec(j)
                best = max(best, dep)
            return best + 1, j

        return rec(0)[0]

    def replace_subtree(self, i: int, new: Sequence[Node]) -> "ExprTree":
        return ExprTree(self.nodes[:i] + tuple(new) + self.nodes[self.subtree_end(i):])

    def constants(self) -> list[float]:
        return [n.value if isinstance(n, Constant) else n.coef
                for n in self.nodes if isinstance(n, (Constant, ScaledBinaryFeature))]

    def __str__(self):
        return to_infix(self)


def traversal_features(tree: ExprTree) -> frozenset:
    """Feature indices found by walking the tree (independent of the cached set)."""
    found = set()

    def rec(i):
        node = tree.nodes[i]
        if isinstance(node, (Feature, ScaledBinaryFeature)):
            found.add(node.index)
        j = i + 1
        for _ in range(node.arity):
            j = rec(j)
        return j

    rec(0)
    return frozenset(found)


def _clip(v):
    return np.clip(v, -VALUE_BOUND, VALUE_BOUND)


def _apply(name, a, b=None):
    if name == "Add":
        return _clip(a + b)
    if name == "Sub":
        return _clip(a - b)
    if name == "Mul":
        return _clip(a * b)
    if name == "AQ":
        return a / np.sqrt(b * b + 1.0)
    if name == "Square":
        return _clip(a * a)
    return np.log(np.abs(a) + 1e-9)


def eval_unchecked(tree: ExprTree, X: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    stack = []
    for node in reversed(tree.nodes):
        if isinstance(node, Feature):
            stack.append(X[:, node.index])
        elif isinstance(node, Constant):
            stack.append(np.full(n, node.value))
        elif isinstance(node, ScaledBinaryFeature):
            stack.append(_clip(node.coef * X[:, node.index]))
        elif node.arity == 1:
            stack.append(_apply(node.name, stack.pop()))
        else:
            a = stack.pop()
            b = stack.pop()
            stack.append(_apply(node.name, a, b))
    out = stack.pop()
    return np.array(out, dtype=float, copy=True)


def evaluate(tree: ExprTree, X: np.ndarray) -> np.ndarray:
    """Evaluate ``tree`` row-wise on ``X``; finite inputs give finite outputs."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D matrix")
    if tree.feature_set and max(tree.feature_set) >= X.shape[1]:
        raise IndexError(f"tree references feature {max(tree.feature_set)} but X has {X.shape[1]} columns")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains NaN or Inf")
    return eval_unchecked(tree, X)


# ---------------------------------------------------------------------------
# random generation


def random_constant(rng: np.random.Generator) -> float:
    return float(rng.uniform(*CONST_RANGE))


def random_leaf(rng: np.random.Generator, d: int, binary_columns=()) -> Node:
    """Uniform over the d features plus one ephemeral constant.

    Binary columns always appear with their own coefficient.
    """
    k = int(rng.integers(d + 1))
    if k == d:
        return Constant(random_constant(rng))
    if k in binary_columns:
        return ScaledBinaryFeature(k, random_constant(rng))
    return Feature(k)


def _gen(rng, d, binary_columns, method, depth, budget) -> list:
    if depth <= 0 or budget < 2:
        return [random_leaf(rng, d, binary_columns)]
    allowed = [f for f in UNARY + BINARY if ARITY[f] + 1 <= budget]
    if method == "grow":
        n_term = d + 1
        if rng.integers(n_term + len(allowed)) < n_term:
            return [random_leaf(rng, d, binary_columns)]
    elif method != "full":
        raise ValueError(f"unknown method {method!r}")
    name = allowed[int(rng.integers(len(allowed)))]
    out = [Op(name)]
    remaining = budget - 1
    for k in range(ARITY[name]):
        left_for_rest = ARITY[name] - k - 1
        child = _gen(rng, d, binary_columns, method, depth - 1, remaining - left_for_rest)
        out.extend(child)
        remaining -= len(child)
    return out


def random_tree(
    rng: np.random.Generator,
    d: int,
    max_nodes: int = DEFAULT_MAX_NODES,
    binary_columns=(),
    method: str | None = None,
    depth: int | None = None,
) -> ExprTree:
    """Random tree via ramped half-and-half.

    Depth is drawn from ``RAMP_DEPTHS`` and the method from {full, grow}
    unless given. Children that would break the node cap are truncated to
    leaves, so the result never exceeds ``max_nodes``.
    """
    if max_nodes < 1:
        raise ValueError("max_nodes must be >= 1")
    if depth is None:
        depth = int(rng.choice(RAMP_DEPTHS))
    if method is None:
        method = "full" if rng.random() < 0.5 else "grow"
    binary_columns = frozenset(binary_columns)
    return ExprTree(tuple(_gen(rng, d, binary_columns, method, depth, max_nodes)))


# ---------------------------------------------------------------------------
# variation


def subtree_crossover(a: ExprTree, b: ExprTree, rng: np.random.Generator,
                      max_nodes: int = DEFAULT_MAX_NODES, retries: int = 10) -> ExprTree:
    for _ in range(retries):
        i = int(rng.integers(a.size))
        j = int(rng.integers(b.size))
        donor = b.nodes[j:b.subtree_end(j)]
        if a.size - (a.subtree_end(i) - i) + len(donor) <= max_nodes:
            return a.replace_subtree(i, donor)
    return a


def _replace_node(tree: ExprTree, i: int, node: Node) -> ExprTree:
    return ExprTree(tree.nodes[:i] + (node,) + tree.nodes[i + 1:])


def node_level_crossover(a: ExprTree, b: ExprTree, rng: np.random.Generator) -> ExprTree:
    """Swap one node of ``a`` for a same-arity node cloned from ``b``."""
    i = int(rng.integers(a.size))
    arity = a.nodes[i].arity
    candidates = [n for n in b.nodes if n.arity == arity]
    if not candidates:
        return a
    return _replace_node(a, i, candidates[int(rng.integers(len(candidates)))])


def node_level_mutation(a: ExprTree, rng: np.random.Generator, d: int, binary_columns=()) -> ExprTree:
    i = int(rng.integers(a.size))
    arity = a.nodes[i].arity
    if arity == 0:
        node = random_leaf(rng, d, frozenset(binary_columns))
    else:
        pool = UNARY if arity == 1 else BINARY
        node = Op(pool[int(rng.integers(len(pool)))])
    return _replace_node(a, i, node)


def subtree_mutation(a: ExprTree, rng: np.random.Generator, d: int, binary_columns=(),
                     max_nodes: int = DEFAULT_MAX_NODES) -> ExprTree:
    i = int(rng.integers(a.size))
    budget = max_nodes - (a.size - (a.subtree_end(i) - i))
    fresh = random_tree(rng, d, max_nodes=max(budget, 1), binary_columns=binary_columns)
    return a.replace_subtree(i, fresh.nodes)


def mutate_constants(tree: ExprTree, rng: np.random.Generator, temperature: float = 0.1,
                     per_node_prob: float = 0.5) -> ExprTree:
    """Perturb constants: ``c + t*|c|*eps`` with eps ~ N(0, 1); zero uses ``c + t*eps``."""
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    new, changed = list(tree.nodes), False
    for i, node in enumerate(tree.nodes):
        if not isinstance(node, (Constant, ScaledBinaryFeature)):
            continue
        if rng.random() >= per_node_prob:
            continue
        c = node.value if isinstance(node, Constant) else node.coef
        scale = abs(c) if c != 0 else 1.0
        c_new = c + temperature * scale * float(rng.standard_normal())
        if c_new == c:
            continue
        new[i] = Constant(c_new) if isinstance(node, Constant) else ScaledBinaryFeature(node.index, c_new)
        changed = True
    return ExprTree(tuple(new)) if changed else tree


# ---------------------------------------------------------------------------
# infix text and JSON

_FUNC_TEXT = {"Square": "sq", "ProtectedLog": "plog", "AQ": "aq"}
_INFIX_OP = {"Add": "+", "Sub": "-", "Mul": "*"}
_FUNC_PARSE = {"sq": "Square", "square": "Square", "plog": "ProtectedLog", "log": "ProtectedLog", "aq": "AQ"}
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


def format_constant(c: float, exact: bool = True) -> str:
    text = f"{c:.6g}"
    if exact and float(text) != c:
        # the annotation holds the magnitude; the sign stays in the decimal text
        text += "{" + abs(float(c)).hex() + "}"
    return text


def _feature_text(j: int, column_names) -> str:
    if column_names is not None:
        name = column_names[j]
        if _IDENT.match(name) and name.lower() not in _FUNC_PARSE:
            return name
    return f"x{j}"


def to_infix(tree: ExprTree, column_names: Sequence[str] | None = None, exact: bool = True) -> str:
    """Canonical infix text; with ``exact`` the result parses back bit-identically."""

    def rec(i):
        node = tree.nodes[i]
        if isinstance(node, Feature):
            return _feature_text(node.index, column_names), i + 1
        if isinstance(node, Constant):
            return format_constant(node.value, exact), i + 1
        if isinstance(node, ScaledBinaryFeature):
            return f"{format_constant(node.coef, exact)}·{_feature_text(node.index, column_names)}", i + 1
        args, j = [], i + 1
        for _ in range(node.arity):
            s, j = rec(j)
            args.append(s)
        if node.name in _INFIX_OP:
            return f"({args[0]} {_INFIX_OP[node.name]} {args[1]})", j
        return f"{_FUNC_TEXT[node.name]}({', '.join(args)})", j

    return rec(0)[0]


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at index {position}")
        self.position = position


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?(?:\{[^}]*\})?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<sym>[-−+*(),·]))"
)


def _tokenize(text: str):
    tokens, pos = [], 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            start = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ParseError(f"unexpected character {text[start]!r}", start)
        kind = m.lastgroup
        value = m.group(kind)
        tokens.append((kind, "-" if value == "−" else value, m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


def _number(text: str, pos: int) -> float:
    body, _, exact = text.partition("{")
    if exact:
        try:
            return abs(float.fromhex(exact.rstrip("}")))
        except ValueError:
            raise ParseError("bad exact annotation", pos) from None
    return float(body)


def parse_infix(text: str, column_names: Sequence[str] | None = None) -> ExprTree:
    """Parse infix text produced by :func:`to_infix` (or written by hand)."""
    tokens = _tokenize(text)
    names = {n: j for j, n in enumerate(column_names)} if column_names is not None else {}
    pos = 0

    def peek():
        return tokens[pos]

    def take(expected=None):
        nonlocal pos
        tok = tokens[pos]
        if expected is not None and tok[1] != expected:
            what = "end of input" if tok[0] == "end" else repr(tok[1])
            raise ParseError(f"expected {expected!r}, found {what}", tok[2])
        pos += 1
        return tok

    def feature_index(tok):
        name = tok[1]
        if name in names:
            return names[name]
        m = re.fullmatch(r"x(\d+)", name)
        if m:
            j = int(m.group(1))
            if column_names is not None and j >= len(column_names):
                raise ParseError(f"feature index {j} out of range", tok[2])
            return j
        raise ParseError(f"unknown identifier {name!r}", tok[2])

    def factor():
        kind, value, at = peek()
        if kind == "sym" and value == "-" and tokens[pos + 1][0] == "num":
            take()
            num = take()
            return number_factor(-_number(num[1], num[2]))
        if kind == "num":
            take()
            return number_factor(_number(value, at))
        if kind == "ident":
            take()
            if peek()[1] == "(" and value.lower() in _FUNC_PARSE:
                name = _FUNC_PARSE[value.lower()]
                take("(")
                args = [expr()]
                for _ in range(ARITY[name] - 1):
                    take(",")
                    args.append(expr())
                take(")")
                return [Op(name)] + [n for a in args for n in a]
            return [Feature(feature_index((kind, value, at)))]
        if value == "(":
            take()
            inner = expr()
            take(")")
            return inner
        what = "end of input" if kind == "end" else repr(value)
        raise ParseError(f"expected an expression, found {what}", at)

    def number_factor(c):
        if peek()[1] == "·":
            take()
            tok = take()
            if tok[0] != "ident":
                raise ParseError("expected a feature after '·'", tok[2])
            return [ScaledBinaryFeature(feature_index(tok), c)]
        return [Constant(c)]

    def term():
        left = factor()
        while peek()[1] == "*":
            take()
            left = [Op("Mul")] + left + factor()
        return left

    def expr():
        left = term()
        while peek()[1] in ("+", "-"):
            op = take()[1]
            left = [Op("Add" if op == "+" else "Sub")] + left + term()
        return left

    nodes = expr()
    if peek()[0] != "end":
        raise ParseError(f"unexpected trailing {peek()[1]!r}", peek()[2])
    return ExprTree(tuple(nodes))


def to_json(tree: ExprTree) -> dict:
    def rec(i):
        node = tree.nodes[i]
        if isinstance(node, Feature):
            return {"feature": node.index}, i + 1
        if isinstance(node, Constant):
            return {"const": node.value}, i + 1
        if isinstance(node, ScaledBinaryFeature):
            return {"feature": node.index, "coef": node.coef}, i + 1
        children, j = [], i + 1
        for _ in range(node.arity):
            c, j = rec(j)
            children.append(c)
        return {"op": node.name, "args": children}, j

    return rec(0)[0]


def from_json(obj: dict) -> ExprTree:
    def rec(o):
        if "op" in o:
            if o["op"] not in ARITY or len(o["args"]) != ARITY[o["op"]]:
                raise ValueError(f"bad operator record {o!r}")
            return [Op(o["op"])] + [n for a in o["args"] for n in rec(a)]
        if "const" in o:
            return [Constant(float(o["const"]))]
        if "coef" in o:
            return [ScaledBinaryFeature(int(o["feature"]), float(o["coef"]))]
        return [Feature(int(o["feature"]))]

    return ExprTree(tuple(rec(obj)))


def is_finite_tree(tree: ExprTree) -> bool:
    return all(math.isfinite(c) for c in tree.constants())
