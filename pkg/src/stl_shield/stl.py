"""Signal temporal logic over declared predicates.

Formulas are built from atomic predicates with Lipschitz-continuous margins,
Boolean connectives, and bounded until.  This module provides:

  * predicate kinds (halfspace, ball, box_inf, custom) with signed margins,
  * a small text grammar with F/G sugar desugared to core until,
  * Boolean satisfaction and quantitative robustness on sampled signals,
  * compositional Lipschitz certificates (constant + semi-norm window).

Quantitative semantics: atoms evaluate to the predicate margin, negation to
-rho, and/or to min/max, and until [a,b] at time t to

    max over t' in [t+a, t+b] of min( rho2(t'), min over t'' in [t, t'] rho1(t'') )

Dense-time quantifiers are discretised to the sample grid plus interpolated
interval endpoints.  Boolean until quantifies its inner "for all" over
[t+a, t'], so the quantitative form is deliberately conservative for until
operators with a > 0.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .signals import (
    TIME_TOL,
    HorizonClampWarning,
    Signal,
    WeightMatrix,
)

# ---------------------------------------------------------------------------
# Predicates
# ---------------------------------------------------------------------------


class Predicate:
    """Atomic proposition: true at x iff margin(x) >= 0.

    Subclasses provide the margin function and its Lipschitz constant with
    respect to the 2-norm.  Built-in kinds are signed distances, hence 1-Lipschitz.
    """

    id: str
    dim: int
    lipschitz: float

    def margin(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def margin_many(self, xs: np.ndarray) -> np.ndarray:
        return np.array([self.margin(x) for x in xs])

    def _check_dim(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.dim:
            raise ValueError(
                f"predicate '{self.id}' has dim {self.dim}, got point of dim {x.size}"
            )
        return x


@dataclass(frozen=True)
class Halfspace(Predicate):
    """{x : normal . x <= offset}; normal is stored normalised."""

    id: str
    normal: np.ndarray
    offset: float

    def __post_init__(self) -> None:
        n = np.asarray(self.normal, dtype=float).ravel()
        scale = float(np.linalg.norm(n))
        if scale <= 0.0:
            raise ValueError(f"predicate '{self.id}': halfspace normal must be nonzero")
        n = n / scale
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset) / scale)

    @property
    def dim(self) -> int:
        return self.normal.size

    @property
    def lipschitz(self) -> float:
        return 1.0

    def margin(self, x: np.ndarray) -> float:
        x = self._check_dim(x)
        return float(self.offset - self.normal @ x)

    def margin_many(self, xs: np.ndarray) -> np.ndarray:
        return self.offset - xs @ self.normal


@dataclass(frozen=True)
class Ball(Predicate):
    """{x : ||x - center|| <= radius}."""

    id: str
    center: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        c = np.asarray(self.center, dtype=float).ravel()
        if not float(self.radius) > 0.0:
            raise ValueError(f"predicate '{self.id}': radius must be positive")
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def lipschitz(self) -> float:
        return 1.0

    def margin(self, x: np.ndarray) -> float:
        x = self._check_dim(x)
        return float(self.radius - np.linalg.norm(x - self.center))

    def margin_many(self, xs: np.ndarray) -> np.ndarray:
        return self.radius - np.linalg.norm(xs - self.center, axis=1)


@dataclass(frozen=True)
class BoxInf(Predicate):
    """{x : ||x - center||_inf <= radius}; 1-Lipschitz since ||v||_inf <= ||v||."""

    id: str
    center: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        c = np.asarray(self.center, dtype=float).ravel()
        if not float(self.radius) > 0.0:
            raise ValueError(f"predicate '{self.id}': radius must be positive")
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def lipschitz(self) -> float:
        return 1.0

    def margin(self, x: np.ndarray) -> float:
        x = self._check_dim(x)
        return float(self.radius - np.max(np.abs(x - self.center)))

    def margin_many(self, xs: np.ndarray) -> np.ndarray:
        return self.radius - np.max(np.abs(xs - self.center), axis=1)


@dataclass(frozen=True)
class CustomPredicate(Predicate):
    """User-supplied margin function with an asserted Lipschitz constant."""

    id: str
    fn: Callable[[np.ndarray], float]
    dim: int
    lipschitz: float

    def __post_init__(self) -> None:
        if not float(self.lipschitz) > 0.0:
            raise ValueError(f"predicate '{self.id}': Lipschitz constant must be positive")

    def margin(self, x: np.ndarray) -> float:
        x = self._check_dim(x)
        return float(self.fn(x))


def predicate_margin(p: Predicate, x: np.ndarray) -> float:
    """Signed margin of predicate p at state x (>= 0 iff the predicate holds)."""
    return p.margin(x)


def check_custom_lipschitz(
    p: CustomPredicate, low: np.ndarray, high: np.ndarray, trials: int = 200, seed: int = 0
) -> None:
    """Debug sampler: warn if random point pairs violate the asserted constant."""
    rng = np.random.default_rng(seed)
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    for _ in range(trials):
        x = rng.uniform(low, high)
        z = rng.uniform(low, high)
        gap = np.linalg.norm(x - z)
        if gap <= 0:
            continue
        ratio = abs(p.margin(x) - p.margin(z)) / gap
        if ratio > p.lipschitz * (1 + 1e-9):
            warnings.warn(
                f"predicate '{p.id}': observed Lipschitz ratio {ratio:.6g} exceeds "
                f"declared constant {p.lipschitz:.6g}",
                UserWarning,
            )
            return


def load_predicates(text: str) -> dict[str, Predicate]:
    """Parse a JSON array of {id, kind, params...} predicate declarations."""
    decls = json.loads(text)
    if not isinstance(decls, list):
        raise ValueError("predicate declarations must be a JSON array")
    table: dict[str, Predicate] = {}
    for decl in decls:
        pid = decl.get("id")
        kind = decl.get("kind")
        if not pid or not kind:
            raise ValueError(f"predicate declaration missing id or kind: {decl}")
        if pid in table:
            raise ValueError(f"duplicate predicate id '{pid}'")
        if kind == "halfspace":
            table[pid] = Halfspace(pid, np.asarray(decl["normal"]), float(decl["offset"]))
        elif kind == "ball":
            table[pid] = Ball(pid, np.asarray(decl["center"]), float(decl["radius"]))
        elif kind == "box_inf":
            table[pid] = BoxInf(pid, np.asarray(decl["center"]), float(decl["radius"]))
        else:
            raise ValueError(f"unknown predicate kind '{kind}' for id '{pid}'")
    return table


# ---------------------------------------------------------------------------
# Formula AST
# ---------------------------------------------------------------------------


class Formula:
    """Base class for STL AST nodes; instances are immutable."""

    def children(self) -> tuple["Formula", ...]:
        return ()


@dataclass(frozen=True)
class TrueFormula(Formula):
    def __str__(self) -> str:
        return "TRUE"


TRUE = TrueFormula()


@dataclass(frozen=True)
class Atom(Formula):
    predicate: Predicate

    def __str__(self) -> str:
        return self.predicate.id


@dataclass(frozen=True)
class Not(Formula):
    child: Formula

    def children(self) -> tuple[Formula, ...]:
        return (self.child,)

    def __str__(self) -> str:
        return f"!({self.child})"


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula

    def children(self) -> tuple[Formula, ...]:
        return (self.left, self.right)

    def __str__(self) -> str:
        return f"({self.left} & {self.right})"


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula

    def children(self) -> tuple[Formula, ...]:
        return (self.left, self.right)

    def __str__(self) -> str:
        return f"({self.left} | {self.right})"


@dataclass(frozen=True)
class Until(Formula):
    a: float
    b: float
    left: Formula
    right: Formula

    def __post_init__(self) -> None:
        a, b = float(self.a), float(self.b)
        if not (math.isfinite(a) and math.isfinite(b)):
            raise ValueError("until interval bounds must be finite")
        if a < 0 or a > b:
            raise ValueError(f"invalid until interval [{a}, {b}]: need 0 <= a <= b")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def children(self) -> tuple[Formula, ...]:
        return (self.left, self.right)

    def __str__(self) -> str:
        return f"({self.left} U[{self.a},{self.b}] {self.right})"


def eventually(a: float, b: float, child: Formula) -> Formula:
    """F[a,b] phi  ==  TRUE U[a,b] phi."""
    return Until(a, b, TRUE, child)


def always(a: float, b: float, child: Formula) -> Formula:
    """G[a,b] phi  ==  !(TRUE U[a,b] !phi)."""
    return Not(eventually(a, b, Not(child)))


def formula_dim(formula: Formula) -> int | None:
    """Common state dimension of all atoms, or None for atom-free formulas."""
    dims = {a.predicate.dim for a in iter_atoms(formula)}
    if not dims:
        return None
    if len(dims) > 1:
        raise ValueError(f"atoms have mixed dimensions {sorted(dims)}")
    return dims.pop()


def iter_atoms(formula: Formula):
    stack = [formula]
    while stack:
        node = stack.pop()
        if isinstance(node, Atom):
            yield node
        stack.extend(node.children())


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class ParseError(ValueError):
    """Syntax or declaration error, carrying the offending position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


_TEMPORAL_HEADS = {"U", "F", "G"}


class _Lexer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.tokens: list[tuple[str, str, int]] = []
        self._run()

    def _run(self) -> None:
        text, n = self.text, len(self.text)
        i = 0
        while i < n:
            ch = text[i]
            if ch.isspace():
                i += 1
                continue
            if ch in _TEMPORAL_HEADS and i + 1 < n and text[i + 1] == "[":
                self.tokens.append((ch + "[", ch + "[", i))
                i += 2
                continue
            if ch.isalpha() or ch == "_":
                j = i
                while j < n and (text[j].isalnum() or text[j] == "_"):
                    j += 1
                word = text[i:j]
                kind = "TRUE" if word == "TRUE" else "IDENT"
                self.tokens.append((kind, word, i))
                i = j
                continue
            if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
                j = i
                while j < n and (text[j].isdigit() or text[j] == "."):
                    j += 1
                self.tokens.append(("NUM", text[i:j], i))
                i = j
                continue
            if ch in "!&|(),]":
                self.tokens.append((ch, ch, i))
                i += 1
                continue
            raise ParseError(f"unexpected character {ch!r}", i)
        self.tokens.append(("EOF", "", n))


class _Parser:
    """Recursive descent over:

    formula := or
    or      := and ('|' and)*
    and     := until ('&' until)*
    until   := unary ('U[' num ',' num ']' unary)?
    unary   := '!' unary | 'F[' num ',' num ']' unary
             | 'G[' num ',' num ']' unary | atom
    atom    := 'TRUE' | IDENT | '(' formula ')'
    """

    def __init__(self, text: str, predicates: Mapping[str, Predicate]):
        self.tokens = _Lexer(text).tokens
        self.idx = 0
        self.predicates = predicates

    def _peek(self) -> tuple[str, str, int]:
        return self.tokens[self.idx]

    def _next(self) -> tuple[str, str, int]:
        tok = self.tokens[self.idx]
        self.idx += 1
        return tok

    def _expect(self, kind: str) -> tuple[str, str, int]:
        tok = self._next()
        if tok[0] != kind:
            raise ParseError(f"expected {kind!r}, found {tok[1]!r}", tok[2])
        return tok

    def parse(self) -> Formula:
        node = self._or()
        tok = self._peek()
        if tok[0] != "EOF":
            raise ParseError(f"unexpected trailing input {tok[1]!r}", tok[2])
        return node

    def _or(self) -> Formula:
        node = self._and()
        while self._peek()[0] == "|":
            self._next()
            node = Or(node, self._and())
        return node

    def _and(self) -> Formula:
        node = self._until()
        while self._peek()[0] == "&":
            self._next()
            node = And(node, self._until())
        return node

    def _until(self) -> Formula:
        node = self._unary()
        if self._peek()[0] == "U[":
            pos = self._next()[2]
            a, b = self._interval(pos)
            node = Until(a, b, node, self._unary())
        return node

    def _interval(self, pos: int) -> tuple[float, float]:
        a = float(self._expect("NUM")[1])
        self._expect(",")
        b = float(self._expect("NUM")[1])
        self._expect("]")
        if a > b:
            raise ParseError(f"invalid interval [{a}, {b}]: need a <= b", pos)
        return a, b

    def _unary(self) -> Formula:
        kind, _, pos = self._peek()
        if kind == "!":
            self._next()
            return Not(self._unary())
        if kind == "F[":
            self._next()
            a, b = self._interval(pos)
            return eventually(a, b, self._unary())
        if kind == "G[":
            self._next()
            a, b = self._interval(pos)
            return always(a, b, self._unary())
        return self._atom()

    def _atom(self) -> Formula:
        kind, value, pos = self._next()
        if kind == "TRUE":
            return TRUE
        if kind == "IDENT":
            if value not in self.predicates:
                raise ParseError(f"undeclared predicate '{value}'", pos)
            return Atom(self.predicates[value])
        if kind == "(":
            node = self._or()
            self._expect(")")
            return node
        raise ParseError(f"expected an atom, found {value!r}", pos)


def parse(text: str, predicates: Mapping[str, Predicate]) -> Formula:
    """Parse a formula string against a table of declared predicates."""
    formula = _Parser(text, predicates).parse()
    formula_dim(formula)  # reject mixed-dimension atom tables early
    return formula


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _window_end(s: Signal, t_hi: float) -> float:
    """Clamp a lookahead endpoint to the horizon, warning when it overruns."""
    if t_hi > s.horizon + TIME_TOL:
        warnings.warn(
            f"lookahead {t_hi} clamped to signal horizon {s.horizon}", HorizonClampWarning
        )
        return s.horizon
    return min(t_hi, s.horizon)


def _quantifier_times(s: Signal, u: float, v: float) -> list[float]:
    """Evaluation times for a quantifier over [u, v]: grid points plus endpoints."""
    lo, hi = s.grid_indices_in(u, v)
    times = [s.t0 + k * s.dt for k in range(lo, hi + 1)]
    if not times or times[0] > u + TIME_TOL:
        times.insert(0, u)
    if times[-1] < v - TIME_TOL:
        times.append(v)
    return times


def eval_boolean(formula: Formula, s: Signal, t: float) -> bool:
    """Satisfaction of the formula by s at time t, on the discretised grid.

    Until uses the standard existential form: some t' in [t+a, t+b] where the
    right child holds and the left child holds at every time in [t+a, t'].
    """
    if isinstance(formula, TrueFormula):
        return True
    if isinstance(formula, Atom):
        return formula.predicate.margin(s.sample_at(t)) >= 0.0
    if isinstance(formula, Not):
        return not eval_boolean(formula.child, s, t)
    if isinstance(formula, And):
        return eval_boolean(formula.left, s, t) and eval_boolean(formula.right, s, t)
    if isinstance(formula, Or):
        return eval_boolean(formula.left, s, t) or eval_boolean(formula.right, s, t)
    if isinstance(formula, Until):
        lo = t + formula.a
        if lo > s.horizon + TIME_TOL:
            raise ValueError(
                f"until window start {lo} exceeds signal horizon {s.horizon}"
            )
        hi = _window_end(s, t + formula.b)
        for t1 in _quantifier_times(s, lo, hi):
            if eval_boolean(formula.right, s, t1) and all(
                eval_boolean(formula.left, s, t2)
                for t2 in _quantifier_times(s, lo, t1)
            ):
                return True
        return False
    raise TypeError(f"unknown formula node {type(formula).__name__}")


def eval_robustness(formula: Formula, s: Signal, t: float) -> float:
    """Quantitative robustness of the formula on s at time t.

    Positive values certify satisfaction with margin; TRUE carries a +inf
    sentinel absorbed by min/max.
    """
    memo: dict[tuple[int, float], float] = {}
    return _rob(formula, s, t, memo)


def _rob(node: Formula, s: Signal, t: float, memo: dict) -> float:
    key = (id(node), t)
    hit = memo.get(key)
    if hit is not None:
        return hit
    if isinstance(node, TrueFormula):
        val = math.inf
    elif isinstance(node, Atom):
        val = node.predicate.margin(s.sample_at(t))
    elif isinstance(node, Not):
        val = -_rob(node.child, s, t, memo)
    elif isinstance(node, And):
        val = min(_rob(node.left, s, t, memo), _rob(node.right, s, t, memo))
    elif isinstance(node, Or):
        val = max(_rob(node.left, s, t, memo), _rob(node.right, s, t, memo))
    elif isinstance(node, Until):
        val = _rob_until(node, s, t, memo)
    else:
        raise TypeError(f"unknown formula node {type(node).__name__}")
    memo[key] = val
    return val


def _rob_until(node: Until, s: Signal, t: float, memo: dict) -> float:
    lo = t + node.a
    if lo > s.horizon + TIME_TOL:
        raise ValueError(f"until window start {lo} exceeds signal horizon {s.horizon}")
    hi = _window_end(s, t + node.b)
    candidates = _quantifier_times(s, lo, hi)
    # Inner min of the left child runs from t (not t+a): grid times in (t, hi]
    # accumulate as the witness time advances, plus the witness time itself.
    g_lo, g_hi = s.grid_indices_in(t, hi)
    inner_grid = [s.t0 + k * s.dt for k in range(g_lo, g_hi + 1)]
    if not inner_grid or inner_grid[0] > t + TIME_TOL:
        inner_grid.insert(0, t)
    running = math.inf
    j = 0
    best = -math.inf
    for t1 in candidates:
        while j < len(inner_grid) and inner_grid[j] <= t1 + TIME_TOL:
            running = min(running, _rob(node.left, s, inner_grid[j], memo))
            j += 1
        inner = min(running, _rob(node.left, s, t1, memo))
        best = max(best, min(_rob(node.right, s, t1, memo), inner))
    return best


# ---------------------------------------------------------------------------
# Lipschitz certification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LipschitzCertificate:
    """Constant L and window [a, b] such that robustness differences at time 0
    are bounded by L * semi_norm(s - z, [a, b], weights)."""

    constant: float
    window: tuple[float, float]
    weights: WeightMatrix

    def __post_init__(self) -> None:
        a, b = float(self.window[0]), float(self.window[1])
        if self.constant < 0:
            raise ValueError("Lipschitz constant must be non-negative")
        if a > b:
            raise ValueError(f"invalid certificate window [{a}, {b}]")
        object.__setattr__(self, "constant", float(self.constant))
        object.__setattr__(self, "window", (a, b))

    def to_json(self) -> str:
        return json.dumps(
            {
                "L": self.constant,
                "window": list(self.window),
                "weights": [float(w) for w in self.weights.diag],
            },
            sort_keys=True,
        )


def certify(formula: Formula, weights: WeightMatrix | None = None) -> LipschitzCertificate:
    """Compositional Lipschitz certificate for the robustness of the formula.

    Structural recursion: atoms contribute (L_pred, [0, 0]); negation passes
    through; and/or take the max constant and the window hull; until [a, b]
    takes the max constant and window [min(a1, a2 + a), b + max(b1, b2)].

    The weights record which state norm the atom constants refer to; callers
    must ensure every atom margin is L-Lipschitz under that weighted norm
    (identity weights always qualify for the built-in kinds).
    """
    if weights is None:
        dim = formula_dim(formula)
        if dim is None:
            raise ValueError("weights are required for formulas without atoms")
        weights = WeightMatrix.identity(dim)
    L, a, b = _certify(formula)
    return LipschitzCertificate(L, (a, b), weights)


def _certify(node: Formula) -> tuple[float, float, float]:
    if isinstance(node, TrueFormula):
        return 0.0, 0.0, 0.0
    if isinstance(node, Atom):
        return float(node.predicate.lipschitz), 0.0, 0.0
    if isinstance(node, Not):
        return _certify(node.child)
    if isinstance(node, (And, Or)):
        l1, a1, b1 = _certify(node.left)
        l2, a2, b2 = _certify(node.right)
        return max(l1, l2), min(a1, a2), max(b1, b2)
    if isinstance(node, Until):
        l1, a1, b1 = _certify(node.left)
        l2, a2, b2 = _certify(node.right)
        return max(l1, l2), min(a1, a2 + node.a), node.b + max(b1, b2)
    raise TypeError(f"unknown formula node {type(node).__name__}")
