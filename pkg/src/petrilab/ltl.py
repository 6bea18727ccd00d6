"""LTL abstract syntax, parsing, rendering and direct lasso evaluation.

The run logic used by the checker is plain LTL over net atoms (place and
transition ids) extended with one flow quantifier ``A`` whose body is again
plain LTL.  The checker pipeline additionally introduces internal leaves
(transition enabledness, per-tracker observations); they never appear in
user syntax but render readably in the constructed formula.

``eval_lasso`` evaluates any plain formula directly on an ultimately
periodic word by fixpoint iteration.  It is deliberately independent of the
automaton pipeline and serves as the semantic reference throughout the test
suite.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence


class Formula:
    __slots__ = ()


@dataclass(frozen=True)
class TrueConst(Formula):
    def __repr__(self) -> str:
        return "true"


@dataclass(frozen=True)
class FalseConst(Formula):
    def __repr__(self) -> str:
        return "false"


@dataclass(frozen=True)
class Atom(Formula):
    """A net node: place id or transition id."""

    name: str


@dataclass(frozen=True)
class Not(Formula):
    sub: Formula


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Implies(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Next(Formula):
    sub: Formula


@dataclass(frozen=True)
class Eventually(Formula):
    sub: Formula


@dataclass(frozen=True)
class Globally(Formula):
    sub: Formula


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Release(Formula):
    """Dual of Until; produced by negation normal form only."""

    left: Formula
    right: Formula


@dataclass(frozen=True)
class Flow(Formula):
    """Universal flow quantifier ``A body``: body holds on every flow chain."""

    body: Formula


# internal leaves introduced by the checker pipeline -------------------------


@dataclass(frozen=True)
class EnabledAtom(Formula):
    """Transition enabledness, compiled to a marking predicate at evaluation."""

    transition: str


@dataclass(frozen=True)
class TrackerAt(Formula):
    index: int
    place: str


@dataclass(frozen=True)
class TrackerMovesVia(Formula):
    index: int
    transition: str


@dataclass(frozen=True)
class TrackerMoved(Formula):
    index: int


@dataclass(frozen=True)
class TrackerIdle(Formula):
    index: int


@dataclass(frozen=True)
class TrackerEnded(Formula):
    index: int


LEAF_TYPES = (Atom, EnabledAtom, TrackerAt, TrackerMovesVia, TrackerMoved, TrackerIdle, TrackerEnded)

TRUE = TrueConst()
FALSE = FalseConst()


def is_leaf(f: Formula) -> bool:
    return isinstance(f, LEAF_TYPES)


def conj(parts: Sequence[Formula]) -> Formula:
    out: Formula | None = None
    for p in parts:
        out = p if out is None else And(out, p)
    return out if out is not None else TRUE


def disj(parts: Sequence[Formula]) -> Formula:
    out: Formula | None = None
    for p in parts:
        out = p if out is None else Or(out, p)
    return out if out is not None else FALSE


def atoms_of(f: Formula) -> set[Formula]:
    """All leaves occurring in a formula."""
    out: set[Formula] = set()

    def walk(g: Formula) -> None:
        if is_leaf(g):
            out.add(g)
        elif isinstance(g, (Not, Next, Eventually, Globally, Flow)):
            walk(g.sub if not isinstance(g, Flow) else g.body)
        elif isinstance(g, (And, Or, Implies, Until, Release)):
            walk(g.left)
            walk(g.right)

    walk(f)
    return out


def flow_subformulas(f: Formula) -> list[Flow]:
    """Flow subformulas in syntactic (left-to-right) order."""
    out: list[Flow] = []

    def walk(g: Formula) -> None:
        if isinstance(g, Flow):
            out.append(g)
        elif isinstance(g, (Not, Next, Eventually, Globally)):
            walk(g.sub)
        elif isinstance(g, (And, Or, Implies, Until, Release)):
            walk(g.left)
            walk(g.right)

    walk(f)
    return out


# ---------------------------------------------------------------------------
# parsing


class LtlSyntaxError(ValueError):
    def __init__(self, message: str, pos: int):
        self.pos = pos
        super().__init__(f"col {pos + 1}: {message}")


class NestedFlowQuantifier(LtlSyntaxError):
    def __init__(self, pos: int):
        super().__init__("flow quantifier A may not be nested inside another A", pos)


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<lpar>\()|(?P<rpar>\))|(?P<impl>->)|(?P<and>&&)|(?P<or>\|\|)|(?P<not>!)|(?P<ident>[A-Za-z_][A-Za-z0-9_]*))"
)

_UNARY = {"X": Next, "F": Eventually, "G": Globally}


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if not m or m.end() == m.start():
                if text[pos:].strip():
                    bad = len(text) - len(text[pos:].lstrip())
                    raise LtlSyntaxError(f"unexpected character {text[bad]!r}", bad)
                break
            kind = m.lastgroup or ""
            self.tokens.append((kind, m.group(kind), m.start(kind)))
            pos = m.end()
        self.i = 0

    def peek(self) -> tuple[str, str, int] | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self) -> tuple[str, str, int]:
        tok = self.peek()
        if tok is None:
            raise LtlSyntaxError("unexpected end of formula", len(self.text))
        self.i += 1
        return tok

    def expect(self, kind: str) -> None:
        tok = self.peek()
        if tok is None or tok[0] != kind:
            where = tok[2] if tok else len(self.text)
            raise LtlSyntaxError(f"expected {kind!r}", where)
        self.i += 1

    # precedence, tight to loose: unary/A, U (left), &&, ||, -> (right)

    def parse(self) -> Formula:
        f = self.implies()
        tok = self.peek()
        if tok is not None:
            raise LtlSyntaxError(f"unexpected token {tok[1]!r}", tok[2])
        return f

    def implies(self) -> Formula:
        left = self.disjunction()
        tok = self.peek()
        if tok and tok[0] == "impl":
            self.next()
            return Implies(left, self.implies())
        return left

    def disjunction(self) -> Formula:
        f = self.conjunction()
        while (tok := self.peek()) and tok[0] == "or":
            self.next()
            f = Or(f, self.conjunction())
        return f

    def conjunction(self) -> Formula:
        f = self.until()
        while (tok := self.peek()) and tok[0] == "and":
            self.next()
            f = And(f, self.until())
        return f

    def until(self) -> Formula:
        f = self.unary()
        while (tok := self.peek()) and tok[0] == "ident" and tok[1] == "U":
            self.next()
            f = Until(f, self.unary())
        return f

    def unary(self) -> Formula:
        tok = self.peek()
        if tok is None:
            raise LtlSyntaxError("unexpected end of formula", len(self.text))
        kind, text, pos = tok
        if kind == "not":
            self.next()
            return Not(self.unary())
        if kind == "ident" and text in _UNARY:
            self.next()
            return _UNARY[text](self.unary())
        if kind == "ident" and text == "A":
            self.next()
            body = self.unary()
            if flow_subformulas(body):
                raise NestedFlowQuantifier(pos)
            return Flow(body)
        return self.primary()

    def primary(self) -> Formula:
        kind, text, pos = self.next()
        if kind == "lpar":
            f = self.implies()
            self.expect("rpar")
            return f
        if kind == "ident":
            if text == "true":
                return TRUE
            if text == "false":
                return FALSE
            if text in ("X", "F", "G", "A", "U"):
                raise LtlSyntaxError(f"operator {text} needs an operand", pos)
            return Atom(text)
        raise LtlSyntaxError(f"unexpected token {text!r}", pos)


def parse_formula(text: str) -> Formula:
    """Parse a Flow-LTL formula; atoms stay unresolved until bound to a net."""
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# rendering

_PREC = {
    Implies: 1,
    Or: 2,
    And: 3,
    Until: 4,
    Release: 4,
    # unary at 5, leaves at 6
}


def _prec(f: Formula) -> int:
    if type(f) in _PREC:
        return _PREC[type(f)]
    if isinstance(f, (Not, Next, Eventually, Globally, Flow)):
        return 5
    return 6


def render_formula(f: Formula) -> str:
    def wrap(child: Formula, parent_prec: int, strict: bool = False) -> str:
        cp = _prec(child)
        need = cp < parent_prec or (strict and cp == parent_prec)
        s = render_formula(child)
        return f"({s})" if need else s

    if isinstance(f, TrueConst):
        return "true"
    if isinstance(f, FalseConst):
        return "false"
    if isinstance(f, Atom):
        return f.name
    if isinstance(f, EnabledAtom):
        return f"enabled({f.transition})"
    if isinstance(f, TrackerAt):
        return f"at_{f.index}({f.place})"
    if isinstance(f, TrackerMovesVia):
        return f"moves_{f.index}({f.transition})"
    if isinstance(f, TrackerMoved):
        return f"move_{f.index}"
    if isinstance(f, TrackerIdle):
        return f"idle_{f.index}"
    if isinstance(f, TrackerEnded):
        return f"ended_{f.index}"
    if isinstance(f, Not):
        return "!" + wrap(f.sub, 6)
    if isinstance(f, Next):
        return "X " + wrap(f.sub, 5)
    if isinstance(f, Eventually):
        return "F " + wrap(f.sub, 5)
    if isinstance(f, Globally):
        return "G " + wrap(f.sub, 5)
    if isinstance(f, Flow):
        return "A " + wrap(f.body, 5)
    if isinstance(f, Until):
        return wrap(f.left, 4, strict=True) + " U " + wrap(f.right, 5)
    if isinstance(f, Release):
        return wrap(f.left, 4, strict=True) + " R " + wrap(f.right, 5)
    if isinstance(f, And):
        return wrap(f.left, 3) + " && " + wrap(f.right, 4)
    if isinstance(f, Or):
        return wrap(f.left, 2) + " || " + wrap(f.right, 3)
    if isinstance(f, Implies):
        return wrap(f.left, 2, strict=True) + " -> " + wrap(f.right, 1)
    raise TypeError(f"cannot render {f!r}")


# ---------------------------------------------------------------------------
# negation normal form


def nnf(f: Formula, negate: bool = False) -> Formula:
    """Push negations to the leaves; F/G/-> are expanded, Release introduced."""
    if isinstance(f, TrueConst):
        return FALSE if negate else TRUE
    if isinstance(f, FalseConst):
        return TRUE if negate else FALSE
    if is_leaf(f):
        return Not(f) if negate else f
    if isinstance(f, Not):
        return nnf(f.sub, not negate)
    if isinstance(f, And):
        cls = Or if negate else And
        return cls(nnf(f.left, negate), nnf(f.right, negate))
    if isinstance(f, Or):
        cls = And if negate else Or
        return cls(nnf(f.left, negate), nnf(f.right, negate))
    if isinstance(f, Implies):
        return nnf(Or(Not(f.left), f.right), negate)
    if isinstance(f, Next):
        return Next(nnf(f.sub, negate))
    if isinstance(f, Eventually):
        return nnf(Until(TRUE, f.sub), negate)
    if isinstance(f, Globally):
        return nnf(Release(FALSE, f.sub), negate)
    if isinstance(f, Until):
        cls = Release if negate else Until
        return cls(nnf(f.left, negate), nnf(f.right, negate))
    if isinstance(f, Release):
        cls = Until if negate else Release
        return cls(nnf(f.left, negate), nnf(f.right, negate))
    if isinstance(f, Flow):
        raise ValueError("flow quantifier has no NNF; substitute it before translation")
    raise TypeError(f"cannot normalize {f!r}")


# ---------------------------------------------------------------------------
# direct evaluation on ultimately periodic words

Obs = object  # a frozenset of true leaves, or any object with .holds(leaf)


def obs_holds(obs, leaf: Formula) -> bool:
    if isinstance(obs, (set, frozenset)):
        return leaf in obs
    return obs.holds(leaf)


def eval_lasso(f: Formula, prefix: Sequence[Obs], loop: Sequence[Obs]) -> bool:
    """Evaluate plain LTL on the word prefix · loop^ω (position 0).

    Fixpoint iteration over the p+l distinct positions; Until as least and
    Release as greatest fixpoint.  Flow quantifiers are rejected.
    """
    if not loop:
        raise ValueError("lasso loop must be non-empty")
    word = list(prefix) + list(loop)
    n = len(word)
    loop_start = len(prefix)

    def succ(i: int) -> int:
        return i + 1 if i + 1 < n else loop_start

    memo: dict[Formula, list[bool]] = {}

    def values(g: Formula) -> list[bool]:
        got = memo.get(g)
        if got is not None:
            return got
        if isinstance(g, TrueConst):
            vals = [True] * n
        elif isinstance(g, FalseConst):
            vals = [False] * n
        elif is_leaf(g):
            vals = [obs_holds(word[i], g) for i in range(n)]
        elif isinstance(g, Not):
            vals = [not v for v in values(g.sub)]
        elif isinstance(g, And):
            l, r = values(g.left), values(g.right)
            vals = [a and b for a, b in zip(l, r)]
        elif isinstance(g, Or):
            l, r = values(g.left), values(g.right)
            vals = [a or b for a, b in zip(l, r)]
        elif isinstance(g, Implies):
            l, r = values(g.left), values(g.right)
            vals = [(not a) or b for a, b in zip(l, r)]
        elif isinstance(g, Next):
            s = values(g.sub)
            vals = [s[succ(i)] for i in range(n)]
        elif isinstance(g, Eventually):
            vals = values(Until(TRUE, g.sub))
        elif isinstance(g, Globally):
            vals = values(Release(FALSE, g.sub))
        elif isinstance(g, Until):
            l, r = values(g.left), values(g.right)
            vals = [False] * n
            for _ in range(n + 1):
                new = [r[i] or (l[i] and vals[succ(i)]) for i in range(n)]
                if new == vals:
                    break
                vals = new
        elif isinstance(g, Release):
            l, r = values(g.left), values(g.right)
            vals = [True] * n
            for _ in range(n + 1):
                new = [r[i] and (l[i] or vals[succ(i)]) for i in range(n)]
                if new == vals:
                    break
                vals = new
        elif isinstance(g, Flow):
            raise ValueError("eval_lasso evaluates plain LTL only")
        else:
            raise TypeError(f"cannot evaluate {g!r}")
        memo[g] = vals
        return vals

    return values(f)[0]
