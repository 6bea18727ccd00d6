"""LTL to Büchi translation and nested-DFS emptiness.

The translation is the declarative tableau construction (node splitting on
Until/Release/Or), producing a generalized Büchi automaton whose acceptance
sets are degeneralized away with a round-robin counter.  Transition labels
are conjunctions of literals over the formula's leaves, stored as a pair of
bitmasks over the automaton's atom table.

``find_accepting_lasso`` is a generic iterative nested DFS with an early
cycle check on the outer stack; it powers both the checker's emptiness test
and the word-acceptance helper used by the test oracles.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Hashable, Iterable, Sequence

from .ltl import (
    FALSE,
    TRUE,
    And,
    Atom,
    EnabledAtom,
    Eventually,
    FalseConst,
    Flow,
    Formula,
    Globally,
    Implies,
    Next,
    Not,
    Or,
    Release,
    TrackerAt,
    TrackerEnded,
    TrackerIdle,
    TrackerMoved,
    TrackerMovesVia,
    TrueConst,
    Until,
    is_leaf,
    nnf,
    obs_holds,
)
from .nets import StateSpaceLimit

# ---------------------------------------------------------------------------
# deterministic formula ordering (independent of hash randomization)

_CLASS_RANK = {
    TrueConst: 0,
    FalseConst: 1,
    Atom: 2,
    EnabledAtom: 3,
    TrackerAt: 4,
    TrackerMovesVia: 5,
    TrackerMoved: 6,
    TrackerIdle: 7,
    TrackerEnded: 8,
    Not: 9,
    And: 10,
    Or: 11,
    Implies: 12,
    Next: 13,
    Eventually: 14,
    Globally: 15,
    Until: 16,
    Release: 17,
    Flow: 18,
}


@lru_cache(maxsize=None)
def formula_key(f: Formula) -> tuple:
    rank = _CLASS_RANK[type(f)]
    if isinstance(f, (TrueConst, FalseConst)):
        return (rank,)
    if isinstance(f, Atom):
        return (rank, f.name)
    if isinstance(f, EnabledAtom):
        return (rank, f.transition)
    if isinstance(f, TrackerAt):
        return (rank, f.index, f.place)
    if isinstance(f, TrackerMovesVia):
        return (rank, f.index, f.transition)
    if isinstance(f, (TrackerMoved, TrackerIdle, TrackerEnded)):
        return (rank, f.index)
    if isinstance(f, (Not, Next, Eventually, Globally)):
        return (rank, formula_key(f.sub))
    if isinstance(f, Flow):
        return (rank, formula_key(f.body))
    return (rank, formula_key(f.left), formula_key(f.right))


def sorted_formulas(fs: Iterable[Formula]) -> list[Formula]:
    return sorted(fs, key=formula_key)


# ---------------------------------------------------------------------------
# light structural simplification (shrinks the tableau)


def simplify(f: Formula) -> Formula:
    if isinstance(f, Not):
        s = simplify(f.sub)
        if isinstance(s, TrueConst):
            return FALSE
        if isinstance(s, FalseConst):
            return TRUE
        if isinstance(s, Not):
            return s.sub
        return Not(s)
    if isinstance(f, And):
        l, r = simplify(f.left), simplify(f.right)
        if isinstance(l, FalseConst) or isinstance(r, FalseConst):
            return FALSE
        if isinstance(l, TrueConst):
            return r
        if isinstance(r, TrueConst):
            return l
        if l == r:
            return l
        return And(l, r)
    if isinstance(f, Or):
        l, r = simplify(f.left), simplify(f.right)
        if isinstance(l, TrueConst) or isinstance(r, TrueConst):
            return TRUE
        if isinstance(l, FalseConst):
            return r
        if isinstance(r, FalseConst):
            return l
        if l == r:
            return l
        return Or(l, r)
    if isinstance(f, Implies):
        return simplify(Or(Not(f.left), f.right))
    if isinstance(f, Next):
        s = simplify(f.sub)
        if isinstance(s, (TrueConst, FalseConst)):
            return s
        return Next(s)
    if isinstance(f, Eventually):
        s = simplify(f.sub)
        if isinstance(s, (TrueConst, FalseConst)):
            return s
        if isinstance(s, Eventually):
            return s
        return Eventually(s)
    if isinstance(f, Globally):
        s = simplify(f.sub)
        if isinstance(s, (TrueConst, FalseConst)):
            return s
        if isinstance(s, Globally):
            return s
        return Globally(s)
    if isinstance(f, Until):
        l, r = simplify(f.left), simplify(f.right)
        if isinstance(r, (TrueConst, FalseConst)):
            return r
        if isinstance(l, FalseConst):
            return r
        if isinstance(l, TrueConst):
            return Eventually(r)
        return Until(l, r)
    if isinstance(f, Release):
        l, r = simplify(f.left), simplify(f.right)
        if isinstance(r, (TrueConst, FalseConst)):
            return r
        if isinstance(l, TrueConst):
            return r
        if isinstance(l, FalseConst):
            return Globally(r)
        return Release(l, r)
    return f


# ---------------------------------------------------------------------------
# tableau construction (generalized Büchi, then counter degeneralization)


@dataclass(frozen=True)
class BuchiAutomaton:
    """Nondeterministic Büchi automaton over truth assignments of ``atoms``.

    Edges carry (pos, neg) bitmasks over the atom table: an observation
    satisfies the edge when all pos bits hold and no neg bit holds.  The
    virtual initial state is represented by ``initial`` edges; a word is
    accepted when some run visits accepting states infinitely often.
    """

    source: Formula
    atoms: tuple[Formula, ...]
    n_states: int
    initial: tuple[tuple[int, int, int], ...]  # (pos_mask, neg_mask, target)
    edges: tuple[tuple[tuple[int, int, int], ...], ...]  # per state
    accepting: tuple[bool, ...]

    def obs_mask(self, obs) -> int:
        mask = 0
        for i, a in enumerate(self.atoms):
            if obs_holds(obs, a):
                mask |= 1 << i
        return mask


class _Node:
    __slots__ = ("incoming", "new", "old", "nxt")

    def __init__(self, incoming: set[int], new: dict, old: set, nxt: set):
        self.incoming = incoming
        self.new = new  # ordered set: dict[Formula, None]
        self.old = old
        self.nxt = nxt

    def copy(self) -> "_Node":
        return _Node(set(self.incoming), dict(self.new), set(self.old), set(self.nxt))


def _is_literal(f: Formula) -> bool:
    return is_leaf(f) or (isinstance(f, Not) and is_leaf(f.sub))


def _negation(f: Formula) -> Formula:
    return f.sub if isinstance(f, Not) else Not(f)


def _tableau(phi: Formula, node_cap: int) -> tuple[list[tuple[frozenset, frozenset, set[int]]], list[Until]]:
    """Expand the tableau graph for an NNF formula.

    Returns finalized nodes as (old, next, incoming) triples (index 0 is
    unused; node ids start at 1, virtual init is 0) and the Until
    subformulas defining the generalized acceptance sets.
    """
    finalized: dict[tuple[frozenset, frozenset], int] = {}
    rows: list[tuple[frozenset, frozenset, set[int]]] = [(frozenset(), frozenset(), set())]  # init placeholder
    todo: list[_Node] = [_Node({0}, {phi: None}, set(), set())]

    while todo:
        nd = todo.pop()
        if not nd.new:
            key = (frozenset(nd.old), frozenset(nd.nxt))
            found = finalized.get(key)
            if found is not None:
                rows[found][2].update(nd.incoming)
                continue
            nid = len(rows)
            if nid > node_cap:
                raise StateSpaceLimit(nid)
            finalized[key] = nid
            rows.append((key[0], key[1], set(nd.incoming)))
            todo.append(_Node({nid}, dict.fromkeys(sorted_formulas(nd.nxt)), set(), set()))
            continue

        f = next(iter(nd.new))
        del nd.new[f]
        if isinstance(f, TrueConst):
            todo.append(nd)
        elif isinstance(f, FalseConst):
            continue
        elif _is_literal(f):
            if _negation(f) in nd.old:
                continue
            nd.old.add(f)
            todo.append(nd)
        elif isinstance(f, And):
            nd.old.add(f)
            for part in (f.left, f.right):
                if part not in nd.old:
                    nd.new.setdefault(part)
            todo.append(nd)
        elif isinstance(f, Next):
            nd.old.add(f)
            nd.nxt.add(f.sub)
            todo.append(nd)
        elif isinstance(f, Or):
            nd.old.add(f)
            left, right = nd, nd.copy()
            if f.left not in left.old:
                left.new.setdefault(f.left)
            if f.right not in right.old:
                right.new.setdefault(f.right)
            todo.append(right)
            todo.append(left)
        elif isinstance(f, Until):
            nd.old.add(f)
            cont, fin = nd, nd.copy()
            if f.left not in cont.old:
                cont.new.setdefault(f.left)
            cont.nxt.add(f)
            if f.right not in fin.old:
                fin.new.setdefault(f.right)
            todo.append(fin)
            todo.append(cont)
        elif isinstance(f, Release):
            nd.old.add(f)
            cont, fin = nd, nd.copy()
            if f.right not in cont.old:
                cont.new.setdefault(f.right)
            cont.nxt.add(f)
            for part in (f.left, f.right):
                if part not in fin.old:
                    fin.new.setdefault(part)
            todo.append(fin)
            todo.append(cont)
        else:
            raise TypeError(f"unexpected formula in tableau: {f!r}")

    untils = [f for f in sorted_formulas({g for old, _, _ in rows for g in old if isinstance(g, Until)})]
    return rows, untils


def ltl_to_buchi(phi: Formula, node_cap: int = 200_000) -> BuchiAutomaton:
    """Translate plain LTL (no flow quantifiers) to a Büchi automaton."""
    norm = nnf(simplify(phi))
    rows, untils = _tableau(norm, node_cap)

    atoms = tuple(sorted_formulas({lit.sub if isinstance(lit, Not) else lit
                                   for old, _, _ in rows for lit in old if _is_literal(lit)}))
    atom_index = {a: i for i, a in enumerate(atoms)}

    def label_masks(old: frozenset) -> tuple[int, int]:
        pos = neg = 0
        for lit in old:
            if is_leaf(lit):
                pos |= 1 << atom_index[lit]
            elif isinstance(lit, Not) and is_leaf(lit.sub):
                neg |= 1 << atom_index[lit.sub]
        return pos, neg

    n_nodes = len(rows)  # including virtual init at 0
    k = max(1, len(untils))

    def accepts_set(old: frozenset, j: int) -> bool:
        if not untils:
            return True
        u = untils[j]
        return u not in old or u.right in old

    # successor lists per tableau node (from incoming lists)
    succs: list[list[int]] = [[] for _ in range(n_nodes)]
    for target in range(1, n_nodes):
        for src in sorted(rows[target][2]):
            succs[src].append(target)

    # lazily reachable (node, counter) pairs
    state_index: dict[tuple[int, int], int] = {}
    order: list[tuple[int, int]] = []

    def intern(node: int, ctr: int) -> int:
        got = state_index.get((node, ctr))
        if got is None:
            got = len(order)
            state_index[(node, ctr)] = got
            order.append((node, ctr))
        return got

    def next_counter(node: int, ctr: int) -> int:
        # single-step round robin: acceptance is detected exactly at wraps
        return (ctr + 1) % k if accepts_set(rows[node][0], ctr) else ctr

    initial_edges: list[tuple[int, int, int]] = []
    worklist: list[int] = []
    for target in succs[0]:
        pos, negm = label_masks(rows[target][0])
        sid = intern(target, 0)
        initial_edges.append((pos, negm, sid))
    worklist.extend(range(len(order)))

    edges: dict[int, list[tuple[int, int, int]]] = {}
    seen = set(range(len(order)))
    while worklist:
        sid = worklist.pop()
        node, ctr = order[sid]
        ctr_out = next_counter(node, ctr)
        out = []
        for target in succs[node]:
            pos, negm = label_masks(rows[target][0])
            tid = state_index.get((target, ctr_out))
            if tid is None:
                tid = intern(target, ctr_out)
            if tid not in seen:
                seen.add(tid)
                worklist.append(tid)
            out.append((pos, negm, tid))
        edges[sid] = out

    n = len(order)
    accepting = []
    for node, ctr in order:
        old = rows[node][0]
        accepting.append(ctr == k - 1 and accepts_set(old, k - 1))

    return BuchiAutomaton(
        source=phi,
        atoms=atoms,
        n_states=n,
        initial=tuple(initial_edges),
        edges=tuple(tuple(edges.get(i, [])) for i in range(n)),
        accepting=tuple(accepting),
    )


# ---------------------------------------------------------------------------
# nested DFS emptiness (with early cycle check on the outer stack)

_WHITE, _CYAN, _BLUE = 0, 1, 2
_RED_FLAG = 4


class _Colors:
    """White/cyan/blue + red flag, dense (bytearray) or sparse (dict)."""

    def __init__(self, n_states: int | None):
        self.dense = bytearray(n_states) if n_states is not None else None
        self.sparse: dict = {}

    def get(self, s) -> int:
        if self.dense is not None:
            return self.dense[s]
        return self.sparse.get(s, 0)

    def set(self, s, v: int) -> None:
        if self.dense is not None:
            self.dense[s] = v
        else:
            self.sparse[s] = v


def find_accepting_lasso(
    initial: Sequence,
    successors: Callable[[Hashable], Iterable[tuple]],
    accepting: Callable[[Hashable], bool],
    *,
    cap: int | None = None,
    poll: Callable[[], None] | None = None,
    poll_every: int = 10_000,
    n_states: int | None = None,
    counter: list | None = None,
) -> tuple[Hashable, list[tuple], list[tuple]] | None:
    """Search for a reachable accepting cycle.

    Returns (start_state, prefix_steps, loop_steps) where steps are
    (action, state) pairs, the prefix leads from start_state to the loop
    head and the loop returns to it; or None when the language is empty.
    ``counter`` (a single-cell list) reports discovered state count.
    """
    colors = _Colors(n_states)
    discovered = counter if counter is not None else [0]

    def note_state() -> None:
        discovered[0] += 1
        if cap is not None and discovered[0] > cap:
            raise StateSpaceLimit(discovered[0])
        if poll is not None and discovered[0] % poll_every == 0:
            poll()

    def red_dfs(seed, spine_index: dict) -> tuple[list[tuple], Hashable] | None:
        # search from seed for an edge back into the blue spine (incl. seed)
        parent: dict = {}
        stack = [seed]
        while stack:
            s = stack.pop()
            for a, t in successors(s):
                if t in spine_index:
                    steps = []
                    cur = s
                    while cur != seed:
                        ps, pa = parent[cur]
                        steps.append((pa, cur))
                        cur = ps
                    steps.reverse()
                    steps.append((a, t))
                    return steps, t
                c = colors.get(t)
                if not c & _RED_FLAG:
                    colors.set(t, c | _RED_FLAG)
                    note_state()
                    parent[t] = (s, a)
                    stack.append(t)
        return None

    for start in initial:
        if colors.get(start) & 3 != _WHITE:
            continue
        colors.set(start, _CYAN)
        note_state()
        spine_index: dict = {start: 0}
        spine: list[tuple] = [(None, start)]
        frames: list = [iter(successors(start))]
        while frames:
            it = frames[-1]
            here = spine[-1][1]
            advanced = False
            for action, t in it:
                tc = colors.get(t) & 3
                if tc == _CYAN:
                    if accepting(here) or accepting(t):
                        idx = spine_index[t]
                        prefix = spine[1 : idx + 1]
                        loop = spine[idx + 1 :] + [(action, t)]
                        return start, prefix, loop
                elif tc == _WHITE:
                    colors.set(t, _CYAN | (colors.get(t) & _RED_FLAG))
                    note_state()
                    spine_index[t] = len(spine)
                    spine.append((action, t))
                    frames.append(iter(successors(t)))
                    advanced = True
                    break
            if advanced:
                continue
            # postorder on `here`
            if accepting(here):
                found = red_dfs(here, spine_index)
                if found is not None:
                    redpath, u = found
                    idx = spine_index[u]
                    prefix = spine[1:]
                    loop = redpath + spine[idx + 1 :]
                    return start, prefix, loop
            frames.pop()
            spine.pop()
            del spine_index[here]
            colors.set(here, _BLUE | (colors.get(here) & _RED_FLAG))
    return None


# ---------------------------------------------------------------------------
# word acceptance (used by tests and the replay path)


def buchi_accepts(aut: BuchiAutomaton, prefix: Sequence, loop: Sequence) -> bool:
    """Does the automaton accept the ultimately periodic word prefix·loop^ω?"""
    if not loop:
        raise ValueError("loop must be non-empty")
    word = [aut.obs_mask(o) for o in list(prefix) + list(loop)]
    n = len(word)
    loop_start = len(prefix)

    def pos_succ(i: int) -> int:
        return i + 1 if i + 1 < n else loop_start

    # product state (i, q): automaton at q, next letter to read is word[i];
    # q == n_states is the virtual initial state
    def successors(state):
        i, q = state
        mask = word[i]
        q_edges = aut.initial if q == aut.n_states else aut.edges[q]
        ni = pos_succ(i)
        return [
            (None, (ni, target))
            for pos, neg, target in q_edges
            if (mask & pos) == pos and (mask & neg) == 0
        ]

    def accepting(state):
        _, q = state
        return q < aut.n_states and aut.accepting[q]

    found = find_accepting_lasso([(0, aut.n_states)], successors, accepting)
    return found is not None
