"""Flow-LTL checking of Petri nets with transits.

The pipeline realizes the reduction to plain LTL at the state-space level:

1. assumption injection: the checked formula becomes ``(MAX && FAIR) -> phi``;
2. every flow subformula ``A body`` is substituted by its relativization
   over the observations of a dedicated tracker;
3. the negation is translated to a Büchi automaton;
4. nested DFS searches the on-the-fly product of the automaton with the
   tracker-extended state space (markings x tracker vector, with stutter
   self-loops on deadlocks).

A verdict of UNSATISFIED comes with a lasso counterexample that `replay`
re-fires and re-evaluates with the direct semantics (chain extraction plus
`ltl.eval_lasso`), independently of the automaton pipeline.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from . import ltl
from .buchi import BuchiAutomaton, find_accepting_lasso, ltl_to_buchi, simplify, sorted_formulas
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
    conj,
    disj,
    eval_lasso,
    flow_subformulas,
    render_formula,
)
from .nets import Marking, Net, StateSpaceLimit, enabled, fire, is_deadlocked
from .transits import AT, ENDED, IDLE, TRACKER_IDLE, TrackerState, TransitNet, tracker_moved, tracker_step

DEFAULT_STATE_CAP = 10_000_000
POLL_EVERY = 10_000

STUTTER = None  # action label on deadlock self-loops


class UnsupportedShape(ValueError):
    """Flow subformula under a negation or a temporal operator."""


class UnresolvedAtom(ValueError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"atom {name} is neither a place nor a transition of the net")


class Cancelled(RuntimeError):
    """Raised through the cancellation poll to abort a running check."""


# ---------------------------------------------------------------------------
# states, lassos, results


@dataclass(frozen=True, eq=True)
class ProductState:
    marking: Marking
    trackers: tuple[TrackerState, ...]

    def to_json(self) -> dict:
        return {
            "marking": sorted(self.marking),
            "trackers": [{"mode": t.mode, "place": t.place} for t in self.trackers],
        }


@dataclass(frozen=True)
class Step:
    fired: str | None  # None = stutter on deadlock
    state: ProductState  # state after the step

    def to_json(self) -> dict:
        return {"fire": self.fired, **self.state.to_json()}


@dataclass(frozen=True)
class Lasso:
    prefix: tuple[Step, ...]
    loop: tuple[Step, ...]

    def to_json(self) -> dict:
        return {
            "prefix": [s.to_json() for s in self.prefix],
            "loop": [s.to_json() for s in self.loop],
        }


SATISFIED = "SATISFIED"
UNSATISFIED = "UNSATISFIED"


@dataclass
class CheckResult:
    verdict: str
    counterexample: Lasso | None
    constructed_formula: str
    stats: dict
    time_ms: float = 0.0  # not part of the canonical JSON document

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "counterexample": self.counterexample.to_json() if self.counterexample else None,
            "constructedFormula": self.constructed_formula,
            "stats": self.stats,
        }


# ---------------------------------------------------------------------------
# shape checking and atom resolution


def check_shape(f: Formula) -> None:
    """Reject flow subformulas under negations or temporal operators."""

    def walk(g: Formula, positive: bool, under_temporal: bool) -> None:
        if isinstance(g, Flow):
            if not positive:
                raise UnsupportedShape(
                    "flow subformula occurs under a negation; only positive occurrences are checkable"
                )
            if under_temporal:
                raise UnsupportedShape(
                    "flow subformula occurs under a temporal operator; this fragment is not supported"
                )
            return
        if isinstance(g, Not):
            walk(g.sub, not positive, under_temporal)
        elif isinstance(g, Implies):
            walk(g.left, not positive, under_temporal)
            walk(g.right, positive, under_temporal)
        elif isinstance(g, (And, Or)):
            walk(g.left, positive, under_temporal)
            walk(g.right, positive, under_temporal)
        elif isinstance(g, (Next, Eventually, Globally)):
            walk(g.sub, positive, True)
        elif isinstance(g, (Until, Release)):
            walk(g.left, positive, True)
            walk(g.right, positive, True)

    walk(f, True, False)


def resolve_atoms(net: Net, f: Formula) -> None:
    for leaf in ltl.atoms_of(f):
        if isinstance(leaf, Atom):
            if not (net.has_place(leaf.name) or net.has_transition(leaf.name)):
                raise UnresolvedAtom(leaf.name)
        elif isinstance(leaf, EnabledAtom):
            if not net.has_transition(leaf.transition):
                raise UnresolvedAtom(leaf.transition)


# ---------------------------------------------------------------------------
# assumption injection


def add_assumptions(tn: TransitNet, f: Formula) -> Formula:
    """Wrap a formula as ``(MAX && FAIR) -> f``.

    MAX: whenever some transition is enabled, some transition eventually
    fires.  FAIR: every weak-fair transition enabled infinitely often also
    fires infinitely often.  Both are purely syntactic; flow subformulas in
    ``f`` are left untouched.
    """
    resolve_atoms(tn.net, f)
    ts = tn.net.transitions
    enabled_any = disj([EnabledAtom(t.id) for t in ts])
    fired_any = disj([Atom(t.id) for t in ts])
    maximality = Globally(Implies(enabled_any, Eventually(fired_any)))
    fair_parts = [
        Implies(
            Globally(Eventually(EnabledAtom(t.id))),
            Globally(Eventually(Atom(t.id))),
        )
        for t in ts
        if t.weakfair
    ]
    assumptions = And(maximality, conj(fair_parts)) if fair_parts else maximality
    return Implies(assumptions, f)


# ---------------------------------------------------------------------------
# relativization: flow bodies over tracker observations
#
# Chain positions are sampled at run steps where the tracker advances or has
# ended ("commits").  Place observations are stable between commits, so they
# stay unwrapped; transition observations only hold at the commit itself and
# are therefore sampled.  A chain whose tracker is never consumed again
# stutters its final observation forever, which the G!u branches collapse to
# a propositional evaluation.


def _at_next_sample(u: Formula, f: Formula) -> Formula:
    return Or(Until(Not(u), And(u, f)), And(Globally(Not(u)), f))


def relativize(index: int, flow: Flow, net: Net) -> Formula:
    """Rewrite a flow body over the observations of tracker ``index``."""
    u = Or(TrackerMoved(index), TrackerEnded(index))

    def rw(g: Formula) -> Formula:
        if isinstance(g, (TrueConst, FalseConst)):
            return g
        if isinstance(g, Atom):
            if net.has_place(g.name):
                return TrackerAt(index, g.name)
            if net.has_transition(g.name):
                return _at_next_sample(u, TrackerMovesVia(index, g.name))
            raise UnresolvedAtom(g.name)
        if isinstance(g, Not):
            return Not(rw(g.sub))
        if isinstance(g, And):
            return And(rw(g.left), rw(g.right))
        if isinstance(g, Or):
            return Or(rw(g.left), rw(g.right))
        if isinstance(g, Implies):
            return Implies(rw(g.left), rw(g.right))
        if isinstance(g, Next):
            s = rw(g.sub)
            return Or(Until(Not(u), And(u, Next(s))), And(Globally(Not(u)), s))
        if isinstance(g, Until):
            l, r = rw(g.left), rw(g.right)
            return Until(Implies(u, l), Or(And(u, r), And(Globally(Not(u)), r)))
        if isinstance(g, Eventually):
            return rw(Until(TRUE, g.sub))
        if isinstance(g, Globally):
            return Not(rw(Until(TRUE, Not(g.sub))))
        if isinstance(g, Release):
            return Not(rw(Until(Not(g.left), Not(g.right))))
        raise UnsupportedShape(f"cannot relativize {g!r}")

    idle = TrackerIdle(index)
    body = rw(flow.body)
    return Or(
        Globally(idle),
        And(Eventually(Not(idle)), Until(idle, And(Not(idle), body))),
    )


def substitute_flows(f: Formula, replacements: Sequence[Formula]) -> Formula:
    """Replace flow subformulas by ``replacements`` in syntactic order."""
    counter = itertools.count()

    def walk(g: Formula) -> Formula:
        if isinstance(g, Flow):
            return replacements[next(counter)]
        if isinstance(g, Not):
            return Not(walk(g.sub))
        if isinstance(g, (Next, Eventually, Globally)):
            return type(g)(walk(g.sub))
        if isinstance(g, (And, Or, Implies, Until, Release)):
            return type(g)(walk(g.left), walk(g.right))
        return g

    return walk(f)


# ---------------------------------------------------------------------------
# tracker-extended state space with per-edge observations


class _CoreSpace:
    """Lazily expanded (marking, trackers) graph, states interned to ints."""

    def __init__(self, tn: TransitNet, n_trackers: int, atoms: Sequence[Formula]):
        self.tn = tn
        self.net = tn.net
        self.atoms = tuple(atoms)
        init = ProductState(self.net.initial_marking(), (TRACKER_IDLE,) * n_trackers)
        self.states: dict[ProductState, int] = {init: 0}
        self.order: list[ProductState] = [init]
        self._edges: dict[int, list[tuple[str | None, int, int]]] = {}

    def intern(self, s: ProductState) -> int:
        got = self.states.get(s)
        if got is None:
            got = len(self.order)
            self.states[s] = got
            self.order.append(s)
        return got

    def obs_mask(self, s: ProductState, action: str | None) -> int:
        net = self.net
        mask = 0
        for i, leaf in enumerate(self.atoms):
            if isinstance(leaf, Atom):
                name = leaf.name
                hold = name in s.marking if net.has_place(name) else action == name
            elif isinstance(leaf, EnabledAtom):
                hold = net.pre[leaf.transition] <= s.marking
            elif isinstance(leaf, TrackerAt):
                t = s.trackers[leaf.index]
                hold = t.mode in (AT, ENDED) and t.place == leaf.place
            elif isinstance(leaf, TrackerIdle):
                hold = s.trackers[leaf.index].mode == IDLE
            elif isinstance(leaf, TrackerEnded):
                hold = s.trackers[leaf.index].mode == ENDED
            elif isinstance(leaf, TrackerMoved):
                t = s.trackers[leaf.index]
                hold = action is not None and t.mode == AT and t.place in net.pre[action]
            elif isinstance(leaf, TrackerMovesVia):
                t = s.trackers[leaf.index]
                hold = (
                    action == leaf.transition
                    and action is not None
                    and t.mode == AT
                    and t.place in net.pre[action]
                )
            else:
                raise TypeError(f"unexpected atom {leaf!r}")
            if hold:
                mask |= 1 << i
        return mask

    def successors(self, idx: int) -> list[tuple[str | None, int, int]]:
        cached = self._edges.get(idx)
        if cached is not None:
            return cached
        s = self.order[idx]
        out: list[tuple[str | None, int, int]] = []
        actions = enabled(self.net, s.marking)
        if not actions:
            mask = self.obs_mask(s, STUTTER)
            out.append((STUTTER, mask, idx))
        else:
            for tid in actions:
                marking = fire(self.net, s.marking, tid)
                mask = self.obs_mask(s, tid)
                options = [tracker_step(self.tn, tr, tid) for tr in s.trackers]
                for combo in itertools.product(*options):
                    target = self.intern(ProductState(marking, combo))
                    out.append((tid, mask, target))
        self._edges[idx] = out
        return out


# ---------------------------------------------------------------------------
# check


def check(
    tn: TransitNet,
    formula: Formula,
    *,
    state_cap: int = DEFAULT_STATE_CAP,
    poll: Callable[[int], None] | None = None,
) -> CheckResult:
    """Model check a transit net against a Flow-LTL formula.

    ``poll`` is invoked with the running expanded-state count at least every
    10^4 expansions and may raise ``Cancelled``.
    """
    t0 = time.perf_counter()
    check_shape(formula)
    resolve_atoms(tn.net, formula)
    flows = flow_subformulas(formula)

    assumed = add_assumptions(tn, formula)
    replacements = [relativize(i, fl, tn.net) for i, fl in enumerate(flows)]
    constructed = substitute_flows(assumed, replacements)
    aut = ltl_to_buchi(Not(constructed))

    core = _CoreSpace(tn, len(flows), aut.atoms)
    n_aut = aut.n_states + 1  # virtual initial automaton state = aut.n_states
    init_aut = aut.n_states

    def successors(pstate: int):
        cidx, q = divmod(pstate, n_aut)
        q_edges = aut.initial if q == init_aut else aut.edges[q]
        out = []
        for action, mask, ctarget in core.successors(cidx):
            base = ctarget * n_aut
            for pos, neg, qt in q_edges:
                if (mask & pos) == pos and (mask & neg) == 0:
                    out.append((action, base + qt))
        return out

    def accepting(pstate: int) -> bool:
        q = pstate % n_aut
        return q != init_aut and aut.accepting[q]

    counter = [0]
    poll_cb = (lambda: poll(counter[0])) if poll is not None else None
    found = find_accepting_lasso(
        [init_aut],  # product of core state 0 with the virtual automaton init
        successors,
        accepting,
        cap=state_cap,
        poll=poll_cb,
        poll_every=POLL_EVERY,
        counter=counter,
    )
    if poll is not None:
        poll(counter[0])

    stats = {
        "flowSubformulas": len(flows),
        "automatonStates": aut.n_states,
        "coreStates": len(core.order),
        "productStates": counter[0],
    }
    elapsed = (time.perf_counter() - t0) * 1000.0

    if found is None:
        return CheckResult(SATISFIED, None, render_formula(constructed), stats, elapsed)

    _, prefix_steps, loop_steps = found

    def project(steps) -> tuple[Step, ...]:
        return tuple(Step(action, core.order[p // n_aut]) for action, p in steps)

    lasso = Lasso(project(prefix_steps), project(loop_steps))
    result = CheckResult(UNSATISFIED, lasso, render_formula(constructed), stats, elapsed)
    confirmation = replay(tn, formula, lasso)
    if not confirmation.valid:
        raise AssertionError(
            f"internal error: counterexample failed replay at {confirmation.position}: {confirmation.reason}"
        )
    return result


# ---------------------------------------------------------------------------
# replay: independent re-validation of a counterexample


class InvalidCounterexample(ValueError):
    def __init__(self, position: int | None, reason: str):
        self.position = position
        self.reason = reason
        where = "" if position is None else f" at step {position}"
        super().__init__(f"invalid counterexample{where}: {reason}")


@dataclass
class ReplayResult:
    valid: bool
    position: int | None
    reason: str | None
    steps: list[dict]  # annotated trace: global marking + per-tracker state
    assumptions_hold: bool | None = None
    formula_value: bool | None = None

    def to_json(self) -> dict:
        return {
            "valid": self.valid,
            "position": self.position,
            "reason": self.reason,
            "steps": self.steps,
            "assumptionsHold": self.assumptions_hold,
            "formulaValue": self.formula_value,
        }


def _chain_word(
    tn: TransitNet,
    states: Sequence[ProductState],
    actions: Sequence[str | None],
    loop_start: int,
    index: int,
) -> tuple[list[frozenset], list[frozenset]] | None:
    """Extract tracker ``index``'s chain as an ultimately periodic word.

    Returns None when the tracker idles forever (vacuous chain).  The word
    ranges over plain net atoms: the chain's place, plus the transition that
    advances it at commit steps.
    """
    n = len(states)
    trackers = [s.trackers[index] for s in states]
    if all(t.mode == IDLE for t in trackers):
        return None

    def committed(j: int) -> bool:
        t = trackers[j]
        if t.mode == ENDED:
            return True
        return t.mode == AT and actions[j] is not None and t.place in tn.net.pre[actions[j]]

    def obs(j: int) -> frozenset:
        t = trackers[j]
        parts = {Atom(t.place)}
        if t.mode == AT and actions[j] is not None and t.place in tn.net.pre[actions[j]]:
            parts.add(Atom(actions[j]))
        return frozenset(parts)

    first = next(j for j in range(n) if trackers[j].mode != IDLE)
    prefix = [obs(j) for j in range(first, loop_start) if committed(j)]
    loop = [obs(j) for j in range(max(first, loop_start), n) if committed(j)]
    if not loop:
        # the tracker is frozen through the loop: the chain stutters its place
        stalled = trackers[loop_start]
        loop = [frozenset({Atom(stalled.place)})]
    return prefix, loop


class _RunObs:
    """Observation of one run position for run-level atoms."""

    __slots__ = ("net", "state", "action")

    def __init__(self, net: Net, state: ProductState, action: str | None):
        self.net = net
        self.state = state
        self.action = action

    def holds(self, leaf: Formula) -> bool:
        if isinstance(leaf, Atom):
            if self.net.has_place(leaf.name):
                return leaf.name in self.state.marking
            return self.action == leaf.name
        if isinstance(leaf, EnabledAtom):
            return self.net.pre[leaf.transition] <= self.state.marking
        raise TypeError(f"run-level observation cannot evaluate {leaf!r}")


def replay(tn: TransitNet, formula: Formula, cex: Lasso, strict: bool = False) -> ReplayResult:
    """Re-fire a counterexample and re-evaluate the formula directly.

    Structural checks: connectivity of markings and trackers, stutter only
    on deadlocks, loop closure.  Semantic check: with each flow subformula
    valued from its own tracker's chain (idle-forever trackers count as
    vacuously true), the assumptions hold and the formula fails.
    """
    net = tn.net
    flows = flow_subformulas(formula)
    n_trackers = len(flows)

    def fail(position: int | None, reason: str) -> ReplayResult:
        if strict:
            raise InvalidCounterexample(position, reason)
        return ReplayResult(False, position, reason, [])

    if not cex.loop:
        return fail(None, "loop is empty")

    initial = ProductState(net.initial_marking(), (TRACKER_IDLE,) * n_trackers)
    states = [initial]
    actions: list[str | None] = []
    annotated: list[dict] = []

    for pos, step in enumerate(list(cex.prefix) + list(cex.loop)):
        here = states[-1]
        if len(step.state.trackers) != n_trackers:
            return fail(pos, "tracker vector has wrong arity")
        if step.fired is None:
            if not is_deadlocked(net, here.marking):
                return fail(pos, "stutter step on a non-deadlocked marking")
            if step.state != here:
                return fail(pos, "stutter step must not change the state")
        else:
            if not net.has_transition(step.fired):
                return fail(pos, f"unknown transition {step.fired}")
            if not net.pre[step.fired] <= here.marking:
                return fail(pos, f"{step.fired} is not enabled")
            if step.state.marking != fire(net, here.marking, step.fired):
                return fail(pos, "marking does not match the firing rule")
            for i in range(n_trackers):
                if step.state.trackers[i] not in tracker_step(tn, here.trackers[i], step.fired):
                    return fail(pos, f"tracker {i} takes an impossible step")
        states.append(step.state)
        actions.append(step.fired)
        annotated.append(step.to_json())

    loop_start = len(cex.prefix)
    if states[-1] != states[loop_start]:
        return fail(len(actions) - 1, "loop does not close")

    # drop the closing copy: positions 0..p+l-1, with wrap to loop_start
    eval_states = states[:-1]
    eval_actions = actions

    # value each flow subformula from its tracker's chain
    flow_values: list[Formula] = []
    for i, fl in enumerate(flows):
        word = _chain_word(tn, eval_states, eval_actions, loop_start, i)
        if word is None:
            flow_values.append(TRUE)
        else:
            value = eval_lasso(fl.body, word[0], word[1])
            flow_values.append(TRUE if value else FALSE)

    assumed = add_assumptions(tn, formula)
    plain = substitute_flows(assumed, flow_values)
    assert isinstance(plain, Implies)

    run_word = [
        _RunObs(net, eval_states[j], eval_actions[j]) for j in range(len(eval_states))
    ]
    prefix_obs = run_word[:loop_start]
    loop_obs = run_word[loop_start:]

    assumptions_hold = eval_lasso(plain.left, prefix_obs, loop_obs)
    formula_value = eval_lasso(plain.right, prefix_obs, loop_obs)

    result = ReplayResult(
        valid=assumptions_hold and not formula_value,
        position=None,
        reason=None,
        steps=annotated,
        assumptions_hold=assumptions_hold,
        formula_value=formula_value,
    )
    if not result.valid:
        result.reason = (
            "run violates the injected assumptions"
            if not assumptions_hold
            else "formula holds on this run"
        )
        if strict:
            raise InvalidCounterexample(None, result.reason)
    return result
