"""Petri nets with transits: data-flow relation, flow chains and trackers.

A transit of a transition links one of its input places (or the fresh START
marker ``>``) to one of its output places and describes how a datum moves
when the transition fires.  Flow chains are the maximal place sequences
induced by transits along a run; the tracker is the nondeterministic
chain-following component used by the Flow-LTL checker.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .nets import (
    START,
    ApnError,
    Marking,
    Net,
    NotEnabled,
    Transition,
    enabled,
    fire,
    net_from_document,
    parse_document,
    render_net,
)


@dataclass(frozen=True, eq=True)
class Transit:
    source: str  # place id or START (">")
    target: str


@dataclass(frozen=True, eq=True)
class TransitNet:
    net: Net
    transits: dict[str, tuple[Transit, ...]]  # transition id -> transits, declaration order

    def transits_of(self, tid: str) -> tuple[Transit, ...]:
        return self.transits.get(tid, ())

    def starts_of(self, tid: str) -> tuple[str, ...]:
        return tuple(tr.target for tr in self.transits_of(tid) if tr.source == START)

    def continuations(self, tid: str, place: str) -> tuple[str, ...]:
        return tuple(tr.target for tr in self.transits_of(tid) if tr.source == place)


def parse_transit_net(text: str) -> TransitNet:
    """Parse ``.apn`` text with ``.transits`` lines into a TransitNet."""
    doc = parse_document(text)
    net = net_from_document(doc)
    transits: dict[str, tuple[Transit, ...]] = {}
    for tid, pairs in doc.transits.items():
        if not net.has_transition(tid):
            raise ApnError(f"transits for undeclared transition {tid}")
        checked = []
        for src, dst in pairs:
            if src != START and src not in net.pre[tid]:
                raise ApnError(f"transit source {src} is not in the preset of {tid}")
            if dst not in net.post[tid]:
                raise ApnError(f"transit target {dst} is not in the postset of {tid}")
            checked.append(Transit(src, dst))
        transits[tid] = tuple(checked)
    return TransitNet(net=net, transits=transits)


def render_transit_net(tn: TransitNet) -> str:
    pairs = {tid: [(t.source, t.target) for t in ts] for tid, ts in tn.transits.items()}
    return render_net(tn.net, transits=pairs)


# ---------------------------------------------------------------------------
# trackers
#
# A tracker follows at most one flow chain of a run.  It may defer starting
# (stay IDLE across chain starts), which the checker needs for vacuous
# universal quantification.  Once a tracked datum is consumed without a
# continuing transit the tracker is ENDED; it remembers the final place so
# that place observations stutter forever.

IDLE = "IDLE"
AT = "AT"
ENDED = "ENDED"


@dataclass(frozen=True, eq=True, order=True)
class TrackerState:
    mode: str = IDLE
    place: str | None = None

    def __repr__(self) -> str:
        if self.mode == IDLE:
            return "IDLE"
        if self.mode == AT:
            return f"AT({self.place})"
        return f"ENDED({self.place})"


TRACKER_IDLE = TrackerState(IDLE, None)


def tracker_step(tn: TransitNet, state: TrackerState, tid: str) -> tuple[TrackerState, ...]:
    """All successor tracker states when ``tid`` fires; deterministic order."""
    if state.mode == ENDED:
        return (state,)
    if state.mode == IDLE:
        succ = [TRACKER_IDLE]
        succ.extend(TrackerState(AT, dst) for dst in tn.starts_of(tid))
        return tuple(succ)
    # AT(p)
    place = state.place
    if place not in tn.net.pre[tid]:
        return (state,)
    targets = tn.continuations(tid, place)
    if not targets:
        return (TrackerState(ENDED, place),)
    return tuple(TrackerState(AT, dst) for dst in targets)


def tracker_moved(tn: TransitNet, state: TrackerState, tid: str) -> bool:
    """True when firing ``tid`` advances a tracker sitting at a place."""
    return state.mode == AT and state.place in tn.net.pre[tid]


# ---------------------------------------------------------------------------
# data-flow forests for concrete firing sequences


class RunNotFireable(ValueError):
    def __init__(self, position: int, reason: str):
        self.position = position
        self.reason = reason
        super().__init__(f"run not fireable at position {position}: {reason}")


@dataclass
class FlowNode:
    """One datum occurrence: a place reached at a run position."""

    place: str
    position: int  # index after which the datum sits at `place` (0 = initially started)
    children: list[tuple[str, "FlowNode"]] = field(default_factory=list)
    ended: bool = False
    ended_by: str | None = None

    def to_json(self) -> dict:
        return {
            "place": self.place,
            "position": self.position,
            "ended": self.ended,
            "endedBy": self.ended_by,
            "children": [{"transition": t, "node": n.to_json()} for t, n in self.children],
        }


@dataclass
class DataFlowForest:
    """One tree per chain start, in firing order."""

    roots: list[tuple[str, FlowNode]] = field(default_factory=list)  # (starting transition, root)

    def nodes(self) -> list[FlowNode]:
        out = []

        def walk(n: FlowNode) -> None:
            out.append(n)
            for _, c in n.children:
                walk(c)

        for _, r in self.roots:
            walk(r)
        return out

    def edge_count(self) -> int:
        return sum(len(n.children) for n in self.nodes())

    def to_json(self) -> dict:
        return {"roots": [{"transition": t, "node": n.to_json()} for t, n in self.roots]}


def data_flow_forest(tn: TransitNet, run: Sequence[str]) -> DataFlowForest:
    """Replay ``run`` from the initial marking and collect its data-flow trees.

    Raises RunNotFireable if some transition in the run is not enabled when
    its turn comes.
    """
    marking = tn.net.initial_marking()
    forest = DataFlowForest()
    leaves: list[FlowNode] = []  # live chain tips

    for pos, tid in enumerate(run, start=1):
        if not tn.net.has_transition(tid):
            raise RunNotFireable(pos - 1, f"unknown transition {tid}")
        if not tn.net.pre[tid] <= marking:
            raise RunNotFireable(pos - 1, f"{tid} not enabled")
        marking = fire(tn.net, marking, tid)

        next_leaves: list[FlowNode] = []
        for leaf in leaves:
            if leaf.place not in tn.net.pre[tid]:
                next_leaves.append(leaf)
                continue
            targets = tn.continuations(tid, leaf.place)
            if not targets:
                leaf.ended = True
                leaf.ended_by = tid
                continue
            for dst in targets:
                child = FlowNode(place=dst, position=pos)
                leaf.children.append((tid, child))
                next_leaves.append(child)
        for dst in tn.starts_of(tid):
            root = FlowNode(place=dst, position=pos)
            forest.roots.append((tid, root))
            next_leaves.append(root)
        leaves = next_leaves

    return forest
