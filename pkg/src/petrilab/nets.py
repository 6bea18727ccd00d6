"""Safe place/transition Petri nets.

Data model, the line-oriented ``.apn`` text format, firing semantics,
on-demand reachability graphs and PNML export.  Nets are kept 1-safe by
discipline: markings are sets of place ids and a firing that would put a
second token on a place raises instead of silently merging.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

SYSTEM = "system"
ENVIRONMENT = "environment"

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")

Coord = tuple[float, float]
Marking = frozenset[str]


# ---------------------------------------------------------------------------
# errors


class ApnError(ValueError):
    """Syntax or validation error in an ``.apn`` document."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.message = message
        self.line = line
        self.col = col
        where = ""
        if line is not None:
            where = f"line {line}" + (f", col {col}" if col is not None else "") + ": "
        super().__init__(where + message)


class UnknownNode(KeyError):
    def __init__(self, node: str):
        self.node = node
        super().__init__(node)

    def __str__(self) -> str:
        return f"unknown node {self.node}"


class NotEnabled(ValueError):
    def __init__(self, transition: str, marking: Marking):
        self.transition = transition
        self.marking = marking
        super().__init__(f"transition {transition} is not enabled in {{{', '.join(sorted(marking))}}}")


class SafetyViolation(ValueError):
    """A firing would place a second token on a place."""

    def __init__(self, place: str, transition: str, marking: Marking):
        self.place = place
        self.transition = transition
        self.marking = marking
        super().__init__(
            f"firing {transition} would put a second token on {place}; the net is not 1-safe from this marking"
        )


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class Place:
    id: str
    initial: int = 0
    kind: str = SYSTEM
    bad: bool = False
    coord: Coord | None = None


@dataclass(frozen=True)
class Transition:
    id: str
    weakfair: bool = False
    coord: Coord | None = None


@dataclass(frozen=True, eq=True)
class Net:
    """A 1-safe place/transition net with a single flat id namespace."""

    name: str
    places: tuple[Place, ...]
    transitions: tuple[Transition, ...]
    pre: dict[str, frozenset[str]]
    post: dict[str, frozenset[str]]

    # -- lookup helpers -----------------------------------------------------

    def place(self, pid: str) -> Place:
        for p in self.places:
            if p.id == pid:
                return p
        raise UnknownNode(pid)

    def transition(self, tid: str) -> Transition:
        for t in self.transitions:
            if t.id == tid:
                return t
        raise UnknownNode(tid)

    def has_place(self, pid: str) -> bool:
        return any(p.id == pid for p in self.places)

    def has_transition(self, tid: str) -> bool:
        return any(t.id == tid for t in self.transitions)

    @property
    def place_ids(self) -> tuple[str, ...]:
        return tuple(p.id for p in self.places)

    @property
    def transition_ids(self) -> tuple[str, ...]:
        return tuple(t.id for t in self.transitions)

    def initial_marking(self) -> Marking:
        return frozenset(p.id for p in self.places if p.initial)

    def post_transitions(self, pid: str) -> tuple[str, ...]:
        """Transitions that consume ``pid``, in declaration order."""
        return tuple(t.id for t in self.transitions if pid in self.pre[t.id])

    def bad_places(self) -> frozenset[str]:
        return frozenset(p.id for p in self.places if p.bad)

    def coord_of(self, node: str) -> Coord | None:
        for p in self.places:
            if p.id == node:
                return p.coord
        for t in self.transitions:
            if t.id == node:
                return t.coord
        raise UnknownNode(node)


# ---------------------------------------------------------------------------
# firing semantics


def enabled(net: Net, marking: Marking) -> list[str]:
    """Transitions enabled in ``marking``, in declaration order."""
    return [t.id for t in net.transitions if net.pre[t.id] <= marking]


def is_enabled(net: Net, marking: Marking, tid: str) -> bool:
    return net.pre[tid] <= marking


def fire(net: Net, marking: Marking, tid: str) -> Marking:
    """Fire ``tid`` from ``marking`` under 1-safe semantics."""
    if not net.has_transition(tid):
        raise UnknownNode(tid)
    pre = net.pre[tid]
    post = net.post[tid]
    if not pre <= marking:
        raise NotEnabled(tid, marking)
    for p in post - pre:
        if p in marking:
            raise SafetyViolation(p, tid, marking)
    return (marking - pre) | post


def is_deadlocked(net: Net, marking: Marking) -> bool:
    return not any(net.pre[t.id] <= marking for t in net.transitions)


# ---------------------------------------------------------------------------
# reachability graph (interactive, frontier-based)


@dataclass(frozen=True, eq=True)
class ReachGraph:
    nodes: frozenset[Marking]
    edges: frozenset[tuple[Marking, str, Marking]]
    frontier: frozenset[Marking]
    initial: Marking


def reach_init(net: Net) -> ReachGraph:
    m0 = net.initial_marking()
    return ReachGraph(nodes=frozenset([m0]), edges=frozenset(), frontier=frozenset([m0]), initial=m0)


def expand(graph: ReachGraph, net: Net, node: Marking) -> ReachGraph:
    """Add all successors of ``node``; idempotent once a node is expanded."""
    if node not in graph.nodes:
        raise UnknownNode("{" + ", ".join(sorted(node)) + "}")
    if node not in graph.frontier:
        return graph
    new_nodes = set(graph.nodes)
    new_edges = set(graph.edges)
    new_frontier = set(graph.frontier)
    new_frontier.discard(node)
    for tid in enabled(net, node):
        succ = fire(net, node, tid)
        if succ not in new_nodes:
            new_nodes.add(succ)
            new_frontier.add(succ)
        new_edges.add((node, tid, succ))
    return ReachGraph(
        nodes=frozenset(new_nodes),
        edges=frozenset(new_edges),
        frontier=frozenset(new_frontier),
        initial=graph.initial,
    )


def expand_to_fixpoint(net: Net, cap: int = 1_000_000) -> ReachGraph:
    graph = reach_init(net)
    while graph.frontier:
        if len(graph.nodes) > cap:
            raise StateSpaceLimit(len(graph.nodes))
        node = min(graph.frontier, key=lambda m: tuple(sorted(m)))
        graph = expand(graph, net, node)
    return graph


class StateSpaceLimit(RuntimeError):
    def __init__(self, states: int):
        self.states = states
        super().__init__(f"state space limit exceeded after {states} states")


# ---------------------------------------------------------------------------
# .apn parsing
#
# Line oriented, UTF-8, '#' starts a comment.  Sections:
#   .name n
#   .places  p0[init=1,env] bad[bad] s0 ...
#   .transitions t0[weakfair] t1 ...
#   .flows   t0: {s0,a3} -> {s1,a3}
#   .transits t0: s0 -> s1, > -> s1        (handled by the transits module)
#   .coords  s0: (120.5, 40.0)


START = ">"

_FLOW_RE = re.compile(
    r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*:\s*\{([^}]*)\}\s*->\s*\{([^}]*)\}\s*$"
)
_TRANSIT_HEAD_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*:\s*(.*\S)\s*$")
_TRANSIT_PAIR_RE = re.compile(r"^\s*(>|[A-Za-z_][A-Za-z0-9_]*)\s*->\s*([A-Za-z_][A-Za-z0-9_]*)\s*$")
_COORD_RE = re.compile(
    r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*:\s*\(\s*(-?[0-9]+(?:\.[0-9]+)?)\s*,\s*(-?[0-9]+(?:\.[0-9]+)?)\s*\)\s*$"
)
_ITEM_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)(?:\[([^\]]*)\])?$")


@dataclass
class ApnDocument:
    """Raw parse of an .apn file, before semantic validation."""

    name: str = ""
    places: list[Place] = field(default_factory=list)
    transitions: list[Transition] = field(default_factory=list)
    flows: dict[str, tuple[set[str], set[str]]] = field(default_factory=dict)
    transits: dict[str, list[tuple[str, str]]] = field(default_factory=dict)
    coords: dict[str, Coord] = field(default_factory=dict)


def _strip_comment(line: str) -> str:
    i = line.find("#")
    return line if i < 0 else line[:i]


def _place_from_item(name: str, flags: str | None, line_no: int, col: int) -> Place:
    initial, kind, bad = 0, SYSTEM, False
    if flags is not None and flags.strip():
        for part in flags.split(","):
            part = part.strip()
            if part == "env":
                kind = ENVIRONMENT
            elif part == "bad":
                bad = True
            elif part.startswith("init="):
                try:
                    initial = int(part[5:])
                except ValueError:
                    raise ApnError(f"bad init value in {name!r}", line_no, col)
                if initial not in (0, 1):
                    raise ApnError(
                        f"initial marking of {name} is {initial}; nets are 1-safe (0 or 1)", line_no, col
                    )
            elif part == "weakfair":
                raise ApnError(f"flag 'weakfair' is not valid on place {name}", line_no, col)
            else:
                raise ApnError(f"unknown place flag {part!r} on {name}", line_no, col)
    return Place(id=name, initial=initial, kind=kind, bad=bad)


def _transition_from_item(name: str, flags: str | None, line_no: int, col: int) -> Transition:
    weakfair = False
    if flags is not None and flags.strip():
        for part in flags.split(","):
            part = part.strip()
            if part == "weakfair":
                weakfair = True
            elif part in ("env", "bad") or part.startswith("init="):
                raise ApnError(f"flag {part!r} is not valid on transition {name}", line_no, col)
            else:
                raise ApnError(f"unknown transition flag {part!r} on {name}", line_no, col)
    return Transition(id=name, weakfair=weakfair)


def parse_document(text: str) -> ApnDocument:
    """Parse an .apn document into its raw sections."""
    doc = ApnDocument()
    seen: dict[str, int] = {}
    saw_name = False

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).rstrip()
        if not line.strip():
            continue
        stripped = line.lstrip()
        col0 = len(line) - len(stripped) + 1
        if not stripped.startswith("."):
            raise ApnError(f"expected a section directive, got {stripped.split()[0]!r}", line_no, col0)
        head, _, body = stripped.partition(" ")

        if head == ".name":
            name = body.strip()
            if saw_name:
                raise ApnError("duplicate .name directive", line_no, col0)
            if not IDENT_RE.fullmatch(name):
                raise ApnError(f"net name {name!r} is not an identifier", line_no, col0)
            doc.name = name
            saw_name = True

        elif head in (".places", ".transitions"):
            for m in re.finditer(r"\S+", body):
                col = col0 + len(head) + 1 + m.start()
                item = _ITEM_RE.fullmatch(m.group())
                if not item:
                    raise ApnError(f"bad node declaration {m.group()!r}", line_no, col)
                name, flags = item.group(1), item.group(2)
                if name in seen:
                    raise ApnError(
                        f"duplicate id {name} (first declared on line {seen[name]}; places and "
                        "transitions share one namespace)",
                        line_no,
                        col,
                    )
                seen[name] = line_no
                if head == ".places":
                    doc.places.append(_place_from_item(name, flags, line_no, col))
                else:
                    doc.transitions.append(_transition_from_item(name, flags, line_no, col))

        elif head == ".flows":
            m = _FLOW_RE.match(body)
            if not m:
                raise ApnError("malformed .flows line (expected 't: {a,b} -> {c}')", line_no, col0)
            tid, pre_body, post_body = m.group(1), m.group(2), m.group(3)
            pre = {s.strip() for s in pre_body.split(",") if s.strip()}
            post = {s.strip() for s in post_body.split(",") if s.strip()}
            for node in pre | post:
                if not IDENT_RE.fullmatch(node):
                    raise ApnError(f"bad node name {node!r} in flow of {tid}", line_no, col0)
            cur = doc.flows.setdefault(tid, (set(), set()))
            cur[0].update(pre)
            cur[1].update(post)

        elif head == ".transits":
            m = _TRANSIT_HEAD_RE.match(body)
            if not m:
                raise ApnError("malformed .transits line (expected 't: s0 -> s1, > -> s1')", line_no, col0)
            tid, rest = m.group(1), m.group(2)
            pairs = doc.transits.setdefault(tid, [])
            for chunk in rest.split(","):
                pm = _TRANSIT_PAIR_RE.match(chunk)
                if not pm:
                    raise ApnError(f"malformed transit {chunk.strip()!r} on {tid}", line_no, col0)
                pair = (pm.group(1), pm.group(2))
                if pair not in pairs:
                    pairs.append(pair)

        elif head == ".coords":
            m = _COORD_RE.match(body)
            if not m:
                raise ApnError("malformed .coords line (expected 'n: (x, y)')", line_no, col0)
            doc.coords[m.group(1)] = (float(m.group(2)), float(m.group(3)))

        else:
            raise ApnError(f"unknown section {head!r}", line_no, col0)

    if not saw_name:
        raise ApnError("missing .name directive", 1, 1)
    return doc


def net_from_document(doc: ApnDocument) -> Net:
    """Build and validate the Net part of a parsed document."""
    place_ids = {p.id for p in doc.places}
    transition_ids = {t.id for t in doc.transitions}

    pre: dict[str, frozenset[str]] = {}
    post: dict[str, frozenset[str]] = {}
    for tid, (pre_set, post_set) in doc.flows.items():
        if tid not in transition_ids:
            raise ApnError(f"flow for undeclared transition {tid}")
        for node in sorted(pre_set | post_set):
            if node not in place_ids:
                raise ApnError(f"unknown node {node} in flows of {tid}")
        pre[tid] = frozenset(pre_set)
        post[tid] = frozenset(post_set)

    for t in doc.transitions:
        pre.setdefault(t.id, frozenset())
        post.setdefault(t.id, frozenset())
        if not pre[t.id] and not post[t.id]:
            raise ApnError(f"transition {t.id} has no arcs")

    places = []
    for p in doc.places:
        coord = doc.coords.get(p.id)
        places.append(replace(p, coord=coord) if coord else p)
    transitions = []
    for t in doc.transitions:
        coord = doc.coords.get(t.id)
        transitions.append(replace(t, coord=coord) if coord else t)

    for node in doc.coords:
        if node not in place_ids and node not in transition_ids:
            raise ApnError(f"unknown node {node} in .coords")

    return Net(
        name=doc.name,
        places=tuple(places),
        transitions=tuple(transitions),
        pre=pre,
        post=post,
    )


def parse_net(text: str) -> Net:
    """Parse an ``.apn`` document into a validated Net.

    Transit lines are syntax-checked but only attached by the transit-net
    parser; see :mod:`petrilab.transits`.
    """
    return net_from_document(parse_document(text))


# ---------------------------------------------------------------------------
# .apn rendering


def _fmt_coord(c: Coord) -> str:
    return f"({c[0]!r}, {c[1]!r})"


def _place_flags(p: Place) -> str:
    parts = []
    if p.initial:
        parts.append("init=1")
    if p.kind == ENVIRONMENT:
        parts.append("env")
    if p.bad:
        parts.append("bad")
    return "[" + ",".join(parts) + "]" if parts else ""


def render_net(net: Net, transits: dict[str, list[tuple[str, str]]] | None = None) -> str:
    """Render a net (optionally with transit lines) as canonical .apn text."""
    out = [f".name {net.name}"]
    for p in net.places:
        out.append(f".places {p.id}{_place_flags(p)}")
    for t in net.transitions:
        out.append(f".transitions {t.id}" + ("[weakfair]" if t.weakfair else ""))
    for t in net.transitions:
        pre = ",".join(sorted(net.pre[t.id]))
        post = ",".join(sorted(net.post[t.id]))
        out.append(f".flows {t.id}: {{{pre}}} -> {{{post}}}")
    if transits:
        for tid in net.transition_ids:
            pairs = transits.get(tid)
            if pairs:
                rendered = ", ".join(f"{s} -> {d}" for s, d in sorted(pairs))
                out.append(f".transits {tid}: {rendered}")
    for p in net.places:
        if p.coord is not None:
            out.append(f".coords {p.id}: {_fmt_coord(p.coord)}")
    for t in net.transitions:
        if t.coord is not None:
            out.append(f".coords {t.id}: {_fmt_coord(t.coord)}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# PNML export

_PNML_NS = "http://www.pnml.org/version-2009/grammar/pnml"
_PT_TYPE = "http://www.pnml.org/version-2009/grammar/ptnet"


def export_pnml(net: Net) -> str:
    """Export as a PNML P/T-net document (one <net>, coordinates as <position>)."""
    root = ET.Element("pnml", xmlns=_PNML_NS)
    net_el = ET.SubElement(root, "net", id=net.name, type=_PT_TYPE)
    name_el = ET.SubElement(net_el, "name")
    ET.SubElement(name_el, "text").text = net.name
    page = ET.SubElement(net_el, "page", id="page0")

    def add_graphics(el: ET.Element, coord: Coord | None) -> None:
        if coord is not None:
            g = ET.SubElement(el, "graphics")
            ET.SubElement(g, "position", x=repr(coord[0]), y=repr(coord[1]))

    for p in net.places:
        pel = ET.SubElement(page, "place", id=p.id)
        nel = ET.SubElement(pel, "name")
        ET.SubElement(nel, "text").text = p.id
        if p.initial:
            mel = ET.SubElement(pel, "initialMarking")
            ET.SubElement(mel, "text").text = str(p.initial)
        add_graphics(pel, p.coord)

    for t in net.transitions:
        tel = ET.SubElement(page, "transition", id=t.id)
        nel = ET.SubElement(tel, "name")
        ET.SubElement(nel, "text").text = t.id
        add_graphics(tel, t.coord)

    arc_no = 0
    for t in net.transitions:
        for p in sorted(net.pre[t.id]):
            ET.SubElement(page, "arc", id=f"a{arc_no}", source=p, target=t.id)
            arc_no += 1
        for p in sorted(net.post[t.id]):
            ET.SubElement(page, "arc", id=f"a{arc_no}", source=t.id, target=p)
            arc_no += 1

    ET.indent(root)
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="unicode") + "\n"
