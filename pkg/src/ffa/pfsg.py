"""Program File State Graph: the CFG exploded over file states.

Nodes are (CFG node, file state) pairs; an edge between exploded nodes
exists only along a CFG edge, so every PFSG path projects to a CFG path
(no extra paths).  Construction consumes a lifted fixpoint solution:

* for a primary READ node, each automaton transition ``q_i -> q_j``
  contributes an exploded edge into the successor matching the transition's
  class (eof transitions feed the at-end successor, typed ones the
  not-at-end successor), labeled with the transition symbol;
* every other CFG edge is copied per file state;
* in both cases an edge is added only when the before-facts at both
  endpoints are non-bottom for their states, which is what elides paths the
  format makes infeasible.

Pairs that carry a bottom fact and touch no edge are pruned, so the node
count stays bounded by (CFG nodes) x |Q| with slack to spare.  Each READ
edge remembers the transition symbol that created it, letting any analysis
re-run on the PFSG apply the right read transfer without re-deriving
labels.  Being itself a CFG, the PFSG runs forward or backward dataflow
unmodified; each exploded node behaves as its underlying statement.
"""

from __future__ import annotations

from dataclasses import dataclass

from .domains import Domain, DomainError, ReadEffect
from .formatspec import EOF, InputAutomaton
from .lifted import EngineError, Solution
from .minilang import AT_END, FALSE, FOUND, TRUE, Cfg


@dataclass(frozen=True)
class PfsgNode:
    cfg_node: int
    state: str


@dataclass(frozen=True)
class PfsgEdge:
    src: PfsgNode
    dst: PfsgNode
    sigma: str | None = None  # automaton label for READ edges
    cfg_label: str = ""


@dataclass
class Pfsg:
    cfg: Cfg
    automaton: InputAutomaton
    domain_name: str
    nodes: tuple[PfsgNode, ...]
    edges: tuple[PfsgEdge, ...]
    entry: PfsgNode
    read_effects: dict

    def out_edges(self, node: PfsgNode) -> list[PfsgEdge]:
        return self._out.get(node, [])

    def in_edges(self, node: PfsgNode) -> list[PfsgEdge]:
        return self._in.get(node, [])

    def __post_init__(self):
        self._out: dict[PfsgNode, list[PfsgEdge]] = {}
        self._in: dict[PfsgNode, list[PfsgEdge]] = {}
        for e in self.edges:
            self._out.setdefault(e.src, []).append(e)
            self._in.setdefault(e.dst, []).append(e)

    def nodes_on_line(self, line: int) -> list[PfsgNode]:
        return [
            n
            for n in self.nodes
            if self.cfg.node(n.cfg_node).line == line
            and self.cfg.node(n.cfg_node).kind not in ("entry", "exit", "paragraph-return")
        ]

    def edge_pairs(self) -> set[tuple[int, str, int, str]]:
        return {(e.src.cfg_node, e.src.state, e.dst.cfg_node, e.dst.state) for e in self.edges}


def build_pfsg(cfg: Cfg, automaton: InputAutomaton, sol: Solution) -> Pfsg:
    if sol.automaton.name != automaton.name or sol.cfg is not cfg:
        raise EngineError("solution was not computed for this CFG/automaton pair")
    primary = sol.primary_buffer
    domain = sol.domain
    effects = sol.read_effects

    before: dict[int, dict] = {n.id: sol.before(n.id) for n in cfg.nodes}
    edges: list[PfsgEdge] = []

    # An edge is added only when the fact the lifted analysis pushes along
    # it is non-bottom for the states involved; a non-bottom fact merely
    # sitting at both endpoints (via other paths) is not enough.  This is
    # what elides, say, the false edge of a header test in a header column.
    for e in cfg.edges:
        m = cfg.node(e.src)
        dm = before[e.src]
        dn = before[e.dst]
        is_primary_read = m.kind == "read" and cfg.program.files[m.file] == primary
        if is_primary_read:
            for qi, lab, qj in automaton.transitions:
                if (lab == EOF) != (e.label == AT_END):
                    continue
                if qi not in dm or qj not in dn:
                    continue
                if domain.transfer_read(dm[qi], effects[lab], m.id) is None:
                    continue
                edges.append(
                    PfsgEdge(PfsgNode(e.src, qi), PfsgNode(e.dst, qj), lab, e.label)
                )
        else:
            for q in automaton.states:
                if q not in dm or q not in dn:
                    continue
                l = dm[q]
                if m.kind == "read":
                    buf = cfg.program.files[m.file]
                    out = domain.transfer_read(l, ReadEffect(EOF, buf, undefined=True), m.id)
                elif m.kind == "table-read-key":
                    branch = "found" if e.label == FOUND else "invalid"
                    if branch not in domain.table_allowed(l, m.table, m.key.key):
                        continue
                    out = domain.transfer_table_read(m, branch, l)
                elif e.label in (TRUE, FALSE):
                    out = domain.transfer_branch(m.cond, e.label == TRUE, l)
                else:
                    out = domain.transfer_stmt(m, l)
                if out is None:
                    continue
                edges.append(
                    PfsgEdge(PfsgNode(e.src, q), PfsgNode(e.dst, q), None, e.label)
                )

    entry = PfsgNode(cfg.entry, automaton.start)
    keep: dict[PfsgNode, None] = {}
    for e in edges:
        keep.setdefault(e.src)
        keep.setdefault(e.dst)
    for n in cfg.nodes:
        for q in automaton.states:
            if q in before[n.id]:
                keep.setdefault(PfsgNode(n.id, q))
    keep.setdefault(entry)
    ordered = sorted(keep, key=lambda p: (p.cfg_node, automaton.state_index(p.state)))
    return Pfsg(
        cfg, automaton, domain.name, tuple(ordered), tuple(edges), entry,
        dict(sol.read_effects),
    )


# ---------------------------------------------------------------------------
# Running analyses on the PFSG
# ---------------------------------------------------------------------------


@dataclass
class PfsgSolution:
    pfsg: Pfsg
    domain: Domain
    direction: str
    facts: dict[PfsgNode, object]

    def at(self, node: PfsgNode):
        return self.facts.get(node)

    def flat(self, cfg_node: int):
        out = None
        for n, l in self.facts.items():
            if n.cfg_node == cfg_node:
                out = self.domain.join(out, l)
        return out


def analyze_on_pfsg(
    pfsg: Pfsg, domain: Domain, init=None, direction: str = "forward"
) -> PfsgSolution:
    """Standard worklist fixpoint on the PFSG, treating (n, q) as statement n.

    READ edges recover their record-type label from the stored automaton
    transition.  Backward direction needs a domain with backward transfers.
    """
    if direction not in ("forward", "backward"):
        raise DomainError(f"unknown direction {direction!r}")
    if direction == "backward" and not domain.backward:
        raise DomainError(f"domain {domain.name} does not support backward analysis")
    init_l = domain.initial() if init is None else init
    cfg = pfsg.cfg
    facts: dict[PfsgNode, object] = {}
    order = {n: i for i, n in enumerate(pfsg.nodes)}

    if direction == "forward":
        seeds = {pfsg.entry: init_l}
        edges_from = pfsg.out_edges
    else:
        # facts hold the value at the point before each node: seed the sinks
        # with their own backward transfer applied to the initial value.
        seeds = {
            n: domain.transfer_backward(cfg.node(n.cfg_node), init_l)
            for n in pfsg.nodes
            if not pfsg.out_edges(n)
        }
        edges_from = pfsg.in_edges

    facts.update({n: l for n, l in seeds.items() if l is not None})
    work = sorted(facts, key=lambda n: order.get(n, 0))
    queued = set(work)

    def transfer(edge: PfsgEdge, l):
        node = cfg.node(edge.src.cfg_node)
        if direction == "backward":
            return domain.transfer_backward(node, l)
        if edge.sigma is not None:
            effect = pfsg.read_effects.get(edge.sigma)
            if effect is None:
                raise EngineError(f"no read effect for label {edge.sigma!r}")
            return domain.transfer_read(l, effect, node.id)
        if node.kind == "read":
            # Secondary-file read: undefined record into that buffer.
            buf = cfg.program.files[node.file]
            return domain.transfer_read(l, ReadEffect(EOF, buf, undefined=True), node.id)
        if node.kind == "table-read-key":
            branch = "found" if edge.cfg_label == FOUND else "invalid"
            return domain.transfer_table_read(node, branch, l)
        if edge.cfg_label in (TRUE, FALSE):
            return domain.transfer_branch(node.cond, edge.cfg_label == TRUE, l)
        return domain.transfer_stmt(node, l)

    while work:
        n = work.pop(0)
        queued.discard(n)
        l = facts.get(n)
        if l is None:
            continue
        for edge in edges_from(n):
            tgt = edge.dst if direction == "forward" else edge.src
            out = transfer(edge, l)
            if out is None:
                continue
            merged = domain.join(facts.get(tgt), out)
            if tgt not in facts or merged != facts[tgt]:
                facts[tgt] = merged
                if tgt not in queued:
                    queued.add(tgt)
                    work.append(tgt)

    return PfsgSolution(pfsg, domain, direction, facts)


# ---------------------------------------------------------------------------
# Precision ordering and structural checks
# ---------------------------------------------------------------------------


def compare_pfsg_precision(p1: Pfsg, p2: Pfsg) -> bool:
    """True iff p1 is at least as precise as p2: p1's edges are a subset."""
    if p1.cfg is not p2.cfg or p1.automaton.name != p2.automaton.name:
        raise EngineError("PFSGs must share their CFG and automaton")
    return p1.edge_pairs() <= p2.edge_pairs()


def has_line_path(pfsg: Pfsg, lines: list[int]) -> bool:
    """Is there a consecutive PFSG path visiting these source lines in order?"""
    cfg = pfsg.cfg
    starts = [n for n in pfsg.nodes if cfg.node(n.cfg_node).line == lines[0]]

    def walk(node: PfsgNode, idx: int) -> bool:
        if idx == len(lines):
            return True
        for e in pfsg.out_edges(node):
            if cfg.node(e.dst.cfg_node).line == lines[idx]:
                if walk(e.dst, idx + 1):
                    return True
        return False

    return any(walk(s, 1) for s in starts)


def lifts_trace(pfsg: Pfsg, node_seq: list[int]) -> bool:
    """Can this CFG node sequence be followed in the PFSG from its entry?"""
    if not node_seq or node_seq[0] != pfsg.entry.cfg_node:
        return False
    current = {pfsg.entry}
    for nxt in node_seq[1:]:
        step = {
            e.dst for n in current for e in pfsg.out_edges(n) if e.dst.cfg_node == nxt
        }
        if not step:
            return False
        current = step
    return True


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------


def _node_names(pfsg: Pfsg) -> dict[PfsgNode, str]:
    cfg = pfsg.cfg
    label_of: dict[int, str] = {}
    by_label: dict[str, list[int]] = {}
    for n in cfg.nodes:
        base = {"entry": "entry", "exit": "exit"}.get(n.kind, str(n.line))
        by_label.setdefault(base, []).append(n.id)
    for base, ids in by_label.items():
        if len(ids) == 1:
            label_of[ids[0]] = base
        else:
            for i, nid in enumerate(sorted(ids), 1):
                label_of[nid] = f"{base}#{i}"
    return {p: f"({label_of[p.cfg_node]},{p.state})" for p in pfsg.nodes}


def export_dot(pfsg: Pfsg) -> str:
    """Deterministic DOT text, clustered by file state (one column per q)."""
    names = _node_names(pfsg)
    lines = ["digraph pfsg {"]
    lines.append(f"  // nodes={len(pfsg.nodes)} edges={len(pfsg.edges)}")
    lines.append("  rankdir=TB;")
    for q in pfsg.automaton.states:
        members = [n for n in pfsg.nodes if n.state == q]
        if not members:
            continue
        lines.append(f"  subgraph cluster_{q.replace('-', '_')} {{")
        lines.append(f'    label="{q}";')
        for n in members:
            lines.append(f'    "{names[n]}" [label="{names[n]}"];')
        lines.append("  }")
    for e in sorted(
        pfsg.edges,
        key=lambda e: (
            e.src.cfg_node,
            pfsg.automaton.state_index(e.src.state),
            e.dst.cfg_node,
            pfsg.automaton.state_index(e.dst.state),
        ),
    ):
        attr = f' [label="{e.sigma}"]' if e.sigma else ""
        lines.append(f'  "{names[e.src]}" -> "{names[e.dst]}"{attr};')
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_json(pfsg: Pfsg) -> dict:
    cfg = pfsg.cfg
    nodes = [
        {
            "cfg_node": n.cfg_node,
            "line": cfg.node(n.cfg_node).line,
            "kind": cfg.node(n.cfg_node).kind,
            "state": n.state,
        }
        for n in pfsg.nodes
    ]
    edges = [
        {
            "src": [e.src.cfg_node, e.src.state],
            "dst": [e.dst.cfg_node, e.dst.state],
            "sigma": e.sigma,
        }
        for e in sorted(
            pfsg.edges,
            key=lambda e: (
                e.src.cfg_node,
                pfsg.automaton.state_index(e.src.state),
                e.dst.cfg_node,
                pfsg.automaton.state_index(e.dst.state),
            ),
        )
    ]
    return {
        "automaton": pfsg.automaton.name,
        "domain": pfsg.domain_name,
        "entry": [pfsg.entry.cfg_node, pfsg.entry.state],
        "node_count": len(nodes),
        "edge_count": len(edges),
        "nodes": nodes,
        "edges": edges,
    }
