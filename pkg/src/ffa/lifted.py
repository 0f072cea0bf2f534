"""The lifted fixpoint engine: run any underlying domain over D = Q -> L.

Given a CFG, an input automaton with file states Q, and an underlying
domain over lattice L, the engine computes the least fixpoint of the lifted
analysis whose facts map every file state to an L value (states absent from
the sparse map are bottom, i.e. unreachable under that state).

Transfer structure:

* statements and conditionals apply the underlying transfer pointwise per
  file state (they cannot move the trace between file states);
* a primary-file READ redistributes facts along automaton transitions: the
  post fact at state ``q_j`` is the join, over transitions ``q_i -> q_j``,
  of the underlying read transfer applied to ``q_i``'s fact with the
  transition's label (a record type, or eof);
* the READ's at-end successor receives the post fact restricted to final
  states, the not-at-end successor the restriction to non-final states
  (eof edges enter exactly the final states, and the at-end clause runs
  right after the read hits end-of-file, so this split is forced);
* READs of secondary sequential files havoc that file's buffer with an
  undefined record and leave the file-state map alone;
* key-based table lookups prune their found / invalid-key successors when
  the domain's integrity predicates decide the outcome;
* PERFORM sites propagate through call-string contexts (recursion is
  rejected at parse time, so call strings stay finite with no length bound).

Program points are (CFG node, call string) pairs holding the fact *before*
the node; reports project to nodes by joining over contexts.  With the
``block_reject`` flag the transfer at reject-flagged nodes becomes constant
bottom, which is how the over-acceptance check blocks paths through
rejection points.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from .domains import Domain, ReadEffect
from .formatspec import EOF, NA, FormatSpec, InputAutomaton
from .minilang import (
    AT_END,
    CALL,
    FALSE,
    FOUND,
    INVALID_KEY,
    NOT_AT_END,
    RETURN,
    TRUE,
    Cfg,
    Slice,
)


class EngineError(RuntimeError):
    pass


Ctx = tuple[int, ...]
LiftedFact = dict  # state name -> L value; bottom states omitted


def make_read_effects(spec: FormatSpec, automaton: InputAutomaton, cfg: Cfg) -> dict[str, ReadEffect]:
    """Resolve every automaton label into its effect on the primary buffer."""
    primary = spec.primary_buffer
    if primary is None:
        raise EngineError("format spec declares no primary_file")
    if primary not in cfg.program.buffers:
        raise EngineError(f"primary buffer {primary!r} is not declared by the program")
    buflen = cfg.program.buffers[primary].length
    effects: dict[str, ReadEffect] = {
        EOF: ReadEffect(EOF, primary, undefined=True),
        NA: ReadEffect(NA, primary, undefined=False),
    }
    for label in sorted(automaton.labels()):
        if label in (EOF, NA):
            continue
        rt = spec.types.get(label)
        if rt is None:
            raise EngineError(f"automaton label {label!r} is not a declared record type")
        eq, neq, tab = [], [], []
        for atom in rt.atoms:
            off, length = rt.layout.field_slice(atom.field)
            if off + length > buflen:
                raise EngineError(
                    f"type {label!r} constrains bytes beyond primary buffer {primary!r}"
                )
            key = Slice(primary, off, length)
            if atom.kind == "eq":
                eq.append((key, atom.value))
            elif atom.kind == "neq":
                neq.append((key, atom.value))
            elif atom.kind == "in_table":
                tab.append(("in", atom.value, key))
            else:
                tab.append(("not_in", atom.value, key))
        effects[label] = ReadEffect(
            label, primary, undefined=False,
            eq_atoms=tuple(eq), neq_atoms=tuple(neq), table_atoms=tuple(tab),
        )
    return effects


@dataclass
class Solution:
    """Least-fixpoint facts at every reached (node, call-string) point."""

    cfg: Cfg
    automaton: InputAutomaton
    domain: Domain
    facts: dict[tuple[int, Ctx], LiftedFact]
    iterations: int
    primary_buffer: str | None = None
    read_effects: dict[str, ReadEffect] = field(default_factory=dict)

    def contexts(self, node_id: int) -> list[Ctx]:
        return sorted(ctx for (nid, ctx) in self.facts if nid == node_id)

    def before(self, node_id: int, ctx: Ctx | None = None) -> LiftedFact:
        """Fact before the node; joined over call-string contexts by default."""
        if ctx is not None:
            return self.facts.get((node_id, ctx), {})
        out: LiftedFact = {}
        for (nid, _), fact in self.facts.items():
            if nid != node_id:
                continue
            for q, l in fact.items():
                out[q] = self.domain.join(out.get(q), l)
        return out

    def nonbot_states(self, node_id: int) -> set[str]:
        return set(self.before(node_id))

    def flatten(self, node_id: int, ctx: Ctx | None = None):
        """Join over all file states: the single-L view of Theorem-1 style."""
        fact = self.before(node_id, ctx)
        out = None
        for l in fact.values():
            out = self.domain.join(out, l)
        return out

    def to_json_dict(self) -> dict:
        lines: dict[str, dict[str, str]] = {}
        per_line: dict[int, LiftedFact] = {}
        for node in self.cfg.executable_nodes():
            fact = self.before(node.id)
            agg = per_line.setdefault(node.line, {})
            for q, l in fact.items():
                agg[q] = self.domain.join(agg.get(q), l)
        for line in sorted(per_line):
            fact = per_line[line]
            states = sorted(fact, key=self.automaton.state_index)
            lines[str(line)] = {q: self.domain.describe(fact[q]) for q in states}
        return {
            "meta": {
                "automaton": self.automaton.name,
                "domain": self.domain.name,
                "iterations": self.iterations,
            },
            "solution": lines,
        }


def _restrict(fact: LiftedFact, states: frozenset[str], keep_final: bool) -> LiftedFact:
    return {q: l for q, l in fact.items() if (q in states) == keep_final}


class _LiftedTransfers:
    """The per-edge transfer of the lifted analysis, shared by the fixpoint
    loop and the stability checker."""

    def __init__(self, cfg: Cfg, automaton: InputAutomaton, spec: FormatSpec,
                 domain: Domain, block_reject: bool):
        self.cfg = cfg
        self.automaton = automaton
        self.domain = domain
        self.block_reject = block_reject
        self.effects = make_read_effects(spec, automaton, cfg)
        self.primary = spec.primary_buffer
        self.finals = frozenset(automaton.finals)
        self.trans_into: dict[str, list[tuple[str, str]]] = {
            q: [] for q in automaton.states
        }
        for src, lab, dst in automaton.transitions:
            self.trans_into[dst].append((src, lab))

    def read_post(self, node_id: int, fact: LiftedFact) -> LiftedFact:
        domain = self.domain
        post: LiftedFact = {}
        for qj in self.automaton.states:
            acc = None
            for qi, lab in self.trans_into[qj]:
                l = fact.get(qi)
                if l is None:
                    continue
                acc = domain.join(acc, domain.transfer_read(l, self.effects[lab], node_id))
            if acc is not None:
                post[qj] = acc
        return post

    @staticmethod
    def _pointwise(fact: LiftedFact, fn) -> LiftedFact:
        out: LiftedFact = {}
        for q, l in fact.items():
            r = fn(l)
            if r is not None:
                out[q] = r
        return out

    def edge_fact(self, node, edge, fact: LiftedFact,
                  read_cache: dict | None = None) -> LiftedFact:
        domain = self.domain
        if self.block_reject and node.reject:
            return {}
        if node.kind == "read":
            buffer = self.cfg.program.files[node.file]
            if buffer == self.primary:
                if read_cache is not None and node.id in read_cache:
                    post = read_cache[node.id]
                else:
                    post = self.read_post(node.id, fact)
                    if read_cache is not None:
                        read_cache[node.id] = post
                return _restrict(post, self.finals, edge.label == AT_END)
            sec = ReadEffect(EOF, buffer, undefined=True)
            return self._pointwise(fact, lambda l: domain.transfer_read(l, sec, node.id))
        if node.kind == "table-read-key":
            branch = "found" if edge.label == FOUND else "invalid"
            out: LiftedFact = {}
            for q, l in fact.items():
                if branch not in domain.table_allowed(l, node.table, node.key.key):
                    continue
                r = domain.transfer_table_read(node, branch, l)
                if r is not None:
                    out[q] = r
            return out
        if edge.label in (TRUE, FALSE):
            polarity = edge.label == TRUE
            return self._pointwise(
                fact, lambda l: domain.transfer_branch(node.cond, polarity, l)
            )
        return self._pointwise(fact, lambda l: domain.transfer_stmt(node, l))


def _target_ctx(edge, ctx: Ctx) -> Ctx | None:
    if edge.label == CALL:
        return ctx + (edge.call_id,)
    if edge.label == RETURN:
        if not ctx or ctx[-1] != edge.call_id:
            return None
        return ctx[:-1]
    return ctx


def analyze(
    cfg: Cfg,
    automaton: InputAutomaton,
    spec: FormatSpec,
    domain: Domain,
    init=None,
    block_reject: bool = False,
) -> Solution:
    """Run the lifted worklist fixpoint; the entry fact is {start: init}."""
    xfer = _LiftedTransfers(cfg, automaton, spec, domain, block_reject)
    init_l = domain.initial() if init is None else init

    rpo = {nid: i for i, nid in enumerate(cfg.rpo())}
    facts: dict[tuple[int, Ctx], LiftedFact] = {}
    entry_point = (cfg.entry, ())
    facts[entry_point] = {automaton.start: init_l}

    heap: list[tuple[int, Ctx, int]] = [(rpo[cfg.entry], (), cfg.entry)]
    queued = {entry_point}
    update_count: dict[tuple[int, Ctx], int] = {}
    bound = 4 * (len(automaton.states) + 1) * (domain.height_hint() + 2) + 64
    iterations = 0

    while heap:
        _, ctx, node_id = heapq.heappop(heap)
        point = (node_id, ctx)
        queued.discard(point)
        fact = facts.get(point)
        if fact is None:
            continue
        node = cfg.node(node_id)
        iterations += 1
        read_cache: dict = {}

        for edge in cfg.out_edges(node_id):
            out = xfer.edge_fact(node, edge, fact, read_cache)
            tctx = _target_ctx(edge, ctx)
            if tctx is None or not out:
                continue
            tpoint = (edge.dst, tctx)
            old = facts.get(tpoint)
            if old is None:
                merged = dict(out)
                changed = True
            else:
                merged = dict(old)
                changed = False
                for q, l in out.items():
                    joined = domain.join(merged.get(q), l)
                    if q not in merged or joined != merged[q]:
                        merged[q] = joined
                        changed = True
            if changed:
                update_count[tpoint] = update_count.get(tpoint, 0) + 1
                if update_count[tpoint] > bound:
                    raise EngineError(
                        f"fixpoint oscillation at node {edge.dst}: the domain "
                        f"{domain.name} looks non-monotone (or its height hint is wrong)"
                    )
                facts[tpoint] = merged
                if tpoint not in queued:
                    queued.add(tpoint)
                    heapq.heappush(heap, (rpo[edge.dst], tctx, edge.dst))

    return Solution(cfg, automaton, domain, facts, iterations, xfer.primary, xfer.effects)


def check_fixpoint_stability(sol: Solution, spec: FormatSpec,
                             block_reject: bool = False) -> bool:
    """Re-apply every edge transfer: a true fixpoint leaves every target
    fact unchanged under join."""
    xfer = _LiftedTransfers(sol.cfg, sol.automaton, spec, sol.domain, block_reject)
    domain = sol.domain
    for (node_id, ctx), fact in sol.facts.items():
        node = sol.cfg.node(node_id)
        for edge in sol.cfg.out_edges(node_id):
            out = xfer.edge_fact(node, edge, fact)
            tctx = _target_ctx(edge, ctx)
            if tctx is None:
                continue
            target = sol.facts.get((edge.dst, tctx), {})
            for q, l in out.items():
                if domain.join(target.get(q), l) != target.get(q):
                    return False
    return True


# ---------------------------------------------------------------------------
# Direct (unlifted) fixpoint, for baselines and comparisons
# ---------------------------------------------------------------------------


@dataclass
class DirectSolution:
    cfg: Cfg
    domain: Domain
    facts: dict[tuple[int, Ctx], object]
    iterations: int

    def before(self, node_id: int, ctx: Ctx | None = None):
        if ctx is not None:
            return self.facts.get((node_id, ctx))
        out = None
        for (nid, _), l in self.facts.items():
            if nid == node_id:
                out = self.domain.join(out, l)
        return out


def analyze_direct(
    cfg: Cfg,
    spec: FormatSpec,
    domain: Domain,
    init=None,
    block_reject: bool = False,
) -> DirectSolution:
    """Plain worklist run of the underlying domain on the CFG.

    READs havoc the input buffer the way the format-oblivious analysis
    would: a not-at-end successor sees an arbitrary record (the complement
    type's effect), the at-end successor an undefined one.
    """
    primary = spec.primary_buffer
    na_effect = eof_effect = None
    if primary is not None and primary in cfg.program.buffers:
        na_effect = ReadEffect(NA, primary, undefined=False)
        eof_effect = ReadEffect(EOF, primary, undefined=True)
    init_l = domain.initial() if init is None else init

    rpo = {nid: i for i, nid in enumerate(cfg.rpo())}
    facts: dict[tuple[int, Ctx], object] = {(cfg.entry, ()): init_l}
    heap: list[tuple[int, Ctx, int]] = [(rpo[cfg.entry], (), cfg.entry)]
    queued = {(cfg.entry, ())}
    iterations = 0

    while heap:
        _, ctx, node_id = heapq.heappop(heap)
        point = (node_id, ctx)
        queued.discard(point)
        l = facts.get(point)
        if l is None:
            continue
        node = cfg.node(node_id)
        iterations += 1
        if block_reject and node.reject:
            continue
        for edge in cfg.out_edges(node_id):
            if node.kind == "read":
                buffer = cfg.program.files[node.file]
                if buffer == primary and na_effect is not None:
                    eff = eof_effect if edge.label == AT_END else na_effect
                else:
                    eff = ReadEffect(EOF, buffer, undefined=True)
                out = domain.transfer_read(l, eff, node_id)
            elif node.kind == "table-read-key":
                branch = "found" if edge.label == FOUND else "invalid"
                allowed = domain.table_allowed(l, node.table, node.key.key)
                out = (
                    domain.transfer_table_read(node, branch, l)
                    if branch in allowed
                    else None
                )
            elif edge.label in (TRUE, FALSE):
                out = domain.transfer_branch(node.cond, edge.label == TRUE, l)
            else:
                out = domain.transfer_stmt(node, l)

            if edge.label == CALL:
                tctx = ctx + (edge.call_id,)
            elif edge.label == RETURN:
                if not ctx or ctx[-1] != edge.call_id:
                    continue
                tctx = ctx[:-1]
            else:
                tctx = ctx
            if out is None:
                continue
            tpoint = (edge.dst, tctx)
            merged = domain.join(facts.get(tpoint), out)
            if tpoint not in facts or merged != facts[tpoint]:
                facts[tpoint] = merged
                if tpoint not in queued:
                    queued.add(tpoint)
                    heapq.heappush(heap, (rpo[edge.dst], tctx, edge.dst))

    return DirectSolution(cfg, domain, facts, iterations)


# ---------------------------------------------------------------------------
# Precision comparison (per-state and flat orderings)
# ---------------------------------------------------------------------------


@dataclass
class PrecisionComparison:
    holds: bool
    flat_holds: bool
    failures: list[tuple[int, str]] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.holds


def compare_solution_precision(g1: Solution, g2: Solution) -> PrecisionComparison:
    """Is g1 at least as precise as g2, per point?

    Per-state: for every file state q1 carrying a fact in g1 there must be a
    q2 in g2 with g1(p)(q1) below g2(p)(q2).  Flat: the join over g1's
    states is below the join over g2's.  Requires solutions for the same
    program with the same underlying lattice.
    """
    if g1.cfg is not g2.cfg and len(g1.cfg.nodes) != len(g2.cfg.nodes):
        raise EngineError("cannot compare solutions of different programs")
    dom = g1.domain
    holds = True
    flat_holds = True
    failures: list[tuple[int, str]] = []
    for node in g1.cfg.nodes:
        f1 = g1.before(node.id)
        f2 = g2.before(node.id)
        cands = list(f2.values())
        for q1, l1 in f1.items():
            if not any(dom.leq(l1, l2) for l2 in cands) and not dom.leq(l1, None):
                holds = False
                failures.append((node.id, q1))
        j1 = g1.flatten(node.id)
        j2 = g2.flatten(node.id)
        if not dom.leq(j1, j2):
            flat_holds = False
    return PrecisionComparison(holds, flat_holds, failures)


# ---------------------------------------------------------------------------
# Fig-style text rendering
# ---------------------------------------------------------------------------


def render_tables(sol: Solution, lines: list[int] | None = None) -> str:
    """Per-line tables of file state -> described fact, like the paper's
    fixpoint illustrations."""
    per_line: dict[int, dict] = {}
    for node in sol.cfg.executable_nodes():
        fact = sol.before(node.id)
        agg = per_line.setdefault(node.line, {})
        for q, l in fact.items():
            agg[q] = sol.domain.join(agg.get(q), l)
    chosen = sorted(per_line) if lines is None else [l for l in lines if l in per_line]
    out = []
    for line in chosen:
        fact = per_line[line]
        out.append(f"line {line}:")
        if not fact:
            out.append("  (unreachable)")
            continue
        for q in sorted(fact, key=sol.automaton.state_index):
            out.append(f"  {q:<8} {sol.domain.describe(fact[q])}")
    return "\n".join(out) + "\n"
