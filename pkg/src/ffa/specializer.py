"""Program specialization against a restriction of the input format.

Running the lifted analysis with a specialization automaton marks the
statements whose before-point maps every file state to bottom in every
call context: they cannot execute on any file matching the criterion and
can be projected out.  Rejection-point statements are exempt from the
marking; format checks stay in the specialized program (they guard against
ill-formed input, which is orthogonal to the criterion), and this also
keeps the always-unreachable rejection baseline out of every criterion's
report.

Projection rewrites the AST and re-emits source.  Two post-processing
simplifications then run to a fixpoint, each verified before being applied:

* an IF whose else-branch is empty collapses to its then-branch when a
  fresh lifted constant-propagation run proves the condition true wherever
  the IF is reachable (its false branch is bottom in every file state and
  every context);
* a MOVE to storage that no remaining statement reads is dropped.

Every applied rewrite is logged.  Reports reference original source lines
throughout, even though the emitted text renumbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .domains import ConstProp, Domain
from .formatspec import FormatSpec, InputAutomaton
from .lifted import analyze
from .minilang import (
    INPUT_FILE,
    Cfg,
    Close,
    Cond,
    Display,
    If,
    Lit,
    Move,
    Open,
    PerformPara,
    PerformUntil,
    Program,
    ReadFile,
    ReadTable,
    Ref,
    Stmt,
    Stop,
    Write,
    build_cfg,
    parse_program,
)


class SpecializeError(ValueError):
    pass


@dataclass
class Rewrite:
    kind: str  # "unconditional-if" | "dead-move"
    line: int
    detail: str


@dataclass
class SpecializationResult:
    criterion: str
    unreachable_nodes: set[int]
    unreachable_lines: list[int]
    retained_nodes: set[int]
    specialized_source: str
    simplified_source: str
    rewrites: list[Rewrite]
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "unreachable_lines": self.unreachable_lines,
            "retained_count": len(self.retained_nodes),
            "unreachable_count": len(self.unreachable_nodes),
            "rewrites": [
                {"kind": r.kind, "line": r.line, "detail": r.detail} for r in self.rewrites
            ],
            "notes": list(self.notes),
        }


def find_unreachable(
    cfg: Cfg, automaton: InputAutomaton, spec: FormatSpec, domain: Domain
) -> set[int]:
    """Executable nodes whose before-point is all-bottom in every context.

    Reject-flagged nodes are excluded: they are retained in specialized
    programs by design (see the module docstring).
    """
    sol = analyze(cfg, automaton, spec, domain)
    out: set[int] = set()
    for node in cfg.executable_nodes():
        if node.reject:
            continue
        if not sol.before(node.id):
            out.add(node.id)
    return out


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------


def _map_stmts(stmts: list[Stmt], fn) -> list[Stmt]:
    """Rebuild a statement list bottom-up, copying every node; fn may drop a
    statement (None) or splice a replacement list.  Copies keep rewritten
    programs from sharing (and build_cfg from mutating) the input's AST."""
    import dataclasses

    out: list[Stmt] = []
    for s in stmts:
        if isinstance(s, If):
            s = If(s.line, s.reject, s.node_id, cond=s.cond,
                   then=_map_stmts(s.then, fn), els=_map_stmts(s.els, fn))
        elif isinstance(s, PerformUntil):
            s = PerformUntil(s.line, s.reject, s.node_id, cond=s.cond,
                             body=_map_stmts(s.body, fn))
        elif isinstance(s, ReadFile):
            s = ReadFile(s.line, s.reject, s.node_id, file=s.file,
                         at_end=_map_stmts(s.at_end, fn))
        elif isinstance(s, ReadTable):
            s = ReadTable(s.line, s.reject, s.node_id, table=s.table, into=s.into,
                          key=s.key, invalid=_map_stmts(s.invalid, fn))
        else:
            s = dataclasses.replace(s)
        r = fn(s)
        if r is None:
            continue
        out.extend(r if isinstance(r, list) else [r])
    return out


def _collect_performs(stmts: list[Stmt]) -> set[str]:
    targets: set[str] = set()

    def fn(s):
        if isinstance(s, PerformPara):
            targets.add(s.target)
        return s

    _map_stmts(stmts, fn)
    return targets


def project(program: Program, unreachable: set[int]) -> tuple[Program, list[str]]:
    """Delete unreachable statements; structure is otherwise preserved."""
    notes: list[str] = []

    def drop_dead(s):
        return None if s.node_id in unreachable else s

    main = _map_stmts(program.main, drop_dead)
    paragraphs = []
    dropped: set[str] = set()
    for name, stmts in program.paragraphs:
        body = _map_stmts(stmts, drop_dead)
        if stmts and not body:
            dropped.add(name)
            notes.append(f"paragraph {name} removed (all statements unreachable)")
            continue
        paragraphs.append((name, body))

    if dropped:
        def drop_calls(s):
            if isinstance(s, PerformPara) and s.target in dropped:
                return None
            return s

        main = _map_stmts(main, drop_calls)
        paragraphs = [(n, _map_stmts(b, drop_calls)) for n, b in paragraphs]
        still = _collect_performs(main)
        for _, b in paragraphs:
            still |= _collect_performs(b)
        orphaned = still & dropped
        if orphaned:
            raise SpecializeError(
                f"projection would orphan PERFORM target(s) {sorted(orphaned)}"
            )

    new = Program(
        buffers=program.buffers,
        files=program.files,
        tables=program.tables,
        main=main,
        paragraphs=paragraphs,
        source=program.source,
        data_lines=program.data_lines,
    )
    return new, notes


# ---------------------------------------------------------------------------
# Source emission
# ---------------------------------------------------------------------------


def _emit_operand(op) -> str:
    if isinstance(op, Lit):
        return f"'{op.value}'"
    return op.text


def _emit_cond(cond: Cond) -> str:
    parts = []
    for a in cond.atoms:
        op = "=" if a.op == "eq" else "NOT ="
        parts.append(f"{a.lhs.text} {op} {_emit_operand(a.rhs)}")
    joiner = " AND " if cond.op in ("atom", "and") else " OR "
    return joiner.join(parts)


class _Emitter:
    def __init__(self, program: Program):
        self.program = program
        self.out: list[str] = []

    def open_stmt(self, s: Open) -> str:
        parts = ["OPEN"]
        for f in s.files:
            role = self.program.buffers[self.program.files[f]].role
            parts.append("INPUT" if role == INPUT_FILE else "OUTPUT")
            parts.append(f)
        return " ".join(parts)

    def stmts(self, stmts: list[Stmt], indent: int):
        pad = "    " * indent
        for s in stmts:
            tag = " *> @reject" if s.reject else ""
            if isinstance(s, Open):
                self.out.append(pad + self.open_stmt(s) + tag)
            elif isinstance(s, Close):
                self.out.append(pad + "CLOSE " + " ".join(s.files) + tag)
            elif isinstance(s, Move):
                self.out.append(pad + f"MOVE {_emit_operand(s.src)} TO {s.dst.text}" + tag)
            elif isinstance(s, Write):
                self.out.append(pad + f"WRITE {s.buffer}" + tag)
            elif isinstance(s, Display):
                self.out.append(
                    pad + "DISPLAY " + " ".join(_emit_operand(a) for a in s.args) + tag
                )
            elif isinstance(s, Stop):
                self.out.append(pad + "STOP RUN" + tag)
            elif isinstance(s, ReadFile):
                if s.at_end:
                    self.out.append(pad + f"READ {s.file} AT END" + tag)
                    self.stmts(s.at_end, indent + 1)
                    self.out.append(pad + "END-READ")
                else:
                    self.out.append(pad + f"READ {s.file} END-READ" + tag)
            elif isinstance(s, ReadTable):
                head = f"READ {s.table} INTO {s.into} KEY {s.key.text}"
                if s.invalid:
                    self.out.append(pad + head + " INVALID KEY" + tag)
                    self.stmts(s.invalid, indent + 1)
                    self.out.append(pad + "END-READ")
                else:
                    self.out.append(pad + head + " END-READ" + tag)
            elif isinstance(s, If):
                self.out.append(pad + f"IF {_emit_cond(s.cond)}" + tag)
                self.stmts(s.then, indent + 1)
                if s.els:
                    self.out.append(pad + "ELSE")
                    self.stmts(s.els, indent + 1)
                self.out.append(pad + "END-IF")
            elif isinstance(s, PerformUntil):
                self.out.append(pad + f"PERFORM UNTIL {_emit_cond(s.cond)}" + tag)
                self.stmts(s.body, indent + 1)
                self.out.append(pad + "END-PERFORM")
            elif isinstance(s, PerformPara):
                self.out.append(pad + f"PERFORM {s.target}" + tag)
            else:
                raise SpecializeError(f"cannot emit {s!r}")


def emit_source(program: Program) -> str:
    """Re-emit parseable source; the data division is kept verbatim."""
    em = _Emitter(program)
    em.out.extend(line.rstrip() for line in program.data_lines)
    em.out.append("PROCEDURE DIVISION.")
    em.stmts(program.main, 1)
    for name, stmts in program.paragraphs:
        em.out.append(f"{name}.")
        em.stmts(stmts, 1)
    return "\n".join(em.out) + "\n"


# ---------------------------------------------------------------------------
# Post-processing simplifications
# ---------------------------------------------------------------------------


def _read_refs(program: Program) -> set:
    """Slice keys read anywhere: move sources, conditions, lookup keys,
    display arguments, and every slice of written output buffers."""
    keys = set()

    def cond_keys(cond: Cond):
        for a in cond.atoms:
            keys.add(a.lhs.key)
            if isinstance(a.rhs, Ref):
                keys.add(a.rhs.key)

    def fn(s):
        if isinstance(s, Move) and isinstance(s.src, Ref):
            keys.add(s.src.key)
        elif isinstance(s, (If, PerformUntil)):
            cond_keys(s.cond)
        elif isinstance(s, ReadTable):
            keys.add(s.key.key)
        elif isinstance(s, Write):
            keys.update(program.buffer_slices(s.buffer))
        elif isinstance(s, Display):
            for a in s.args:
                if isinstance(a, Ref):
                    keys.add(a.key)
        return s

    _map_stmts(program.main, fn)
    for _, b in program.paragraphs:
        _map_stmts(b, fn)
    return keys


def simplify(
    program: Program, automaton: InputAutomaton, spec: FormatSpec
) -> tuple[Program, list[Rewrite]]:
    """Apply the two safe rewrites to a fixpoint (see module docstring)."""
    rewrites: list[Rewrite] = []
    current = program

    while True:
        changed = False

        # (i) collapse empty-else IFs whose condition is provably true
        cfg = build_cfg(current)
        sol = analyze(cfg, automaton, spec, ConstProp(current))
        cp = ConstProp(current)

        def provably_true(s: If) -> bool:
            fact = sol.before(s.node_id)
            if not fact:
                return False  # unreachable IF: nothing to gain, skip
            for l in fact.values():
                if cp.transfer_branch(s.cond, False, l) is not None:
                    return False
            return True

        collapse: dict[int, If] = {}

        def find_ifs(s):
            if isinstance(s, If) and not s.els and s.then and provably_true(s):
                collapse[s.node_id] = s
            return s

        _map_stmts(current.main, find_ifs)
        for _, b in current.paragraphs:
            _map_stmts(b, find_ifs)

        if collapse:
            def apply_collapse(s):
                if isinstance(s, If) and s.node_id in collapse:
                    rewrites.append(
                        Rewrite("unconditional-if", s.line,
                                f"guard '{_emit_cond(s.cond)}' always true; body inlined")
                    )
                    return list(s.then)
                return s

            current = _rebuild(current, apply_collapse)
            changed = True

        # (ii) remove MOVEs into storage nobody reads
        read = _read_refs(current)
        removed = [False]

        def apply_dead(s):
            if (
                isinstance(s, Move)
                and s.dst.key not in read
                and not any(s.dst.key.overlaps(k) for k in read)
            ):
                rewrites.append(
                    Rewrite("dead-move", s.line,
                            f"assignment to {s.dst.text} is never read")
                )
                removed[0] = True
                return None
            return s

        rebuilt = _rebuild(current, apply_dead)
        if removed[0]:
            current = rebuilt
            changed = True

        if not changed:
            return current, rewrites


def _rebuild(program: Program, fn) -> Program:
    return Program(
        buffers=program.buffers,
        files=program.files,
        tables=program.tables,
        main=_map_stmts(program.main, fn),
        paragraphs=[(n, _map_stmts(b, fn)) for n, b in program.paragraphs],
        source=program.source,
        data_lines=program.data_lines,
    )


# ---------------------------------------------------------------------------
# Whole pipeline and the criterion-commonality report
# ---------------------------------------------------------------------------


def specialize(
    program: Program,
    cfg: Cfg,
    automaton: InputAutomaton,
    spec: FormatSpec,
    domain: Domain,
) -> SpecializationResult:
    unreachable = find_unreachable(cfg, automaton, spec, domain)
    lines = sorted({cfg.node(n).line for n in unreachable})
    retained = {n.id for n in cfg.executable_nodes()} - unreachable
    projected, notes = project(program, unreachable)
    spec_source = emit_source(projected)
    parse_program(spec_source)
    # simplify on the projected AST directly: its statements still carry
    # the original line numbers every report refers to
    simplified, rewrites = simplify(projected, automaton, spec)
    simp_source = emit_source(simplified)
    parse_program(simp_source)  # both emitted artifacts must reparse

    # A criterion can make a rejection point reachable; note it rather than
    # dropping the check.
    sol = analyze(cfg, automaton, spec, domain)
    for node in cfg.nodes:
        if node.reject and sol.before(node.id):
            notes.append(
                f"rejection point at line {node.line} is reachable under this "
                "criterion and was retained"
            )
    return SpecializationResult(
        criterion=automaton.name,
        unreachable_nodes=unreachable,
        unreachable_lines=lines,
        retained_nodes=retained,
        specialized_source=spec_source,
        simplified_source=simp_source,
        rewrites=rewrites,
        notes=notes,
    )


def commonality_report(results: list[SpecializationResult]) -> dict:
    """Per-criterion retained-node split into common and criterion-specific."""
    if not results:
        return {"criteria": [], "common_nodes": 0}
    common = set.intersection(*(r.retained_nodes for r in results))
    return {
        "criteria": [
            {
                "criterion": r.criterion,
                "criterion_specific_nodes": len(r.retained_nodes - common),
                "retained_nodes": len(r.retained_nodes),
            }
            for r in results
        ],
        "common_nodes": len(common),
    }
