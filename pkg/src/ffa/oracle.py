"""Ground-truth machinery: enumerate files, execute programs concretely,
and check fixpoint solutions against every trace.

The interpreter walks the CFG byte-faithfully.  Buffer memory is tracked
per byte, with ``None`` marking an undefined byte; MOVE copies undefined
bytes along, and any comparison that touches an undefined byte forks the
execution down both branches (the nondeterministic reading of uses of
uninitialized storage).  Reads past end-of-file keep delivering undefined
records, so even unguarded loops terminate through their at-end clauses.

File enumeration builds the conforming language of an automaton up to a
record bound over a finite record universe, honoring multi-typed records
and (in oracle mode) table-membership constraints.  The soundness check
replays every conforming file and verifies, at every visited point, that
the concrete state lies in the concretization of the flattened fixpoint
fact at that point.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .domains import Domain
from .formatspec import (
    EOF,
    FormatSpec,
    InputAutomaton,
    RecordLayout,
    record_types_of,
)
from .lifted import Solution
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
    Cond,
    Lit,
    Move,
    Slice,
)


class OracleError(RuntimeError):
    pass


Byte = int | None  # None = undefined byte
Tables = dict[str, set[str]]

DEFAULT_FUEL = 10_000
MAX_CONFIGS = 20_000
UNIVERSE_GUARD = 10**6


# ---------------------------------------------------------------------------
# Concrete state
# ---------------------------------------------------------------------------


@dataclass
class StateView:
    """Read-only window onto a configuration for concretization checks."""

    memory: dict[str, list[Byte]]
    tables: Tables

    def slice_raw(self, key: Slice) -> tuple[Byte, ...]:
        buf = self.memory[key.buffer]
        return tuple(buf[key.offset : key.end])

    def slice_bytes(self, key: Slice) -> bytes | None:
        raw = self.slice_raw(key)
        if any(b is None for b in raw):
            return None
        return bytes(raw)

    def has_undef(self, key: Slice) -> bool:
        return any(b is None for b in self.slice_raw(key))

    def table_keys(self, table: str) -> set[str]:
        return self.tables.get(table, set())


@dataclass
class Trace:
    nodes: tuple[int, ...]
    consumed: int
    status: str  # "exit" | "stop" | "fuel-exhausted"
    writes: tuple[tuple[Byte, ...], ...]
    final_memory: dict[str, tuple[Byte, ...]]
    hit_reject: bool = False


@dataclass
class _Config:
    node: int
    memory: dict[str, list[Byte]]
    file_pos: dict[str, int]
    open_files: set[str]
    stack: tuple[int, ...]
    writes: list[tuple[Byte, ...]]
    path: list[int]
    fuel: int
    stopped: bool = False
    hit_reject: bool = False

    def fork(self) -> "_Config":
        return _Config(
            node=self.node,
            memory={k: list(v) for k, v in self.memory.items()},
            file_pos=dict(self.file_pos),
            open_files=set(self.open_files),
            stack=self.stack,
            writes=list(self.writes),
            path=list(self.path),
            fuel=self.fuel,
            stopped=self.stopped,
            hit_reject=self.hit_reject,
        )


def _fresh_memory(cfg: Cfg) -> dict[str, list[Byte]]:
    return {name: [None] * decl.length for name, decl in cfg.program.buffers.items()}


def _eval_operand(cfg: Cfg, mem, op) -> tuple[Byte, ...]:
    if isinstance(op, Lit):
        return tuple(op.value.encode("latin-1"))
    key = op.key
    return tuple(mem[key.buffer][key.offset : key.end])


def _eval_atom(cfg: Cfg, mem, atom) -> bool | None:
    lhs = _eval_operand(cfg, mem, atom.lhs)
    rhs = _eval_operand(cfg, mem, atom.rhs)
    if any(b is None for b in lhs) or any(b is None for b in rhs):
        return None
    eq = lhs == rhs
    return eq if atom.op == "eq" else not eq


def _eval_cond(cfg: Cfg, mem, cond: Cond) -> bool | None:
    """Three-valued evaluation; None means the outcome depends on undefined bytes."""
    vals = [_eval_atom(cfg, mem, a) for a in cond.atoms]
    if cond.op in ("atom", "and"):
        if any(v is False for v in vals):
            return False
        if any(v is None for v in vals):
            return None
        return True
    if any(v is True for v in vals):
        return True
    if any(v is None for v in vals):
        return None
    return False


def concrete_exec(
    cfg: Cfg,
    records: list[bytes],
    tables: Tables | None = None,
    fuel: int = DEFAULT_FUEL,
    visit=None,
    primary_file: str | None = None,
) -> list[Trace]:
    """Small-step execution of ``cfg`` on one input file.

    ``visit(node_id, view)`` is called before each node executes.  Returns
    one trace per nondeterministic resolution of undefined-value branches.
    ``primary_file`` names the file fed by ``records``; other sequential
    files always deliver undefined records.
    """
    tables = tables or {}
    program = cfg.program
    spec_tables = program.tables
    out_edges = cfg.out_edges
    primary = primary_file or _primary_file(cfg)

    def edge_to(node_id: int, label: str) -> int:
        for e in out_edges(node_id):
            if e.label == label:
                return e.dst
        raise OracleError(f"node {node_id} has no {label!r} edge")

    init = _Config(
        node=cfg.entry,
        memory=_fresh_memory(cfg),
        file_pos={},
        open_files=set(),
        stack=(),
        writes=[],
        path=[],
        fuel=fuel,
    )
    pending = [init]
    done: list[Trace] = []
    spawned = 1

    def finish(cfgn: _Config, status: str):
        done.append(
            Trace(
                nodes=tuple(cfgn.path),
                consumed=cfgn.file_pos.get(primary, 0),
                status=status,
                writes=tuple(cfgn.writes),
                final_memory={k: tuple(v) for k, v in cfgn.memory.items()},
                hit_reject=cfgn.hit_reject,
            )
        )

    while pending:
        c = pending.pop()
        while True:
            if c.fuel <= 0:
                finish(c, "fuel-exhausted")
                break
            c.fuel -= 1
            node = cfg.node(c.node)
            c.path.append(c.node)
            if node.reject:
                c.hit_reject = True
            if visit is not None:
                visit(c.node, StateView(c.memory, tables))

            if node.kind == "exit":
                finish(c, "stop" if c.stopped else "exit")
                break
            if node.kind == "stop":
                # STOP RUN is normal completion; route to exit for the trace.
                c.stopped = True
                c.node = edge_to(c.node, "fall")
                continue

            if node.kind == "entry" or node.kind in ("display", "paragraph-return"):
                c.node = out_edges(c.node)[0].dst
                continue
            if node.kind == "open":
                c.open_files.update(node.stmt.files)
                c.node = edge_to(c.node, "fall")
                continue
            if node.kind == "close":
                c.open_files.difference_update(node.stmt.files)
                c.node = edge_to(c.node, "fall")
                continue
            if node.kind == "move":
                stmt: Move = node.stmt
                val = _eval_operand(cfg, c.memory, stmt.src)
                key = stmt.dst.key
                c.memory[key.buffer][key.offset : key.end] = list(val)
                c.node = edge_to(c.node, "fall")
                continue
            if node.kind == "write":
                c.writes.append(tuple(c.memory[node.buffer]))
                c.node = edge_to(c.node, "fall")
                continue
            if node.kind == "read":
                bufname = program.files[node.file]
                if node.file == primary:
                    pos = c.file_pos.get(node.file, 0)
                    if pos < len(records):
                        rec = records[pos]
                        if len(rec) != program.buffers[bufname].length:
                            raise OracleError(
                                f"record {pos} has {len(rec)} bytes; buffer "
                                f"{bufname!r} holds {program.buffers[bufname].length}"
                            )
                        c.memory[bufname] = list(rec)
                        c.file_pos[node.file] = pos + 1
                        c.node = edge_to(c.node, NOT_AT_END)
                    else:
                        c.memory[bufname] = [None] * program.buffers[bufname].length
                        c.node = edge_to(c.node, AT_END)
                else:
                    # Secondary sequential file: always an undefined record.
                    c.memory[bufname] = [None] * program.buffers[bufname].length
                    c.node = edge_to(c.node, NOT_AT_END)
                continue
            if node.kind == "table-read-key":
                bufname = node.buffer
                _, key_field = spec_tables[node.table]
                keyval = _eval_operand(cfg, c.memory, node.key)
                outcomes: list[bool]
                if any(b is None for b in keyval):
                    outcomes = [True, False]
                else:
                    keys = tables.get(node.table, set())
                    outcomes = [bytes(keyval).decode("latin-1") in keys]
                branches = []
                for found in outcomes:
                    branches.append((found, edge_to(c.node, FOUND if found else INVALID_KEY)))
                for found, dst in branches[1:]:
                    if spawned >= MAX_CONFIGS:
                        continue
                    spawned += 1
                    f = c.fork()
                    _apply_table_read(f, cfg, node, found, keyval)
                    f.node = dst
                    pending.append(f)
                found, dst = branches[0]
                _apply_table_read(c, cfg, node, found, keyval)
                c.node = dst
                continue
            if node.kind in ("if-cond", "loop-cond"):
                verdict = _eval_cond(cfg, c.memory, node.cond)
                if verdict is None:
                    if spawned < MAX_CONFIGS:
                        spawned += 1
                        f = c.fork()
                        f.node = edge_to(c.node, FALSE)
                        pending.append(f)
                    c.node = edge_to(c.node, TRUE)
                else:
                    c.node = edge_to(c.node, TRUE if verdict else FALSE)
                continue
            if node.kind == "paragraph-call":
                call_edges = [e for e in out_edges(c.node) if e.label == CALL]
                if call_edges:
                    c.stack = c.stack + (call_edges[0].call_id,)
                    c.node = call_edges[0].dst
                else:
                    c.node = edge_to(c.node, "fall")
                continue
            ret_edges = [e for e in out_edges(c.node) if e.label == RETURN]
            if ret_edges:
                if not c.stack:
                    raise OracleError(f"return with empty call stack at node {c.node}")
                top = c.stack[-1]
                matches = [e for e in ret_edges if e.call_id == top]
                if not matches:
                    raise OracleError(f"no return edge for call {top} at node {c.node}")
                c.stack = c.stack[:-1]
                c.node = matches[0].dst
                continue
            raise OracleError(f"interpreter cannot execute node kind {node.kind!r}")

    done.sort(key=lambda t: t.nodes)
    return done


def _apply_table_read(c: _Config, cfg: Cfg, node, found: bool, keyval: tuple[Byte, ...]):
    program = cfg.program
    bufname = node.buffer
    decl = program.buffers[bufname]
    if not found:
        c.memory[bufname] = [None] * decl.length
        return
    # A real row was copied in: the matched key in the key field, blanks
    # elsewhere (the snapshot stores keys only).
    _, key_field = program.tables[node.table]
    row: list[Byte] = [0x20] * decl.length
    for lay in decl.layouts:
        for fname, off, length in lay.fields:
            if fname == key_field:
                row[off : off + length] = list(keyval)[:length]
    c.memory[bufname] = row


def _primary_file(cfg: Cfg) -> str | None:
    # The single input file of the program; analyses bind it via the spec.
    for fname, bufname in cfg.program.files.items():
        if cfg.program.buffers[bufname].role == "input-file-buffer":
            return fname
    return None


# ---------------------------------------------------------------------------
# Record universes and file enumeration
# ---------------------------------------------------------------------------


def record_universe(
    layout: RecordLayout, field_values: dict[str, list[str]], filler: bytes = b" "
) -> list[bytes]:
    """All records built from per-field value alternatives over one layout."""
    names = [f for f in layout.field_names() if f in field_values]
    pools = [field_values[f] for f in names]
    out = []
    for combo in itertools.product(*pools):
        rec = bytearray(filler * layout.length)[: layout.length]
        for fname, val in zip(names, combo):
            off, length = layout.field_slice(fname)
            enc = val.encode("latin-1")
            if len(enc) != length:
                raise OracleError(f"value {val!r} does not fit field {fname!r} ({length} bytes)")
            rec[off : off + length] = enc
        out.append(bytes(rec))
    return out


ALL_FILES = "ALL"


def enumerate_files(
    automaton: InputAutomaton | str,
    universe: list[bytes],
    max_records: int,
    spec: FormatSpec | None = None,
    tables: Tables | None = None,
):
    """Yield files (lists of records) up to ``max_records`` long.

    With an automaton: exactly the conforming files, i.e. sequences whose
    multi-typed record runs can reach a state with an eof edge.  With
    ``ALL``: every sequence over the universe.
    """
    total = sum(len(universe) ** i for i in range(max_records + 1))
    if total > UNIVERSE_GUARD:
        raise OracleError(f"universe too large: {total} candidate files")
    if automaton == ALL_FILES:
        for n in range(max_records + 1):
            for combo in itertools.product(universe, repeat=n):
                yield list(combo)
        return
    if spec is None:
        raise OracleError("conforming enumeration needs the format spec")
    type_cache = {rec: record_types_of(rec, spec.types, tables) for rec in universe}
    eof_sources = {src for src, lab, _ in automaton.transitions if lab == EOF}

    def run(prefix_states: set[str], depth: int, records: list[bytes]):
        if prefix_states & eof_sources:
            yield list(records)
        if depth == max_records:
            return
        for rec in universe:
            nxt = {
                dst
                for src, lab, dst in automaton.transitions
                if src in prefix_states and lab in type_cache[rec]
            }
            if nxt:
                records.append(rec)
                yield from run(nxt, depth + 1, records)
                records.pop()

    yield from run({automaton.start}, 0, [])


# ---------------------------------------------------------------------------
# Soundness check (bounded)
# ---------------------------------------------------------------------------


@dataclass
class Counterexample:
    file_index: int
    records: list[bytes]
    node_id: int
    line: int
    state_desc: str
    fact_desc: str

    def __str__(self) -> str:
        return (
            f"file #{self.file_index} {self.records!r}: at node {self.node_id} "
            f"(line {self.line}) concrete state {self.state_desc} is not represented "
            f"by {self.fact_desc}"
        )


@dataclass
class SoundnessReport:
    ok: bool
    files_checked: int
    traces_checked: int
    counterexample: Counterexample | None = None


def soundness_check(
    sol: Solution,
    cfg: Cfg,
    automaton: InputAutomaton,
    spec: FormatSpec,
    universe: list[bytes],
    tables: Tables | None = None,
    max_records: int = 4,
    fuel: int = DEFAULT_FUEL,
) -> SoundnessReport:
    """Replay every conforming file and check gamma-membership of the
    flattened fact at every visited point.  First violation wins."""
    domain = sol.domain
    flat_cache: dict[int, object] = {}

    def flat(node_id: int):
        if node_id not in flat_cache:
            flat_cache[node_id] = sol.flatten(node_id)
        return flat_cache[node_id]

    files_checked = 0
    traces_checked = 0
    for idx, records in enumerate(
        enumerate_files(automaton, universe, max_records, spec, tables)
    ):
        files_checked += 1
        failure: list[Counterexample] = []

        def visit(node_id: int, view: StateView):
            if failure:
                return
            node = cfg.node(node_id)
            if node.kind in ("entry", "exit", "paragraph-return"):
                return
            l = flat(node_id)
            if not domain.concretizes(l, view):
                failure.append(
                    Counterexample(
                        file_index=idx,
                        records=list(records),
                        node_id=node_id,
                        line=node.line,
                        state_desc=_view_desc(view, domain),
                        fact_desc=domain.describe(l),
                    )
                )

        traces = concrete_exec(cfg, records, tables, fuel, visit)
        traces_checked += len(traces)
        if failure:
            return SoundnessReport(False, files_checked, traces_checked, failure[0])
    return SoundnessReport(True, files_checked, traces_checked)


def _view_desc(view: StateView, domain: Domain) -> str:
    parts = []
    for key in domain.slices:
        raw = view.slice_raw(key)
        if any(b is None for b in raw):
            parts.append(f"{domain.program.display_name(key)}=UNDEF")
        else:
            parts.append(f"{domain.program.display_name(key)}={bytes(raw)!r}")
    return "{" + ", ".join(parts) + "}"
