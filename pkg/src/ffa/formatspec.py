"""File-format specifications: record layouts, record types, and input automatons.

A format spec describes the files a batch program is expected to read:

* a set of fixed-width record *layouts* (named byte slices of a record),
* a set of *record types*, each a layout plus a conjunction of field
  constraints (equality / inequality to byte literals, table membership),
* one or more *input automatons* over the record-type alphabet plus ``eof``,
  whose states classify the prefix of records read so far,
* the name of the program buffer that receives primary-file records.

The text form is a line-oriented DSL (see ``docs/formatspec.md``)::

    layout hdr length 16
    field typ at 0 len 3
    type SHdr layout hdr where typ == "HDR" and src == "SAME"
    automaton wellformed start q_s final q_e
    trans q_s -SHdr-> q_sh
    trans q_t -eof-> q_e
    primary_file in-rec

Automaton invariants enforced here: ``eof`` labels appear exactly on
transitions into final states, final states have no outgoing transitions,
and every non-final state lies on some start-to-final path.  Automatons may
be nondeterministic, both via duplicate labels and via records matching
several types.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

# Reserved alphabet symbols.  NA is the built-in complement type: a record
# is NA iff it matches none of the declared record types.  It cannot be
# written as a constraint and may not be declared by the user.
EOF = "eof"
NA = "NA"


class FormatSpecError(ValueError):
    """Raised for malformed or invariant-violating format specs."""


@dataclass(frozen=True)
class Atom:
    """One conjunct of a record-type constraint.

    kind is one of ``eq``, ``neq``, ``in_table``, ``not_in_table``.  For the
    table kinds ``value`` holds the table name; otherwise the byte literal.
    """

    kind: str
    field: str
    value: str

    def __str__(self) -> str:
        if self.kind == "eq":
            return f'{self.field} == "{self.value}"'
        if self.kind == "neq":
            return f'{self.field} != "{self.value}"'
        if self.kind == "in_table":
            return f"in_table({self.value}, {self.field})"
        return f"not_in_table({self.value}, {self.field})"


@dataclass(frozen=True)
class RecordLayout:
    name: str
    length: int
    fields: tuple[tuple[str, int, int], ...]  # (field name, offset, length)

    def field_slice(self, name: str) -> tuple[int, int]:
        for fname, off, length in self.fields:
            if fname == name:
                return off, length
        raise FormatSpecError(f"layout {self.name} has no field {name!r}")

    def field_names(self) -> tuple[str, ...]:
        return tuple(f[0] for f in self.fields)


@dataclass(frozen=True)
class RecordType:
    name: str
    layout: RecordLayout
    atoms: tuple[Atom, ...]


@dataclass
class InputAutomaton:
    """Finite automaton over record-type names plus eof.

    ``states`` preserves first-appearance order so that every downstream
    report iterates file states deterministically.
    """

    name: str
    states: tuple[str, ...]
    transitions: tuple[tuple[str, str, str], ...]  # (src, label, dst)
    start: str
    finals: frozenset[str]

    def non_finals(self) -> tuple[str, ...]:
        return tuple(q for q in self.states if q not in self.finals)

    def labels(self) -> set[str]:
        return {lab for _, lab, _ in self.transitions}

    def out_edges(self, state: str) -> list[tuple[str, str]]:
        return [(lab, dst) for src, lab, dst in self.transitions if src == state]

    def state_index(self, state: str) -> int:
        return self.states.index(state)

    def validate(self, type_names: set[str], allow_na: bool = False) -> list[str]:
        """Check all structural invariants; return advisory warnings.

        Raises FormatSpecError on a hard violation.  The single warning
        currently produced flags states whose incoming transitions carry
        differing type labels, which tends to cost precision.
        """
        if self.start not in self.states:
            raise FormatSpecError(f"automaton {self.name}: unknown start state {self.start}")
        if not self.finals:
            raise FormatSpecError(f"automaton {self.name}: no final states")
        for f in self.finals:
            if f not in self.states:
                raise FormatSpecError(f"automaton {self.name}: unknown final state {f}")
        known = set(type_names)
        if allow_na:
            known.add(NA)
        for src, lab, dst in self.transitions:
            if src not in self.states or dst not in self.states:
                raise FormatSpecError(
                    f"automaton {self.name}: transition {src} -{lab}-> {dst} uses unknown state"
                )
            if lab != EOF and lab not in known:
                raise FormatSpecError(
                    f"automaton {self.name}: transition {src} -{lab}-> {dst} uses unknown type {lab!r}"
                )
            if (lab == EOF) != (dst in self.finals):
                raise FormatSpecError(
                    f"automaton {self.name}: transition {src} -{lab}-> {dst} violates "
                    "'eof iff target is final'"
                )
            if src in self.finals:
                raise FormatSpecError(
                    f"automaton {self.name}: final state {src} has an outgoing transition"
                )
        # Reachability: forward from start, backward from finals.
        fwd = {self.start}
        changed = True
        while changed:
            changed = False
            for src, _, dst in self.transitions:
                if src in fwd and dst not in fwd:
                    fwd.add(dst)
                    changed = True
        bwd = set(self.finals)
        changed = True
        while changed:
            changed = False
            for src, _, dst in self.transitions:
                if dst in bwd and src not in bwd:
                    bwd.add(src)
                    changed = True
        for q in self.non_finals():
            if q not in fwd or q not in bwd:
                raise FormatSpecError(
                    f"automaton {self.name}: state {q} is dead "
                    "(not on any path from start to a final state)"
                )
        warnings = []
        for q in self.states:
            in_labels = {lab for _, lab, dst in self.transitions if dst == q and lab != EOF}
            if len(in_labels) > 1:
                warnings.append(
                    f"automaton {self.name}: state {q} has incoming transitions with "
                    f"differing types {sorted(in_labels)}; this usually costs precision"
                )
        return warnings


@dataclass
class FormatSpec:
    layouts: dict[str, RecordLayout]
    types: dict[str, RecordType]
    automatons: dict[str, InputAutomaton]
    primary_buffer: str | None
    tables: tuple[str, ...]
    warnings: list[str] = field(default_factory=list)

    def automaton(self, name: str) -> InputAutomaton:
        if name not in self.automatons:
            raise FormatSpecError(f"unknown automaton {name!r}")
        return self.automatons[name]


# ---------------------------------------------------------------------------
# Record / type matching and automaton runs
# ---------------------------------------------------------------------------


def record_of_type(record: bytes, rt: RecordType, tables: dict[str, set[str]] | None = None) -> bool:
    """Does ``record`` satisfy ``rt``'s length and value constraints?

    Table-membership atoms are only evaluated when a table snapshot is
    supplied (oracle mode); without one they are treated as satisfied.
    """
    if len(record) != rt.layout.length:
        return False
    for atom in rt.atoms:
        off, length = rt.layout.field_slice(atom.field)
        val = record[off : off + length]
        if atom.kind == "eq":
            if val != atom.value.encode("latin-1"):
                return False
        elif atom.kind == "neq":
            if val == atom.value.encode("latin-1"):
                return False
        elif atom.kind in ("in_table", "not_in_table"):
            if tables is None:
                continue
            keys = tables.get(atom.value, set())
            member = val.decode("latin-1") in keys
            if atom.kind == "in_table" and not member:
                return False
            if atom.kind == "not_in_table" and member:
                return False
    return True


def record_types_of(
    record: bytes, types: dict[str, RecordType], tables: dict[str, set[str]] | None = None
) -> list[str]:
    """All declared type names ``record`` matches (possibly several, possibly none)."""
    return [name for name, rt in types.items() if record_of_type(record, rt, tables)]


def states_after(automaton: InputAutomaton, seq: list[str]) -> set[str]:
    """All file states q with ``seq`` in the type language of q.

    An empty result means the prefix is ill-formed for this automaton.
    """
    current = {automaton.start}
    for t in seq:
        current = {dst for src, lab, dst in automaton.transitions if src in current and lab == t}
        if not current:
            return set()
    return current


def type_sequence_accepted(
    automaton: InputAutomaton, seq: list[str], known_types: set[str] | None = None
) -> bool:
    """Is the type sequence accepted, i.e. does it drive the automaton to a
    state that has an eof edge into a final state?"""
    known = known_types if known_types is not None else (automaton.labels() - {EOF})
    for t in seq:
        if t not in known:
            raise FormatSpecError(f"unknown type name {t!r}")
    reached = states_after(automaton, seq)
    return any(src in reached and lab == EOF for src, lab, _ in automaton.transitions)


def record_run_states(
    automaton: InputAutomaton,
    records: list[bytes],
    types: dict[str, RecordType],
    tables: dict[str, set[str]] | None = None,
    with_na: bool = False,
) -> set[str]:
    """State set reached by a sequence of concrete records (multi-typing joins)."""
    current = {automaton.start}
    for rec in records:
        tnames = record_types_of(rec, types, tables)
        if with_na and not tnames:
            tnames = [NA]
        elif with_na:
            tnames = tnames + [NA] if not tnames else tnames
        current = {
            dst
            for src, lab, dst in automaton.transitions
            if src in current and lab in tnames
        }
        if not current:
            return set()
    return current


def accepts_records(
    automaton: InputAutomaton,
    records: list[bytes],
    types: dict[str, RecordType],
    tables: dict[str, set[str]] | None = None,
) -> bool:
    reached = record_run_states(automaton, records, types, tables)
    return any(src in reached and lab == EOF for src, lab, _ in automaton.transitions)


# ---------------------------------------------------------------------------
# Full-automaton extension
# ---------------------------------------------------------------------------


def _fresh(base: str, taken: set[str]) -> str:
    if base not in taken:
        return base
    i = 2
    while f"{base}{i}" in taken:
        i += 1
    return f"{base}{i}"


def extend_to_full(automaton: InputAutomaton, type_names: list[str]) -> InputAutomaton:
    """Extend a well-formed automaton into one accepting every file.

    Adds the complement type NA to the alphabet, a sink state that absorbs
    every record sequence that is not a prefix of a well-formed file, and a
    new final state reachable by eof from every non-final state.  The sink
    is dropped again when nothing feeds it (the automaton was already total).
    """
    taken = set(automaton.states)
    qy = _fresh("q_y", taken)
    taken.add(qy)
    qx = _fresh("q_x", taken)

    alphabet = list(type_names) + [NA]
    trans: list[tuple[str, str, str]] = list(automaton.transitions)
    have: dict[str, set[str]] = {}
    for src, lab, _ in automaton.transitions:
        have.setdefault(src, set()).add(lab)
    for q in automaton.non_finals():
        for t in alphabet:
            if t not in have.get(q, set()):
                trans.append((q, t, qy))
    qy_used = any(dst == qy for _, _, dst in trans)
    states = list(automaton.states)
    if qy_used:
        for t in alphabet:
            trans.append((qy, t, qy))
        states.append(qy)
    states.append(qx)
    for q in automaton.non_finals():
        trans.append((q, EOF, qx))
    if qy_used:
        trans.append((qy, EOF, qx))
    return InputAutomaton(
        name=f"{automaton.name}_full",
        states=tuple(states),
        transitions=tuple(trans),
        start=automaton.start,
        finals=frozenset(automaton.finals | {qx}),
    )


def single_state_full_automaton(type_names: list[str], name: str = "single") -> InputAutomaton:
    """The trivial full automaton: one looping state plus a final.

    Lifting over it degenerates to running the underlying analysis directly
    on the CFG, which makes it the baseline for precision comparisons.
    """
    trans = [("q0", t, "q0") for t in list(type_names) + [NA]]
    trans.append(("q0", EOF, "q_f"))
    return InputAutomaton(
        name=name,
        states=("q0", "q_f"),
        transitions=tuple(trans),
        start="q0",
        finals=frozenset({"q_f"}),
    )


# ---------------------------------------------------------------------------
# Constraint implication and automaton refinement
# ---------------------------------------------------------------------------


def constraint_implies(c2: tuple[Atom, ...], c1: tuple[Atom, ...]) -> bool:
    """Sound syntactic entailment: does every record satisfying c2 satisfy c1?

    Incomplete on purpose: an atom of c1 must either appear in c2 verbatim,
    or be an inequality refuted by an equality in c2 on the same field.
    Table atoms entail only themselves.  Returns False whenever entailment
    is not established.
    """
    c2set = set(c2)
    for a1 in c1:
        if a1 in c2set:
            continue
        if a1.kind == "neq" and any(
            a2.kind == "eq" and a2.field == a1.field and a2.value != a1.value for a2 in c2
        ):
            continue
        return False
    return True


@dataclass
class RefinementResult:
    holds: bool
    mapping: dict[str, str] | None
    witness: tuple[str, str, str, str] | None  # (src, label, dst, reason)
    finals_map_to_finals: bool

    def __bool__(self) -> bool:
        return self.holds


def _label_compatible(s2: str, s1: str, types: dict[str, RecordType]) -> bool:
    if s2 == s1:
        return True
    if s2 == EOF or s1 == EOF:
        return False
    if s2 == NA or s1 == NA:
        return False
    return constraint_implies(types[s2].atoms, types[s1].atoms)


def check_refinement(
    s1: InputAutomaton,
    s2: InputAutomaton,
    types: dict[str, RecordType],
    mapping: dict[str, str] | None = None,
) -> RefinementResult:
    """Is s2 a refinement of s1, i.e. is there a state map m with
    m(start2) = start1 under which every s2 transition is matched in s1?

    A transition p2 -t2-> q2 is matched when at least one transition runs
    m(p2) -> m(q2) in s1, and every label t1 on such transitions is either
    eof together with t2, or a type whose constraint is implied by t2's.

    With a supplied mapping only verification runs; otherwise all candidate
    mappings anchored at the start state are searched by backtracking
    (exponential in |Q2|, fine for the small automatons this tool targets).
    Whether s2's finals land on s1's finals is checked and reported as a
    derived property.
    """

    s1_between: dict[tuple[str, str], list[str]] = {}
    for a, lab, b in s1.transitions:
        s1_between.setdefault((a, b), []).append(lab)

    def check_transition(m: dict[str, str], p2: str, lab: str, q2: str):
        labs = s1_between.get((m[p2], m[q2]))
        if not labs:
            return (p2, lab, q2, f"no transition {m[p2]} -> {m[q2]} in {s1.name}")
        for s1lab in labs:
            if not _label_compatible(lab, s1lab, types):
                return (
                    p2,
                    lab,
                    q2,
                    f"label {lab} does not imply {s1lab} on {m[p2]} -> {m[q2]}",
                )
        return None

    def verify(m: dict[str, str]):
        if m.get(s2.start) != s1.start:
            return (s2.start, "", "", "start state not anchored")
        for p2, lab, q2 in s2.transitions:
            bad = check_transition(m, p2, lab, q2)
            if bad:
                return bad
        return None

    def finals_ok(m: dict[str, str]) -> bool:
        return all(m[f] in s1.finals for f in s2.finals)

    if mapping is not None:
        missing = [q for q in s2.states if q not in mapping]
        if missing:
            return RefinementResult(False, None, (missing[0], "", "", "state unmapped"), False)
        bad = verify(mapping)
        if bad:
            return RefinementResult(False, None, bad, finals_ok(mapping))
        return RefinementResult(True, dict(mapping), None, finals_ok(mapping))

    order = [s2.start] + [q for q in s2.states if q != s2.start]
    assign: dict[str, str] = {}
    last_witness: list[tuple[str, str, str, str] | None] = [None]

    def consistent_so_far() -> bool:
        for p2, lab, q2 in s2.transitions:
            if p2 in assign and q2 in assign:
                bad = check_transition(assign, p2, lab, q2)
                if bad:
                    last_witness[0] = bad
                    return False
        return True

    def search(i: int) -> bool:
        if i == len(order):
            return True
        q2 = order[i]
        candidates = [s1.start] if q2 == s2.start else s1.states
        for q1 in candidates:
            assign[q2] = q1
            if consistent_so_far() and search(i + 1):
                return True
            del assign[q2]
        return False

    if search(0):
        return RefinementResult(True, dict(assign), None, finals_ok(assign))
    return RefinementResult(
        False,
        None,
        last_witness[0] or (s2.start, "", "", "mapping search exhausted"),
        False,
    )


# ---------------------------------------------------------------------------
# DSL parser
# ---------------------------------------------------------------------------

_LAYOUT_RE = re.compile(r"^layout\s+(\S+)\s+length\s+(\d+)$")
_FIELD_RE = re.compile(r"^field\s+(\S+)\s+at\s+(\d+)\s+len\s+(\d+)$")
_TYPE_RE = re.compile(r"^type\s+(\S+)\s+layout\s+(\S+)(?:\s+where\s+(.*))?$")
_AUTOMATON_RE = re.compile(r"^automaton\s+(\S+)\s+start\s+(\S+)\s+final\s+(\S+)$")
_TRANS_RE = re.compile(r"^trans\s+(\S+)\s+-(\S+)->\s+(\S+)$")
_PRIMARY_RE = re.compile(r"^primary_file\s+(\S+)$")
_ATOM_EQ_RE = re.compile(r'^(\S+)\s*(==|!=)\s*"([^"]*)"$')
_ATOM_TAB_RE = re.compile(r"^(in_table|not_in_table)\(\s*(\S+?)\s*,\s*(\S+?)\s*\)$")


def _parse_atom(text: str, lineno: int) -> Atom:
    m = _ATOM_EQ_RE.match(text)
    if m:
        f, op, lit = m.groups()
        return Atom("eq" if op == "==" else "neq", f, lit)
    m = _ATOM_TAB_RE.match(text)
    if m:
        kind, tab, f = m.groups()
        return Atom(kind, f, tab)
    raise FormatSpecError(f"line {lineno}: cannot parse atom {text!r}")


def parse_format_spec(text: str) -> FormatSpec:
    layouts: dict[str, RecordLayout] = {}
    types: dict[str, RecordType] = {}
    automatons: dict[str, InputAutomaton] = {}
    primary: str | None = None
    cur_layout: tuple[str, int, list[tuple[str, int, int]]] | None = None

    # Automatons under construction: name -> (start, finals, transitions, state order)
    cur_auto: dict | None = None

    def finish_layout():
        nonlocal cur_layout
        if cur_layout is None:
            return
        name, length, fields = cur_layout
        layouts[name] = RecordLayout(name, length, tuple(fields))
        cur_layout = None

    def finish_auto():
        nonlocal cur_auto
        if cur_auto is None:
            return
        order: list[str] = []

        def note(q):
            if q not in order:
                order.append(q)

        note(cur_auto["start"])
        for q in cur_auto["finals"]:
            note(q)
        for src, _, dst in cur_auto["trans"]:
            note(src)
            note(dst)
        automatons[cur_auto["name"]] = InputAutomaton(
            name=cur_auto["name"],
            states=tuple(order),
            transitions=tuple(cur_auto["trans"]),
            start=cur_auto["start"],
            finals=frozenset(cur_auto["finals"]),
        )
        cur_auto = None

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LAYOUT_RE.match(line)
        if m:
            finish_layout()
            name, length = m.group(1), int(m.group(2))
            if name in layouts:
                raise FormatSpecError(f"line {lineno}: duplicate layout {name!r}")
            cur_layout = (name, length, [])
            continue
        m = _FIELD_RE.match(line)
        if m:
            if cur_layout is None:
                raise FormatSpecError(f"line {lineno}: field outside a layout")
            fname, off, flen = m.group(1), int(m.group(2)), int(m.group(3))
            _, length, fields = cur_layout
            if flen < 1:
                raise FormatSpecError(f"line {lineno}: field {fname!r} has length < 1")
            if off + flen > length:
                raise FormatSpecError(f"line {lineno}: field {fname!r} exceeds layout length")
            if any(f[0] == fname for f in fields):
                raise FormatSpecError(f"line {lineno}: duplicate field {fname!r}")
            fields.append((fname, off, flen))
            continue
        m = _TYPE_RE.match(line)
        if m:
            finish_layout()
            tname, lname, where = m.groups()
            if tname in (NA, EOF):
                raise FormatSpecError(f"line {lineno}: type name {tname!r} is reserved")
            if tname in types:
                raise FormatSpecError(f"line {lineno}: duplicate type {tname!r}")
            if lname not in layouts:
                raise FormatSpecError(f"line {lineno}: unknown layout {lname!r}")
            layout = layouts[lname]
            atoms: list[Atom] = []
            if where:
                for part in re.split(r"\s+and\s+", where.strip()):
                    atoms.append(_parse_atom(part.strip(), lineno))
            for atom in atoms:
                if atom.field not in layout.field_names():
                    raise FormatSpecError(
                        f"line {lineno}: constraint field {atom.field!r} not in layout {lname!r}"
                    )
            eqs: dict[str, str] = {}
            for atom in atoms:
                if atom.kind == "eq":
                    if atom.field in eqs and eqs[atom.field] != atom.value:
                        raise FormatSpecError(
                            f"line {lineno}: type {tname!r} is unsatisfiable "
                            f"({atom.field} equals two different literals)"
                        )
                    eqs[atom.field] = atom.value
                off, flen = layout.field_slice(atom.field)
                if atom.kind in ("eq", "neq") and len(atom.value) != flen:
                    raise FormatSpecError(
                        f"line {lineno}: literal {atom.value!r} does not match "
                        f"width {flen} of field {atom.field!r}"
                    )
            types[tname] = RecordType(tname, layout, tuple(atoms))
            continue
        m = _AUTOMATON_RE.match(line)
        if m:
            finish_layout()
            finish_auto()
            name, start, finals = m.groups()
            if name in automatons:
                raise FormatSpecError(f"line {lineno}: duplicate automaton {name!r}")
            cur_auto = {
                "name": name,
                "start": start,
                "finals": finals.split(","),
                "trans": [],
            }
            continue
        m = _TRANS_RE.match(line)
        if m:
            if cur_auto is None:
                raise FormatSpecError(f"line {lineno}: trans outside an automaton")
            src, lab, dst = m.groups()
            cur_auto["trans"].append((src, lab, dst))
            continue
        m = _PRIMARY_RE.match(line)
        if m:
            finish_layout()
            if primary is not None:
                raise FormatSpecError(f"line {lineno}: primary_file declared twice")
            primary = m.group(1)
            continue
        raise FormatSpecError(f"line {lineno}: cannot parse {line!r}")

    finish_layout()
    finish_auto()

    warnings: list[str] = []
    for auto in automatons.values():
        warnings.extend(auto.validate(set(types)))
    tables = sorted(
        {a.value for rt in types.values() for a in rt.atoms if a.kind in ("in_table", "not_in_table")}
    )
    return FormatSpec(
        layouts=layouts,
        types=types,
        automatons=automatons,
        primary_buffer=primary,
        tables=tuple(tables),
        warnings=warnings,
    )
