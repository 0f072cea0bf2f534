"""Underlying abstract domains pluggable into the lifted engine.

Every domain is a join semilattice with monotone transfer functions over
the statements of the mini-language.  The whole-value bottom (``None``)
means *unreachable* and is absorbing through every transfer; it is distinct
from per-slice "no information", which never arises from transfers.

Shipped domains:

* ``ConstProp`` — per-slice flat lattice of byte-string constants drawn from
  the finite literal universe of program plus format spec (finite height,
  so the fixpoint needs no widening).
* ``Uninit`` — set of possibly-uninitialized slices (join is union).
* ``ReachingDefs`` — set of (slice, defining node) pairs; also provides the
  backward "reachable uses" transfers, so it can run both directions on a
  PFSG.
* ``Unit`` — pure reachability (single non-bottom value).
* ``Product`` — componentwise pairing with bottom reduction: a branch
  refuted in either component prunes the path for the pair.
* ``Integrity`` — wrapper adding a must-set of table-membership predicates
  on top of any inner domain; key-based table lookups consult it to prune
  their found / invalid-key branches.

Reads are communicated via :class:`ReadEffect` values prepared by the
engine: the record type's equality atoms pinned to buffer slices for a
type-labeled read, or an "undefined record" havoc for eof.  Statements the
dialect parses but the domains do not model are havoc: every written slice
becomes non-constant and counts as initialized-with-unknown-value.
"""

from __future__ import annotations

from dataclasses import dataclass

from .minilang import (
    CfgNode,
    Cond,
    CondAtom,
    Lit,
    Move,
    Program,
    Ref,
    Slice,
)


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class ReadEffect:
    """What a read does to a buffer, as seen by a domain.

    ``undefined`` is True for eof (the buffer holds garbage afterwards) and
    False for a record of some type (real bytes were copied in).  For typed
    reads the constraint atoms arrive pre-resolved to slices of ``buffer``.
    """

    label: str
    buffer: str
    undefined: bool
    eq_atoms: tuple[tuple[Slice, str], ...] = ()
    neq_atoms: tuple[tuple[Slice, str], ...] = ()
    table_atoms: tuple[tuple[str, str, Slice], ...] = ()  # (kind, table, slice)


# Table-membership predicate tracked by the integrity wrapper.
Pred = tuple[str, str, Slice]  # ("in" | "not_in", table, slice)


class Domain:
    """Contract every underlying domain implements.

    ``None`` is the absorbing whole-value bottom for all domains; the public
    entry points below handle it so subclasses only see proper values.
    """

    name = "domain"
    backward = False

    def __init__(self, program: Program):
        self.program = program
        self.slices = program.all_slices()
        self.by_buffer = {b: program.buffer_slices(b) for b in program.buffers}

    # -- lattice --

    def bottom(self):
        return None

    def is_bottom(self, l) -> bool:
        return l is None

    def initial(self):
        raise NotImplementedError

    def join(self, a, b):
        if a is None:
            return b
        if b is None:
            return a
        return self._join(a, b)

    def leq(self, a, b) -> bool:
        if a is None:
            return True
        if b is None:
            return False
        return self._leq(a, b)

    def height_hint(self) -> int:
        return 2 * len(self.slices) + 2

    # -- transfers (public wrappers; ⊥ short-circuits) --

    def transfer_stmt(self, node: CfgNode, l):
        if l is None:
            return None
        return self._stmt(node, l)

    def transfer_branch(self, cond: Cond, polarity: bool, l):
        if l is None:
            return None
        return self._branch(cond, polarity, l)

    def transfer_read(self, l, effect: ReadEffect, node_id: int = -1):
        if l is None:
            return None
        return self._read(l, effect, node_id)

    def transfer_table_read(self, node: CfgNode, branch: str, l):
        """branch is "found" (row copied in) or "invalid" (buffer undefined)."""
        if l is None:
            return None
        return self._table_read(node, branch, l)

    def table_allowed(self, l, table: str, key: Slice) -> frozenset[str]:
        """Which table-lookup outcomes remain feasible given the fact."""
        return frozenset({"found", "invalid"})

    # -- defaults --

    def _stmt(self, node: CfgNode, l):
        return l

    def _branch(self, cond: Cond, polarity: bool, l):
        return l

    def _read(self, l, effect: ReadEffect, node_id: int):
        return l

    def _table_read(self, node: CfgNode, branch: str, l):
        return self._havoc(l, node.buffer, undefined=(branch == "invalid"))

    def _havoc(self, l, buffer: str, undefined: bool):
        return l

    # -- reporting & oracle hooks --

    def describe(self, l) -> str:
        if l is None:
            return "bottom"
        return self._describe(l)

    def _describe(self, l) -> str:
        return repr(l)

    def concretizes(self, l, view) -> bool:
        """Is the concrete state (an oracle StateView) represented by l?"""
        if l is None:
            return False
        return self._concretizes(l, view)

    def _concretizes(self, l, view) -> bool:
        return True

    # -- backward transfers (reachable-uses style); opt-in --

    def transfer_backward(self, node: CfgNode, l):
        raise DomainError(f"domain {self.name} has no backward transfers")

    # -- shared helpers --

    def _disp(self, key: Slice) -> str:
        return self.program.display_name(key)

    def written_keys(self, node: CfgNode) -> tuple[Slice, ...]:
        if node.kind == "move":
            return (node.stmt.dst.key,)
        if node.kind == "read":
            buf = self.program.files[node.file]
            return self.by_buffer[buf]
        if node.kind == "table-read-key":
            return self.by_buffer[node.buffer]
        return ()

    def used_keys(self, node: CfgNode) -> tuple[Slice, ...]:
        out: list[Slice] = []
        if node.kind == "move" and isinstance(node.stmt.src, Ref):
            out.append(node.stmt.src.key)
        elif node.kind in ("if-cond", "loop-cond"):
            for atom in node.cond.atoms:
                out.append(atom.lhs.key)
                if isinstance(atom.rhs, Ref):
                    out.append(atom.rhs.key)
        elif node.kind == "write":
            out.extend(self.by_buffer[node.buffer])
        elif node.kind == "table-read-key":
            out.append(node.key.key)
        elif node.kind == "display":
            for arg in node.stmt.args:
                if isinstance(arg, Ref):
                    out.append(arg.key)
        return tuple(out)


# ---------------------------------------------------------------------------
# Constant propagation
# ---------------------------------------------------------------------------


class ConstProp(Domain):
    """Per-slice flat constants; value is a dict slice -> byte string.

    Absent keys mean non-constant.  Branch transfers refine: an assumed
    equality pins a constant, a contradicted one collapses the whole value
    to bottom, which is what prunes format-infeasible paths.
    """

    name = "cp"

    def initial(self):
        return {}

    def _join(self, a, b):
        return {k: v for k, v in a.items() if b.get(k) == v}

    def _leq(self, a, b):
        return all(a.get(k) == v for k, v in b.items())

    def _stmt(self, node, l):
        if node.kind == "move":
            stmt: Move = node.stmt
            dst = stmt.dst.key
            if isinstance(stmt.src, Lit):
                val = stmt.src.value
            else:
                val = l.get(stmt.src.key)
            return self._write(l, dst, val)
        return l

    def _write(self, l, dst: Slice, val: str | None):
        new = {k: v for k, v in l.items() if not k.overlaps(dst) and k != dst}
        if val is not None:
            new[dst] = val
        return new

    def _read(self, l, effect, node_id):
        new = {k: v for k, v in l.items() if k.buffer != effect.buffer}
        for key, lit in effect.eq_atoms:
            new[key] = lit
        # A neq atom never creates a constant; right after the havoc there is
        # no constant left for it to refute.
        return new

    def _havoc(self, l, buffer, undefined):
        return {k: v for k, v in l.items() if k.buffer != buffer}

    def _branch(self, cond, polarity, l):
        if cond.op == "atom":
            return self._refine(l, cond.atoms[0], polarity)
        if (cond.op == "and") == polarity:
            # true(AND) / false(OR): every atom is known in this direction
            pol = polarity
            for atom in cond.atoms:
                l = self._refine(l, atom, pol)
                if l is None:
                    return None
            return l
        return l

    def _refine(self, l, atom: CondAtom, polarity: bool):
        lk = atom.lhs.key
        lv = l.get(lk)
        if isinstance(atom.rhs, Lit):
            lit = atom.rhs.value
            want_eq = (atom.op == "eq") == polarity
            if want_eq:
                if lv is not None and lv != lit:
                    return None
                if lv is None:
                    new = dict(l)
                    new[lk] = lit
                    return new
                return l
            if lv is not None and lv == lit:
                return None
            return l
        rk = atom.rhs.key
        rv = l.get(rk)
        want_eq = (atom.op == "eq") == polarity
        if want_eq:
            if lv is not None and rv is not None:
                return None if lv != rv else l
            if lv is not None and rv is None:
                new = dict(l)
                new[rk] = lv
                return new
            if rv is not None and lv is None:
                new = dict(l)
                new[lk] = rv
                return new
            return l
        if lv is not None and rv is not None and lv == rv:
            return None
        return l

    def _describe(self, l):
        items = sorted((self._disp(k), v) for k, v in l.items())
        return "<" + ", ".join(f"{n}='{v}'" for n, v in items) + ">"

    def _concretizes(self, l, view):
        for key, lit in l.items():
            if view.slice_bytes(key) != lit.encode("latin-1"):
                return False
        return True


# ---------------------------------------------------------------------------
# Possibly-uninitialized slices
# ---------------------------------------------------------------------------


class Uninit(Domain):
    """May-analysis: the set of slices that can hold an undefined value.

    Starts with every working-storage variable and every file or table
    buffer possibly uninitialized.  A typed read initializes the whole input
    buffer (a real record was copied in); an eof read un-initializes it.
    """

    name = "uninit"

    def initial(self):
        return frozenset(self.slices)

    def _join(self, a, b):
        return a | b

    def _leq(self, a, b):
        return a <= b

    def height_hint(self):
        return len(self.slices) + 2

    def _write(self, l, dst: Slice, undefined: bool):
        new = set(l)
        affected = {dst} | {k for k in self.slices if k.covered_by(dst)}
        if undefined:
            new |= affected
        else:
            new -= affected
        # Partial overlaps are only partly overwritten: conservatively uninit.
        new |= {k for k in self.slices if k.overlaps(dst) and not k.covered_by(dst)}
        return frozenset(new)

    def _stmt(self, node, l):
        if node.kind == "move":
            stmt: Move = node.stmt
            undef = isinstance(stmt.src, Ref) and stmt.src.key in l
            return self._write(l, stmt.dst.key, undef)
        return l

    def _read(self, l, effect, node_id):
        return self._havoc(l, effect.buffer, effect.undefined)

    def _havoc(self, l, buffer, undefined):
        keys = set(self.by_buffer[buffer])
        return frozenset(l | keys) if undefined else frozenset(l - keys)

    def _describe(self, l):
        return "{" + ", ".join(sorted(self._disp(k) for k in l)) + "}"

    def _concretizes(self, l, view):
        return all(k in l for k in self.slices if view.has_undef(k))


# ---------------------------------------------------------------------------
# Reaching definitions (forward) / reachable uses (backward)
# ---------------------------------------------------------------------------


class ReachingDefs(Domain):
    """Set of (slice, defining-node id) pairs.

    A definition of a slice kills the pairs of that slice and of every
    overlapping slice.  Reads define the whole input buffer (for eof too:
    the undefined value is still a new definition).  Backward it computes
    reachable uses over the same powerset lattice: (slice, using-node) pairs
    alive until the next definition.
    """

    name = "rd"
    backward = True

    def initial(self):
        return frozenset()

    def _join(self, a, b):
        return a | b

    def _leq(self, a, b):
        return a <= b

    def height_hint(self):
        return len(self.slices) * 64 + 2

    def _define(self, l, keys: tuple[Slice, ...], node_id: int):
        dead = {k for k in self.slices for d in keys if k == d or k.overlaps(d)}
        new = {p for p in l if p[0] not in dead}
        new |= {(d, node_id) for d in keys}
        return frozenset(new)

    def _stmt(self, node, l):
        written = self.written_keys(node)
        if written:
            return self._define(l, written, node.id)
        return l

    def _read(self, l, effect, node_id):
        return self._define(l, self.by_buffer[effect.buffer], node_id)

    def _table_read(self, node, branch, l):
        return self._define(l, self.by_buffer[node.buffer], node.id)

    def transfer_backward(self, node, l):
        if l is None:
            return None
        written = self.written_keys(node)
        dead = {k for k in self.slices for d in written if k == d or k.overlaps(d)}
        new = {p for p in l if p[0] not in dead}
        new |= {(u, node.id) for u in self.used_keys(node)}
        return frozenset(new)

    def _describe(self, l):
        items = sorted((self._disp(k), nid) for k, nid in l)
        return "{" + ", ".join(f"({n}, n{d})" for n, d in items) + "}"


# ---------------------------------------------------------------------------
# Unit (reachability)
# ---------------------------------------------------------------------------


class Unit(Domain):
    name = "unit"

    def initial(self):
        return "reach"

    def _join(self, a, b):
        return "reach"

    def _leq(self, a, b):
        return True

    def height_hint(self):
        return 2

    def _describe(self, l):
        return "reach"


# ---------------------------------------------------------------------------
# Product combinator
# ---------------------------------------------------------------------------


class Product(Domain):
    """Componentwise product with bottom reduction across components."""

    def __init__(self, left: Domain, right: Domain):
        super().__init__(left.program)
        self.left = left
        self.right = right
        self.name = f"{left.name}*{right.name}"
        self.backward = left.backward and right.backward

    def initial(self):
        return (self.left.initial(), self.right.initial())

    def _pair(self, a, b):
        if a is None or b is None:
            return None
        return (a, b)

    def _join(self, a, b):
        return (self.left.join(a[0], b[0]), self.right.join(a[1], b[1]))

    def _leq(self, a, b):
        return self.left.leq(a[0], b[0]) and self.right.leq(a[1], b[1])

    def height_hint(self):
        return self.left.height_hint() + self.right.height_hint()

    def _stmt(self, node, l):
        return self._pair(self.left.transfer_stmt(node, l[0]), self.right.transfer_stmt(node, l[1]))

    def _branch(self, cond, polarity, l):
        return self._pair(
            self.left.transfer_branch(cond, polarity, l[0]),
            self.right.transfer_branch(cond, polarity, l[1]),
        )

    def _read(self, l, effect, node_id):
        return self._pair(
            self.left.transfer_read(l[0], effect, node_id),
            self.right.transfer_read(l[1], effect, node_id),
        )

    def _table_read(self, node, branch, l):
        return self._pair(
            self.left.transfer_table_read(node, branch, l[0]),
            self.right.transfer_table_read(node, branch, l[1]),
        )

    def table_allowed(self, l, table, key):
        if l is None:
            return frozenset()
        return self.left.table_allowed(l[0], table, key) & self.right.table_allowed(
            l[1], table, key
        )

    def transfer_backward(self, node, l):
        if l is None:
            return None
        return self._pair(
            self.left.transfer_backward(node, l[0]),
            self.right.transfer_backward(node, l[1]),
        )

    def _describe(self, l):
        return f"{self.left.describe(l[0])} {self.right.describe(l[1])}"

    def _concretizes(self, l, view):
        return self.left.concretizes(l[0], view) and self.right.concretizes(l[1], view)


# ---------------------------------------------------------------------------
# Data-integrity wrapper
# ---------------------------------------------------------------------------


class Integrity(Domain):
    """Must-set of table-membership predicates paired with an inner value.

    Join intersects the predicate sets and joins the inner values.  Typed
    reads drop predicates about the input buffer and install the type's
    table atoms; a MOVE re-targets predicates from its source onto its
    destination.  Key-based lookups ask :meth:`table_allowed` which
    outcomes survive.
    """

    def __init__(self, inner: Domain):
        super().__init__(inner.program)
        self.inner = inner
        self.name = f"integrity({inner.name})"

    def initial(self):
        return (frozenset(), self.inner.initial())

    def _join(self, a, b):
        inner = self.inner.join(a[1], b[1])
        if inner is None:
            return None
        return (a[0] & b[0], inner)

    def _leq(self, a, b):
        return b[0] <= a[0] and self.inner.leq(a[1], b[1])

    def height_hint(self):
        return self.inner.height_hint() + len(self.slices) + 2

    def _wrap(self, preds, inner):
        if inner is None:
            return None
        return (frozenset(preds), inner)

    def _stmt(self, node, l):
        preds, inner = l
        if node.kind == "move":
            stmt: Move = node.stmt
            dst = stmt.dst.key
            keep = {p for p in preds if p[2] != dst and not p[2].overlaps(dst)}
            if isinstance(stmt.src, Ref):
                src = stmt.src.key
                keep |= {(kind, tab, dst) for kind, tab, s in preds if s == src}
            return self._wrap(keep, self.inner.transfer_stmt(node, inner))
        return self._wrap(preds, self.inner.transfer_stmt(node, inner))

    def _branch(self, cond, polarity, l):
        return self._wrap(l[0], self.inner.transfer_branch(cond, polarity, l[1]))

    def _read(self, l, effect, node_id):
        preds, inner = l
        keep = {p for p in preds if p[2].buffer != effect.buffer}
        if not effect.undefined:
            keep |= {(kind, tab, key) for kind, tab, key in effect.table_atoms}
        return self._wrap(keep, self.inner.transfer_read(inner, effect, node_id))

    def table_allowed(self, l, table, key):
        if l is None:
            return frozenset()
        preds = l[0]
        if ("in", table, key) in preds:
            return frozenset({"found"})
        if ("not_in", table, key) in preds:
            return frozenset({"invalid"})
        return frozenset({"found", "invalid"})

    def _table_read(self, node, branch, l):
        preds, inner = l
        row = set(self.by_buffer[node.buffer])
        keep = {p for p in preds if p[2] not in row and not any(p[2].overlaps(r) for r in row)}
        return self._wrap(keep, self.inner.transfer_table_read(node, branch, inner))

    def _describe(self, l):
        preds, inner = l
        names = {"in": "in_table", "not_in": "not_in_table"}
        shown = sorted(f"{names[k]}({t}, {self._disp(s)})" for k, t, s in preds)
        return "[" + ", ".join(shown) + "] " + self.inner.describe(inner)

    def _concretizes(self, l, view):
        preds, inner = l
        for kind, table, key in preds:
            val = view.slice_bytes(key)
            if val is None:
                return False
            member = val.decode("latin-1") in view.table_keys(table)
            if kind == "in" and not member:
                return False
            if kind == "not_in" and member:
                return False
        return self.inner.concretizes(inner, view)


# ---------------------------------------------------------------------------
# Selector
# ---------------------------------------------------------------------------

SELECTORS = ("cp", "uninit", "rd", "unit", "cp*uninit", "cp*rd", "integrity(cp)")


def make_domain(selector: str, program: Program) -> Domain:
    """Build a domain from a CLI selector string."""
    sel = selector.strip()
    base = {"cp": ConstProp, "uninit": Uninit, "rd": ReachingDefs, "unit": Unit}
    if sel in base:
        return base[sel](program)
    if "*" in sel:
        lname, rname = sel.split("*", 1)
        return Product(make_domain(lname, program), make_domain(rname, program))
    if sel.startswith("integrity(") and sel.endswith(")"):
        return Integrity(make_domain(sel[len("integrity(") : -1], program))
    raise DomainError(f"unknown domain selector {selector!r} (expected one of {SELECTORS})")
