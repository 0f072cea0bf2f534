"""Parser and CFG builder for the Cobol-like batch mini-language.

Source files (suggested extension ``.mcbl``) have a DATA DIVISION declaring
fixed-width buffers with overlaid layouts, followed by a PROCEDURE DIVISION
of statements and optional paragraphs.  See ``docs/minilang.md`` for the
grammar.  ``*>`` starts a comment; a trailing ``*> @reject`` marks the
statements beginning on that line as format-rejection points.

Statement line numbers are 1-based offsets from the ``PROCEDURE DIVISION.``
header line.  They are the stable identifiers used in every report, table,
and graph this toolkit emits; parse errors report physical line/column.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field


class MiniLangError(ValueError):
    """Base class for parse and resolution errors."""


class SyntaxErrorAt(MiniLangError):
    def __init__(self, msg: str, line: int, col: int = 0):
        super().__init__(f"line {line}, col {col}: {msg}")
        self.line = line
        self.col = col


class UnknownFieldError(MiniLangError):
    pass


class AmbiguousFieldError(MiniLangError):
    pass


# ---------------------------------------------------------------------------
# Data declarations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Slice:
    """A byte range of a buffer; the aliasing-exact key used by all domains.

    Two fields of different overlay layouts that cover the same byte range
    compare equal as slices, which is exactly what overlay semantics wants.
    """

    buffer: str
    offset: int
    length: int

    @property
    def end(self) -> int:
        return self.offset + self.length

    def overlaps(self, other: "Slice") -> bool:
        return (
            self.buffer == other.buffer
            and self != other
            and self.offset < other.end
            and other.offset < self.end
        )

    def covered_by(self, other: "Slice") -> bool:
        return (
            self.buffer == other.buffer
            and other.offset <= self.offset
            and self.end <= other.end
        )


@dataclass(frozen=True)
class FieldSlice:
    """A resolved field reference: slice plus the names it resolved through."""

    buffer: str
    layout: str
    field: str
    offset: int
    length: int

    @property
    def key(self) -> Slice:
        return Slice(self.buffer, self.offset, self.length)


@dataclass
class LayoutDecl:
    name: str
    fields: list[tuple[str, int, int]]  # (name, offset, length)


# Buffer roles.
INPUT_FILE = "input-file-buffer"
OUTPUT_FILE = "output-file-buffer"
WORKING = "working-storage"
TABLE_ROW = "table-row-buffer"


@dataclass
class BufferDecl:
    name: str
    role: str
    length: int
    layouts: list[LayoutDecl]
    file_name: str | None = None  # for file buffers
    key_field: str | None = None  # for table-row buffers


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Lit:
    value: str


@dataclass(frozen=True)
class Ref:
    text: str
    slice: FieldSlice

    @property
    def key(self) -> Slice:
        return self.slice.key


Operand = Lit | Ref


@dataclass(frozen=True)
class CondAtom:
    lhs: Ref
    op: str  # "eq" | "neq"
    rhs: Operand


@dataclass(frozen=True)
class Cond:
    op: str  # "atom" | "and" | "or"
    atoms: tuple[CondAtom, ...]


@dataclass
class Stmt:
    line: int
    reject: bool = False
    node_id: int | None = None


@dataclass
class Open(Stmt):
    files: list[str] = field(default_factory=list)


@dataclass
class Close(Stmt):
    files: list[str] = field(default_factory=list)


@dataclass
class ReadFile(Stmt):
    file: str = ""
    at_end: list[Stmt] = field(default_factory=list)


@dataclass
class ReadTable(Stmt):
    table: str = ""
    into: str = ""
    key: Ref | None = None
    invalid: list[Stmt] = field(default_factory=list)


@dataclass
class Move(Stmt):
    src: Operand | None = None
    dst: Ref | None = None


@dataclass
class Write(Stmt):
    buffer: str = ""


@dataclass
class If(Stmt):
    cond: Cond | None = None
    then: list[Stmt] = field(default_factory=list)
    els: list[Stmt] = field(default_factory=list)


@dataclass
class PerformUntil(Stmt):
    cond: Cond | None = None
    body: list[Stmt] = field(default_factory=list)


@dataclass
class PerformPara(Stmt):
    target: str = ""


@dataclass
class Display(Stmt):
    args: list[Operand] = field(default_factory=list)


@dataclass
class Stop(Stmt):
    pass


@dataclass
class Program:
    buffers: dict[str, BufferDecl]
    files: dict[str, str]  # file name -> buffer name
    tables: dict[str, tuple[str, str]]  # table name -> (buffer, key field)
    main: list[Stmt]
    paragraphs: list[tuple[str, list[Stmt]]]
    source: str
    data_lines: list[str]

    def buffer_slices(self, buffer: str) -> tuple[Slice, ...]:
        """Distinct field slices of a buffer, in first-declaration order."""
        decl = self.buffers[buffer]
        seen: dict[Slice, None] = {}
        if not decl.layouts:
            seen[Slice(buffer, 0, decl.length)] = None
        for lay in decl.layouts:
            for _, off, length in lay.fields:
                seen.setdefault(Slice(buffer, off, length), None)
        return tuple(seen)

    def all_slices(self) -> tuple[Slice, ...]:
        out: list[Slice] = []
        for name in self.buffers:
            out.extend(self.buffer_slices(name))
        return tuple(out)

    def display_name(self, key: Slice) -> str:
        """Canonical display name: the first-declared field with this range."""
        decl = self.buffers.get(key.buffer)
        if decl is None:
            return f"{key.buffer}[{key.offset}:{key.end}]"
        if not decl.layouts:
            return key.buffer
        for lay in decl.layouts:
            for fname, off, length in lay.fields:
                if off == key.offset and length == key.length:
                    return f"{key.buffer}.{fname}"
        return f"{key.buffer}[{key.offset}:{key.end}]"

    def paragraph(self, name: str) -> list[Stmt]:
        for pname, stmts in self.paragraphs:
            if pname == name:
                return stmts
        raise MiniLangError(f"unknown paragraph {name!r}")


def resolve_slice(program: Program, qualified: str, line: int = 0) -> FieldSlice:
    """Resolve ``buffer.field``, ``buffer.layout.field``, or a working name.

    Unqualified field names that resolve to differing byte ranges across
    overlays are rejected as ambiguous; overlays that agree are fine.
    """
    parts = qualified.split(".")
    if len(parts) == 1:
        name = parts[0]
        decl = program.buffers.get(name)
        if decl is None or decl.role != WORKING:
            raise UnknownFieldError(f"line {line}: unknown variable {qualified!r}")
        return FieldSlice(name, "", name, 0, decl.length)
    if len(parts) == 2:
        bufname, fieldname = parts
        decl = program.buffers.get(bufname)
        if decl is None:
            raise UnknownFieldError(f"line {line}: unknown buffer {bufname!r}")
        hits = []
        for lay in decl.layouts:
            for fname, off, length in lay.fields:
                if fname == fieldname:
                    hits.append(FieldSlice(bufname, lay.name, fieldname, off, length))
        if not hits:
            raise UnknownFieldError(f"line {line}: unknown field {qualified!r}")
        ranges = {(h.offset, h.length) for h in hits}
        if len(ranges) > 1:
            raise AmbiguousFieldError(
                f"line {line}: field {qualified!r} is ambiguous across overlays; "
                "qualify with a layout name"
            )
        return hits[0]
    if len(parts) == 3:
        bufname, layname, fieldname = parts
        decl = program.buffers.get(bufname)
        if decl is None:
            raise UnknownFieldError(f"line {line}: unknown buffer {bufname!r}")
        for lay in decl.layouts:
            if lay.name == layname:
                for fname, off, length in lay.fields:
                    if fname == fieldname:
                        return FieldSlice(bufname, layname, fieldname, off, length)
                raise UnknownFieldError(f"line {line}: unknown field {qualified!r}")
        raise UnknownFieldError(f"line {line}: unknown layout {bufname}.{layname}")
    raise UnknownFieldError(f"line {line}: malformed reference {qualified!r}")


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_KEYWORDS = {
    "OPEN", "CLOSE", "READ", "MOVE", "WRITE", "IF", "ELSE", "END-IF", "PERFORM",
    "UNTIL", "END-PERFORM", "DISPLAY", "STOP", "GOBACK", "END-READ",
    "AT", "END", "INVALID", "KEY", "INTO", "TO", "RUN", "INPUT", "OUTPUT",
    "NOT", "AND", "OR",
}

_NAME_RE = re.compile(r"^[A-Za-z][A-Za-z0-9-]*(\.[A-Za-z][A-Za-z0-9-]*)*$")
_INT_RE = re.compile(r"^\d+$")


@dataclass(frozen=True)
class Token:
    text: str  # literal value for LIT tokens, verbatim otherwise
    kind: str  # "name" | "lit" | "int" | "punct"
    phys_line: int
    col: int
    had_period: bool
    line_start: bool


def _strip_comment(raw: str) -> tuple[str, bool]:
    """Remove a ``*>`` comment (respecting quotes); report an @reject pragma."""
    out = []
    i = 0
    in_quote = False
    comment = ""
    while i < len(raw):
        ch = raw[i]
        if ch == "'" and not in_quote:
            in_quote = True
        elif ch == "'" and in_quote:
            in_quote = False
        if not in_quote and raw.startswith("*>", i):
            comment = raw[i + 2 :].strip()
            break
        out.append(ch)
        i += 1
    return "".join(out), comment == "@reject"


def _tokenize_line(text: str, phys_line: int) -> list[Token]:
    tokens: list[Token] = []
    i = 0
    first = True
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        col = i + 1
        if ch == "'":
            j = text.find("'", i + 1)
            if j < 0:
                raise SyntaxErrorAt("unterminated literal", phys_line, col)
            tokens.append(Token(text[i + 1 : j], "lit", phys_line, col, False, first))
            i = j + 1
        elif ch == "=":
            tokens.append(Token("=", "punct", phys_line, col, False, first))
            i += 1
        else:
            j = i
            while j < len(text) and not text[j].isspace() and text[j] not in "='":
                j += 1
            word = text[i:j]
            had_period = False
            if word.endswith("."):
                word = word[:-1]
                had_period = True
            if not word:
                raise SyntaxErrorAt("stray period", phys_line, col)
            kind = "int" if _INT_RE.match(word) else "name"
            if kind == "name" and not _NAME_RE.match(word):
                raise SyntaxErrorAt(f"bad token {word!r}", phys_line, col)
            tokens.append(Token(word, kind, phys_line, col, had_period, first))
            i = j
        first = False
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _TokenStream:
    def __init__(self, tokens: list[Token], reject_lines: set[int], header_line: int):
        self.tokens = tokens
        self.pos = 0
        self.reject_lines = reject_lines
        self.header_line = header_line

    def peek(self) -> Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self) -> Token:
        tok = self.peek()
        if tok is None:
            last = self.tokens[-1] if self.tokens else None
            raise SyntaxErrorAt(
                "unexpected end of input", last.phys_line if last else 0, 0
            )
        self.pos += 1
        return tok

    def expect_kw(self, kw: str) -> Token:
        tok = self.next()
        if tok.kind != "name" or tok.text.upper() != kw:
            raise SyntaxErrorAt(f"expected {kw}, found {tok.text!r}", tok.phys_line, tok.col)
        return tok

    def at_kw(self, *kws: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == "name" and tok.text.upper() in kws

    def rel_line(self, tok: Token) -> int:
        return tok.phys_line - self.header_line


class Parser:
    def __init__(self, source: str):
        self.source = source

    def parse(self) -> Program:
        lines = self.source.splitlines()
        data_start = proc_start = None
        stripped_flags: list[tuple[str, bool]] = []
        for idx, raw in enumerate(lines):
            text, reject = _strip_comment(raw)
            stripped_flags.append((text, reject))
            upper = text.strip().upper().rstrip(".")
            if upper == "DATA DIVISION":
                data_start = idx
            elif upper == "PROCEDURE DIVISION":
                proc_start = idx
        if proc_start is None:
            raise SyntaxErrorAt("missing PROCEDURE DIVISION header", len(lines), 0)
        if data_start is None or data_start > proc_start:
            raise SyntaxErrorAt("missing DATA DIVISION header", 1, 0)

        data_lines = [lines[i] for i in range(data_start, proc_start)]
        buffers, files, tables = self._parse_data(
            [(stripped_flags[i][0], i + 1) for i in range(data_start + 1, proc_start)]
        )
        self.program = Program(
            buffers=buffers,
            files=files,
            tables=tables,
            main=[],
            paragraphs=[],
            source=self.source,
            data_lines=data_lines,
        )

        tokens: list[Token] = []
        reject_lines: set[int] = set()
        for idx in range(proc_start + 1, len(lines)):
            text, reject = stripped_flags[idx]
            if reject:
                reject_lines.add(idx + 1)
            tokens.extend(_tokenize_line(text, idx + 1))
        ts = _TokenStream(tokens, reject_lines, proc_start + 1)
        self._parse_procedure(ts)
        self._check_performs()
        return self.program

    # ---- data division ----

    def _parse_data(self, numbered_lines):
        buffers: dict[str, BufferDecl] = {}
        files: dict[str, str] = {}
        tables: dict[str, tuple[str, str]] = {}
        cur_buf: BufferDecl | None = None
        cur_layout: LayoutDecl | None = None

        def words(text):
            return [w.rstrip(".") for w in text.split()]

        for text, phys in numbered_lines:
            ws = words(text)
            if not ws:
                continue
            head = ws[0].upper()
            try:
                if head in ("INPUT-FILE", "OUTPUT-FILE"):
                    # INPUT-FILE <file> BUFFER <buf> LENGTH <n>
                    fname, kw1, bname, kw2, length = ws[1], ws[2].upper(), ws[3], ws[4].upper(), ws[5]
                    if kw1 != "BUFFER" or kw2 != "LENGTH":
                        raise IndexError
                    role = INPUT_FILE if head == "INPUT-FILE" else OUTPUT_FILE
                    cur_buf = BufferDecl(bname, role, int(length), [], file_name=fname)
                    cur_layout = None
                    self._add_buffer(buffers, cur_buf, phys)
                    if fname in files:
                        raise SyntaxErrorAt(f"duplicate file {fname!r}", phys)
                    files[fname] = bname
                elif head == "TABLE":
                    # TABLE <tab> BUFFER <buf> KEY <field> LENGTH <n>
                    tname, kw1, bname, kw2, keyf, kw3, length = (
                        ws[1], ws[2].upper(), ws[3], ws[4].upper(), ws[5], ws[6].upper(), ws[7],
                    )
                    if kw1 != "BUFFER" or kw2 != "KEY" or kw3 != "LENGTH":
                        raise IndexError
                    cur_buf = BufferDecl(bname, TABLE_ROW, int(length), [], key_field=keyf)
                    cur_layout = None
                    self._add_buffer(buffers, cur_buf, phys)
                    if tname in tables:
                        raise SyntaxErrorAt(f"duplicate table {tname!r}", phys)
                    tables[tname] = (bname, keyf)
                elif head == "WORKING":
                    # WORKING <name> LEN <n>
                    name, kw, length = ws[1], ws[2].upper(), ws[3]
                    if kw != "LEN":
                        raise IndexError
                    decl = BufferDecl(name, WORKING, int(length), [])
                    self._add_buffer(buffers, decl, phys)
                    cur_buf = None
                    cur_layout = None
                elif head == "LAYOUT":
                    if cur_buf is None:
                        raise SyntaxErrorAt("LAYOUT outside a buffer", phys)
                    cur_layout = LayoutDecl(ws[1], [])
                    if any(l.name == cur_layout.name for l in cur_buf.layouts):
                        raise SyntaxErrorAt(f"duplicate layout {ws[1]!r}", phys)
                    cur_buf.layouts.append(cur_layout)
                elif head == "FIELD":
                    # FIELD <name> AT <off> LEN <len>
                    if cur_layout is None or cur_buf is None:
                        raise SyntaxErrorAt("FIELD outside a layout", phys)
                    name, kw1, off, kw2, length = ws[1], ws[2].upper(), ws[3], ws[4].upper(), ws[5]
                    if kw1 != "AT" or kw2 != "LEN":
                        raise IndexError
                    off_i, len_i = int(off), int(length)
                    if len_i < 1 or off_i < 0:
                        raise SyntaxErrorAt(f"bad bounds for field {name!r}", phys)
                    if off_i + len_i > cur_buf.length:
                        raise SyntaxErrorAt(
                            f"field {name!r} exceeds buffer length {cur_buf.length}", phys
                        )
                    for fname, foff, flen in cur_layout.fields:
                        if fname == name:
                            raise SyntaxErrorAt(f"duplicate field {name!r}", phys)
                        if off_i < foff + flen and foff < off_i + len_i:
                            raise SyntaxErrorAt(
                                f"field {name!r} overlaps {fname!r} within one layout", phys
                            )
                    cur_layout.fields.append((name, off_i, len_i))
                else:
                    raise SyntaxErrorAt(f"cannot parse declaration {text.strip()!r}", phys)
            except (IndexError, ValueError) as exc:
                if isinstance(exc, SyntaxErrorAt):
                    raise
                raise SyntaxErrorAt(f"cannot parse declaration {text.strip()!r}", phys) from None

        for decl in buffers.values():
            if decl.role == TABLE_ROW and decl.key_field is not None:
                if not any(
                    f[0] == decl.key_field for lay in decl.layouts for f in lay.fields
                ):
                    raise SyntaxErrorAt(
                        f"table buffer {decl.name!r} lacks its key field {decl.key_field!r}", 0
                    )
        return buffers, files, tables

    @staticmethod
    def _add_buffer(buffers, decl, phys):
        if decl.name in buffers:
            raise SyntaxErrorAt(f"duplicate buffer {decl.name!r}", phys)
        buffers[decl.name] = decl

    # ---- procedure division ----

    def _parse_procedure(self, ts: _TokenStream):
        self.program.main = self._parse_stmts(ts, set())
        seen: set[str] = set()
        while ts.peek() is not None:
            tok = ts.next()
            if not (tok.had_period and tok.kind == "name" and tok.text.upper() not in _KEYWORDS):
                raise SyntaxErrorAt(
                    f"expected paragraph header, found {tok.text!r}", tok.phys_line, tok.col
                )
            if tok.text in seen:
                raise MiniLangError(f"duplicate paragraph {tok.text!r}")
            seen.add(tok.text)
            body = self._parse_stmts(ts, set())
            self.program.paragraphs.append((tok.text, body))

    def _parse_stmts(self, ts: _TokenStream, stop_kws: set[str]) -> list[Stmt]:
        out: list[Stmt] = []
        while True:
            tok = ts.peek()
            if tok is None:
                if stop_kws:
                    raise SyntaxErrorAt("unterminated block", ts.tokens[-1].phys_line)
                return out
            up = tok.text.upper() if tok.kind == "name" else ""
            if up in stop_kws:
                return out
            # Paragraph headers end the main statement list.
            if (
                not stop_kws
                and tok.kind == "name"
                and tok.had_period
                and tok.line_start
                and up not in _KEYWORDS
            ):
                return out
            out.append(self._parse_stmt(ts))

    def _reject(self, ts: _TokenStream, tok: Token) -> bool:
        return tok.phys_line in ts.reject_lines

    def _parse_stmt(self, ts: _TokenStream) -> Stmt:
        tok = ts.next()
        if tok.kind != "name":
            raise SyntaxErrorAt(f"expected a statement, found {tok.text!r}", tok.phys_line, tok.col)
        kw = tok.text.upper()
        line = ts.rel_line(tok)
        reject = self._reject(ts, tok)

        if kw == "OPEN":
            files = []
            while ts.at_kw("INPUT", "OUTPUT"):
                ts.next()
                files.append(self._name(ts))
            if not files:
                raise SyntaxErrorAt("OPEN needs INPUT/OUTPUT file names", tok.phys_line, tok.col)
            for f in files:
                self._require_file(f, tok)
            return Open(line, reject, files=files)

        if kw == "CLOSE":
            files = []
            while ts.peek() is not None and ts.peek().kind == "name" and ts.peek().text in self.program.files:
                files.append(ts.next().text)
            if not files:
                raise SyntaxErrorAt("CLOSE needs file names", tok.phys_line, tok.col)
            return Close(line, reject, files=files)

        if kw == "READ":
            target = self._name(ts)
            if target in self.program.tables:
                ts.expect_kw("INTO")
                into = self._name(ts)
                bufname, _ = self.program.tables[target]
                if into != bufname:
                    raise SyntaxErrorAt(
                        f"table {target!r} reads into {bufname!r}, not {into!r}",
                        tok.phys_line, tok.col,
                    )
                ts.expect_kw("KEY")
                key = self._ref(ts)
                _, keyf = self.program.tables[target]
                kslice = resolve_slice(self.program, f"{bufname}.{keyf}", ts.rel_line(tok))
                if key.slice.length != kslice.length:
                    raise SyntaxErrorAt(
                        f"lookup key {key.text!r} ({key.slice.length} bytes) does not match "
                        f"key field {keyf!r} of table {target!r} ({kslice.length} bytes)",
                        tok.phys_line, tok.col,
                    )
                invalid: list[Stmt] = []
                if ts.at_kw("INVALID"):
                    ts.next()
                    ts.expect_kw("KEY")
                    invalid = self._parse_stmts(ts, {"END-READ"})
                ts.expect_kw("END-READ")
                return ReadTable(line, reject, table=target, into=into, key=key, invalid=invalid)
            if target in self.program.files:
                at_end: list[Stmt] = []
                if ts.at_kw("AT"):
                    ts.next()
                    ts.expect_kw("END")
                    at_end = self._parse_stmts(ts, {"END-READ"})
                if ts.at_kw("END-READ"):
                    ts.next()
                return ReadFile(line, reject, file=target, at_end=at_end)
            raise SyntaxErrorAt(f"READ of unknown file or table {target!r}", tok.phys_line, tok.col)

        if kw == "MOVE":
            src = self._operand(ts)
            ts.expect_kw("TO")
            dst = self._ref(ts)
            self._check_width(src, dst, tok)
            return Move(line, reject, src=src, dst=dst)

        if kw == "WRITE":
            buf = self._name(ts)
            decl = self.program.buffers.get(buf)
            if decl is None or decl.role != OUTPUT_FILE:
                raise SyntaxErrorAt(f"WRITE target {buf!r} is not an output buffer", tok.phys_line, tok.col)
            return Write(line, reject, buffer=buf)

        if kw == "IF":
            cond = self._cond(ts)
            then = self._parse_stmts(ts, {"ELSE", "END-IF"})
            els: list[Stmt] = []
            if ts.at_kw("ELSE"):
                ts.next()
                els = self._parse_stmts(ts, {"END-IF"})
            ts.expect_kw("END-IF")
            return If(line, reject, cond=cond, then=then, els=els)

        if kw == "PERFORM":
            if ts.at_kw("UNTIL"):
                ts.next()
                cond = self._cond(ts)
                body = self._parse_stmts(ts, {"END-PERFORM"})
                ts.expect_kw("END-PERFORM")
                return PerformUntil(line, reject, cond=cond, body=body)
            target = self._name(ts)
            return PerformPara(line, reject, target=target)

        if kw == "DISPLAY":
            args: list[Operand] = [self._operand(ts)]
            while ts.peek() is not None and ts.peek().kind == "lit":
                args.append(self._operand(ts))
            return Display(line, reject, args=args)

        if kw == "STOP":
            ts.expect_kw("RUN")
            return Stop(line, reject)

        if kw == "GOBACK":
            return Stop(line, reject)

        raise SyntaxErrorAt(f"unknown statement {tok.text!r}", tok.phys_line, tok.col)

    # ---- small helpers ----

    def _name(self, ts: _TokenStream) -> str:
        tok = ts.next()
        if tok.kind != "name":
            raise SyntaxErrorAt(f"expected a name, found {tok.text!r}", tok.phys_line, tok.col)
        return tok.text

    def _require_file(self, fname: str, tok: Token):
        if fname not in self.program.files:
            raise SyntaxErrorAt(f"unknown file {fname!r}", tok.phys_line, tok.col)

    def _ref(self, ts: _TokenStream) -> Ref:
        tok = ts.next()
        if tok.kind != "name":
            raise SyntaxErrorAt(f"expected a reference, found {tok.text!r}", tok.phys_line, tok.col)
        fs = resolve_slice(self.program, tok.text, ts.rel_line(tok))
        return Ref(tok.text, fs)

    def _operand(self, ts: _TokenStream) -> Operand:
        tok = ts.peek()
        if tok is not None and tok.kind == "lit":
            ts.next()
            return Lit(tok.text)
        return self._ref(ts)

    def _check_width(self, src: Operand, dst: Ref, tok: Token):
        dlen = dst.slice.length
        slen = len(src.value) if isinstance(src, Lit) else src.slice.length
        if slen != dlen:
            raise SyntaxErrorAt(
                f"width mismatch moving {slen} bytes into {dst.text!r} ({dlen} bytes)",
                tok.phys_line, tok.col,
            )

    def _cond(self, ts: _TokenStream) -> Cond:
        atoms = [self._cond_atom(ts)]
        op = None
        while ts.at_kw("AND", "OR"):
            tok = ts.next()
            this = tok.text.upper()
            if op is not None and this != op:
                raise SyntaxErrorAt("mixing AND and OR is not supported", tok.phys_line, tok.col)
            op = this
            atoms.append(self._cond_atom(ts))
        if op is None:
            return Cond("atom", tuple(atoms))
        return Cond("and" if op == "AND" else "or", tuple(atoms))

    def _cond_atom(self, ts: _TokenStream) -> CondAtom:
        lhs = self._ref(ts)
        tok = ts.next()
        neg = False
        if tok.kind == "name" and tok.text.upper() == "NOT":
            neg = True
            tok = ts.next()
        if tok.text != "=":
            raise SyntaxErrorAt(f"expected '=', found {tok.text!r}", tok.phys_line, tok.col)
        rhs = self._operand(ts)
        rlen = len(rhs.value) if isinstance(rhs, Lit) else rhs.slice.length
        if rlen != lhs.slice.length:
            raise SyntaxErrorAt(
                f"width mismatch comparing {lhs.text!r} ({lhs.slice.length} bytes) "
                f"with {rlen} bytes", tok.phys_line, tok.col,
            )
        return CondAtom(lhs, "neq" if neg else "eq", rhs)

    # ---- whole-program checks ----

    def _check_performs(self):
        paras = {name: stmts for name, stmts in self.program.paragraphs}

        def targets(stmts) -> list[str]:
            out = []
            for s in stmts:
                if isinstance(s, PerformPara):
                    out.append(s.target)
                elif isinstance(s, If):
                    out += targets(s.then) + targets(s.els)
                elif isinstance(s, PerformUntil):
                    out += targets(s.body)
                elif isinstance(s, ReadFile):
                    out += targets(s.at_end)
                elif isinstance(s, ReadTable):
                    out += targets(s.invalid)
            return out

        for name in targets(self.program.main):
            if name not in paras:
                raise MiniLangError(f"unresolved PERFORM target {name!r}")
        graph = {name: targets(stmts) for name, stmts in paras.items()}
        for name, callees in graph.items():
            for c in callees:
                if c not in paras:
                    raise MiniLangError(f"unresolved PERFORM target {c!r}")

        # No recursive PERFORM chains, direct or transitive.
        state: dict[str, int] = {}

        def visit(n):
            state[n] = 1
            for c in graph.get(n, ()):
                if state.get(c) == 1:
                    raise MiniLangError(f"recursive PERFORM chain through {c!r}")
                if state.get(c) is None:
                    visit(c)
            state[n] = 2

        for n in graph:
            if state.get(n) is None:
                visit(n)


def parse_program(source: str) -> Program:
    return Parser(source).parse()


# ---------------------------------------------------------------------------
# Control-flow graph
# ---------------------------------------------------------------------------

# Edge labels.
FALL = "fall"
TRUE = "true"
FALSE = "false"
AT_END = "at-end"
NOT_AT_END = "not-at-end"
INVALID_KEY = "invalid-key"
FOUND = "found"
CALL = "call"
RETURN = "return"


@dataclass
class CfgNode:
    id: int
    kind: str
    line: int
    reject: bool = False
    stmt: Stmt | None = None
    cond: Cond | None = None
    file: str | None = None
    buffer: str | None = None
    table: str | None = None
    key: Ref | None = None

    def __repr__(self) -> str:
        return f"<{self.id}:{self.kind}@{self.line}>"


@dataclass
class CfgEdge:
    src: int
    dst: int
    label: str
    call_id: int | None = None


EXECUTABLE_KINDS = {
    "open", "close", "read", "table-read-key", "move", "write",
    "if-cond", "loop-cond", "display", "stop", "paragraph-call",
}


@dataclass
class Cfg:
    program: Program
    nodes: list[CfgNode]
    edges: list[CfgEdge]
    entry: int
    exit: int

    def __post_init__(self):
        self._out: dict[int, list[CfgEdge]] = {n.id: [] for n in self.nodes}
        self._in: dict[int, list[CfgEdge]] = {n.id: [] for n in self.nodes}
        for e in self.edges:
            self._out[e.src].append(e)
            self._in[e.dst].append(e)

    def node(self, node_id: int) -> CfgNode:
        return self.nodes[node_id]

    def out_edges(self, node_id: int) -> list[CfgEdge]:
        return self._out[node_id]

    def in_edges(self, node_id: int) -> list[CfgEdge]:
        return self._in[node_id]

    def executable_nodes(self) -> list[CfgNode]:
        return [n for n in self.nodes if n.kind in EXECUTABLE_KINDS]

    def nodes_on_line(self, line: int) -> list[CfgNode]:
        return [n for n in self.nodes if n.line == line and n.kind in EXECUTABLE_KINDS]

    def rpo(self) -> list[int]:
        """Reverse postorder from entry; unreached nodes appended by id."""
        seen: set[int] = set()
        post: list[int] = []

        def dfs(nid: int):
            seen.add(nid)
            for e in self._out[nid]:
                if e.dst not in seen:
                    dfs(e.dst)
            post.append(nid)

        dfs(self.entry)
        order = list(reversed(post))
        order.extend(n.id for n in self.nodes if n.id not in seen)
        return order

    def without_reject_out_edges(self) -> "Cfg":
        """A copy with all out-edges of reject-flagged nodes cut."""
        keep = [e for e in self.edges if not self.nodes[e.src].reject]
        return Cfg(self.program, self.nodes, keep, self.entry, self.exit)


class _CfgBuilder:
    def __init__(self, program: Program):
        self.program = program
        self.nodes: list[CfgNode] = []
        self.edges: list[CfgEdge] = []
        self.stops: list[int] = []
        self.calls: list[tuple[str, int, int]] = []  # (paragraph, call id, return id)

    def new_node(self, kind: str, line: int, **kw) -> CfgNode:
        node = CfgNode(id=len(self.nodes), kind=kind, line=line, **kw)
        self.nodes.append(node)
        return node

    def edge(self, src: int, dst: int, label: str, call_id: int | None = None):
        self.edges.append(CfgEdge(src, dst, label, call_id))

    def build_stmts(self, stmts: list[Stmt]):
        """Returns (head id or None, open tails as (node id, label) pairs)."""
        head = None
        tails: list[tuple[int, str]] = []
        for stmt in stmts:
            h, t = self.build_stmt(stmt)
            if h is None:
                continue
            if head is None:
                head = h
            for nid, lab in tails:
                self.edge(nid, h, lab)
            tails = t
        return head, tails

    def build_stmt(self, stmt: Stmt):
        if isinstance(stmt, Open):
            n = self.new_node("open", stmt.line, reject=stmt.reject, stmt=stmt)
            stmt.node_id = n.id
            return n.id, [(n.id, FALL)]
        if isinstance(stmt, Close):
            n = self.new_node("close", stmt.line, reject=stmt.reject, stmt=stmt)
            stmt.node_id = n.id
            return n.id, [(n.id, FALL)]
        if isinstance(stmt, Move):
            n = self.new_node("move", stmt.line, reject=stmt.reject, stmt=stmt)
            stmt.node_id = n.id
            return n.id, [(n.id, FALL)]
        if isinstance(stmt, Write):
            n = self.new_node("write", stmt.line, reject=stmt.reject, stmt=stmt, buffer=stmt.buffer)
            stmt.node_id = n.id
            return n.id, [(n.id, FALL)]
        if isinstance(stmt, Display):
            n = self.new_node("display", stmt.line, reject=stmt.reject, stmt=stmt)
            stmt.node_id = n.id
            return n.id, [(n.id, FALL)]
        if isinstance(stmt, Stop):
            n = self.new_node("stop", stmt.line, reject=stmt.reject, stmt=stmt)
            stmt.node_id = n.id
            self.stops.append(n.id)
            return n.id, []
        if isinstance(stmt, ReadFile):
            n = self.new_node("read", stmt.line, reject=stmt.reject, stmt=stmt, file=stmt.file)
            stmt.node_id = n.id
            tails = [(n.id, NOT_AT_END)]
            if stmt.at_end:
                h, t = self.build_stmts(stmt.at_end)
                self.edge(n.id, h, AT_END)
                tails.extend(t)
            else:
                tails.append((n.id, AT_END))
            return n.id, tails
        if isinstance(stmt, ReadTable):
            n = self.new_node(
                "table-read-key", stmt.line, reject=stmt.reject, stmt=stmt,
                table=stmt.table, buffer=stmt.into, key=stmt.key,
            )
            stmt.node_id = n.id
            tails = [(n.id, FOUND)]
            if stmt.invalid:
                h, t = self.build_stmts(stmt.invalid)
                self.edge(n.id, h, INVALID_KEY)
                tails.extend(t)
            else:
                tails.append((n.id, INVALID_KEY))
            return n.id, tails
        if isinstance(stmt, If):
            n = self.new_node("if-cond", stmt.line, reject=stmt.reject, stmt=stmt, cond=stmt.cond)
            stmt.node_id = n.id
            tails: list[tuple[int, str]] = []
            th, tt = self.build_stmts(stmt.then)
            if th is None:
                tails.append((n.id, TRUE))
            else:
                self.edge(n.id, th, TRUE)
                tails.extend(tt)
            eh, et = self.build_stmts(stmt.els)
            if eh is None:
                tails.append((n.id, FALSE))
            else:
                self.edge(n.id, eh, FALSE)
                tails.extend(et)
            return n.id, tails
        if isinstance(stmt, PerformUntil):
            n = self.new_node("loop-cond", stmt.line, reject=stmt.reject, stmt=stmt, cond=stmt.cond)
            stmt.node_id = n.id
            bh, bt = self.build_stmts(stmt.body)
            if bh is None:
                self.edge(n.id, n.id, FALSE)
            else:
                self.edge(n.id, bh, FALSE)
                for nid, lab in bt:
                    self.edge(nid, n.id, lab)
            return n.id, [(n.id, TRUE)]
        if isinstance(stmt, PerformPara):
            call = self.new_node("paragraph-call", stmt.line, reject=stmt.reject, stmt=stmt)
            stmt.node_id = call.id
            ret = self.new_node("paragraph-return", stmt.line, stmt=stmt)
            self.calls.append((stmt.target, call.id, ret.id))
            return call.id, [(ret.id, FALL)]
        raise MiniLangError(f"cannot build CFG for {stmt!r}")


def build_cfg(program: Program) -> Cfg:
    b = _CfgBuilder(program)
    entry = b.new_node("entry", 0)
    main_head, main_tails = b.build_stmts(program.main)

    para_graphs: dict[str, tuple[int | None, list[tuple[int, str]]]] = {}
    for name, stmts in program.paragraphs:
        para_graphs[name] = b.build_stmts(stmts)

    exit_node = b.new_node("exit", 0)
    if main_head is None:
        b.edge(entry.id, exit_node.id, FALL)
    else:
        b.edge(entry.id, main_head, FALL)
        for nid, lab in main_tails:
            b.edge(nid, exit_node.id, lab)
    for nid in b.stops:
        b.edge(nid, exit_node.id, FALL)
    for target, call_id, ret_id in b.calls:
        head, tails = para_graphs[target]
        if head is None:
            b.edge(call_id, ret_id, FALL)
        else:
            b.edge(call_id, head, CALL, call_id=call_id)
            for nid, lab in tails:
                b.edge(nid, ret_id, RETURN, call_id=call_id)
    return Cfg(program, b.nodes, b.edges, entry.id, exit_node.id)
