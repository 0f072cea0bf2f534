import pytest

from ffa.domains import ConstProp
from ffa.formatspec import check_refinement, parse_format_spec
from ffa.lifted import analyze
from ffa.minilang import If, Move, PerformUntil, build_cfg, parse_program
from ffa.oracle import concrete_exec, enumerate_files
from ffa.specializer import (
    SpecializeError,
    commonality_report,
    emit_source,
    find_unreachable,
    project,
    simplify,
    specialize,
)

from conftest import banking_universe, node_on_line


def lines_of(cfg, node_ids):
    return sorted({cfg.node(n).line for n in node_ids})


def test_same_only_marks_9_and_17(running, fig2a_spec):
    program, cfg = running
    dead = find_unreachable(
        cfg, fig2a_spec.automatons["same_only"], fig2a_spec, ConstProp(program)
    )
    assert lines_of(cfg, dead) == [9, 17]


def test_wellformed_marks_nothing(running, fig2a_spec):
    program, cfg = running
    dead = find_unreachable(
        cfg, fig2a_spec.automatons["wellformed"], fig2a_spec, ConstProp(program)
    )
    assert dead == set()


def test_empty_file_criterion_kills_loop_body():
    src = (
        "DATA DIVISION.\n"
        "INPUT-FILE m-file BUFFER m-rec LENGTH 4.\n"
        "    LAYOUT r.\n"
        "        FIELD t AT 0 LEN 4.\n"
        "WORKING e LEN 1.\n"
        "PROCEDURE DIVISION.\n"
        "    MOVE 'N' TO e\n"
        "    READ m-file AT END MOVE 'Y' TO e END-READ\n"
        "    PERFORM UNTIL e = 'Y'\n"
        "        DISPLAY 'rec'\n"
        "        READ m-file AT END MOVE 'Y' TO e END-READ\n"
        "    END-PERFORM\n"
        "    STOP RUN\n"
    )
    ffs = (
        "layout r length 4\n"
        "field t at 0 len 4\n"
        'type T layout r where t == "AAAA"\n'
        "automaton empty start q_s final q_e\n"
        "trans q_s -eof-> q_e\n"
        "primary_file m-rec\n"
    )
    program = parse_program(src)
    cfg = build_cfg(program)
    spec = parse_format_spec(ffs)
    dead = find_unreachable(cfg, spec.automatons["empty"], spec, ConstProp(program))
    # everything downstream of the first not-at-end edge is unreachable
    assert lines_of(cfg, dead) == [4, 5]


def test_project_drops_else_branches(running, fig2a_spec):
    program, cfg = running
    dead = find_unreachable(
        cfg, fig2a_spec.automatons["same_only"], fig2a_spec, ConstProp(program)
    )
    projected, notes = project(program, dead)
    loop = next(s for s in projected.main if isinstance(s, PerformUntil))
    if6 = loop.body[0].then[1]
    assert isinstance(if6, If) and if6.line == 6
    assert if6.then and not if6.els  # line 9 gone
    if14 = loop.body[1].then[1]
    assert isinstance(if14, If) and if14.line == 14
    assert if14.then and not if14.els  # line 17 gone
    # output reparses, and its CFG is the projection of the original
    text = emit_source(projected)
    reparsed = parse_program(text)
    recfg = build_cfg(reparsed)
    old_kinds = [
        (cfg.node(i).kind) for i in sorted({n.id for n in cfg.executable_nodes()} - dead)
    ]
    new_kinds = [n.kind for n in recfg.executable_nodes()]
    assert new_kinds == old_kinds


def test_project_empty_set_roundtrips(running):
    program, _ = running
    projected, _ = project(program, set())
    text = emit_source(projected)
    reparsed = parse_program(text)
    assert emit_source(reparsed) == text  # emission is a fixpoint


def test_project_drops_unperformed_paragraph(fig2a_spec):
    src = (
        "DATA DIVISION.\n"
        "INPUT-FILE in-file BUFFER in-rec LENGTH 16.\n"
        "    LAYOUT hdr.\n"
        "        FIELD typ AT 0 LEN 3.\n"
        "WORKING w LEN 1.\n"
        "PROCEDURE DIVISION.\n"
        "    READ in-file END-READ\n"
        "    IF in-rec.typ = 'ITM'\n"
        "        PERFORM handle\n"
        "    END-IF\n"
        "    STOP RUN\n"
        "handle.\n"
        "    MOVE 'x' TO w\n"
    )
    program = parse_program(src)
    cfg = build_cfg(program)
    # under same_only, the first record is SHdr: typ='HDR', so the ITM
    # branch and with it the paragraph die
    dead = find_unreachable(
        cfg, fig2a_spec.automatons["same_only"], fig2a_spec, ConstProp(program)
    )
    projected, notes = project(program, dead)
    assert projected.paragraphs == []
    assert any("removed" in n for n in notes)


# ---------------------------------------------------------------------------
# simplification
# ---------------------------------------------------------------------------


def test_simplify_same_only_pipeline(running, fig2a_spec):
    program, cfg = running
    auto = fig2a_spec.automatons["same_only"]
    result = specialize(program, cfg, auto, fig2a_spec, ConstProp(program))
    assert result.unreachable_lines == [9, 17]
    kinds = {(r.kind, r.line) for r in result.rewrites}
    assert ("unconditional-if", 6) in kinds
    assert ("unconditional-if", 14) in kinds
    assert ("dead-move", 15) in kinds
    text = result.simplified_source
    procedure = text.split("PROCEDURE DIVISION.")[1]
    assert "same-flag" not in procedure  # line 15 gone, nothing reads it
    assert "IF same-flag" not in procedure and "IF in-rec.src" not in procedure
    assert "MOVE in-rec.amt TO out-rec.amt" in procedure  # line 7, now unconditional
    assert "MOVE in-rec.pyr TO out-rec.pyr" in procedure  # line 13 kept, run unconditionally
    assert "'0000'" not in procedure  # line 9 projected away
    # the rejection check stays
    assert "@reject" in procedure


def test_simplify_untouched_program(running, fig2a_spec):
    program, _ = running
    simplified, rewrites = simplify(
        program, fig2a_spec.automatons["wellformed"], fig2a_spec
    )
    assert rewrites == []
    assert emit_source(simplified) == emit_source(program)


def test_simplify_chained_enablement(fig2a_spec):
    # removing one guard kills the last read of a flag, enabling the
    # dead-move removal on the next pass
    src = (
        "DATA DIVISION.\n"
        "INPUT-FILE in-file BUFFER in-rec LENGTH 16.\n"
        "    LAYOUT hdr.\n"
        "        FIELD typ AT 0 LEN 3.\n"
        "WORKING flag LEN 1.\n"
        "WORKING out LEN 1.\n"
        "PROCEDURE DIVISION.\n"
        "    MOVE 'A' TO flag\n"
        "    IF flag = 'A'\n"
        "        MOVE 'x' TO out\n"
        "    END-IF\n"
        "    DISPLAY out\n"
        "    STOP RUN\n"
    )
    program = parse_program(src)
    simplified, rewrites = simplify(
        program, fig2a_spec.automatons["wellformed"], fig2a_spec
    )
    kinds = [r.kind for r in rewrites]
    assert "unconditional-if" in kinds and "dead-move" in kinds
    text = emit_source(simplified)
    assert "IF flag" not in text and "MOVE 'A' TO flag" not in text
    assert "MOVE 'x' TO out" in text
    parse_program(text)


def test_simplify_skips_unprovable_guard(fig2a_spec):
    # else-branch empty but the guard is not provably true: must stay
    src = (
        "DATA DIVISION.\n"
        "INPUT-FILE in-file BUFFER in-rec LENGTH 16.\n"
        "    LAYOUT hdr.\n"
        "        FIELD typ AT 0 LEN 3.\n"
        "WORKING w LEN 1.\n"
        "PROCEDURE DIVISION.\n"
        "    READ in-file END-READ\n"
        "    IF in-rec.typ = 'ITM'\n"
        "        DISPLAY 'item'\n"
        "    END-IF\n"
        "    STOP RUN\n"
    )
    program = parse_program(src)
    simplified, rewrites = simplify(
        program, fig2a_spec.automatons["wellformed"], fig2a_spec
    )
    assert rewrites == []
    assert "IF in-rec.typ = 'ITM'" in emit_source(simplified)


# ---------------------------------------------------------------------------
# soundness and behavior preservation (oracle-backed)
# ---------------------------------------------------------------------------


def test_unreachable_never_visited_by_oracle(running, fig2a_spec):
    program, cfg = running
    auto = fig2a_spec.automatons["same_only"]
    dead = find_unreachable(cfg, auto, fig2a_spec, ConstProp(program))
    for records in enumerate_files(auto, banking_universe(), 4, fig2a_spec):
        for t in concrete_exec(cfg, list(records)):
            assert not (set(t.nodes) & dead)


def test_behavior_preserved_on_criterion_files(running, fig2a_spec):
    program, cfg = running
    auto = fig2a_spec.automatons["same_only"]
    result = specialize(program, cfg, auto, fig2a_spec, ConstProp(program))
    simplified = parse_program(result.simplified_source)
    scfg = build_cfg(simplified)
    # live storage = whatever the simplified program still references
    live_buffers = set()
    for node in scfg.executable_nodes():
        from ffa.domains import Unit

        u = Unit(simplified)
        for k in u.written_keys(node) + u.used_keys(node):
            live_buffers.add(k.buffer)
    assert "same-flag" not in live_buffers
    for records in enumerate_files(auto, banking_universe(), 4, fig2a_spec):
        t0 = concrete_exec(cfg, list(records))
        t1 = concrete_exec(scfg, list(records))
        assert len(t0) == len(t1) == 1
        assert t0[0].writes == t1[0].writes
        for buf, content in t1[0].final_memory.items():
            if buf in live_buffers:
                assert t0[0].final_memory[buf] == content


def test_monotone_in_refinement(running, fig2a_spec):
    program, cfg = running
    cp = ConstProp(program)
    assert check_refinement(
        fig2a_spec.automatons["wellformed"],
        fig2a_spec.automatons["same_only"],
        fig2a_spec.types,
    ).holds
    d_well = find_unreachable(cfg, fig2a_spec.automatons["wellformed"], fig2a_spec, cp)
    d_same = find_unreachable(cfg, fig2a_spec.automatons["same_only"], fig2a_spec, cp)
    assert d_well <= d_same


def test_commonality_report(running, fig2a_spec):
    program, cfg = running
    cp = ConstProp(program)
    r1 = specialize(program, cfg, fig2a_spec.automatons["wellformed"], fig2a_spec, cp)
    r2 = specialize(program, cfg, fig2a_spec.automatons["same_only"], fig2a_spec, cp)
    rep = commonality_report([r1, r2])
    common = rep["common_nodes"]
    by_name = {c["criterion"]: c for c in rep["criteria"]}
    assert by_name["same_only"]["criterion_specific_nodes"] == 0
    assert by_name["wellformed"]["criterion_specific_nodes"] == 2  # lines 9 and 17
    assert common == by_name["same_only"]["retained_nodes"]
