import pytest

from ffa.conformance import check_over_acceptance, check_under_acceptance
from ffa.domains import ConstProp, make_domain
from ffa.formatspec import extend_to_full, record_run_states
from ffa.lifted import analyze
from ffa.minilang import build_cfg, parse_program
from ffa.oracle import ALL_FILES, concrete_exec, enumerate_files

from conftest import banking_universe, node_on_line


def test_running_example_no_under_acceptance(running, fig2a_spec):
    program, cfg = running
    report = check_under_acceptance(
        cfg, fig2a_spec.automatons["wellformed"], fig2a_spec, ConstProp(program)
    )
    assert report.mode == "under"
    assert report.warnings == []


def test_under_acceptance_flags_bad_check(underacc_variant, fig2a_spec):
    program, cfg = underacc_variant
    report = check_under_acceptance(
        cfg, fig2a_spec.automatons["wellformed"], fig2a_spec, ConstProp(program)
    )
    assert len(report.warnings) >= 1
    assert all(w.line == 23 for w in report.warnings)
    assert {w.state for w in report.warnings} == {"q_dh"}


def test_under_acceptance_no_reject_marks(trailer_variant, fig2a_spec):
    program, cfg = trailer_variant
    report = check_under_acceptance(
        cfg, fig2a_spec.automatons["wellformed"], fig2a_spec, ConstProp(program)
    )
    assert report.warnings == []
    assert any("no rejection points" in n for n in report.notes)


def test_under_acceptance_completeness_vs_oracle(underacc_variant, fig2a_spec):
    # the oracle finds a conforming file reaching the reject line; the check
    # must warn at that node
    program, cfg = underacc_variant
    auto = fig2a_spec.automatons["wellformed"]
    reject = node_on_line(cfg, 23, "display")
    hit = False
    for records in enumerate_files(auto, banking_universe(), 4, fig2a_spec):
        for t in concrete_exec(cfg, records):
            if reject.id in t.nodes:
                hit = True
                break
        if hit:
            break
    assert hit
    report = check_under_acceptance(cfg, auto, fig2a_spec, ConstProp(program))
    assert any(w.node_id == reject.id for w in report.warnings)


# ---------------------------------------------------------------------------
# over-acceptance
# ---------------------------------------------------------------------------


def test_trailer_variant_over_accepts(trailer_variant, fig2a_spec):
    program, cfg = trailer_variant
    report = check_over_acceptance(
        cfg, fig2a_spec.automatons["wellformed"], fig2a_spec, ConstProp(program)
    )
    assert len(report.warnings) >= 1
    assert "q_x" in report.warning_states


def test_intact_running_example_still_over_accepts(running, fig2a_spec):
    # the program never tracks whether a header was seen, so ill-formed
    # files of known record types complete silently
    program, cfg = running
    report = check_over_acceptance(
        cfg, fig2a_spec.automatons["wellformed"], fig2a_spec, ConstProp(program)
    )
    assert "q_x" in report.warning_states


def test_intact_subset_of_variant_states(running, trailer_variant, fig2a_spec):
    rp, rcfg = running
    vp, vcfg = trailer_variant
    auto = fig2a_spec.automatons["wellformed"]
    intact = check_over_acceptance(rcfg, auto, fig2a_spec, ConstProp(rp))
    variant = check_over_acceptance(vcfg, auto, fig2a_spec, ConstProp(vp))
    assert intact.warning_states <= variant.warning_states


def test_stop_before_read_warns_on_start_state(fig2a_spec):
    src = (
        "DATA DIVISION.\n"
        "INPUT-FILE in-file BUFFER in-rec LENGTH 16.\n"
        "PROCEDURE DIVISION.\n"
        "    STOP RUN\n"
    )
    program = parse_program(src)
    cfg = build_cfg(program)
    report = check_over_acceptance(
        cfg, fig2a_spec.automatons["wellformed"], fig2a_spec, ConstProp(program)
    )
    assert report.warning_states == {"q_s"}


def test_over_acceptance_completeness_vs_oracle(trailer_variant, fig2a_spec):
    # every ill-formed file (up to 3 records) that reaches exit without a
    # reject is covered by a warned state of the full automaton
    program, cfg = trailer_variant
    auto = fig2a_spec.automatons["wellformed"]
    full = extend_to_full(auto, sorted(fig2a_spec.types))
    report = check_over_acceptance(cfg, auto, fig2a_spec, ConstProp(program))
    warned = report.warning_states | set(auto.finals)
    universe = banking_universe(include_bad=True)
    checked = 0
    for records in enumerate_files(ALL_FILES, universe, 3):
        from ffa.formatspec import accepts_records

        if accepts_records(auto, list(records), fig2a_spec.types):
            continue  # well-formed: not an over-acceptance witness
        for t in concrete_exec(cfg, list(records)):
            if t.status in ("exit", "stop") and not t.hit_reject:
                end = record_run_states(full, list(records), fig2a_spec.types, with_na=True)
                eof_reach = {
                    dst
                    for src_, lab, dst in full.transitions
                    if src_ in end and lab == "eof"
                }
                covered = {q for q in end if q in report.warning_states} or {
                    q for q in eof_reach if q in report.warning_states
                }
                assert covered, f"uncovered ill-formed file {records!r}"
                checked += 1
    assert checked > 0


def test_blocking_equals_cutting_reject_out_edges(underacc_variant, fig2a_spec):
    program, cfg = underacc_variant
    auto = fig2a_spec.automatons["wellformed"]
    domain = ConstProp(program)
    blocked = analyze(cfg, auto, fig2a_spec, domain, block_reject=True)
    cut = analyze(cfg.without_reject_out_edges(), auto, fig2a_spec, domain)
    for node in cfg.nodes:
        assert blocked.before(node.id) == cut.before(node.id)


def test_reports_deterministic(trailer_variant, fig2a_spec):
    program, cfg = trailer_variant
    auto = fig2a_spec.automatons["wellformed"]
    a = check_over_acceptance(cfg, auto, fig2a_spec, ConstProp(program))
    b = check_over_acceptance(cfg, auto, fig2a_spec, ConstProp(program))
    assert a.as_dict() == b.as_dict()
    assert a.render_text() == b.render_text()
