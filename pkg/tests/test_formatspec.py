import pytest

from ffa.formatspec import (
    EOF,
    NA,
    Atom,
    FormatSpecError,
    InputAutomaton,
    check_refinement,
    constraint_implies,
    extend_to_full,
    parse_format_spec,
    record_of_type,
    record_types_of,
    single_state_full_automaton,
    states_after,
    type_sequence_accepted,
)

from conftest import load_spec


def test_parse_fig2a(fig2a_spec):
    spec = fig2a_spec
    assert set(spec.types) == {"SHdr", "DHdr", "Itm", "Trl"}
    auto = spec.automatons["wellformed"]
    assert set(auto.states) == {"q_s", "q_sh", "q_dh", "q_i", "q_t", "q_e"}
    assert auto.start == "q_s"
    assert auto.finals == {"q_e"}
    assert len(auto.transitions) == 9
    assert spec.primary_buffer == "in-rec"
    assert spec.tables == ()


def test_eof_edge_to_nonfinal_rejected():
    with pytest.raises(FormatSpecError, match="eof"):
        parse_format_spec(
            "layout l length 3\n"
            "field f at 0 len 3\n"
            'type T layout l where f == "abc"\n'
            "automaton a start q0 final qf\n"
            "trans q0 -eof-> q1\n"
            "trans q1 -T-> qf\n"
        )


def test_two_state_empty_file_automaton():
    spec = parse_format_spec(
        "layout l length 3\n"
        "field f at 0 len 3\n"
        'type T layout l where f == "abc"\n'
        "automaton a start q_s final q_e\n"
        "trans q_s -eof-> q_e\n"
    )
    auto = spec.automatons["a"]
    assert type_sequence_accepted(auto, [], known_types={"T"})
    assert not type_sequence_accepted(auto, ["T"], known_types={"T"})


def test_dead_state_rejected():
    with pytest.raises(FormatSpecError, match="dead"):
        parse_format_spec(
            "layout l length 3\n"
            "field f at 0 len 3\n"
            'type T layout l where f == "abc"\n'
            "automaton a start q0 final qf\n"
            "trans q0 -eof-> qf\n"
            "trans q1 -T-> q1\n"
        )


def test_unsatisfiable_constraint_rejected():
    with pytest.raises(FormatSpecError, match="unsatisfiable"):
        parse_format_spec(
            "layout l length 6\n"
            "field f at 0 len 3\n"
            'type T layout l where f == "abc" and f == "xyz"\n'
            "automaton a start q0 final qf\n"
            "trans q0 -T-> q1\n"
            "trans q1 -eof-> qf\n"
        )


def test_mixed_incoming_labels_warn_not_error():
    spec = parse_format_spec(
        "layout l length 3\n"
        "field f at 0 len 3\n"
        'type A layout l where f == "aaa"\n'
        'type B layout l where f == "bbb"\n'
        "automaton m start q0 final qf\n"
        "trans q0 -A-> q1\n"
        "trans q0 -B-> q1\n"
        "trans q1 -eof-> qf\n"
    )
    assert any("differing types" in w for w in spec.warnings)


# -- record/type matching -------------------------------------------------

HDR_SAME = b"HDR10205" + b"9000" + b"SAME"
HDR_DIFF = b"HDR20221" + b"6000" + b"DIFF"
ITM = b"ITM10201" + b"3000" + b"    "


def test_record_of_type(fig2a_spec):
    types = fig2a_spec.types
    assert record_of_type(HDR_SAME, types["SHdr"])
    assert not record_of_type(HDR_SAME, types["DHdr"])
    assert record_of_type(ITM, types["Itm"])
    assert not record_of_type(HDR_SAME[:8], types["SHdr"])  # wrong length


def test_empty_constraint_matches_on_length():
    spec = parse_format_spec(
        "layout l length 4\n"
        "field f at 0 len 4\n"
        "type Any layout l\n"
        "automaton a start q0 final qf\n"
        "trans q0 -Any-> q1\n"
        "trans q1 -eof-> qf\n"
    )
    assert record_of_type(b"zzzz", spec.types["Any"])
    assert record_types_of(b"zz", spec.types) == []


def test_table_atoms_oracle_mode(integrity_spec):
    itm_in = b"ITM10201" + b"3000" + b"    "
    itm_out = b"ITM99999" + b"3000" + b"    "
    t = integrity_spec.types["Itm"]
    # without a snapshot, table atoms are treated satisfied
    assert record_of_type(itm_out, t)
    tables = {"accounts": {"10201"}}
    assert record_of_type(itm_in, t, tables)
    assert not record_of_type(itm_out, t, tables)
    assert integrity_spec.tables == ("accounts",)


# -- language operations ---------------------------------------------------

def test_type_sequence_accepted(fig2a_spec):
    auto = fig2a_spec.automatons["wellformed"]
    seq = "SHdr Itm Itm Itm Trl DHdr Itm Itm Trl".split()
    assert type_sequence_accepted(auto, seq)
    assert not type_sequence_accepted(auto, [])
    assert not type_sequence_accepted(auto, ["Itm"])
    with pytest.raises(FormatSpecError, match="unknown"):
        type_sequence_accepted(auto, ["Nope"])


def test_states_after(fig2a_spec):
    auto = fig2a_spec.automatons["wellformed"]
    assert states_after(auto, ["SHdr"]) == {"q_sh"}
    assert states_after(auto, []) == {"q_s"}
    assert states_after(auto, ["SHdr", "Trl"]) == set()


# -- full-automaton extension ----------------------------------------------

def test_extend_to_full_counts(fig2a_spec):
    auto = fig2a_spec.automatons["wellformed"]
    full = extend_to_full(auto, sorted(fig2a_spec.types))
    assert len(full.states) == 8  # six originals plus sink and new final
    assert "q_y" in full.states and "q_x" in full.states
    assert full.finals == {"q_e", "q_x"}
    full.validate(set(fig2a_spec.types), allow_na=True)
    # every non-final state now has every type and an eof edge
    alphabet = set(fig2a_spec.types) | {NA}
    for q in full.non_finals():
        labels = {lab for lab, _ in full.out_edges(q)}
        assert alphabet <= labels
        assert EOF in labels


def test_extend_total_automaton_prunes_sink():
    # One state already total over T and NA cannot feed the sink.
    trans = [("q0", t, "q0") for t in ["T", NA]] + [("q0", EOF, "qf")]
    auto = InputAutomaton("total", ("q0", "qf"), tuple(trans), "q0", frozenset({"qf"}))
    full = extend_to_full(auto, ["T"])
    assert "q_y" not in full.states
    assert "q_x" in full.states


def test_extend_single_state():
    auto = InputAutomaton(
        "empty", ("q_s", "q_e"), (("q_s", EOF, "q_e"),), "q_s", frozenset({"q_e"})
    )
    full = extend_to_full(auto, ["T"])
    # the sink absorbs every record
    assert ("q_s", "T", "q_y") in full.transitions
    assert ("q_y", "T", "q_y") in full.transitions
    assert ("q_y", NA, "q_y") in full.transitions
    assert ("q_y", EOF, "q_x") in full.transitions


def test_full_accepts_everything(fig2a_spec):
    auto = fig2a_spec.automatons["wellformed"]
    full = extend_to_full(auto, sorted(fig2a_spec.types))
    import itertools

    names = sorted(fig2a_spec.types) + [NA]
    known = set(names)
    for k in range(0, 4):
        for seq in itertools.product(names, repeat=k):
            assert type_sequence_accepted(full, list(seq), known_types=known)


def test_full_preserves_language(fig2a_spec):
    auto = fig2a_spec.automatons["wellformed"]
    full = extend_to_full(auto, sorted(fig2a_spec.types))
    import itertools

    names = sorted(fig2a_spec.types)
    originals = set(auto.states)
    eof_sources = {s for s, lab, _ in auto.transitions if lab == EOF}
    for k in range(0, 5):
        for seq in itertools.product(names, repeat=k):
            accepted = type_sequence_accepted(auto, list(seq))
            # restricted to original states, the full automaton agrees
            reach = states_after(full, list(seq)) & originals
            assert (bool(reach & eof_sources)) == accepted


def test_single_state_full_automaton():
    auto = single_state_full_automaton(["A", "B"])
    assert auto.states == ("q0", "q_f")
    assert type_sequence_accepted(auto, ["A", "B", "A"], known_types={"A", "B"})
    assert type_sequence_accepted(auto, [], known_types={"A", "B"})


# -- constraint implication -------------------------------------------------

def eq(f, v):
    return Atom("eq", f, v)


def neq(f, v):
    return Atom("neq", f, v)


def test_constraint_implies():
    shdr = (eq("typ", "HDR"), eq("src", "SAME"))
    hdr = (eq("typ", "HDR"),)
    assert constraint_implies(shdr, hdr)
    assert not constraint_implies(hdr, shdr)
    assert constraint_implies(hdr, (neq("typ", "ITM"),))
    assert not constraint_implies(hdr, (neq("typ", "HDR"),))
    tab = (Atom("in_table", "rcv", "accounts"),)
    assert constraint_implies(tab, tab)
    assert not constraint_implies(hdr, tab)


def test_constraint_implies_is_sound_on_concrete_records(fig2a_spec):
    # whenever implication claims yes, every record satisfying c2 satisfies c1
    layout = fig2a_spec.layouts["hdr"]
    from ffa.formatspec import RecordType
    from ffa.oracle import record_universe

    universe = record_universe(
        layout, {"typ": ["HDR", "ITM", "TRL"], "src": ["SAME", "DIFF", "XXXX"]}
    )
    candidates = [
        (eq("typ", "HDR"),),
        (eq("typ", "HDR"), eq("src", "SAME")),
        (neq("typ", "ITM"),),
        (eq("src", "DIFF"),),
        (neq("src", "SAME"), eq("typ", "TRL")),
    ]
    for c2 in candidates:
        for c1 in candidates:
            if constraint_implies(c2, c1):
                t2 = RecordType("c2", layout, c2)
                t1 = RecordType("c1", layout, c1)
                for rec in universe:
                    if record_of_type(rec, t2):
                        assert record_of_type(rec, t1)


# -- refinement -------------------------------------------------------------

def test_refinement_same_only(fig2a_spec):
    s1 = fig2a_spec.automatons["wellformed"]
    s2 = fig2a_spec.automatons["same_only"]
    res = check_refinement(s1, s2, fig2a_spec.types)
    assert res.holds
    assert res.finals_map_to_finals
    assert res.mapping["q_s"] == "q_s"
    assert res.mapping["q_sh"] == "q_sh"


def test_refinement_identity(fig2a_spec):
    s1 = fig2a_spec.automatons["wellformed"]
    ident = {q: q for q in s1.states}
    res = check_refinement(s1, s1, fig2a_spec.types, ident)
    assert res.holds


def test_refinement_split_items(fig2a_spec):
    s1 = fig2a_spec.automatons["wellformed"]
    s2 = fig2a_spec.automatons["split_items"]
    res = check_refinement(s1, s2, fig2a_spec.types)
    assert res.holds
    assert res.mapping["q_i1"] == "q_i"
    assert res.mapping["q_i2"] == "q_i"


def test_refinement_by_constraint_implication():
    spec = load_spec("refinement.ffs")
    s1 = spec.automatons["generic"]
    s2 = spec.automatons["wellformed"]
    res = check_refinement(s1, s2, spec.types)
    assert res.holds
    assert res.mapping["q_sh"] == "q_h"
    assert res.mapping["q_dh"] == "q_h"
    # and not the other way: Hdr does not imply SHdr
    back = check_refinement(s2, s1, spec.types)
    assert not back.holds


def test_refinement_counterexample(fig2a_spec):
    s1 = fig2a_spec.automatons["wellformed"]
    bad = InputAutomaton(
        "bad",
        s1.states,
        s1.transitions + (("q_s", "Trl", "q_t"),),
        s1.start,
        s1.finals,
    )
    res = check_refinement(s1, bad, fig2a_spec.types)
    assert not res.holds
    assert res.witness is not None


def test_refinement_implies_language_inclusion(fig2a_spec):
    import itertools

    s1 = fig2a_spec.automatons["wellformed"]
    s2 = fig2a_spec.automatons["same_only"]
    assert check_refinement(s1, s2, fig2a_spec.types).holds
    names = sorted(fig2a_spec.types)
    known = set(names)
    for k in range(0, 5):
        for seq in itertools.product(names, repeat=k):
            if type_sequence_accepted(s2, list(seq), known_types=known):
                assert type_sequence_accepted(s1, list(seq), known_types=known)
