import pytest

from ffa.domains import ConstProp, DomainError, Product, ReachingDefs, Uninit, Unit
from ffa.lifted import analyze, analyze_direct
from ffa.minilang import resolve_slice
from ffa.oracle import concrete_exec, enumerate_files
from ffa.pfsg import (
    PfsgNode,
    analyze_on_pfsg,
    build_pfsg,
    compare_pfsg_precision,
    export_dot,
    export_json,
    has_line_path,
    lifts_trace,
)

from conftest import banking_universe, node_on_line


@pytest.fixture(scope="module")
def cp_pfsg(running, fig2a_spec):
    program, cfg = running
    auto = fig2a_spec.automatons["wellformed"]
    sol = analyze(cfg, auto, fig2a_spec, ConstProp(program))
    return build_pfsg(cfg, auto, sol)


@pytest.fixture(scope="module")
def unit_pfsg(running, fig2a_spec):
    program, cfg = running
    auto = fig2a_spec.automatons["wellformed"]
    sol = analyze(cfg, auto, fig2a_spec, Unit(program))
    return build_pfsg(cfg, auto, sol)


def edge_set(pfsg):
    cfg = pfsg.cfg
    return {
        (cfg.node(a).line, qa, cfg.node(b).line, qb)
        for (a, qa, b, qb) in pfsg.edge_pairs()
    }


def test_read2_fans_out_to_header_states(running, cp_pfsg):
    _, cfg = running
    read2 = node_on_line(cfg, 2, "read")
    succs = {
        (e.dst.cfg_node, e.dst.state, e.sigma)
        for e in cp_pfsg.out_edges(PfsgNode(read2.id, "q_s"))
    }
    loop = node_on_line(cfg, 3, "loop-cond")
    assert succs == {(loop.id, "q_sh", "SHdr"), (loop.id, "q_dh", "DHdr")}


def test_elided_true_edge_at_line4(running, cp_pfsg):
    edges = edge_set(cp_pfsg)
    assert (4, "q_sh", 5, "q_sh") not in edges
    assert (4, "q_dh", 5, "q_dh") not in edges
    assert (4, "q_i", 5, "q_i") in edges
    assert (4, "q_sh", 12, "q_sh") in edges  # only the false edge survives


def test_no_consecutive_1_through_6_path(cp_pfsg):
    assert not has_line_path(cp_pfsg, [1, 2, 3, 4, 5, 6])
    # sanity: the prefix 1..4 does exist
    assert has_line_path(cp_pfsg, [1, 2, 3, 4])


def test_unit_pfsg_keeps_the_infeasible_edge(running, unit_pfsg):
    edges = edge_set(unit_pfsg)
    assert (4, "q_sh", 5, "q_sh") in edges
    assert has_line_path(unit_pfsg, [1, 2, 3, 4, 5, 6])


def test_pfsg_precision_ordering(cp_pfsg, unit_pfsg):
    assert compare_pfsg_precision(cp_pfsg, unit_pfsg)
    assert not compare_pfsg_precision(unit_pfsg, cp_pfsg)
    assert compare_pfsg_precision(cp_pfsg, cp_pfsg)


def test_every_pfsg_edge_projects_to_cfg_edge(running, cp_pfsg, unit_pfsg):
    _, cfg = running
    cfg_edges = {(e.src, e.dst) for e in cfg.edges}
    for p in (cp_pfsg, unit_pfsg):
        for e in p.edges:
            assert (e.src.cfg_node, e.dst.cfg_node) in cfg_edges


def test_node_count_bounded(running, cp_pfsg, fig2a_spec):
    _, cfg = running
    bound = len(cfg.nodes) * len(fig2a_spec.automatons["wellformed"].states)
    assert len(cp_pfsg.nodes) <= bound
    assert cp_pfsg.entry == PfsgNode(cfg.entry, "q_s")


def test_trace_paths_lift_into_pfsg(running, cp_pfsg, fig2a_spec):
    _, cfg = running
    auto = fig2a_spec.automatons["wellformed"]
    count = 0
    for records in enumerate_files(auto, banking_universe(), 4, fig2a_spec):
        for t in concrete_exec(cfg, list(records)):
            assert lifts_trace(cp_pfsg, list(t.nodes)), records
            count += 1
    assert count > 0


# ---------------------------------------------------------------------------
# analyses on the PFSG
# ---------------------------------------------------------------------------


def test_uninit_on_pfsg_same_flag_initialized(running, cp_pfsg):
    program, cfg = running
    same = resolve_slice(program, "same-flag").key
    psol = analyze_on_pfsg(cp_pfsg, Uninit(program))
    copies = cp_pfsg.nodes_on_line(6)
    assert copies  # line 6 exists in the exploded graph
    for n in copies:
        fact = psol.at(n)
        assert fact is not None
        assert same not in fact


def test_uninit_on_raw_cfg_says_possibly_uninit(running, fig2a_spec):
    program, cfg = running
    same = resolve_slice(program, "same-flag").key
    direct = analyze_direct(cfg, fig2a_spec, Uninit(program))
    node = node_on_line(cfg, 6, "if-cond")
    assert same in direct.before(node.id)


def test_cp_on_pfsg_line25_constants(running, cp_pfsg):
    program, cfg = running
    same = resolve_slice(program, "same-flag").key
    psol = analyze_on_pfsg(cp_pfsg, ConstProp(program))
    read25 = node_on_line(cfg, 25, "read")
    by_state = {
        n.state: psol.at(n)
        for n in cp_pfsg.nodes_on_line(25)
        if n.cfg_node == read25.id and psol.at(n) is not None
    }
    assert by_state["q_sh"][same] == "S"
    assert by_state["q_dh"][same] == "D"
    assert same not in by_state["q_i"]
    assert same not in by_state["q_t"]


def test_corollary_flat_is_at_least_as_precise(running, fig2a_spec, cp_pfsg):
    program, cfg = running
    for domain_cls in (Uninit, ReachingDefs):
        domain = domain_cls(program)
        psol = analyze_on_pfsg(cp_pfsg, domain)
        direct = analyze_direct(cfg, fig2a_spec, domain_cls(program))
        for node in cfg.nodes:
            assert domain.leq(psol.flat(node.id), direct.before(node.id)), node


def test_backward_rd_runs_on_pfsg(running, cp_pfsg):
    program, cfg = running
    rd = ReachingDefs(program)
    psol = analyze_on_pfsg(cp_pfsg, rd, direction="backward")
    same = resolve_slice(program, "same-flag").key
    if6 = node_on_line(cfg, 6, "if-cond")
    # the use of same-flag at line 6 is alive before the line-25 read in the
    # header column (the next item is tested at 6 with no def in between)
    read25 = node_on_line(cfg, 25, "read")
    fact = psol.at(PfsgNode(read25.id, "q_sh"))
    assert fact is not None and (same, if6.id) in fact
    # but the defining move at line 15 kills it in its own before-point
    move15 = node_on_line(cfg, 15, "move")
    fact15 = psol.at(PfsgNode(move15.id, "q_sh"))
    assert fact15 is not None and (same, if6.id) not in fact15


def test_backward_unsupported_domains_error(running, cp_pfsg):
    program, _ = running
    with pytest.raises(DomainError, match="backward"):
        analyze_on_pfsg(cp_pfsg, ConstProp(program), direction="backward")
    with pytest.raises(DomainError, match="direction"):
        analyze_on_pfsg(cp_pfsg, ConstProp(program), direction="sideways")


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------


def test_export_dot_structure(cp_pfsg):
    dot = export_dot(cp_pfsg)
    assert dot.startswith("digraph pfsg {")
    assert f"// nodes={len(cp_pfsg.nodes)} edges={len(cp_pfsg.edges)}" in dot
    for q in ("q_s", "q_sh", "q_dh", "q_i", "q_t", "q_e"):
        assert f'label="{q}";' in dot
    assert '"(2,q_s)" -> "(3,q_sh)" [label="SHdr"];' in dot


def test_export_dot_deterministic(running, fig2a_spec):
    program, cfg = running
    auto = fig2a_spec.automatons["wellformed"]
    sols = [analyze(cfg, auto, fig2a_spec, ConstProp(program)) for _ in range(2)]
    dots = [export_dot(build_pfsg(cfg, auto, s)) for s in sols]
    assert dots[0] == dots[1]


def test_export_json_counts(cp_pfsg):
    doc = export_json(cp_pfsg)
    assert doc["node_count"] == len(cp_pfsg.nodes)
    assert doc["edge_count"] == len(cp_pfsg.edges)
    assert doc["entry"][1] == "q_s"
    sigmas = {e["sigma"] for e in doc["edges"] if e["sigma"]}
    assert "SHdr" in sigmas and "eof" in sigmas


def test_empty_program_pfsg(fig2a_spec):
    from ffa.minilang import build_cfg, parse_program

    program = parse_program(
        "DATA DIVISION.\n"
        "INPUT-FILE in-file BUFFER in-rec LENGTH 16.\n"
        "PROCEDURE DIVISION.\n"
    )
    cfg = build_cfg(program)
    auto = fig2a_spec.automatons["wellformed"]
    sol = analyze(cfg, auto, fig2a_spec, ConstProp(program))
    p = build_pfsg(cfg, auto, sol)
    assert p.entry in p.nodes
    dot = export_dot(p)
    assert "entry" in dot
