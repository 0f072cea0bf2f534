"""File-format-aware static analysis for record-processing batch programs.

Lifts any join-semilattice dataflow domain over an input automaton whose
states classify the record prefix read so far, analyzing the program only
along format-feasible paths.  On top of the lifted fixpoint sit conformance
checking (under/over acceptance), criterion-driven program specialization,
and the exploded Program File State Graph.
"""

from .domains import ConstProp, Integrity, Product, ReachingDefs, Uninit, Unit, make_domain
from .formatspec import (
    InputAutomaton,
    check_refinement,
    constraint_implies,
    extend_to_full,
    parse_format_spec,
    single_state_full_automaton,
)
from .lifted import analyze, analyze_direct, compare_solution_precision
from .minilang import build_cfg, parse_program, resolve_slice
from .pfsg import analyze_on_pfsg, build_pfsg, compare_pfsg_precision, export_dot

__all__ = [
    "ConstProp", "Integrity", "Product", "ReachingDefs", "Uninit", "Unit",
    "make_domain", "InputAutomaton", "check_refinement", "constraint_implies",
    "extend_to_full", "parse_format_spec", "single_state_full_automaton",
    "analyze", "analyze_direct", "compare_solution_precision",
    "build_cfg", "parse_program", "resolve_slice",
    "analyze_on_pfsg", "build_pfsg", "compare_pfsg_precision", "export_dot",
]
