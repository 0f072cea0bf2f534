"""File-format conformance checks built on the lifted fixpoint.

Under-acceptance: a program that can reject a well-formed file.  Checked by
running the lifted analysis with the well-formed automaton and warning on
every (rejection point, file state) whose fact is non-bottom, because those
points should be unreachable on well-formed input.

Over-acceptance: a program that silently runs to completion on an
ill-formed file.  Checked by extending the well-formed automaton to a full
one, re-running with the transfer at rejection points replaced by constant
bottom (paths through rejections are blocked), and warning on every file
state that is not an original final state yet carries a non-bottom fact at
the exit of the main procedure.

Warnings count once per file state; contexts are listed as details.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .domains import Domain
from .formatspec import FormatSpec, InputAutomaton, extend_to_full
from .lifted import Solution, analyze
from .minilang import Cfg


@dataclass
class Warning:
    line: int
    node_id: int
    state: str
    fact: str
    kind: str

    def as_dict(self) -> dict:
        return {
            "line": self.line,
            "node": self.node_id,
            "state": self.state,
            "fact": self.fact,
            "kind": self.kind,
        }


@dataclass
class ConformanceReport:
    mode: str  # "under" | "over"
    automaton: str
    domain: str
    warnings: list[Warning] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    solution: Solution | None = None

    @property
    def warning_states(self) -> set[str]:
        return {w.state for w in self.warnings}

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "automaton": self.automaton,
            "domain": self.domain,
            "warning_count": len(self.warnings),
            "warnings": [w.as_dict() for w in self.warnings],
            "notes": list(self.notes),
        }

    def render_text(self) -> str:
        lines = [f"{self.mode}-acceptance check ({self.automaton}, {self.domain})"]
        for n in self.notes:
            lines.append(f"note: {n}")
        if not self.warnings:
            lines.append("no warnings")
        for w in self.warnings:
            lines.append(
                f"warning[{w.kind}] line {w.line} state {w.state}: {w.fact}"
            )
        return "\n".join(lines) + "\n"


def check_under_acceptance(
    cfg: Cfg, wellformed: InputAutomaton, spec: FormatSpec, domain: Domain, init=None
) -> ConformanceReport:
    report = ConformanceReport("under", wellformed.name, domain.name)
    reject_nodes = [n for n in cfg.nodes if n.reject]
    if not reject_nodes:
        report.notes.append(
            "no rejection points are marked (*> @reject); nothing to check"
        )
        return report
    sol = analyze(cfg, wellformed, spec, domain, init)
    report.solution = sol
    for node in reject_nodes:
        fact = sol.before(node.id)
        for q in sorted(fact, key=wellformed.state_index):
            report.warnings.append(
                Warning(node.line, node.id, q, domain.describe(fact[q]), "under-acceptance")
            )
    return report


def check_over_acceptance(
    cfg: Cfg, wellformed: InputAutomaton, spec: FormatSpec, domain: Domain, init=None
) -> ConformanceReport:
    full = extend_to_full(wellformed, sorted(spec.types))
    report = ConformanceReport("over", full.name, domain.name)
    if not any(n.reject for n in cfg.nodes):
        report.notes.append(
            "no rejection points are marked; every completing path counts"
        )
    sol = analyze(cfg, full, spec, domain, init, block_reject=True)
    report.solution = sol
    exit_fact = sol.before(cfg.exit)
    contexts = sol.contexts(cfg.exit)
    if len(contexts) > 1:
        report.notes.append(f"exit reached in {len(contexts)} call contexts (joined)")
    exit_node = cfg.node(cfg.exit)
    for q in sorted(exit_fact, key=full.state_index):
        if q in wellformed.finals:
            continue
        report.warnings.append(
            Warning(
                exit_node.line, cfg.exit, q, domain.describe(exit_fact[q]), "over-acceptance"
            )
        )
    return report
