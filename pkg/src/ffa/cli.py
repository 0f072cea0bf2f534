"""Command-line front end: ffa <command> --program p.mcbl --format f.ffs ...

Commands map one-to-one onto the library: analyze, conformance, specialize,
pfsg, verify, refine.  Reports are deterministic files (or stdout), which
keeps them golden-testable.  Exit codes: 0 clean, 1 findings, 2 usage or
input error, 3 internal invariant failure.  Set FFA_LOG=debug for
diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import conformance as conf
from . import oracle as orc
from . import pfsg as pfsgmod
from . import specializer as specmod
from .domains import DomainError, make_domain
from .formatspec import FormatSpecError, check_refinement, parse_format_spec
from .lifted import EngineError, analyze, render_tables
from .minilang import MiniLangError, build_cfg, parse_program

log = logging.getLogger("ffa")

EXIT_CLEAN = 0
EXIT_FINDINGS = 1
EXIT_INPUT = 2
EXIT_INTERNAL = 3


class InputError(ValueError):
    pass


def _load(args):
    with open(args.program, encoding="utf-8") as fh:
        program = parse_program(fh.read())
    with open(args.format, encoding="utf-8") as fh:
        spec = parse_format_spec(fh.read())
    for w in spec.warnings:
        log.warning("%s", w)
    cfg = build_cfg(program)
    return program, cfg, spec


def _automaton(spec, name):
    if name not in spec.automatons:
        raise InputError(
            f"unknown automaton {name!r}; spec declares {sorted(spec.automatons)}"
        )
    return spec.automatons[name]


def _emit(args, text: str):
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_json(args, payload: dict):
    _emit(args, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_analyze(args) -> int:
    program, cfg, spec = _load(args)
    automaton = _automaton(spec, args.automaton)
    domain = make_domain(args.domain, program)
    sol = analyze(cfg, automaton, spec, domain)
    if args.emit == "json":
        _emit_json(args, sol.to_json_dict())
    else:
        _emit(args, render_tables(sol))
    return EXIT_CLEAN


def cmd_conformance(args) -> int:
    program, cfg, spec = _load(args)
    automaton = _automaton(spec, args.automaton)
    domain = make_domain(args.domain, program)
    if args.mode == "under":
        report = conf.check_under_acceptance(cfg, automaton, spec, domain)
    else:
        report = conf.check_over_acceptance(cfg, automaton, spec, domain)
    if args.emit == "json":
        _emit_json(args, report.as_dict())
    else:
        _emit(args, report.render_text())
    return EXIT_FINDINGS if report.warnings else EXIT_CLEAN


def cmd_specialize(args) -> int:
    program, cfg, spec = _load(args)
    names = [n.strip() for n in args.criteria.split(",") if n.strip()]
    if not names:
        raise InputError("--criteria needs at least one automaton name")
    domain = make_domain(args.domain, program)
    results = []
    for name in names:
        automaton = _automaton(spec, name)
        results.append(specmod.specialize(program, cfg, automaton, spec, domain))
    payload = {
        "results": [r.as_dict() for r in results],
        "commonality": specmod.commonality_report(results),
    }
    if args.out:
        base = args.out
        for r in results:
            path = f"{base}.{r.criterion}.mcbl"
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(r.simplified_source)
            log.info("wrote %s", path)
        with open(base, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        if len(results) == 1:
            sys.stdout.write(results[0].simplified_source)
        sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return EXIT_CLEAN


def cmd_pfsg(args) -> int:
    program, cfg, spec = _load(args)
    automaton = _automaton(spec, args.automaton)
    domain = make_domain(args.domain, program)
    sol = analyze(cfg, automaton, spec, domain)
    graph = pfsgmod.build_pfsg(cfg, automaton, sol)
    if args.run_domain:
        rdomain = make_domain(args.run_domain, program)
        direction = "forward" if args.direction == "f" else "backward"
        psol = pfsgmod.analyze_on_pfsg(graph, rdomain, direction=direction)
        facts = {
            f"({graph.cfg.node(n.cfg_node).line},{n.state})": rdomain.describe(l)
            for n, l in sorted(
                psol.facts.items(),
                key=lambda kv: (kv[0].cfg_node, automaton.state_index(kv[0].state)),
            )
        }
        _emit_json(args, {"domain": rdomain.name, "direction": direction, "facts": facts})
        return EXIT_CLEAN
    if args.emit == "dot" or args.dot:
        _emit(args, pfsgmod.export_dot(graph))
    else:
        _emit_json(args, pfsgmod.export_json(graph))
    return EXIT_CLEAN


def cmd_verify(args) -> int:
    program, cfg, spec = _load(args)
    automaton = _automaton(spec, args.automaton)
    domain = make_domain(args.domain, program)
    sol = analyze(cfg, automaton, spec, domain)
    tables = {}
    if args.tables:
        with open(args.tables, encoding="utf-8") as fh:
            tables = {k: set(v) for k, v in json.load(fh).items()}
    universe = _default_universe(spec)
    report = orc.soundness_check(
        sol, cfg, automaton, spec, universe, tables, max_records=args.max_records
    )
    payload = {
        "ok": report.ok,
        "files_checked": report.files_checked,
        "traces_checked": report.traces_checked,
        "counterexample": str(report.counterexample) if report.counterexample else None,
    }
    _emit_json(args, payload)
    return EXIT_CLEAN if report.ok else EXIT_FINDINGS


def _default_universe(spec):
    """Records exercising every constrained literal, one layout at a time."""
    values: dict[str, dict[str, list[str]]] = {}
    for rt in spec.types.values():
        per = values.setdefault(rt.layout.name, {})
        for atom in rt.atoms:
            if atom.kind in ("eq", "neq"):
                per.setdefault(atom.field, [])
                if atom.value not in per[atom.field]:
                    per[atom.field].append(atom.value)
    universe: list[bytes] = []
    for lname, per in sorted(values.items()):
        layout = spec.layouts[lname]
        universe.extend(orc.record_universe(layout, per))
    seen = set()
    out = []
    for rec in universe:
        if rec not in seen:
            seen.add(rec)
            out.append(rec)
    return out


def cmd_refine(args) -> int:
    with open(args.format, encoding="utf-8") as fh:
        spec = parse_format_spec(fh.read())
    s1 = _automaton(spec, args.automaton)
    s2 = _automaton(spec, args.automaton2)
    mapping = None
    if args.mapping:
        with open(args.mapping, encoding="utf-8") as fh:
            mapping = json.load(fh)
    result = check_refinement(s1, s2, spec.types, mapping)
    payload = {
        "refines": result.holds,
        "refined": s1.name,
        "refinement": s2.name,
        "mapping": result.mapping,
        "witness": list(result.witness) if result.witness else None,
        "finals_map_to_finals": result.finals_map_to_finals,
    }
    _emit_json(args, payload)
    return EXIT_CLEAN if result.holds else EXIT_FINDINGS


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ffa", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, program=True):
        if program:
            sp.add_argument("--program", required=True)
        sp.add_argument("--format", required=True)
        sp.add_argument("--out", default=None)
        sp.add_argument("--emit", choices=["text", "json", "dot"], default="text")

    sp = sub.add_parser("analyze", help="lifted fixpoint tables")
    common(sp)
    sp.add_argument("--automaton", required=True)
    sp.add_argument("--domain", default="cp")
    sp.set_defaults(fn=cmd_analyze)

    sp = sub.add_parser("conformance", help="under/over acceptance checks")
    common(sp)
    sp.add_argument("--automaton", required=True)
    sp.add_argument("--domain", default="cp")
    sp.add_argument("--mode", choices=["under", "over"], required=True)
    sp.set_defaults(fn=cmd_conformance)

    sp = sub.add_parser("specialize", help="project out criterion-dead code")
    common(sp)
    sp.add_argument("--criteria", required=True, help="comma-separated automaton names")
    sp.add_argument("--domain", default="cp")
    sp.set_defaults(fn=cmd_specialize)

    sp = sub.add_parser("pfsg", help="build / analyze the program file state graph")
    common(sp)
    sp.add_argument("--automaton", required=True)
    sp.add_argument("--domain", default="cp")
    sp.add_argument("--dot", action="store_true")
    sp.add_argument("--run-domain", default=None)
    sp.add_argument("--direction", choices=["f", "b"], default="f")
    sp.set_defaults(fn=cmd_pfsg)

    sp = sub.add_parser("verify", help="bounded soundness check against the oracle")
    common(sp)
    sp.add_argument("--automaton", required=True)
    sp.add_argument("--domain", default="cp")
    sp.add_argument("--max-records", type=int, default=4)
    sp.add_argument("--tables", default=None, help="JSON file: table -> key list")
    sp.set_defaults(fn=cmd_verify)

    sp = sub.add_parser("refine", help="check automaton refinement")
    common(sp, program=False)
    sp.add_argument("--automaton", required=True, help="the refined (coarser) automaton")
    sp.add_argument("--automaton2", required=True, help="the refining automaton")
    sp.add_argument("--mapping", default=None, help="JSON file: state -> state")
    sp.set_defaults(fn=cmd_refine)
    return p


def main(argv=None) -> int:
    level = os.environ.get("FFA_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr)
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (InputError, MiniLangError, FormatSpecError, DomainError, FileNotFoundError, orc.OracleError) as exc:
        print(f"ffa: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EngineError as exc:
        print(f"ffa: internal: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
