#!/usr/bin/env python3
"""Timing curve of the lifted analysis against automaton size.

Pads an item-stream automaton to |Q| in {4, 8, 16, 32, 64, 128} and times
constant propagation over a fixed 30-statement loop. Expect roughly one
doubling of wall time per doubling of |Q|.
"""

import pathlib
import sys
import time

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from ffa.domains import ConstProp
from ffa.formatspec import InputAutomaton, parse_format_spec
from ffa.lifted import analyze
from ffa.minilang import build_cfg, parse_program

ROOT = pathlib.Path(__file__).resolve().parents[1]


def padded_automaton(n_states: int) -> InputAutomaton:
    k = n_states - 2
    states = ["q0"] + [f"p{i}" for i in range(k)] + ["qe"]
    trans = []
    for i in range(k):
        trans += [("q0", "Itm", f"p{i}"), (f"p{i}", "Itm", "q0"), (f"p{i}", "eof", "qe")]
    trans.append(("q0", "eof", "qe"))
    return InputAutomaton("padded", tuple(states), tuple(trans), "q0", frozenset({"qe"}))


def fixed_program():
    body = "".join(f"        MOVE in-rec.rcv TO s{i:02d}\n" for i in range(30))
    decls = "".join(f"WORKING s{i:02d} LEN 5.\n" for i in range(30))
    src = (
        "DATA DIVISION.\n"
        "INPUT-FILE in-file BUFFER in-rec LENGTH 16.\n"
        "    LAYOUT itm.\n"
        "        FIELD typ AT 0 LEN 3.\n"
        "        FIELD rcv AT 3 LEN 5.\n"
        "        FIELD amt AT 8 LEN 4.\n"
        + decls
        + "WORKING eof-flag LEN 1.\n"
        "PROCEDURE DIVISION.\n"
        "    MOVE 'N' TO eof-flag\n"
        "    READ in-file AT END MOVE 'Y' TO eof-flag END-READ\n"
        "    PERFORM UNTIL eof-flag = 'Y'\n"
        + body
        + "        READ in-file AT END MOVE 'Y' TO eof-flag END-READ\n"
        "    END-PERFORM\n"
        "    STOP RUN\n"
    )
    return parse_program(src)


def main():
    program = fixed_program()
    cfg = build_cfg(program)
    spec = parse_format_spec((ROOT / "tests" / "fixtures" / "integrity.ffs").read_text())
    print(f"{'|Q|':>5} {'best of 3':>12} {'ratio':>7}")
    prev = None
    for n in (4, 8, 16, 32, 64, 128):
        best = float("inf")
        for _ in range(3):
            t0 = time.perf_counter()
            analyze(cfg, padded_automaton(n), spec, ConstProp(program))
            best = min(best, time.perf_counter() - t0)
        ratio = f"{best / prev:6.2f}x" if prev else "      -"
        print(f"{n:>5} {best * 1000:>10.1f}ms {ratio}")
        prev = best


if __name__ == "__main__":
    main()
