import pathlib

import pytest

from ffa.formatspec import parse_format_spec
from ffa.minilang import build_cfg, parse_program

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


def load_program(name: str):
    program = parse_program((FIXTURES / name).read_text())
    return program, build_cfg(program)


def load_spec(name: str):
    return parse_format_spec((FIXTURES / name).read_text())


@pytest.fixture(scope="session")
def fig2a_spec():
    return load_spec("fig2a.ffs")


@pytest.fixture(scope="session")
def running():
    return load_program("running_example.mcbl")


@pytest.fixture(scope="session")
def trailer_variant():
    return load_program("trailer_variant.mcbl")


@pytest.fixture(scope="session")
def underacc_variant():
    return load_program("underacc_variant.mcbl")


@pytest.fixture(scope="session")
def integrity_spec():
    return load_spec("integrity.ffs")


@pytest.fixture(scope="session")
def integrity_prog():
    return load_program("integrity_lookup.mcbl")


def node_on_line(cfg, line, kind=None):
    hits = [n for n in cfg.nodes_on_line(line) if kind is None or n.kind == kind]
    assert hits, f"no node on line {line} (kind={kind})"
    return hits[0]


# Record universe for the banking format: every constrained literal plus
# one unknown type marker; unconstrained fields held fixed.
def banking_universe(include_bad=False):
    def rec(typ, mid="10205", tot="9000", src="SAME"):
        r = f"{typ:<3}{mid:<5}{tot:<4}{src:<4}".encode()
        assert len(r) == 16
        return r

    recs = [
        rec("HDR", src="SAME"),
        rec("HDR", src="DIFF"),
        rec("ITM", src="SAME"),
        rec("ITM", src="DIFF"),
        rec("TRL", src="SAME"),
        rec("TRL", src="DIFF"),
    ]
    if include_bad:
        recs.append(rec("XXX", src="SAME"))
    return recs
