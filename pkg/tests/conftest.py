from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pytest

from lrqte.ansatz import init_state
from lrqte.paulis import Lattice

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_addoption(parser):
    parser.addoption("--nightly", action="store_true", help="run the extended 3x3 benchmark")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--nightly"):
        return
    skip = pytest.mark.skip(reason="extended benchmark; pass --nightly to run")
    for item in items:
        if "nightly" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record():
    """``record(num, ok, detail)`` stores a line for the acceptance summary and asserts ``ok``."""

    def _record(num: int, ok: bool, detail: str):
        ACCEPTANCE[num] = (bool(ok), detail)
        assert ok, f"criterion {num}: {detail}"

    return _record


def make_cfg(kind="I", rank=2, layers=1, n=2, basis=None, lattice=None):
    return SimpleNamespace(
        kind=kind, rank=rank, epsilon=1e-4, lattice=lattice or Lattice.chain(n), initial=None, basis=basis, layers=layers
    )


def random_state(rng, kind="I", rank=2, layers=1, n=2, lattice=None):
    """Random weights in (0.1, 1) and angles in [-pi, pi]."""
    s = init_state(make_cfg(kind, rank, layers, n, lattice=lattice))
    beta = s.params
    beta[:rank] = rng.uniform(0.1, 1.0, rank)
    beta[rank:] = rng.uniform(-np.pi, np.pi, beta.size - rank)
    return s.with_params(beta)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
