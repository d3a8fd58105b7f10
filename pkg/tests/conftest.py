from __future__ import annotations

import sys

import numpy as np
import pytest

from bplane.triple import Window, assemble_triple, build_tree


@pytest.fixture(scope="session")
def window_tree():
    """A windowed tree around level 1 (coarse lattice, builds in well under a second)."""
    return build_tree(assemble_triple(dt=1e-3, seed=11, window=Window(1.0, 1.0, 2.0)))


@pytest.fixture(scope="session")
def spine_tree():
    """A tree on a fixed spine height, without window bookkeeping."""
    return build_tree(assemble_triple(t_max=0.5, dt=1e-3, eps_cutoff=0.01, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is not None and mod.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.VERDICTS:
            terminalreporter.write_line(line)
