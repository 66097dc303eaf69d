import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nbvb import Hyperparams, assemble_design, fit_batch, make_atom_grid, simulate_dataset  # noqa: E402

# Filled by test_acceptance; echoed at the end of the run.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


def additive_design(seed, n=500, kappa=3.8, knots=15):
    sim = simulate_dataset("additive_2term", n, kappa, seed=seed)
    d, bases = assemble_design(sim.y, sim.x, [(sim.x[:, 0], knots), (sim.x[:, 1], knots)])
    return sim, d, bases


@pytest.fixture(scope="session")
def hyper():
    return Hyperparams()


@pytest.fixture(scope="session")
def additive():
    """Additive two-term dataset with its design and default-grid batch fit."""
    sim, d, bases = additive_design(seed=100)
    g = make_atom_grid(0.38, 38.0, 50)
    post = fit_batch(d, Hyperparams(), g, bases=bases)
    return sim, d, bases, g, post


@pytest.fixture(scope="session")
def small_design():
    sim = simulate_dataset("nonpar_1term", 150, 5.0, seed=11)
    d, bases = assemble_design(sim.y, None, [(sim.x[:, 0], 8)])
    return d, bases


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
