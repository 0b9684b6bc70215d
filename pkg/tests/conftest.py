import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from shadowfn.chemio import read_fcidump
from shadowfn.cli import default_fcidump, default_params
from shadowfn.exactsolver import SpaceHamiltonian, lowest_eigenpair
from shadowfn.lucj import LucjParams, align_and_project, exact_overlaps, largest_overlap_determinant

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

E_FCI_H4 = -2.16529

ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.line(line)


@pytest.fixture()
def gate(request):
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        request.config.stash[ACCEPTANCE].append((number, line))
        print(line)
        return ok

    return record


@pytest.fixture(scope="session")
def h4():
    return read_fcidump(default_fcidump())


@pytest.fixture(scope="session")
def h4_space(h4):
    return SpaceHamiltonian.from_integrals(h4)


@pytest.fixture(scope="session")
def h4_fci(h4_space):
    return lowest_eigenpair(h4_space.H)


@pytest.fixture(scope="session")
def h4_params():
    return LucjParams.load(default_params())


@pytest.fixture(scope="session")
def h4_raw_overlaps(h4_params):
    return exact_overlaps(h4_params)


@pytest.fixture(scope="session")
def h4_trial(h4_raw_overlaps):
    return align_and_project(h4_raw_overlaps, largest_overlap_determinant(h4_raw_overlaps))


def random_toy(rng, n, density=0.3):
    """Sparse symmetric toy Hamiltonian and a trial with perturbed magnitudes and some flipped signs."""
    A = rng.normal(size=(n, n))
    H = (A + A.T) / 4 + np.diag(rng.uniform(0, 3, n))
    mask = rng.random((n, n)) < density
    mask = mask | mask.T | np.eye(n, dtype=bool)
    H = np.where(mask, H, 0.0)
    _, v = lowest_eigenpair(H)
    flip = np.where(rng.random(n) < 0.25, -1, 1)
    psi = np.sign(v) * flip * (np.abs(v) + 0.2 * np.abs(v).max()) * np.exp(0.3 * rng.normal(size=n))
    return H, psi
