import math

import numpy as np
import pytest

from blochfem.geometry import DomainSpec, TransformCoefficients, make_profile
from blochfem.mesh import build_mesh, mesh_for_width
from blochfem.quasiperiodic import CellAssembler, IncidentField, solve_cell

TWO_PI = 2 * math.pi


@pytest.fixture(scope="session")
def spec():
    return DomainSpec()


@pytest.fixture(scope="session")
def small_perturbed(spec):
    """Coarse f1 + p1 setup (M = 200) for coupled-solver checks."""
    prof = make_profile("f1", "p1")
    mesh = build_mesh(prof, spec, 20, 10)
    k, alpha = 1.0, 0.3
    asm = CellAssembler(mesh, k)
    u_h = solve_cell(mesh, IncidentField(k, alpha), assembler=asm)
    return dict(profile=prof, mesh=mesh, k=k, alpha=alpha, assembler=asm, u_h=u_h,
                coeffs=TransformCoefficients(prof, spec))


@pytest.fixture(scope="session")
def example1_h016(spec):
    prof = make_profile("f1", "p1")
    mesh = mesh_for_width(prof, spec, 0.16)
    k, alpha = 1.0, 0.3
    asm = CellAssembler(mesh, k)
    u_h = solve_cell(mesh, IncidentField(k, alpha), assembler=asm)
    return dict(profile=prof, mesh=mesh, k=k, alpha=alpha, assembler=asm, u_h=u_h,
                coeffs=TransformCoefficients(prof, spec))


def rng(seed=0):
    return np.random.default_rng(seed)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(number: int, passed: bool, detail: str, seconds: float) -> None:
        status = "PASS" if passed else "FAIL"
        ACCEPTANCE_LINES.append(f"criterion {number}: {status} {detail} ({seconds:.1f}s)")

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
