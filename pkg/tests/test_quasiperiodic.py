import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blochfem.geometry import DomainSpec, fourier_curve, make_profile
from blochfem.mesh import build_mesh, mesh_for_width, trace_l2_error
from blochfem.quasiperiodic import (CellAssembler, DtnOperator, IncidentField, WoodAnomalyError,
                                    assemble_cell, beta, default_truncation, energy_balance,
                                    exact_trace, flat_exact_solution, incident_load,
                                    reflection_coefficients, solve_cell)

SPEC = DomainSpec()
TWO_PI = 2 * math.pi


def test_beta_examples():
    assert beta(1.0, 0.3, 1.0, 0) == pytest.approx(math.sqrt(0.91), abs=1e-15)
    assert beta(1.0, 0.3, 1.0, 1) == pytest.approx(1j * math.sqrt(0.69), abs=1e-15)
    assert beta(1.0, 1.0, 1.0, 0) == 0


@given(st.floats(0.1, 20), st.floats(-0.5, 0.5), st.integers(-40, 40))
def test_beta_branches(k, alpha, j):
    b = beta(k, alpha, 1.0, j)
    if abs(j + alpha) <= k:
        assert b.imag == 0 and b.real >= 0
    else:
        assert b.real == 0 and b.imag > 0


def test_beta_monotone_and_asymptotic():
    k = 3.0
    j = np.arange(4, 200)
    b = beta(k, 0.2, 1.0, j)
    assert np.all(np.diff(b.imag) >= 0)
    J = 400
    assert 0.9 <= abs(beta(k, 0.2, 1.0, J)) / J <= 1.1


def test_incident_field():
    inc = IncidentField(1.0, 0.3)
    x = np.linspace(-3, 3, 7)
    f = inc.boundary_data(x, 4.0)
    assert np.allclose(np.abs(f), 2 * inc.beta0, rtol=1e-14)
    assert complex(inc.boundary_data(0.0, 4.0)) == pytest.approx(
        -2j * math.sqrt(0.91) * cmath.exp(-1j * math.sqrt(0.91) * 4.0), abs=1e-14)
    grazing = IncidentField(1.0, 1.0 - 1e-12)
    assert abs(grazing.boundary_data(0.0, 4.0)) < 1e-5
    with pytest.raises(ValueError):
        IncidentField(1.0, 1.2)


def test_load_and_zero_amplitude():
    mesh = build_mesh(make_profile("f2"), SPEC, 8, 4)
    inc = IncidentField(1.0, 0.3, amplitude=0.0)
    assert not np.any(incident_load(mesh, inc))
    assert not np.any(solve_cell(mesh, inc).coefficients)


def test_symmetry_at_alpha_zero_and_transpose_rule():
    mesh = build_mesh(make_profile("f1"), SPEC, 16, 6)
    K = assemble_cell(mesh, DtnOperator(1.5, 0.0, TWO_PI, 16)).toarray()
    assert np.max(np.abs(K - K.T)) < 1e-12
    asm = CellAssembler(mesh, 2.0)
    Kp = asm.matrix(0.37).toarray()
    Km = asm.matrix(-0.37).toarray()
    assert np.max(np.abs(Km - Kp.T)) < 1e-12


def test_stiffness_annihilates_constants_away_from_bottom():
    mesh = build_mesh(make_profile("f2"), SPEC, 10, 6)
    asm = CellAssembler(mesh, 1.0)
    r = asm.K0 @ np.ones(mesh.M)
    free = np.flatnonzero(mesh.dof >= 0)
    rows = free[(free % (mesh.n2 + 1)) >= 2]
    assert np.max(np.abs(r[mesh.dof[rows]])) < 1e-12


def test_dtn_block_rank():
    mesh = build_mesh(make_profile("f2"), SPEC, 64, 4)
    asm = CellAssembler(mesh, 1.0, J=5)
    B = asm.dtn_block(0.3)
    assert np.linalg.matrix_rank(B, tol=1e-10 * np.abs(B).max()) <= 11


def test_wood_anomaly_reported():
    mesh = build_mesh(make_profile("f2"), SPEC, 8, 4)
    asm = CellAssembler(mesh, 1.0)
    with pytest.raises(WoodAnomalyError) as err:
        asm.matrix(0.0)
    assert err.value.j in (-1, 1)


def test_flat_surface_order_two():
    c = 1.75
    prof = make_profile(fourier_curve(c))
    inc = IncidentField(1.0, 0.3)
    exact = flat_exact_solution(inc, c)
    errs = []
    for h in (0.16, 0.08, 0.04):
        mesh = mesh_for_width(prof, SPEC, h)
        errs.append(trace_l2_error(solve_cell(mesh, inc).trace(), exact_trace(mesh, exact)))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 3.2) & (ratios < 4.8))


def test_flat_surface_reflection_coefficients():
    c = 1.75
    prof = make_profile(fourier_curve(c))
    inc = IncidentField(1.0, 0.3)
    mesh = mesh_for_width(prof, SPEC, 0.04)
    u = solve_cell(mesh, inc)
    dtn = DtnOperator(1.0, 0.3, TWO_PI, 16)
    R = reflection_coefficients(u, dtn, inc)
    b0 = inc.beta0
    # amplitude referenced at x2 = H: -exp(-2 i b0 c) exp(i b0 H)
    assert abs(R[0] - (-cmath.exp(-2j * b0 * c) * cmath.exp(1j * b0 * SPEC.H))) < 1e-3
    assert abs(abs(R[0]) - 1) < 1e-3
    assert max(abs(v) for j, v in R.items() if j != 0) < 1e-8
    # a flat surface conserves energy exactly in the discrete problem
    assert energy_balance(R, dtn) < 1e-3


def test_energy_forced_single_mode():
    dtn = DtnOperator(1.0, 0.3, TWO_PI, 4)
    assert energy_balance({0: cmath.exp(0.7j)}, dtn) < 1e-15


def test_symmetric_surface_gives_symmetric_orders():
    # f2 is even; at alpha = 0 reflected orders j and -j agree. Nudge alpha off
    # the Wood anomaly of k = 1 by using k = 1.5.
    mesh = mesh_for_width(make_profile("f2"), SPEC, 0.08)
    inc = IncidentField(1.5, 0.0)
    u = solve_cell(mesh, inc)
    R = reflection_coefficients(u, DtnOperator(1.5, 0.0, TWO_PI, 16), inc)
    for j in range(1, 6):
        assert abs(R[j] - R[-j]) < 1e-10 * max(1.0, abs(R[j]))


def test_galerkin_coefficients_conserve_energy_to_roundoff():
    mesh = mesh_for_width(make_profile("f1"), SPEC, 0.16)
    inc = IncidentField(math.sqrt(10), 0.5)
    asm = CellAssembler(mesh, inc.k)
    u = solve_cell(mesh, inc, assembler=asm)
    R = reflection_coefficients(u, asm.dtn(inc.alpha), inc, method="galerkin")
    assert energy_balance(R, asm.dtn(inc.alpha)) < 1e-10


@pytest.mark.parametrize("base", ["f1", "f2"])
def test_energy_defect_second_order(base):
    inc = IncidentField(math.sqrt(10), 0.5)
    prof = make_profile(base)
    d = []
    for h in (0.16, 0.08):
        mesh = mesh_for_width(prof, SPEC, h)
        u = solve_cell(mesh, inc)
        dtn = DtnOperator(inc.k, inc.alpha, TWO_PI, default_truncation(inc.k, TWO_PI))
        d.append(energy_balance(reflection_coefficients(u, dtn, inc), dtn))
    assert 3.0 < d[0] / d[1] < 5.0


def test_truncation_doubling_flat_surface_exact():
    mesh = mesh_for_width(make_profile(fourier_curve(1.75)), SPEC, 0.16)
    inc = IncidentField(math.sqrt(10), 0.5)
    J = default_truncation(inc.k, TWO_PI)
    a = solve_cell(mesh, inc, J=J).trace()
    b = solve_cell(mesh, inc, J=2 * J).trace()
    assert trace_l2_error(a, b) < 1e-8


def test_truncation_doubling_below_discretisation_error():
    # on a curved surface the discrete trace carries O(h^2) high-order content,
    # so raising J moves it by far less than the mesh error but not to 1e-8
    inc = IncidentField(math.sqrt(10), 0.5)
    J = default_truncation(inc.k, TWO_PI)
    prof = make_profile("f1")
    coarse = mesh_for_width(prof, SPEC, 0.16)
    fine = mesh_for_width(prof, SPEC, 0.04)
    a = solve_cell(coarse, inc, J=J).trace()
    b = solve_cell(coarse, inc, J=2 * J).trace()
    c = solve_cell(coarse, inc, J=8 * J).trace()
    ref = solve_cell(fine, inc, J=J).trace()
    change = trace_l2_error(a, b)
    assert change < 1e-3
    assert trace_l2_error(b, c) < change
    assert change < 0.1 * trace_l2_error(a, ref)


@settings(max_examples=10, deadline=None)
@given(st.floats(-0.45, 0.45))
def test_cell_residual(alpha):
    mesh = build_mesh(make_profile("f1"), SPEC, 24, 8)
    inc = IncidentField(2.2, alpha)
    asm = CellAssembler(mesh, inc.k)
    u = solve_cell(mesh, inc, assembler=asm)
    K = asm.matrix(alpha)
    b = asm.load(inc)
    assert np.linalg.norm(K @ u.coefficients - b) < 1e-10 * np.linalg.norm(b)
