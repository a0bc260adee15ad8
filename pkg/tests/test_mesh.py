import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from blochfem.geometry import DomainSpec, eval_surface, fourier_curve, make_profile
from blochfem.mesh import (BOTTOM, TOP, Trace, build_mesh, merge, mesh_for_width, p1_l2_norm,
                           p1_mass_matrix, top_trace, trace_l2_error, unmerge)


def test_matched_heights_f2():
    mesh = build_mesh(make_profile("f2"), DomainSpec(), 8, 8)
    pairs = mesh.periodic_pairs()
    assert np.max(np.abs(mesh.nodes[pairs[:, 0], 1] - mesh.nodes[pairs[:, 1], 1])) < 1e-12


def test_flat_counts():
    mesh = build_mesh(make_profile(fourier_curve(1.0)), DomainSpec(), 4, 3)
    assert mesh.n_nodes == 20
    assert len(mesh.triangles) == 24
    assert mesh.M == 12
    idx, x = top_trace(mesh)
    assert len(idx) == 4
    assert np.all(np.diff(x) > 0)
    assert np.all(mesh.nodes[idx, 1] == mesh.H)
    assert x[-1] == pytest.approx(math.pi) and x[0] > -math.pi


@settings(max_examples=15, deadline=None)
@given(st.integers(4, 40), st.integers(2, 20), st.sampled_from(["f1", "f2"]))
def test_mesh_invariants(n1, n2, base):
    spec = DomainSpec()
    mesh = build_mesh(make_profile(base), spec, n1, n2)
    assert np.all(mesh.areas() > 1e-14 * mesh.h**2)
    tags = mesh.tags()
    bottom = tags == BOTTOM
    zeta, _ = eval_surface(make_profile(base), mesh.nodes[bottom, 0])
    assert np.max(np.abs(mesh.nodes[bottom, 1] - zeta)) < 1e-12
    assert np.all(mesh.nodes[tags == TOP, 1] == spec.H)
    assert len(np.unique(mesh.dof[mesh.dof >= 0])) == mesh.M
    assert np.all(mesh.dof[bottom] < 0)


def test_refinement_halves_h_and_keeps_quality():
    prof = make_profile("f1")
    spec = DomainSpec()
    meshes = [build_mesh(prof, spec, 20 * 2**i, 8 * 2**i) for i in range(4)]
    for a, b in zip(meshes, meshes[1:]):
        assert b.h / a.h == pytest.approx(0.5, rel=0.05)
    q = [m.quality_ratio() for m in meshes]
    assert max(q) <= 2 * q[0]


def test_mesh_for_width_meets_target():
    prof = make_profile("f1")
    for h in (0.3, 0.16, 0.08):
        m = mesh_for_width(prof, DomainSpec(), h)
        assert m.h <= h


def test_h_max_rejected():
    with pytest.raises(ValueError):
        build_mesh(make_profile("f2"), DomainSpec(), 8, 4, h_max=0.1)
    with pytest.raises(ValueError):
        build_mesh(make_profile("f2"), DomainSpec(), 3, 4)


def test_mass_matrix_area():
    spec = DomainSpec()
    for name in ("f1", "f2"):
        prof = make_profile(name)
        mesh = build_mesh(prof, spec, 64, 16)
        exact, _ = integrate.quad(lambda x: spec.H - float(eval_surface(prof, x)[0]),
                                  -math.pi, math.pi, epsabs=1e-12, epsrel=1e-12)
        # the mesh polygon's area is the trapezoidal rule of the same integral
        total = p1_mass_matrix(mesh).sum()
        assert total == pytest.approx(mesh.areas().sum(), rel=1e-13)
        xs = np.linspace(-math.pi, math.pi, 65)
        trap = np.sum(np.diff(xs) * 0.5 * ((spec.H - eval_surface(prof, xs[:-1])[0])
                                           + (spec.H - eval_surface(prof, xs[1:])[0])))
        assert total == pytest.approx(trap, rel=1e-10)
        # trigonometric polynomials: the trapezoidal rule is exact on the period
        assert total == pytest.approx(exact, rel=1e-10)


def test_merge_unmerge_round_trip():
    mesh = build_mesh(make_profile("f1"), DomainSpec(), 12, 5)
    ones = np.ones(mesh.M)
    nodal = unmerge(mesh, ones)
    assert np.array_equal(nodal[mesh.dof >= 0], np.ones(np.count_nonzero(mesh.dof >= 0)))
    assert np.array_equal(merge(mesh, nodal), ones)
    v = np.random.default_rng(0).standard_normal(mesh.M)
    assert np.array_equal(merge(mesh, unmerge(mesh, v)), v)


def test_trace_errors():
    x = np.linspace(-math.pi, math.pi, 401)
    b = Trace(x, np.sin(x) + 0j)
    assert trace_l2_error(b, b) == 0.0
    assert trace_l2_error(Trace(x, 2 * b.values), b) == pytest.approx(1.0, abs=1e-14)
    zero = Trace(x, np.zeros_like(b.values))
    assert trace_l2_error(zero, b) == pytest.approx(1.0, abs=1e-14)
    assert p1_l2_norm(x, b.values) == pytest.approx(math.sqrt(math.pi), rel=1e-4)
    with pytest.raises(ZeroDivisionError):
        trace_l2_error(b, zero)


def test_trace_error_on_union_grid_is_exact():
    xa = np.linspace(-math.pi, math.pi, 5)
    xb = np.linspace(-math.pi, math.pi, 9)
    a = Trace(xa, np.array([0, 1, 0, 1, 0], dtype=complex))
    b = Trace(xb, np.ones(9, dtype=complex))
    # a - b is piecewise linear on xb; integrate (a - 1)^2 directly
    d = a.resample(xb) - 1
    assert trace_l2_error(a, b) == pytest.approx(p1_l2_norm(xb, d) / math.sqrt(2 * math.pi), rel=1e-14)


def test_json_export():
    mesh = build_mesh(make_profile("f2"), DomainSpec(), 4, 2)
    data = json.loads(mesh.to_json())
    assert len(data["nodes"]) == mesh.n_nodes
    assert len(data["triangles"]) == len(mesh.triangles)
    assert set(data["tags"]) <= {"bottom", "top", "left", "right", "interior"}
