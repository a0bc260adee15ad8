import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blochfem.geometry import (DomainSpec, SurfaceProfile, TransformCoefficients, builtin_surfaces,
                               eval_surface, fourier_curve, make_profile, map_phi,
                               smooth_cutoff, transform_coefficients)


def test_surface_values():
    f2 = make_profile("f2")
    f1 = make_profile("f1")
    assert eval_surface(f2, 0.0)[0] == pytest.approx(1.75, abs=1e-15)
    assert eval_surface(f1, 0.0)[0] == pytest.approx(1.65, abs=1e-15)


def test_slopes_match_finite_differences():
    x = np.linspace(-3, 3, 41)
    for base, pert in (("f1", "p1"), ("f2", "p2")):
        prof = make_profile(base, pert)
        for which in ("base", "perturbed"):
            _, d = eval_surface(prof, x, which)
            step = 1e-6
            fd = (eval_surface(prof, x + step, which)[0] - eval_surface(prof, x - step, which)[0]) / (2 * step)
            assert np.max(np.abs(fd - d)) < 1e-7


def test_perturbations_vanish_at_support_ends():
    cat = builtin_surfaces()
    assert cat["p1"](np.array([-1.0, 1.0])) == pytest.approx([0.0, 0.0], abs=0)
    assert cat["p2"](np.array([-math.pi, math.pi])) == pytest.approx([0.0, 0.0], abs=0)
    assert cat["p2"](np.array([0.0]))[0] == pytest.approx(0.5, abs=1e-15)
    assert smooth_cutoff(np.array([0.0]), -1.0, 1.0)[0][0] == 1.0


@given(st.floats(-50, 50, allow_nan=False))
def test_base_periodic(x):
    for name in ("f1", "f2"):
        prof = make_profile(name)
        a = eval_surface(prof, x)[0]
        b = eval_surface(prof, x + 2 * math.pi)[0]
        assert abs(a - b) < 1e-12


@given(st.floats(-math.pi, math.pi, allow_nan=False))
def test_perturbed_equals_base_off_support(x):
    prof = make_profile("f1", "p1")
    if abs(x) >= 1.0:
        assert eval_surface(prof, x, "perturbed") == eval_surface(prof, x, "base")


def test_profiles_positive_and_below_h0():
    spec = DomainSpec()
    for base, pert in (("f1", "p1"), ("f1", "p2"), ("f2", "p1"), ("f2", "p2")):
        spec.check(make_profile(base, pert))


def test_domain_spec_rejects_bad_heights():
    with pytest.raises(ValueError):
        DomainSpec(H=3.0, H0=3.9)
    tall = SurfaceProfile(2 * math.pi, fourier_curve(3.95))
    with pytest.raises(ValueError):
        DomainSpec().check(tall)


def test_map_phi_boundary_behaviour():
    prof = make_profile("f2", "p2")
    spec = DomainSpec()
    x1 = np.linspace(-3, 3, 13)
    zeta, _ = eval_surface(prof, x1)
    zp, _ = eval_surface(prof, x1, "perturbed")
    top = map_phi(prof, spec, np.column_stack([x1, np.full_like(x1, spec.H)]))
    assert np.array_equal(top[:, 1], np.full_like(x1, spec.H))
    bottom = map_phi(prof, spec, np.column_stack([x1, zeta]))
    assert np.max(np.abs(bottom[:, 1] - zp)) < 1e-12
    with pytest.raises(ValueError):
        map_phi(prof, spec, np.array([0.0, spec.H + 0.1]))


def test_map_phi_identity_off_support():
    prof = make_profile("f1", "p1")
    spec = DomainSpec()
    pts = np.array([[2.0, 3.0], [-2.5, 2.9], [1.0, 3.5]])
    assert np.array_equal(map_phi(prof, spec, pts), pts)


def _fd_coefficients(prof, spec, x, step):
    jac = np.zeros((2, 2))
    for col in range(2):
        e = np.zeros(2)
        e[col] = step
        jac[:, col] = (map_phi(prof, spec, x + e) - map_phi(prof, spec, x - e)) / (2 * step)
    det = np.linalg.det(jac)
    inv = np.linalg.inv(jac)
    return abs(det) * inv @ inv.T, abs(det)


def test_coefficients_match_fd_jacobian_example():
    prof = make_profile("f2", "p2")
    spec = DomainSpec()
    x = np.array([0.0, 3.0])
    A, c = transform_coefficients(prof, spec, x)
    A_fd, c_fd = _fd_coefficients(prof, spec, x, 1e-6)
    assert np.max(np.abs(A - A_fd)) < 1e-6
    assert abs(c - c_fd) < 1e-6


def test_jacobian_second_order_fd_convergence():
    prof = make_profile("f1", "p1")
    spec = DomainSpec()
    g = np.random.default_rng(3)
    x1 = g.uniform(-1, 1, 20)
    zeta, _ = prof.base_height(x1)
    pts = np.column_stack([x1, zeta + g.uniform(0.05, 0.95, 20) * (spec.H - zeta)])
    jac = TransformCoefficients(prof, spec).jacobian(pts)
    errs = []
    for step in (1e-3, 1e-4):
        fd = np.zeros_like(jac)
        for col in range(2):
            e = np.zeros(2)
            e[col] = step
            fd[..., :, col] = (map_phi(prof, spec, pts + e) - map_phi(prof, spec, pts - e)) / (2 * step)
        errs.append(np.max(np.abs(fd - jac)))
    assert 50 < errs[0] / errs[1] < 200


@settings(max_examples=50)
@given(st.floats(-math.pi, math.pi), st.floats(0.0, 1.0))
def test_coefficient_invariants(x1, s):
    prof = make_profile("f2", "p2")
    spec = DomainSpec()
    zeta, _ = prof.base_height(np.array(x1))
    x = np.array([x1, float(zeta) + s * (spec.H - float(zeta))])
    A, c = transform_coefficients(prof, spec, x)
    assert c > 0
    assert np.max(np.abs(A - A.T)) <= 1e-14
    assert np.all(np.linalg.eigvalsh(A) > 0)


def test_coefficients_exactly_identity_off_support_and_for_zero_perturbation():
    spec = DomainSpec()
    prof = make_profile("f1", "p1")
    pts = np.array([[1.5, 3.0], [-2.0, 2.5], [3.1, 3.9]])
    A, c = transform_coefficients(prof, spec, pts)
    assert np.array_equal(A, np.broadcast_to(np.eye(2), A.shape))
    assert np.array_equal(c, np.ones(3))
    flat = make_profile("f1")
    A, c = transform_coefficients(flat, spec, np.array([[0.0, 3.0], [0.5, 2.5]]))
    assert np.array_equal(A, np.broadcast_to(np.eye(2), A.shape))
    # on the top line the map is the identity, so A = I there as well
    A, c = transform_coefficients(prof, spec, np.array([[0.3, spec.H]]))
    assert np.max(np.abs(A - np.eye(2))) < 1e-15 and abs(c[0] - 1) < 1e-15


def test_degenerate_perturbation_rejected():
    spec = DomainSpec()
    # near the surface det = 1 + 3 p / (zeta - H), negative once p > (H - zeta) / 3
    big = fourier_curve(1.0)
    prof = make_profile("f2", big, support=(-1.0, 1.0))
    g = np.linspace(-0.9, 0.9, 50)
    zeta, _ = prof.base_height(g)
    pts = np.column_stack([g, zeta + 0.01])
    with pytest.raises(ValueError):
        TransformCoefficients(prof, spec)(pts)
