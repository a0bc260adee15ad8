"""Analytic and structural oracles at pinned small sizes.

Each oracle returns an :class:`OracleResult` naming the module invariant it
checks.  Two mutation hooks perturb the pipeline so that the suite's power
to detect errors can itself be tested:

``"flip_coupling_sign"``
    flips the sign of the F-coupling inside the Schur elimination;
``"truncate_J"``
    halves the DtN truncation below the largest propagating order.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from ..bloch import (BlochField, brillouin_grid, forward_bloch_samples, g_factor,
                     window_values)
from ..coupled import (assemble_coupled, difference_trace, solve_coupled, solve_dense,
                       solve_standard)
from ..geometry import (Curve, DomainSpec, TransformCoefficients, fourier_curve,
                        make_profile, map_phi)
from ..highorder import solve_high_order
from ..mesh import build_mesh, mesh_for_width, p1_l2_norm, trace_l2_error
from ..quasiperiodic import (CellAssembler, DtnOperator, IncidentField, default_truncation,
                             energy_balance, exact_trace, flat_exact_solution,
                             reflection_coefficients, solve_cell)

MUTATIONS = ("flip_coupling_sign", "truncate_J")


@dataclass
class OracleResult:
    name: str
    module: str
    invariant: str
    passed: bool
    value: float
    threshold: float
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.module}.{self.name}: {self.invariant} "
                f"(value {self.value:.3e}, limit {self.threshold:.1e}, {self.seconds:.1f}s)")


def fd_jacobian_oracle(mutation=None) -> OracleResult:
    """Analytic Jacobian of the flattening map against central differences."""
    prof = make_profile("f2", "p2")
    spec = DomainSpec()
    rng = np.random.default_rng(20240611)
    x1 = rng.uniform(-math.pi, math.pi, 20)
    zeta, _ = prof.base_height(x1)
    x2 = zeta + rng.uniform(0.05, 0.95, 20) * (spec.H - zeta)
    pts = np.column_stack([x1, x2])
    jac = TransformCoefficients(prof, spec).jacobian(pts)
    errs = []
    for step in (1e-3, 1e-4):
        fd = np.zeros_like(jac)
        for col in range(2):
            e = np.zeros(2)
            e[col] = step
            fd[..., :, col] = (map_phi(prof, spec, pts + e) - map_phi(prof, spec, pts - e)) / (2 * step)
        errs.append(np.max(np.abs(fd - jac)))
    ratio = errs[0] / max(errs[1], 1e-300)
    return OracleResult("fd_jacobian", "geometry", "analytic Jacobian matches central "
                        "differences at second order (error ratio per 10x step)",
                        50.0 <= ratio <= 200.0 and errs[1] < 1e-6, ratio, 50.0)


def flat_surface_oracle(mutation=None) -> OracleResult:
    """Cell solve on a flat surface against the closed-form reflection."""
    c = 1.75
    prof = make_profile(fourier_curve(c, name="flat"))
    spec = DomainSpec()
    inc = IncidentField(1.0, 0.3)
    exact = flat_exact_solution(inc, c)
    errs = []
    for h in (0.16, 0.08):
        mesh = mesh_for_width(prof, spec, h)
        u = solve_cell(mesh, inc)
        errs.append(trace_l2_error(u.trace(), exact_trace(mesh, exact)))
    order = math.log2(errs[0] / errs[1])
    return OracleResult("flat_surface", "quasiperiodic", "flat-surface trace error "
                        "converges at order 2", abs(order - 2.0) < 0.3 and errs[1] < 2e-3,
                        order, 0.3)


def energy_oracle(mutation=None) -> OracleResult:
    """Propagating-mode energy balance on a curved surface with ten open orders."""
    k, alpha = 5.0, -0.5
    prof = make_profile("f2")
    mesh = mesh_for_width(prof, DomainSpec(), 0.16)
    inc = IncidentField(k, alpha)
    u = solve_cell(mesh, inc, J=_J(mutation, k, alpha))
    full = DtnOperator(k, alpha, mesh.period, default_truncation(k, mesh.period))
    defect = energy_balance(reflection_coefficients(u, full, inc), full)
    return OracleResult("energy_balance", "quasiperiodic", "reflected propagating energy "
                        "equals incident energy", defect < 1e-2, defect, 1e-2)


def bloch_oracle(mutation=None) -> OracleResult:
    """Forward after inverse transform is the identity; g factor against quadrature."""
    prof = make_profile("f1")
    mesh = build_mesh(prof, DomainSpec(), 20, 10)
    grid = brillouin_grid(16, mesh.period)
    rng = np.random.default_rng(7)
    W = rng.standard_normal((16, mesh.M)) + 1j * rng.standard_normal((16, mesh.M))
    back = forward_bloch_samples(window_values(BlochField(grid, W), mesh), grid, mesh)
    err = np.max(np.abs(back.coefficients - W)) / np.max(np.abs(W))
    gerr = 0.0
    for j, x in zip(rng.integers(1, 17, 10), rng.uniform(-40, 40, 10)):
        a0 = grid.alphas[j - 1] - grid.dual_period / (2 * grid.N)
        a1 = a0 + grid.dual_period / grid.N
        re = integrate.quad(lambda a: math.cos(a * x), a0, a1, epsabs=1e-15, epsrel=1e-13)[0]
        im = integrate.quad(lambda a: -math.sin(a * x), a0, a1, epsabs=1e-15, epsrel=1e-13)[0]
        gerr = max(gerr, abs(g_factor(grid, int(j), x) - complex(re, im)))
    worst = max(err, gerr)
    return OracleResult("round_trip", "bloch", "forward transform inverts the discrete "
                        "inverse transform; g factor equals its panel integral",
                        err < 1e-10 and gerr < 1e-12, worst, 1e-10)


def _small_coupled(N=4, perturbation="p1"):
    prof = make_profile("f1", perturbation)
    spec = DomainSpec()
    mesh = build_mesh(prof, spec, 20, 10)
    k, alpha = 1.0, 0.3
    asm = CellAssembler(mesh, k)
    u_h = solve_cell(mesh, IncidentField(k, alpha), assembler=asm)
    coeffs = TransformCoefficients(prof, spec)
    return mesh, asm, u_h, coeffs, k


def dense_schur_oracle(mutation=None) -> OracleResult:
    """Block elimination reproduces the dense solve of the full arrow system."""
    mesh, asm, u_h, coeffs, k = _small_coupled()
    system = assemble_coupled(mesh, brillouin_grid(4, mesh.period), k, coeffs, u_h,
                              assembler=asm)
    W0, U0 = solve_dense(system)
    sign = -1.0 if mutation == "flip_coupling_sign" else 1.0
    sol = solve_coupled(system, method="dense", coupling_sign=sign, verify=False)
    err = max(np.linalg.norm(sol.W - W0) / np.linalg.norm(W0),
              np.linalg.norm(sol.U - U0) / np.linalg.norm(U0))
    return OracleResult("dense_vs_schur", "coupled", "Schur elimination equals the dense "
                        "arrow-system solve", err < 1e-10, err, 1e-10)


def null_perturbation_oracle(mutation=None) -> OracleResult:
    """A zero perturbation yields a zero difference field in both solvers."""
    zero = Curve(lambda x: np.zeros_like(x), lambda x: np.zeros_like(x), "zero")
    prof = make_profile("f1", zero, support=(-1.0, 1.0))
    spec = DomainSpec()
    mesh = build_mesh(prof, spec, 20, 10)
    k = 1.0
    asm = CellAssembler(mesh, k)
    u_h = solve_cell(mesh, IncidentField(k, 0.3), assembler=asm)
    coeffs = TransformCoefficients(prof, spec)
    worst = 0.0
    for N in (4, 20):
        for solver in ("standard", "high-order"):
            if solver == "standard":
                sol, _ = solve_standard(mesh, k, coeffs, u_h, N, assembler=asm)
            else:
                sol, _ = solve_high_order(mesh, k, coeffs, u_h, N, assembler=asm)
            tr = difference_trace(sol.field, mesh)
            worst = max(worst, p1_l2_norm(tr.x, tr.values))
    return OracleResult("null_perturbation", "coupled", "zero perturbation gives a zero "
                        "difference field", worst < 1e-9, worst, 1e-9)


ORACLES: dict[str, Callable[..., OracleResult]] = {
    "fd_jacobian": fd_jacobian_oracle,
    "flat_surface": flat_surface_oracle,
    "energy_balance": energy_oracle,
    "round_trip": bloch_oracle,
    "dense_vs_schur": dense_schur_oracle,
    "null_perturbation": null_perturbation_oracle,
}


def _J(mutation, k, alpha=0.0) -> int | None:
    if mutation != "truncate_J":
        return None
    # largest propagating order, halved
    top = int(math.floor(k + abs(alpha)))
    return max(top // 2, 1)


def oracle_suite(mutation: str | None = None, names=None) -> list[OracleResult]:
    """Run the oracles (all by default) in a fixed order."""
    if mutation is not None and mutation not in MUTATIONS:
        raise ValueError(f"unknown mutation {mutation!r}; choose from {MUTATIONS}")
    out = []
    for name in names or ORACLES:
        t0 = time.perf_counter()
        res = ORACLES[name](mutation)
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out
