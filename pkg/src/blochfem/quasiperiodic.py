"""Single-cell alpha-quasi-periodic scattering problem with a truncated DtN map.

Fields are written ``u = exp(i alpha x1) u0`` with ``u0`` periodic, and the
finite element unknowns are the nodal values of ``u0``.  For a trial hat
``phi_l`` and a test hat ``phi_m`` the cell matrix is

    K[m, l] = int A (grad + i alpha e1) phi_l . conj((grad + i alpha e1) phi_m)
              - k^2 c phi_l phi_m  -  i L sum_j beta_j phihat_l(j) conj(phihat_m(j))

with ``beta_j = sqrt(k^2 - (alpha + j L*)^2)`` (principal branch, imaginary
part >= 0) and ``phihat`` the Fourier coefficients of the top traces.  The
volume part is a polynomial in ``alpha`` and is precomputed once.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import TransformCoefficients
from .mesh import CellField, PeriodicCellMesh, Trace, p1_gradients, top_trace

log = logging.getLogger(__name__)

# degree-2 Gauss rule on the reference triangle (barycentric points)
GAUSS_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
GAUSS_WEIGHTS = np.full(3, 1 / 3)

WOOD_TOL = 1e-10


class WoodAnomalyError(RuntimeError):
    """Raised when some Rayleigh mode is (numerically) at cutoff."""

    def __init__(self, alpha: float, j: int, beta: complex):
        super().__init__(f"alpha={alpha!r} is a Wood anomaly: beta_{j} = {beta:.3g}")
        self.alpha = alpha
        self.j = j


def beta(k: float, alpha, dual_period: float, j):
    """Vertical wavenumber of Rayleigh mode ``j``: real >= 0 or ``i * positive``."""
    xi = dual_period * np.asarray(j, dtype=float) + alpha
    d = k * k - xi * xi
    out = np.where(d >= 0, np.sqrt(np.abs(d)) + 0j, 1j * np.sqrt(np.abs(d)))
    return out if out.ndim else complex(out)


def default_truncation(k: float, period: float) -> int:
    return max(16, math.ceil(k * period / (2 * math.pi)) + 8)


@dataclass(frozen=True)
class DtnOperator:
    """Truncated DtN symbol ``i beta_j(alpha)``, ``|j| <= J``."""

    k: float
    alpha: float
    period: float
    J: int

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("wavenumber must be positive")
        if self.J < 1:
            raise ValueError("truncation order must be positive")

    @property
    def dual_period(self) -> float:
        return 2 * math.pi / self.period

    @property
    def orders(self) -> np.ndarray:
        return np.arange(-self.J, self.J + 1)

    @property
    def betas(self) -> np.ndarray:
        return beta(self.k, self.alpha, self.dual_period, self.orders)

    def propagating(self) -> np.ndarray:
        xi = self.dual_period * self.orders + self.alpha
        return np.abs(xi) < self.k


@dataclass(frozen=True)
class IncidentField:
    """Downward plane wave ``amplitude * exp(i alpha x1 - i beta0 x2)``."""

    k: float
    alpha: float
    amplitude: complex = 1.0

    def __post_init__(self):
        if not abs(self.alpha) < self.k:
            raise ValueError("incident field needs |alpha| < k")

    @property
    def beta0(self) -> float:
        return math.sqrt(self.k**2 - self.alpha**2)

    def __call__(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        return self.amplitude * np.exp(1j * self.alpha * x1 - 1j * self.beta0 * x2)

    def boundary_data(self, x1, H: float):
        """``f = d2 u_i - T u_i = -2 i beta0 u_i`` on the line ``x2 = H``."""
        return -2j * self.beta0 * self(x1, H)


def trace_fourier_matrix(mesh: PeriodicCellMesh, orders) -> np.ndarray:
    """Fourier coefficients of the periodic top hats: shape ``(n1, len(orders))``.

    ``phihat_i(j) = (1/L) int hat_i(x) exp(-i j L* x) dx`` in closed form.
    """
    _, x = top_trace(mesh)
    L = mesh.period
    d = mesh.dx
    kappa = 2 * math.pi / L * np.asarray(orders, dtype=float)
    s = np.sinc(kappa * d / (2 * math.pi))  # numpy sinc is sin(pi t)/(pi t)
    return (d / L) * np.exp(-1j * np.outer(x, kappa)) * (s * s)[None, :]


def local_quadrature(mesh: PeriodicCellMesh, tri, A, c, grads, area):
    """Degree-2 Gauss local matrices on triangles ``tri``.

    ``A`` has shape ``(t, 3, 2, 2)`` and ``c`` ``(t, 3)`` at the Gauss points.
    Returns ``(K0, K1, K2, Kc)`` of shape ``(t, 3, 3)`` indexed ``[m, l]``::

        K0 = int A g_l . g_m
        K1 = i int (A e1 . g_m) phi_l - (A e1 . g_l) phi_m
        K2 = int A_11 phi_l phi_m
        Kc = int c phi_l phi_m
    """
    g = grads[tri]  # (t, 3, 2)
    w = area[tri][:, None] * GAUSS_WEIGHTS[None, :]  # (t, q)
    phi = GAUSS_BARY  # (q, node)
    Ag = np.einsum("tqab,tlb->tqla", A, g)  # A g_l at each point
    K0 = np.einsum("tq,tqla,tma->tml", w, Ag, g)
    Ae1 = A[..., :, 0]  # (t, q, 2)
    Ae1_g = np.einsum("tqa,tma->tqm", Ae1, g)  # (A e1) . g_m
    term = np.einsum("tq,tqm,ql->tml", w, Ae1_g, phi)
    K1 = 1j * (term - np.transpose(term, (0, 2, 1)))
    pp = phi[:, :, None] * phi[:, None, :]  # (q, m, l)
    K2 = np.einsum("tq,tq,qml->tml", w, A[..., 0, 0], pp)
    Kc = np.einsum("tq,tq,qml->tml", w, c, pp)
    return K0, K1, K2, Kc


def gauss_points(mesh: PeriodicCellMesh, tri=None) -> np.ndarray:
    p = mesh.nodes[mesh.triangles if tri is None else mesh.triangles[tri]]
    return np.einsum("qn,tnd->tqd", GAUSS_BARY, p)


def active_triangles(mesh: PeriodicCellMesh, coeffs: TransformCoefficients | None) -> np.ndarray:
    """Triangles with at least one Gauss point where the coefficients are not trivial."""
    if coeffs is None or not coeffs.profile.is_perturbed:
        return np.zeros(0, dtype=int)
    centroid_x = mesh.nodes[mesh.triangles, 0]
    lo, hi = coeffs.profile.support
    cand = np.flatnonzero((centroid_x.max(axis=1) > lo) & (centroid_x.min(axis=1) < hi))
    if cand.size == 0:
        return cand
    active = coeffs.is_active(gauss_points(mesh, cand)).any(axis=1)
    return cand[active]


def _scatter(mesh: PeriodicCellMesh, tri, local) -> sp.csr_matrix:
    dofs = mesh.dof[mesh.triangles[tri]]
    rows = np.repeat(dofs, 3, axis=1).ravel()
    cols = np.tile(dofs, (1, 3)).ravel()
    vals = local.ravel()
    keep = (rows >= 0) & (cols >= 0)
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(mesh.M, mesh.M))


@dataclass(frozen=True)
class CellSystem:
    """Sparse cell matrix (volume minus DtN) and load vector."""

    matrix: sp.csc_matrix
    load: np.ndarray


@dataclass(eq=False)
class CellAssembler:
    """Precomputed alpha-polynomial parts of the cell matrix.

    ``coeffs`` switches on the transformed coefficients ``A_p, c_p``;
    ``None`` gives the unperturbed periodic operator.
    """

    mesh: PeriodicCellMesh
    k: float
    coeffs: TransformCoefficients | None = None
    J: int | None = None
    K0: sp.csr_matrix = field(init=False, repr=False)
    K1: sp.csr_matrix = field(init=False, repr=False)
    K2: sp.csr_matrix = field(init=False, repr=False)
    Kc: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        mesh = self.mesh
        if self.J is None:
            self.J = default_truncation(self.k, mesh.period)
        grads, area = p1_gradients(mesh)
        all_t = np.arange(len(mesh.triangles))
        stiff = np.einsum("tma,tla->tml", grads, grads) * area[:, None, None]
        mass = (np.ones((3, 3)) + np.eye(3))[None] * (area / 12.0)[:, None, None]
        d1 = grads[..., 0]
        drift = 1j * (area / 3.0)[:, None, None] * (d1[:, :, None] - d1[:, None, :])
        self.K0 = _scatter(mesh, all_t, stiff)
        self.K1 = _scatter(mesh, all_t, drift)
        self.K2 = _scatter(mesh, all_t, mass)
        self.Kc = self.K2.copy()
        tri = active_triangles(mesh, self.coeffs)
        if tri.size:
            A, c = self.coeffs(gauss_points(mesh, tri))
            A = A - np.eye(2)
            c = c - 1.0
            dK0, dK1, dK2, dKc = local_quadrature(mesh, tri, A, c, grads, area)
            self.K0 = self.K0 + _scatter(mesh, tri, dK0)
            self.K1 = self.K1 + _scatter(mesh, tri, dK1)
            self.K2 = self.K2 + _scatter(mesh, tri, dK2)
            self.Kc = self.Kc + _scatter(mesh, tri, dKc)
        self.orders = np.arange(-self.J, self.J + 1)
        self.fourier = trace_fourier_matrix(mesh, self.orders)
        self.top_dofs = mesh.dof[top_trace(mesh)[0]]

    def dtn(self, alpha: float) -> DtnOperator:
        return DtnOperator(self.k, alpha, self.mesh.period, self.J)

    def volume(self, alpha: float) -> sp.csr_matrix:
        return self.K0 + alpha * self.K1 + (alpha * alpha) * self.K2 - (self.k**2) * self.Kc

    def dtn_block(self, alpha: float) -> np.ndarray:
        """Dense top-trace block ``i L sum_j beta_j phihat_l(j) conj(phihat_m(j))``."""
        b = self.dtn(alpha).betas
        T = self.fourier
        return 1j * self.mesh.period * (np.conj(T) * b[None, :]) @ T.T

    def matrix(self, alpha: float, check_wood: bool = True) -> sp.csc_matrix:
        if check_wood:
            check_alpha(self.dtn(alpha))
        n = self.mesh.M
        top = self.top_dofs
        B = self.dtn_block(alpha)
        rows = np.repeat(top, len(top))
        cols = np.tile(top, len(top))
        Bs = sp.csr_matrix((B.ravel(), (rows, cols)), shape=(n, n))
        return (self.volume(alpha) - Bs).tocsc()

    def load(self, inc: IncidentField) -> np.ndarray:
        return incident_load(self.mesh, inc)


def check_alpha(dtn: DtnOperator, tol: float = WOOD_TOL) -> None:
    b = dtn.betas
    j = int(np.argmin(np.abs(b)))
    if abs(b[j]) < tol * dtn.k:
        raise WoodAnomalyError(dtn.alpha, int(dtn.orders[j]), b[j])


def assemble_cell(mesh: PeriodicCellMesh, dtn: DtnOperator,
                  coeffs: TransformCoefficients | None = None) -> sp.csc_matrix:
    """Cell matrix at ``dtn.alpha`` (periodized, DOF-merged, Dirichlet-free)."""
    if abs(dtn.period - mesh.period) > 1e-12 * mesh.period:
        raise ValueError("DtN period does not match the mesh")
    return CellAssembler(mesh, dtn.k, coeffs, dtn.J).matrix(dtn.alpha)


def incident_load(mesh: PeriodicCellMesh, inc: IncidentField) -> np.ndarray:
    """``int_top f conj(exp(i alpha x1) phi_m)``; exact since the phases cancel."""
    load = np.zeros(mesh.M, dtype=complex)
    top = mesh.dof[top_trace(mesh)[0]]
    f0 = inc.boundary_data(0.0, mesh.H)
    load[top] = f0 * mesh.dx
    return load


def splu(matrix: sp.spmatrix):
    """Sparse LU with a fill-reducing ordering suited to the near-symmetric pattern."""
    return spla.splu(sp.csc_matrix(matrix), permc_spec="MMD_AT_PLUS_A")


def relative_residual(matrix, x, b) -> float:
    nb = np.linalg.norm(b)
    r = np.linalg.norm(matrix @ x - b)
    return r / nb if nb > 0 else r


def solve_cell(mesh: PeriodicCellMesh, inc: IncidentField, J: int | None = None,
               coeffs: TransformCoefficients | None = None,
               assembler: CellAssembler | None = None,
               rtol: float = 1e-10) -> CellField:
    """Solve the alpha-quasi-periodic cell problem for the incident wave ``inc``."""
    if assembler is None:
        assembler = CellAssembler(mesh, inc.k, coeffs, J)
    K = assembler.matrix(inc.alpha)
    b = assembler.load(inc)
    if not np.any(b):
        return CellField(inc.alpha, np.zeros(mesh.M, dtype=complex), mesh)
    try:
        lu = splu(K)
    except RuntimeError as exc:
        raise WoodAnomalyError(inc.alpha, 0, 0.0) from exc
    x = lu.solve(b)
    res = relative_residual(K, x, b)
    if not res < rtol:
        raise RuntimeError(f"cell solve residual {res:.2e} exceeds {rtol:.0e}")
    log.debug("cell solve M=%d alpha=%g residual=%.2e", mesh.M, inc.alpha, res)
    return CellField(inc.alpha, x, mesh)


def reflection_coefficients(u_h: CellField, dtn: DtnOperator,
                            inc: IncidentField | None = None,
                            method: str = "nodal") -> dict[int, complex]:
    """Rayleigh amplitudes of the scattered field on ``x2 = H``.

    ``R_j`` is the ``j``-th Fourier coefficient of ``exp(-i alpha x1)(u_h - u_i)``
    on the top line, so amplitudes are referenced at ``x2 = H``.  ``inc``
    defaults to a unit-amplitude wave at the field's ``alpha``.

    ``method="nodal"`` applies the trapezoidal rule to the nodal trace, which
    is spectrally accurate for smooth periodic traces and so estimates the
    continuous amplitudes.  ``method="galerkin"`` integrates the P1 trace
    exactly; these coefficients satisfy the energy identity of the discrete
    problem to roundoff, whatever ``h``.
    """
    if inc is None:
        inc = IncidentField(dtn.k, u_h.alpha)
    mesh = u_h.mesh
    idx, x = top_trace(mesh)
    vals = u_h.coefficients[mesh.dof[idx]]
    if method == "galerkin":
        R = vals @ trace_fourier_matrix(mesh, dtn.orders)
    elif method == "nodal":
        kappa = dtn.dual_period * dtn.orders
        R = vals @ np.exp(-1j * np.outer(x, kappa)) / mesh.n1
    else:
        raise ValueError(f"unknown method {method!r}")
    R[dtn.J] -= inc.amplitude * np.exp(-1j * inc.beta0 * mesh.H)
    return {int(j): complex(r) for j, r in zip(dtn.orders, R)}


def energy_balance(R: dict[int, complex], dtn: DtnOperator) -> float:
    """``|sum_{propagating} (beta_j / beta_0) |R_j|^2 - 1|``."""
    b = dtn.betas
    prop = dtn.propagating()
    if not prop.any():
        raise ValueError("no propagating modes")
    b0 = beta(dtn.k, dtn.alpha, dtn.dual_period, 0).real
    total = 0.0
    for j, bj, p in zip(dtn.orders, b, prop):
        if p:
            total += bj.real / b0 * abs(R.get(int(j), 0.0)) ** 2
    return abs(total - 1.0)


def flat_exact_solution(inc: IncidentField, c: float):
    """Total field above the Dirichlet plane ``x2 = c`` for the wave ``inc``."""
    b0 = inc.beta0

    def u(x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        return inc.amplitude * np.exp(1j * inc.alpha * x1) * (
            np.exp(-1j * b0 * x2) - np.exp(-2j * b0 * c) * np.exp(1j * b0 * x2))

    return u


def exact_trace(mesh: PeriodicCellMesh, fn) -> Trace:
    """Nodal interpolant of ``fn`` on the closed top line of ``mesh``."""
    idx = mesh.top_nodes(include_left=True)
    x = mesh.nodes[idx, 0]
    return Trace(x, fn(x, np.full_like(x, mesh.H)))
