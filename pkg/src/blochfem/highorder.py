"""Brillouin-zone reparametrization around Wood anomalies.

The Bloch solution has square-root branch points in ``alpha`` where some
``|alpha + j L*| = k``.  Anchoring the zone at such a point and substituting
``alpha = g(t)`` on each interval between consecutive anomalies, with ``g``
flat to high order at both ends, turns the singular integrand into a smooth
one that the midpoint rule integrates to high order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from .bloch import BrillouinGrid
from .coupled import CoupledSolution, CoupledSystem, coupling_localize, solve_coupled
from .geometry import TransformCoefficients
from .mesh import CellField, PeriodicCellMesh
from .quasiperiodic import CellAssembler

KINDS = ("g1", "g2", "linear")


@dataclass(frozen=True)
class AnomalySet:
    """Anomaly points of the re-anchored zone ``(a0, a0 + L*]``.

    ``points`` are sorted and include ``a0`` and ``a0 + L*``.
    """

    k: float
    period: float
    k_low: float
    case: int
    points: tuple[float, ...]

    @property
    def dual_period(self) -> float:
        return 2 * math.pi / self.period

    @property
    def anchor(self) -> float:
        return self.points[0]

    @property
    def intervals(self) -> list[tuple[float, float]]:
        return list(zip(self.points[:-1], self.points[1:]))


def anomaly_set(k: float, period: float, tol: float = 1e-12) -> AnomalySet:
    """Classify ``S_L`` by ``k_low = min_n |n L* - k|``."""
    if k <= 0:
        raise ValueError("k must be positive")
    ds = 2 * math.pi / period
    n = round(k / ds)
    k_low = abs(n * ds - k)
    if abs(k_low) <= tol * max(1.0, ds):
        k_low = 0.0
        case = 1
    elif abs(k_low - ds / 2) <= tol * max(1.0, ds):
        k_low = ds / 2
        case = 1
    else:
        case = 2
    if case == 1:
        pts = (-k_low, ds - k_low)
    else:
        pts = (-k_low, k_low, ds - k_low)
    return AnomalySet(k, period, k_low, case, pts)


@dataclass(frozen=True)
class Reparametrization:
    """Monotone map ``g`` of ``[A0, A1]`` onto itself with flat ends."""

    kind: str
    A0: float
    A1: float
    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    flatness: str

    def __call__(self, t):
        return self.value(np.asarray(t, dtype=float))


def _g1(A0, A1):
    L = A1 - A0

    def G(tau):
        # int_0^tau u^3 (1-u)^3 du, normalized by B(4, 4) = 1/140
        return 140.0 * (tau**4 / 4 - 3 * tau**5 / 5 + tau**6 / 2 - tau**7 / 7)

    def value(t):
        tau = np.clip((t - A0) / L, 0.0, 1.0)
        return A0 + L * G(tau)

    def derivative(t):
        tau = np.clip((t - A0) / L, 0.0, 1.0)
        return 140.0 * tau**3 * (1 - tau) ** 3

    return value, derivative


def _g2(A0, A1):
    L = A1 - A0
    scale = 1.0 / (L * L)

    def density(tau):
        # exp(1/((s-A0)(s-A1))) rescaled by exp(4/L^2) so the peak is 1
        tau = np.asarray(tau, dtype=float)
        out = np.zeros_like(tau)
        inside = (tau > 0) & (tau < 1)
        ti = tau[inside]
        out[inside] = np.exp(-scale * (1.0 / (ti * (1 - ti)) - 4.0))
        return out

    def dens1(u):
        return float(density(np.array(u)))

    half, _ = integrate.quad(dens1, 0.0, 0.5, epsabs=0.0, epsrel=1e-13, limit=200)
    total = 2.0 * half
    if not np.isfinite(total) or total <= 0:
        raise FloatingPointError("non-finite normalization")

    def primitive(tau):
        tau = float(np.clip(tau, 0.0, 1.0))
        if tau <= 0.5:
            v, _ = integrate.quad(dens1, 0.0, tau, epsabs=0.0, epsrel=1e-13, limit=200)
            return v / total
        v, _ = integrate.quad(dens1, tau, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)
        return 1.0 - v / total

    def value(t):
        tau = (np.asarray(t, dtype=float) - A0) / L
        return A0 + L * np.vectorize(primitive, otypes=[float])(tau)

    def derivative(t):
        tau = (np.asarray(t, dtype=float) - A0) / L
        return density(tau) / total

    return value, derivative


def make_reparam(kind: str, A0: float, A1: float) -> Reparametrization:
    """``g1`` (cubic-order flat ends), ``g2`` (exponentially flat) or ``linear``."""
    if not A0 < A1:
        raise ValueError("need A0 < A1")
    if kind == "g1":
        v, d = _g1(A0, A1)
        return Reparametrization(kind, A0, A1, v, d, "delta = O(t^2)")
    if kind == "g2":
        v, d = _g2(A0, A1)
        return Reparametrization(kind, A0, A1, v, d, "delta = o(t^n) for all n")
    if kind == "linear":
        return Reparametrization(kind, A0, A1, lambda t: np.asarray(t, dtype=float),
                                 lambda t: np.ones_like(np.asarray(t, dtype=float)), "none")
    raise ValueError(f"unknown reparametrization {kind!r}; choose from {KINDS}")


def transformed_grid(N: int, anomalies: AnomalySet, kind: str) -> BrillouinGrid:
    """Midpoint ``t``-nodes per anomaly interval, mapped through ``g``.

    Nodes are ``alpha_i = g(t_i)`` with weights ``g'(t_i) dt``, so the grid
    is a Nystrom rule for ``int w(g(t)) g'(t) dt`` and uses the midpoint
    inverse-Bloch kernel.
    """
    parts = anomalies.intervals
    if N % len(parts):
        raise ValueError(f"N={N} is not divisible by the {len(parts)} anomaly intervals")
    n = N // len(parts)
    alphas, weights, ts = [], [], []
    for A0, A1 in parts:
        g = make_reparam(kind, A0, A1)
        dt = (A1 - A0) / n
        t = A0 + (np.arange(n) + 0.5) * dt
        a = g(t)
        w = g.derivative(t) * dt
        # beta is not resolved in double precision this close to the anomaly;
        # such nodes carry relative weight below 1e-12
        tol = 1e-14 * anomalies.dual_period
        w[(a - A0 <= tol) | (A1 - a <= tol)] = 0.0
        alphas.append(a)
        weights.append(w)
        ts.append(t)
    return BrillouinGrid(anomalies.period, np.concatenate(alphas), np.concatenate(weights),
                         kernel="midpoint", tag=kind, t_nodes=np.concatenate(ts))


def coarse_grid_size(N: int, parts: int, target: int = 16) -> int | None:
    """Coarse Brillouin grid size for two-level solves, or ``None``."""
    Nc = max(parts, (target // parts) * parts)
    return Nc if 4 * Nc <= N else None


def solve_high_order(mesh: PeriodicCellMesh, k: float, coeffs: TransformCoefficients | None,
                     u_h: CellField, N: int, kind: str = "g1", J: int | None = None,
                     assembler: CellAssembler | None = None, method: str = "auto",
                     memory_mb: float = 2700.0) -> tuple[CoupledSolution, CoupledSystem]:
    """Coupled solve on the reparametrized grid.

    Returns the solution and the system; the total field is
    ``u_h + J^{-1} w`` as for the uniform grid.
    """
    anomalies = anomaly_set(k, mesh.period)
    if assembler is None:
        assembler = CellAssembler(mesh, k, None, J)
    coupling = coupling_localize(mesh, coeffs, k)
    coarse = None
    fine_budget = memory_mb
    Nc = coarse_grid_size(N, len(anomalies.intervals))
    if method in ("auto", "twolevel") and Nc is not None:
        coarse = CoupledSystem(mesh, transformed_grid(Nc, anomalies, kind), assembler,
                               coupling, u_h, 0.6 * memory_mb)
        fine_budget = 0.4 * memory_mb
    system = CoupledSystem(mesh, transformed_grid(N, anomalies, kind), assembler, coupling,
                           u_h, fine_budget)
    return solve_coupled(system, method=method, coarse=coarse), system
