"""Periodic surfaces, local perturbations and the domain-flattening map.

A scattering surface is the graph of ``zeta_p = zeta + p`` where ``zeta`` is
periodic with period ``period`` and ``p`` is supported in a single cell.  The
perturbed strip is pulled back onto the periodic strip by

    Phi_p(x1, x2) = (x1, x2 + ((x2 - H) / (zeta(x1) - H))**3 * p(x1))

which fixes the line ``x2 = H`` and maps the base surface onto the perturbed
one.  The pulled-back Helmholtz operator has coefficients

    A_p = |det J| J^{-1} J^{-T},    c_p = |det J|,    J = grad Phi_p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Curve:
    """Scalar function of ``x1`` with an analytic first derivative.

    ``value`` and ``slope`` take and return numpy arrays.  User surfaces must
    supply both; nothing in the solver differentiates numerically.
    """

    value: ArrayFn
    slope: ArrayFn
    name: str = "curve"

    def __call__(self, x1):
        return self.value(np.asarray(x1, dtype=float))


def fourier_curve(c0: float, cos=(), sin=(), wavenumber: float = 1.0,
                  name: str = "fourier") -> Curve:
    """Finite Fourier series ``c0 + sum a_n cos(n w x) + b_n sin(n w x)``.

    Coefficient lists start at ``n = 1``.
    """
    a = np.asarray(cos, dtype=float)
    b = np.asarray(sin, dtype=float)

    def value(x):
        x = np.asarray(x, dtype=float)
        out = np.full_like(x, c0)
        for n, an in enumerate(a, start=1):
            out = out + an * np.cos(n * wavenumber * x)
        for n, bn in enumerate(b, start=1):
            out = out + bn * np.sin(n * wavenumber * x)
        return out

    def slope(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for n, an in enumerate(a, start=1):
            out = out - an * n * wavenumber * np.sin(n * wavenumber * x)
        for n, bn in enumerate(b, start=1):
            out = out + bn * n * wavenumber * np.cos(n * wavenumber * x)
        return out

    return Curve(value, slope, name)


def smooth_cutoff(t, a: float, b: float):
    """C-infinity bump on ``(a, b)``: ``exp(1 - 1/(1 - s^2))``, 1 at the centre.

    Returns ``(value, derivative)``.  Both vanish identically outside the
    open interval.
    """
    t = np.asarray(t, dtype=float)
    s = (2.0 * t - a - b) / (b - a)
    inside = np.abs(s) < 1.0
    val = np.zeros_like(t)
    der = np.zeros_like(t)
    si = s[inside]
    q = 1.0 - si * si
    v = np.exp(1.0 - 1.0 / q)
    val[inside] = v
    der[inside] = v * (-2.0 * si / q**2) * (2.0 / (b - a))
    return val, der


def _p1(x):
    x = np.asarray(x, dtype=float)
    val = np.zeros_like(x)
    der = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    q = xi * xi - 1.0
    e = np.exp(1.0 / q)
    de = e * (-2.0 * xi / q**2)
    sn = np.sin(np.pi * (xi + 1.0))
    dsn = np.pi * np.cos(np.pi * (xi + 1.0))
    cut, dcut = smooth_cutoff(xi, -1.0, 1.0)
    val[inside] = e * sn * cut
    der[inside] = de * sn * cut + e * dsn * cut + e * sn * dcut
    return val, der


def _p2(x):
    x = np.asarray(x, dtype=float)
    cut, dcut = smooth_cutoff(x, -np.pi, np.pi)
    base = (1.0 + np.cos(x)) / 4.0
    dbase = -np.sin(x) / 4.0
    return base * cut, dbase * cut + base * dcut


def _from_pair(fn, name):
    return Curve(lambda x: fn(x)[0], lambda x: fn(x)[1], name)


def builtin_surfaces() -> dict:
    """Catalogue of the benchmark surfaces (all 2*pi periodic).

    ``f1``/``f2`` are base profiles, ``p1``/``p2`` local perturbations with
    their support intervals under ``"support"``.  ``cutoff`` is the bump used
    to localise the perturbations.
    """
    f1 = Curve(
        lambda x: 1.9 + np.sin(x) / 3.0 - np.cos(2.0 * x) / 4.0,
        lambda x: np.cos(x) / 3.0 + np.sin(2.0 * x) / 2.0,
        "f1",
    )
    f2 = Curve(lambda x: 2.0 - np.cos(x) / 4.0, lambda x: np.sin(x) / 4.0, "f2")
    return {
        "f1": f1,
        "f2": f2,
        "p1": _from_pair(_p1, "p1"),
        "p2": _from_pair(_p2, "p2"),
        "support": {"p1": (-1.0, 1.0), "p2": (-np.pi, np.pi)},
        "cutoff": smooth_cutoff,
    }


@dataclass(frozen=True)
class SurfaceProfile:
    """Periodic base ``zeta`` plus a perturbation supported in ``support``.

    ``perturbation=None`` means the unperturbed surface.
    """

    period: float
    base: Curve
    perturbation: Curve | None = None
    support: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError("period must be positive")
        if self.perturbation is not None:
            lo, hi = self.support
            if not (-self.period / 2 - 1e-12 <= lo < hi <= self.period / 2 + 1e-12):
                raise ValueError("perturbation support must lie in one periodic cell")

    @property
    def dual_period(self) -> float:
        return 2.0 * np.pi / self.period

    @property
    def is_perturbed(self) -> bool:
        return self.perturbation is not None

    def _wrap(self, x1):
        # base evaluation wraps into the reference cell for roundoff-exact periodicity
        L = self.period
        return x1 - L * np.floor((x1 + L / 2) / L)

    def base_height(self, x1):
        x = self._wrap(np.asarray(x1, dtype=float))
        return self.base.value(x), self.base.slope(x)

    def perturbation_at(self, x1):
        x1 = np.asarray(x1, dtype=float)
        if self.perturbation is None:
            z = np.zeros_like(x1)
            return z, z
        lo, hi = self.support
        inside = (x1 > lo) & (x1 < hi)
        p = np.zeros_like(x1)
        dp = np.zeros_like(x1)
        if np.any(inside):
            p[inside] = self.perturbation.value(x1[inside])
            dp[inside] = self.perturbation.slope(x1[inside])
        return p, dp

    def in_support(self, x1):
        x1 = np.asarray(x1, dtype=float)
        if self.perturbation is None:
            return np.zeros(x1.shape, dtype=bool)
        lo, hi = self.support
        return (x1 > lo) & (x1 < hi)

    def with_period(self, period: float) -> "SurfaceProfile":
        """Same functions viewed with a multiple of the period (supercells)."""
        ratio = period / self.period
        if abs(ratio - round(ratio)) > 1e-12:
            raise ValueError("new period must be an integer multiple")
        return SurfaceProfile(period, self.base, self.perturbation, self.support)

    def unperturbed(self) -> "SurfaceProfile":
        return SurfaceProfile(self.period, self.base)


def eval_surface(profile: SurfaceProfile, x1, which: str = "base"):
    """Height and slope of the base (``"base"``) or perturbed surface."""
    h, dh = profile.base_height(x1)
    if which == "base":
        return h, dh
    if which != "perturbed":
        raise ValueError(f"unknown surface {which!r}")
    p, dp = profile.perturbation_at(x1)
    return h + p, dh + dp


@dataclass(frozen=True)
class DomainSpec:
    """Truncation height ``H`` and the matching height ``H0 < H``."""

    H: float = 4.0
    H0: float = 3.9

    def __post_init__(self):
        if not self.H0 < self.H:
            raise ValueError("need H0 < H")

    def check(self, profile: SurfaceProfile, samples: int = 2001) -> None:
        x = np.linspace(-profile.period / 2, profile.period / 2, samples)
        zeta, _ = eval_surface(profile, x, "base")
        zp, _ = eval_surface(profile, x, "perturbed")
        if np.min(zeta) <= 0 or np.min(zp) <= 0:
            raise ValueError("surfaces must stay positive")
        if max(zeta.max(), zp.max()) >= self.H0:
            raise ValueError("surfaces must lie below H0")


def map_phi(profile: SurfaceProfile, spec: DomainSpec, x):
    """Apply ``Phi_p`` to points ``x`` (shape ``(..., 2)``) of the periodic strip."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    zeta, _ = profile.base_height(x1)
    tol = 1e-12 * max(1.0, spec.H)
    if np.any(x2 < zeta - tol) or np.any(x2 > spec.H + tol):
        raise ValueError("points must satisfy zeta(x1) <= x2 <= H")
    p, _ = profile.perturbation_at(x1)
    r = (x2 - spec.H) / (zeta - spec.H)
    out = np.array(x, copy=True)
    out[..., 1] = x2 + r**3 * p
    return out


def phi_jacobian(profile: SurfaceProfile, spec: DomainSpec, x):
    """Analytic Jacobian of ``Phi_p``; returns ``(d x2'/d x1, d x2'/d x2)``.

    The first row of the Jacobian is always ``(1, 0)``.
    """
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    zeta, dzeta = profile.base_height(x1)
    p, dp = profile.perturbation_at(x1)
    gap = zeta - spec.H
    d = x2 - spec.H
    a = d**3 * (dp / gap**3 - 3.0 * p * dzeta / gap**4)
    b = 1.0 + 3.0 * d**2 * p / gap**3
    return a, b


@dataclass(frozen=True)
class TransformCoefficients:
    """Evaluators for ``A_p``, ``c_p`` and ``grad Phi_p`` of one profile."""

    profile: SurfaceProfile
    spec: DomainSpec = field(default_factory=DomainSpec)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        a, b = phi_jacobian(self.profile, self.spec, x)
        jac = np.zeros(x.shape[:-1] + (2, 2))
        jac[..., 0, 0] = 1.0
        jac[..., 1, 0] = a
        jac[..., 1, 1] = b
        return jac

    def __call__(self, x):
        """Return ``(A, c)`` with shapes ``(..., 2, 2)`` and ``(...)``."""
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        A = np.zeros(shape + (2, 2))
        A[..., 0, 0] = 1.0
        A[..., 1, 1] = 1.0
        c = np.ones(shape)
        mask = self.profile.in_support(x[..., 0])
        if not np.any(mask):
            return A, c
        a, b = phi_jacobian(self.profile, self.spec, x[mask])
        if np.any(b <= 0):
            raise ValueError("degenerate map: perturbation too large relative to H - zeta")
        A[mask, 0, 0] = b
        A[mask, 0, 1] = -a
        A[mask, 1, 0] = -a
        A[mask, 1, 1] = (1.0 + a * a) / b
        c[mask] = b
        return A, c

    def is_active(self, x):
        """True where ``A_p != I`` or ``c_p != 1``."""
        A, c = self(x)
        eye = np.eye(2)
        return np.any(A != eye, axis=(-2, -1)) | (c != 1.0)


def transform_coefficients(profile: SurfaceProfile, spec: DomainSpec, x):
    """``(A_p(x), c_p(x))`` at points ``x`` of shape ``(..., 2)``."""
    return TransformCoefficients(profile, spec)(x)


def make_profile(base: str | Curve, perturbation: str | Curve | None = None,
                 support: tuple[float, float] | None = None,
                 period: float = 2 * math.pi) -> SurfaceProfile:
    """Build a profile from catalogue names or explicit curves."""
    cat = builtin_surfaces()
    base_curve = cat[base] if isinstance(base, str) else base
    if perturbation is None:
        return SurfaceProfile(period, base_curve)
    if isinstance(perturbation, str):
        pert = cat[perturbation]
        support = support or cat["support"][perturbation]
    else:
        pert = perturbation
        if support is None:
            raise ValueError("explicit perturbations need a support interval")
    return SurfaceProfile(period, base_curve, pert, tuple(support))
