"""Convergence studies: relative top-line errors against a finest run."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..coupled import SchurSolveError, solve_standard, total_trace
from ..geometry import DomainSpec, TransformCoefficients, make_profile
from ..highorder import solve_high_order
from ..mesh import Trace, mesh_for_width, trace_l2_error
from ..quasiperiodic import CellAssembler, IncidentField, solve_cell
from .config import StudyConfig

log = logging.getLogger(__name__)


class StudyError(RuntimeError):
    """A solve inside a study failed; carries the offending ``(N, h)``."""

    def __init__(self, N: int, h: float, cause: Exception):
        super().__init__(f"run N={N}, h={h} failed: {cause}")
        self.N, self.h, self.cause = N, h, cause


@dataclass
class ErrorTable:
    """Relative errors, rows indexed by ``N`` and columns by ``h``.

    ``is_reference`` marks the cell that coincides with the reference run;
    it holds 0 and is left out of order fits.
    """

    N: list[int]
    h: list[float]
    errors: np.ndarray
    reference: tuple[int, float]
    is_reference: np.ndarray = None
    timings: dict = field(default_factory=dict)

    def __post_init__(self):
        self.errors = np.asarray(self.errors, dtype=float).reshape(len(self.N), len(self.h))
        if self.is_reference is None:
            self.is_reference = np.zeros(self.errors.shape, dtype=bool)
            for i, n in enumerate(self.N):
                for j, hh in enumerate(self.h):
                    self.is_reference[i, j] = (n, hh) == tuple(self.reference)
        self.is_reference = np.asarray(self.is_reference, dtype=bool)
        if np.any(self.errors < 0) or not np.all(np.isfinite(self.errors)):
            raise ValueError("errors must be finite and nonnegative")

    def rows(self):
        """``(N, h, err)`` in row-major order."""
        for i, n in enumerate(self.N):
            for j, hh in enumerate(self.h):
                yield n, hh, float(self.errors[i, j])

    def order_in_h(self, row: int = -1) -> float | None:
        """Fitted order in ``h`` along one row (``err ~ h^p``)."""
        mask = ~self.is_reference[row]
        return fit_order(np.asarray(self.h)[mask], self.errors[row][mask])

    def order_in_N(self, col: int = -1) -> float | None:
        """Fitted order in ``N`` down one column (``err ~ N^-p``)."""
        mask = ~self.is_reference[:, col]
        p = fit_order(np.asarray(self.N, dtype=float)[mask], self.errors[:, col][mask])
        return None if p is None else -p

    def orders(self) -> dict:
        return {"h": [self.order_in_h(i) for i in range(len(self.N))],
                "N": [self.order_in_N(j) for j in range(len(self.h))]}

    def format(self) -> str:
        head = "N \\ h".ljust(8) + "".join(f"{hh:>12g}" for hh in self.h)
        lines = [head]
        for i, n in enumerate(self.N):
            cells = ["ref".rjust(12) if self.is_reference[i, j] else f"{self.errors[i, j]:12.3e}"
                     for j in range(len(self.h))]
            lines.append(f"{n:<8d}" + "".join(cells))
        return "\n".join(lines)


def fit_order(x, err, points: int = 3) -> float | None:
    """Least-squares slope of ``log err`` against ``log x`` over the last points."""
    x = np.asarray(x, dtype=float)
    err = np.asarray(err, dtype=float)
    ok = err > 0
    x, err = x[ok][-points:], err[ok][-points:]
    if len(x) < 2:
        return None
    return float(np.polyfit(np.log(x), np.log(err), 1)[0])


@dataclass
class _Level:
    """Everything that depends only on the mesh width."""

    mesh: object
    assembler: CellAssembler
    coeffs: TransformCoefficients | None
    u_h: object


def _prepare(config: StudyConfig, h: float) -> _Level:
    profile = make_profile(config.surface, config.perturbation, period=config.period)
    spec = DomainSpec(config.H, config.H0)
    spec.check(profile)
    mesh = mesh_for_width(profile, spec, h)
    assembler = CellAssembler(mesh, config.k, None, config.J)
    inc = IncidentField(config.k, config.alpha)
    u_h = solve_cell(mesh, inc, assembler=assembler)
    coeffs = TransformCoefficients(profile, spec) if profile.is_perturbed else None
    return _Level(mesh, assembler, coeffs, u_h)


def run_single(config: StudyConfig, level: _Level, N: int):
    """One coupled solve; returns ``(solution, system)``."""
    if config.method == "standard":
        return solve_standard(level.mesh, config.k, level.coeffs, level.u_h, N,
                              assembler=level.assembler, memory_mb=config.memory_mb)
    return solve_high_order(level.mesh, config.k, level.coeffs, level.u_h, N,
                            kind=config.reparam, assembler=level.assembler,
                            memory_mb=config.memory_mb)


def _trace(config: StudyConfig, level: _Level, N: int, h: float) -> Trace:
    try:
        sol, _ = run_single(config, level, N)
    except (SchurSolveError, ArithmeticError, ValueError, RuntimeError) as exc:
        raise StudyError(N, h, exc) from exc
    return total_trace(level.u_h, sol.field, level.mesh)


def run_study(config: StudyConfig, progress: Callable[[str], None] | None = None,
              reference: Trace | None = None) -> ErrorTable:
    """Solve every ``(N, h)`` of the config and tabulate errors.

    The cell problem is solved once per mesh width; the reference run may
    be supplied precomputed as ``reference`` (its total top-line trace).
    """
    say = progress or log.info
    config.validate()
    ref_N, ref_h = config.reference
    timings = {}
    levels_needed = list(config.h_list)
    traces: dict[tuple[int, float], Trace] = {}
    t_all = time.perf_counter()
    if reference is None and ref_h not in levels_needed:
        t0 = time.perf_counter()
        level = _prepare(config, ref_h)
        reference = _trace(config, level, ref_N, ref_h)
        del level
        timings[(ref_N, ref_h)] = time.perf_counter() - t0
        say(f"reference N={ref_N} h={ref_h}: {timings[(ref_N, ref_h)]:.1f}s")
    for h in levels_needed:
        level = _prepare(config, h)
        Ns = list(config.N_list)
        if reference is None and h == ref_h and ref_N not in Ns:
            Ns.append(ref_N)
        for N in Ns:
            t0 = time.perf_counter()
            traces[(N, h)] = _trace(config, level, N, h)
            timings[(N, h)] = time.perf_counter() - t0
            say(f"N={N} h={h}: {timings[(N, h)]:.1f}s")
        del level
    if reference is None:
        reference = traces[(ref_N, ref_h)]
    errors = np.zeros((len(config.N_list), len(config.h_list)))
    for i, N in enumerate(config.N_list):
        for j, h in enumerate(config.h_list):
            errors[i, j] = 0.0 if (N, h) == (ref_N, ref_h) else trace_l2_error(traces[(N, h)], reference)
    timings["total"] = time.perf_counter() - t_all
    return ErrorTable(list(config.N_list), list(config.h_list), errors, (ref_N, ref_h),
                      timings={_key(k): v for k, v in timings.items()})


def _key(k) -> str:
    return k if isinstance(k, str) else f"N={k[0]},h={k[1]}"


def monotone(values, strict: bool = True) -> bool:
    """Whether ``values`` decrease (strictly by default)."""
    v = np.asarray(values, dtype=float)
    d = np.diff(v)
    return bool(np.all(d < 0) if strict else np.all(d <= 0))


__all__ = ["ErrorTable", "StudyError", "fit_order", "monotone", "run_single", "run_study"]
