"""Discrete Brillouin-zone grids and the exact inverse of the discrete Bloch transform.

A Bloch field is a family ``w(alpha, x) = exp(i alpha x1) W_j(x)`` that is
constant in ``alpha`` on each panel of a grid, with ``W_j`` periodic P1
functions.  Its inverse transform is

    u(x) = C sum_j c_j(x1) W_j(x),    C = (L / 2 pi)^(1/2),

where ``c_j(x1) = int_panel exp(i alpha x1) d alpha`` in closed form (the
``"exact"`` kernel) or ``omega_j exp(i alpha_j x1)`` (the ``"midpoint"``
kernel used with nonuniform, reparametrized grids).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import PeriodicCellMesh

KERNELS = ("exact", "midpoint")


@dataclass(frozen=True, eq=False)
class BrillouinGrid:
    """Quasi-momentum nodes with panel weights.

    ``kernel="exact"`` requires uniform panels centred on the nodes.
    """

    period: float
    alphas: np.ndarray
    weights: np.ndarray
    kernel: str = "exact"
    tag: str = "uniform"
    t_nodes: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}")
        a = np.asarray(self.alphas, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if a.shape != w.shape or a.ndim != 1 or a.size == 0:
            raise ValueError("alphas and weights must be matching 1-d arrays")
        if np.any(np.diff(a) < 0) or (self.kernel == "exact" and np.any(np.diff(a) <= 0)):
            raise ValueError("grid nodes must be increasing")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if self.kernel == "exact" and not np.allclose(w, w[0], rtol=1e-12, atol=0):
            raise ValueError("exact panel kernel needs uniform weights")
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "weights", w)

    @property
    def N(self) -> int:
        return len(self.alphas)

    @property
    def dual_period(self) -> float:
        return 2 * math.pi / self.period

    @property
    def norm_const(self) -> float:
        return math.sqrt(self.period / (2 * math.pi))

    def kernel_values(self, x1) -> np.ndarray:
        """``c_j(x1)`` for all nodes: shape ``(N,) + x1.shape``."""
        x1 = np.asarray(x1, dtype=float)
        w = self.weights.reshape((-1,) + (1,) * x1.ndim)
        return w * self.unit_kernel(x1)

    def unit_kernel(self, x1) -> np.ndarray:
        """``c_j(x1) / omega_j``, well defined even where a weight underflows."""
        x1 = np.asarray(x1, dtype=float)
        a = self.alphas.reshape((-1,) + (1,) * x1.ndim)
        phase = np.exp(1j * a * x1[None])
        if self.kernel == "midpoint":
            return phase
        return phase * _sinc_envelope(self, x1)[None]

    def active(self, rel: float = 1e-15) -> np.ndarray:
        """Nodes whose weight is above roundoff of the weight sum."""
        return self.weights > rel * self.weights.sum()

    def with_kernel(self, kernel: str) -> "BrillouinGrid":
        return BrillouinGrid(self.period, self.alphas, self.weights, kernel, self.tag, self.t_nodes)


def _sinc_envelope(grid: BrillouinGrid, x1) -> np.ndarray:
    # panel half-width times x1; np.sinc(t) = sin(pi t)/(pi t)
    half = grid.dual_period / (2 * grid.N)
    return np.sinc(half * np.asarray(x1, dtype=float) / math.pi)


def brillouin_grid(N: int, period: float, kernel: str = "exact") -> BrillouinGrid:
    """Uniform midpoint grid ``alpha_j = -L*/2 + (2j - 1) L* / (2N)``, ``j = 1..N``."""
    if N < 1:
        raise ValueError("need N >= 1")
    ds = 2 * math.pi / period
    j = np.arange(1, N + 1)
    alphas = -ds / 2 + (2 * j - 1) * ds / (2 * N)
    return BrillouinGrid(period, alphas, np.full(N, ds / N), kernel)


def g_factor(grid: BrillouinGrid, j: int, x1):
    """``2 exp(-i alpha_j x1) sin(pi x1 / (N L)) / x1``, equal to ``2 pi/(N L)`` at 0.

    This is the panel integral of ``exp(-i alpha x1)``; ``j`` is 1-based.
    """
    if not 1 <= j <= grid.N:
        raise IndexError("grid index out of range")
    x1 = np.asarray(x1, dtype=float)
    NL = grid.N * grid.period
    val = (2 * math.pi / NL) * np.sinc(x1 / NL) * np.exp(-1j * grid.alphas[j - 1] * x1)
    return val if val.ndim else complex(val)


@dataclass(eq=False)
class BlochField:
    """Panel coefficients ``W`` of shape ``(N, M)`` on the free dofs of a mesh."""

    grid: BrillouinGrid
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=complex)
        if self.coefficients.ndim != 2 or self.coefficients.shape[0] != self.grid.N:
            raise ValueError("coefficients must have shape (N, M)")
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError("non-finite Bloch coefficients")

    @property
    def M(self) -> int:
        return self.coefficients.shape[1]

    @classmethod
    def zeros(cls, grid: BrillouinGrid, M: int) -> "BlochField":
        return cls(grid, np.zeros((grid.N, M), dtype=complex))


def inverse_bloch(field: BlochField, mesh: PeriodicCellMesh, cell: int = 0) -> np.ndarray:
    """Nodal values on every mesh node of cell ``cell`` (bottom nodes are 0)."""
    if field.M != mesh.M:
        raise ValueError("field and mesh disagree on M")
    grid = field.grid
    out = np.zeros(mesh.n_nodes, dtype=complex)
    free = np.flatnonzero(mesh.dof >= 0)
    x1 = mesh.nodes[free, 0] + mesh.period * cell
    ker = grid.kernel_values(x1)  # (N, n_free)
    W = field.coefficients[:, mesh.dof[free]]
    out[free] = grid.norm_const * np.einsum("jn,jn->n", ker, W)
    return out


def window_cells(N: int) -> np.ndarray:
    """Cell shifts ``-N/2 .. N/2 - 1`` (``-(N-1)//2 ..`` for odd ``N``)."""
    start = -(N // 2)
    return np.arange(start, start + N)


def forward_bloch_samples(values, grid: BrillouinGrid, mesh: PeriodicCellMesh,
                          exact: bool = True) -> BlochField:
    """Bloch coefficients of a nodal field given on the window cells.

    ``values[c]`` holds the physical field at the free dofs (right-column
    representatives) of cell ``window_cells(N)[c]``.  The plain sum

        W_j(x) = C exp(-i alpha_j x1) sum_c u(x + L c) exp(-i alpha_j L c)

    is the sampled Bloch transform.  With ``exact=True`` and the exact kernel
    each sample is first divided by the panel envelope ``sinc`` so that the
    result is the exact preimage under :func:`inverse_bloch`.  Requires
    uniform weights.
    """
    values = np.asarray(values, dtype=complex)
    N = grid.N
    if values.shape != (N, mesh.M):
        raise ValueError("values must have shape (N, M)")
    if not np.allclose(grid.weights, grid.weights[0], rtol=1e-12, atol=0):
        raise ValueError("forward transform needs a uniform grid")
    cells = window_cells(N)
    x = mesh.nodes[mesh.free_nodes(), 0]
    X = x[None, :] + mesh.period * cells[:, None]  # (c, M)
    if exact and grid.kernel == "exact":
        values = values / _sinc_envelope(grid, X)
    phase = np.exp(-1j * np.outer(grid.alphas, mesh.period * cells))  # (j, c)
    W = grid.norm_const * np.exp(-1j * np.outer(grid.alphas, x)) * (phase @ values)
    return BlochField(grid, W)


def window_values(field: BlochField, mesh: PeriodicCellMesh) -> np.ndarray:
    """Inverse transform on the window cells, restricted to free dofs: ``(N, M)``."""
    rep = mesh.free_nodes()
    return np.stack([inverse_bloch(field, mesh, c)[rep] for c in window_cells(field.grid.N)])
