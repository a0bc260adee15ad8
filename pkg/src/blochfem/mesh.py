"""Structured triangulations of one periodic cell and P1 bookkeeping."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import DomainSpec, SurfaceProfile, eval_surface

BOTTOM, TOP, LEFT, RIGHT, INTERIOR = "bottom", "top", "left", "right", "interior"


@dataclass(frozen=True, eq=False)
class PeriodicCellMesh:
    """Mapped-grid mesh of ``{zeta(x1) < x2 < H, -L/2 <= x1 <= L/2}``.

    Node ``(i, r)`` (column ``i = 0..n1``, row ``r = 0..n2``) has index
    ``i * (n2 + 1) + r``.  Bottom nodes carry the Dirichlet condition and get
    no unknown; column 0 is merged into column ``n1`` so ``dof`` numbers the
    periodic P1 space of dimension ``M = n1 * n2``.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    n1: int
    n2: int
    period: float
    H: float
    dof: np.ndarray

    @property
    def M(self) -> int:
        return self.n1 * self.n2

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def dx(self) -> float:
        return self.period / self.n1

    def node_index(self, i, r):
        return np.asarray(i) * (self.n2 + 1) + np.asarray(r)

    @property
    def h(self) -> float:
        return float(self._edge_lengths().max())

    def _edge_lengths(self):
        p = self.nodes[self.triangles]
        e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
        return np.linalg.norm(e, axis=2)

    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def quality_ratio(self) -> float:
        """Max triangle diameter over min inradius."""
        lengths = self._edge_lengths()
        inradius = 2.0 * self.areas() / lengths.sum(axis=1)
        return float(lengths.max() / inradius.min())

    def tags(self) -> np.ndarray:
        i, r = np.divmod(np.arange(self.n_nodes), self.n2 + 1)
        t = np.full(self.n_nodes, INTERIOR, dtype=object)
        t[i == 0] = LEFT
        t[i == self.n1] = RIGHT
        t[r == self.n2] = TOP
        t[r == 0] = BOTTOM
        return t

    def periodic_pairs(self) -> np.ndarray:
        """Rows ``(left_node, right_node)`` for every row index."""
        r = np.arange(self.n2 + 1)
        return np.stack([self.node_index(0, r), self.node_index(self.n1, r)], axis=1)

    def free_nodes(self) -> np.ndarray:
        """Representative mesh node of each dof (columns 1..n1, rows 1..n2)."""
        rep = np.empty(self.M, dtype=int)
        owners = np.flatnonzero(self.dof >= 0)
        i = owners // (self.n2 + 1)
        keep = owners[i > 0]
        rep[self.dof[keep]] = keep
        return rep

    def top_nodes(self, include_left: bool = False) -> np.ndarray:
        start = 0 if include_left else 1
        return self.node_index(np.arange(start, self.n1 + 1), self.n2)

    def to_json(self) -> str:
        return json.dumps({
            "period": self.period,
            "H": self.H,
            "n1": self.n1,
            "n2": self.n2,
            "nodes": self.nodes.tolist(),
            "triangles": self.triangles.tolist(),
            "tags": self.tags().tolist(),
        })


def build_mesh(profile: SurfaceProfile, spec: DomainSpec, n1: int, n2: int,
               h_max: float | None = None) -> PeriodicCellMesh:
    """Structured mesh on the unperturbed cell.

    Columns are uniform in ``x1``; along each column the nodes interpolate
    linearly between ``zeta(x1)`` and ``H``.  Every quad is cut along its
    shorter diagonal.
    """
    if n1 < 4 or n2 < 2:
        raise ValueError("need n1 >= 4 and n2 >= 2")
    L = profile.period
    x1 = -L / 2 + L * np.arange(n1 + 1) / n1
    zeta, _ = eval_surface(profile, x1, "base")
    # left/right columns must match exactly, not just up to roundoff in zeta
    zeta[0] = zeta[-1]
    if np.any(zeta >= spec.H):
        raise ValueError("surface must lie below H")
    s = np.arange(n2 + 1) / n2
    X1 = np.repeat(x1, n2 + 1)
    X2 = (zeta[:, None] + (spec.H - zeta)[:, None] * s[None, :]).ravel()
    X2[n2::n2 + 1] = spec.H
    nodes = np.column_stack([X1, X2])

    i, r = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    i, r = i.ravel(), r.ravel()
    a = i * (n2 + 1) + r
    b = (i + 1) * (n2 + 1) + r
    c = b + 1
    d = a + 1
    # cut each quad along its shorter diagonal
    ac = np.linalg.norm(nodes[c] - nodes[a], axis=1)
    bd = np.linalg.norm(nodes[d] - nodes[b], axis=1)
    use_ac = ac <= bd * (1 + 1e-12)
    tris = np.concatenate([
        np.column_stack([a, b, c])[use_ac], np.column_stack([a, c, d])[use_ac],
        np.column_stack([a, b, d])[~use_ac], np.column_stack([b, c, d])[~use_ac],
    ])

    dof = np.full(len(nodes), -1, dtype=int)
    ii, rr = np.divmod(np.arange(len(nodes)), n2 + 1)
    free = rr > 0
    col = np.where(ii == 0, n1, ii)
    dof[free] = (col[free] - 1) * n2 + (rr[free] - 1)

    mesh = PeriodicCellMesh(nodes, tris, n1, n2, L, spec.H, dof)
    areas = mesh.areas()
    if np.any(areas <= 1e-14 * mesh.h**2):
        raise ValueError("degenerate triangle")
    if h_max is not None and mesh.h > h_max:
        raise ValueError(f"mesh width {mesh.h:.4g} exceeds h_max={h_max}")
    return mesh


def mesh_for_width(profile: SurfaceProfile, spec: DomainSpec, h: float) -> PeriodicCellMesh:
    """Coarsest structured mesh whose max triangle diameter is at most ``h``."""
    x = np.linspace(-profile.period / 2, profile.period / 2, 4001)
    zeta, _ = eval_surface(profile, x, "base")
    height = spec.H - zeta.min()
    step = h / math.sqrt(2.0)
    n1 = max(4, math.ceil(profile.period / step))
    n2 = max(2, math.ceil(height / step))
    mesh = build_mesh(profile, spec, n1, n2)
    while mesh.h > h:
        scale = mesh.h / h * 1.0001
        n1 = max(n1 + 1, math.ceil(n1 * scale))
        n2 = max(n2 + 1, math.ceil(n2 * scale))
        mesh = build_mesh(profile, spec, n1, n2)
    return mesh


def p1_gradients(mesh: PeriodicCellMesh):
    """Constant gradients of the three barycentric hats: ``(t, 3, 2)``, and areas."""
    p = mesh.nodes[mesh.triangles]
    area = mesh.areas()
    # rotate opposite edges by -90 degrees
    e0 = p[:, 2] - p[:, 1]
    e1 = p[:, 0] - p[:, 2]
    e2 = p[:, 1] - p[:, 0]
    edges = np.stack([e0, e1, e2], axis=1)
    grads = np.stack([-edges[..., 1], edges[..., 0]], axis=-1) / (2.0 * area)[:, None, None]
    return grads, area


def top_trace(mesh: PeriodicCellMesh):
    """Free top nodes ordered by ``x1`` on ``(-L/2, L/2]``: ``(indices, x1)``."""
    idx = mesh.top_nodes()
    return idx, mesh.nodes[idx, 0]


def p1_mass_matrix(mesh: PeriodicCellMesh) -> sp.csr_matrix:
    """Full (unmerged, Dirichlet nodes kept) P1 mass matrix."""
    area = mesh.areas()
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    vals = (area[:, None, None] * local[None]).ravel()
    n = mesh.n_nodes
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def unmerge(mesh: PeriodicCellMesh, coefficients) -> np.ndarray:
    """Periodic free-dof vector to values on every mesh node (bottom = 0)."""
    coefficients = np.asarray(coefficients)
    out = np.zeros(mesh.n_nodes, dtype=coefficients.dtype)
    free = mesh.dof >= 0
    out[free] = coefficients[mesh.dof[free]]
    return out


def merge(mesh: PeriodicCellMesh, nodal) -> np.ndarray:
    """Inverse of :func:`unmerge`; right-column values represent each pair."""
    return np.asarray(nodal)[mesh.free_nodes()]


@dataclass
class CellField:
    """Member of ``V_h^alpha``: ``exp(i alpha x1)`` times a periodic P1 function.

    ``coefficients`` are the periodic part on the ``M`` free dofs.
    """

    alpha: float
    coefficients: np.ndarray
    mesh: PeriodicCellMesh

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=complex)
        if self.coefficients.shape != (self.mesh.M,):
            raise ValueError("coefficient vector must have length M")

    def nodal_values(self, cell: int = 0) -> np.ndarray:
        """Physical values at every mesh node of cell ``cell`` (Dirichlet = 0)."""
        mesh = self.mesh
        out = np.zeros(mesh.n_nodes, dtype=complex)
        free = mesh.dof >= 0
        x1 = mesh.nodes[free, 0] + mesh.period * cell
        out[free] = np.exp(1j * self.alpha * x1) * self.coefficients[mesh.dof[free]]
        return out

    def trace(self, cell: int = 0) -> "Trace":
        idx = self.mesh.top_nodes(include_left=True)
        return Trace(self.mesh.nodes[idx, 0], self.nodal_values(cell)[idx])


@dataclass
class Trace:
    """Continuous piecewise-linear function on the top line of one cell."""

    x: np.ndarray
    values: np.ndarray

    def __add__(self, other: "Trace") -> "Trace":
        if not np.array_equal(self.x, other.x):
            raise ValueError("traces live on different grids")
        return Trace(self.x, self.values + other.values)

    def resample(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        re = np.interp(x, self.x, self.values.real)
        im = np.interp(x, self.x, self.values.imag)
        return re + 1j * im


def p1_l2_norm(x, values) -> float:
    """Exact L2 norm of a complex P1 function given by nodal values."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(values, dtype=complex)
    dx = np.diff(x)
    a, b = v[:-1], v[1:]
    seg = dx / 3.0 * (np.abs(a) ** 2 + np.real(a * np.conj(b)) + np.abs(b) ** 2)
    return float(np.sqrt(max(seg.sum(), 0.0)))


def trace_l2_error(a: Trace, b: Trace) -> float:
    """Relative error ``||a - b|| / ||b||`` in L2 of the top line.

    Traces on different grids are compared on the union of their nodes,
    where both are still piecewise linear, so the integral stays exact.
    """
    x = np.union1d(a.x, b.x)
    lo, hi = max(a.x[0], b.x[0]), min(a.x[-1], b.x[-1])
    x = x[(x >= lo - 1e-13) & (x <= hi + 1e-13)]
    va, vb = a.resample(x), b.resample(x)
    ref = p1_l2_norm(x, vb)
    if ref == 0.0:
        raise ZeroDivisionError("reference trace has zero norm")
    return p1_l2_norm(x, va - vb) / ref
