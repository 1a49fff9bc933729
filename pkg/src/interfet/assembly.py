"""Discrete operators of the three-field interface formulation.

All matrices are assembled in nm and multiples of eps0, so entries stay O(1).
Products of piecewise linears are integrated exactly by Gauss-Legendre rules on
the (possibly merged) 1D partitions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from interfet.mesh import InterfaceGrid, Mesh2D, trace_partition


class AssemblyError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearFunctional1D:
    """Density on the interface, integrated against hat functions.

    ``breakpoints`` are x-locations where the density may jump; quadrature
    intervals are split there so piecewise-smooth data integrates accurately.
    """

    func: Callable[[np.ndarray], np.ndarray]
    degree: int = 3
    breakpoints: Sequence[float] = field(default_factory=tuple)


@dataclass(frozen=True, eq=False)
class MultiplierSpace:
    """Continuous P1 functions on a partition, constant on both end intervals.

    ``prolongation`` maps multiplier coefficients to nodal values of the
    standard hat basis: row m is the (m+1)-th interior hat, with the first and
    last rows also switching on the end nodes.
    """

    partition: InterfaceGrid
    prolongation: sp.csr_matrix

    @property
    def dof_count(self) -> int:
        return self.prolongation.shape[0]

    def evaluate(self, coeffs, x) -> np.ndarray:
        nodal = self.prolongation.T @ np.asarray(coeffs, dtype=float)
        return np.interp(x, self.partition.nodes, nodal)

    def basis(self, m: int, x) -> np.ndarray:
        e = np.zeros(self.dof_count)
        e[m] = 1.0
        return self.evaluate(e, x)


def _gauss(n: int):
    pts, wts = np.polynomial.legendre.leggauss(n)
    return 0.5 * (pts + 1.0), 0.5 * wts


def _locate(nodes: np.ndarray, x: np.ndarray):
    """Interval index and local coordinate of points x in a 1D partition."""
    idx = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, nodes.size - 2)
    t = (x - nodes[idx]) / (nodes[idx + 1] - nodes[idx])
    return idx, t


def _quadrature(breaks: np.ndarray, n: int):
    ref_pts, ref_wts = _gauss(n)
    h = np.diff(breaks)
    pts = (breaks[:-1, None] + h[:, None] * ref_pts[None, :]).ravel()
    wts = (h[:, None] * ref_wts[None, :]).ravel()
    return pts, wts


def _hat_matrix(nodes: np.ndarray, pts: np.ndarray) -> sp.csr_matrix:
    """Sparse (len(pts), len(nodes)) matrix of hat-function values."""
    idx, t = _locate(nodes, pts)
    rows = np.concatenate([np.arange(pts.size)] * 2)
    cols = np.concatenate([idx, idx + 1])
    vals = np.concatenate([1.0 - t, t])
    return sp.csr_matrix((vals, (rows, cols)), shape=(pts.size, nodes.size))


# --------------------------------------------------------------------------- 2D


def _element_geometry(vertices, triangles):
    p = vertices[triangles]
    x, y = p[..., 0], p[..., 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area = 0.5 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    return b, c, area


def p1_stiffness(vertices, triangles, coef) -> sp.csr_matrix:
    """P1 stiffness for -div(K grad u).

    ``coef`` is a scalar, one scalar per triangle, or an (n_tri, 2) array of
    diagonal tensor entries (K_xx, K_yy).
    """
    b, c, area = _element_geometry(vertices, triangles)
    if np.any(np.abs(area) <= 1e-14 * (np.abs(b).max() * np.abs(c).max())):
        raise AssemblyError("degenerate triangle with zero area")
    coef = np.asarray(coef, dtype=float)
    if coef.ndim == 2:
        kx, ky = coef[:, 0], coef[:, 1]
    else:
        kx = ky = np.broadcast_to(coef, area.shape)
    inv = 1.0 / (4.0 * np.abs(area))
    ke = (
        kx[:, None, None] * b[:, :, None] * b[:, None, :]
        + ky[:, None, None] * c[:, :, None] * c[:, None, :]
    ) * inv[:, None, None]
    rows = np.repeat(triangles, 3, axis=1).ravel()
    cols = np.tile(triangles, (1, 3)).ravel()
    n = vertices.shape[0]
    return sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(n, n))


def p1_mass(vertices, triangles) -> sp.csr_matrix:
    _, _, area = _element_geometry(vertices, triangles)
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    me = np.abs(area)[:, None, None] * ref[None]
    rows = np.repeat(triangles, 3, axis=1).ravel()
    cols = np.tile(triangles, (1, 3)).ravel()
    n = vertices.shape[0]
    return sp.csr_matrix((me.ravel(), (rows, cols)), shape=(n, n))


def assemble_stiffness_2d(mesh: Mesh2D, eps: float) -> sp.csr_matrix:
    if not eps > 0:
        raise AssemblyError("permittivity must be positive")
    return p1_stiffness(mesh.vertices, mesh.triangles, eps)


# --------------------------------------------------------------------------- 1D


def interface_mass(grid: InterfaceGrid, weight=None) -> sp.csr_matrix:
    """Exact (optionally P1-weighted) mass matrix of the hat basis on ``grid``."""
    nodes = grid.nodes
    pts, wts = _quadrature(nodes, 2)
    H = _hat_matrix(nodes, pts)
    if weight is not None:
        wts = wts * (H @ np.asarray(weight, dtype=float))
    return (H.T @ sp.diags(wts) @ H).tocsr()


def assemble_interface_stiffness(grid: InterfaceGrid, d: float, eps_par: float) -> sp.csr_matrix:
    h = grid.spacing
    k = d * eps_par / h
    n = grid.nodes.size
    main = np.zeros(n)
    main[:-1] += k
    main[1:] += k
    return sp.diags([-k, main, -k], [-1, 0, 1], format="csr")


def build_multiplier_space(partition: InterfaceGrid) -> MultiplierSpace:
    n_int = partition.n_intervals
    if n_int < 2:
        raise AssemblyError("multiplier space needs at least two intervals")
    m = n_int - 1
    rows = list(range(m)) + [0, m - 1]
    cols = list(range(1, n_int)) + [0, n_int]
    P = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, n_int + 1))
    return MultiplierSpace(partition=partition, prolongation=P)


def assemble_trace_coupling(mesh: Mesh2D, mult: MultiplierSpace) -> sp.csr_matrix:
    """B_i: rows multiplier dofs, columns mesh vertices."""
    trace = trace_partition(mesh)
    if trace != mult.partition:
        raise AssemblyError("multiplier partition does not match the mesh trace")
    M = interface_mass(trace)
    n_tr = trace.nodes.size
    E = sp.csr_matrix(
        (np.ones(n_tr), (np.arange(n_tr), mesh.interface_node_ids)),
        shape=(n_tr, mesh.n_vertices),
    )
    return (mult.prolongation @ M @ E).tocsr()


def assemble_cross_coupling(mult: MultiplierSpace, grid: InterfaceGrid) -> sp.csr_matrix:
    """B^i_gamma on the merged breakpoints of the two partitions."""
    a, b = mult.partition.nodes, grid.nodes
    merged = np.union1d(a, b)
    # drop near-duplicates created by rounding of independently built grids
    keep = np.concatenate([[True], np.diff(merged) > 1e-12 * (merged[-1] - merged[0])])
    merged = merged[keep]
    pts, wts = _quadrature(merged, 2)
    Ha = _hat_matrix(a, pts)
    Hb = _hat_matrix(b, pts)
    return (mult.prolongation @ (Ha.T @ sp.diags(wts) @ Hb)).tocsr()


def assemble_multiplier_mass(mult: MultiplierSpace) -> sp.csr_matrix:
    M = interface_mass(mult.partition)
    P = mult.prolongation
    return (P @ M @ P.T).tocsr()


def assemble_interface_load(grid: InterfaceGrid, f) -> np.ndarray:
    if not isinstance(f, LinearFunctional1D):
        f = LinearFunctional1D(f)
    nodes = grid.nodes
    breaks = nodes
    if len(f.breakpoints):
        inner = [x for x in f.breakpoints if nodes[0] < x < nodes[-1]]
        breaks = np.union1d(nodes, inner)
    pts, wts = _quadrature(breaks, f.degree)
    vals = np.asarray(f.func(pts), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise AssemblyError("load density is not finite at all quadrature points")
    return _hat_matrix(nodes, pts).T @ (wts * vals)


def nodal_load(grid: InterfaceGrid, values) -> np.ndarray:
    """Load of the P1 interpolant of nodal ``values`` (exact)."""
    return interface_mass(grid) @ np.asarray(values, dtype=float)


# ---------------------------------------------------------------- elimination


@dataclass(frozen=True, eq=False)
class DirichletSplit:
    """Free/fixed index bookkeeping for one field."""

    n: int
    fixed: np.ndarray
    values: np.ndarray

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.fixed] = False
        return np.flatnonzero(mask)

    def lift(self) -> np.ndarray:
        """Full vector holding the Dirichlet values and zeros elsewhere."""
        g = np.zeros(self.n)
        g[self.fixed] = self.values
        return g

    def expand(self, free_values) -> np.ndarray:
        """Reinsert the Dirichlet values around a vector of free values."""
        out = self.lift()
        out[self.free] = free_values
        return out

    @classmethod
    def from_dict(cls, n: int, values: dict[int, float]) -> DirichletSplit:
        idx = np.array(sorted(values), dtype=np.int64)
        vals = np.array([values[i] for i in idx], dtype=float)
        return cls(n=n, fixed=idx, values=vals)


def eliminate_dirichlet(matrix: sp.spmatrix, rhs, split: DirichletSplit):
    """Remove fixed rows/columns and move their contribution to the RHS.

    Returns the reduced matrix, the reduced right-hand side and
    ``split.expand`` as the recovery map.
    """
    matrix = sp.csr_matrix(matrix)
    free = split.free
    g = split.lift()
    b = np.asarray(rhs, dtype=float) - matrix @ g
    return matrix[free][:, free], b[free], split.expand
