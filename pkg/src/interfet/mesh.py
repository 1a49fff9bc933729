"""Structured P1 triangulations of the oxide subdomains and 1D interface grids."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from interfet.config import ConfigError, DeviceConfig


class BoundaryTag(enum.Enum):
    DirichletSource = "source"
    DirichletDrain = "drain"
    DirichletGate = "gate"
    Neumann = "neumann"
    Interface = "interface"


DIRICHLET_TAGS = (
    BoundaryTag.DirichletSource,
    BoundaryTag.DirichletDrain,
    BoundaryTag.DirichletGate,
)


@dataclass(frozen=True)
class InterfaceGrid:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2 or np.any(np.diff(nodes) <= 0):
            raise ConfigError("interface nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def n_intervals(self) -> int:
        return self.nodes.size - 1

    @property
    def spacing(self) -> np.ndarray:
        return np.diff(self.nodes)

    def __eq__(self, other):
        if not isinstance(other, InterfaceGrid):
            return NotImplemented
        return self.nodes.shape == other.nodes.shape and np.array_equal(
            self.nodes, other.nodes
        )

    def __hash__(self):
        return hash(self.nodes.tobytes())


@dataclass(frozen=True, eq=False)
class Mesh2D:
    """Tensor-grid triangulation; cells are split bottom-left to top-right.

    Vertex ``j * (len(xs)) + i`` sits at ``(xs[i], ys[j])``.
    """

    subdomain_id: int
    xs: np.ndarray
    ys: np.ndarray
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: tuple
    interface_node_ids: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def edges_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        mask = np.array([t is tag for t in self.boundary_tags], dtype=bool)
        return self.boundary_edges[mask]


def tensor_triangulation(xs, ys):
    """Vertices and positively oriented triangles of the grid xs x ys."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    nx, ny = xs.size - 1, ys.size - 1
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    v00 = (j * (nx + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    return vertices, triangles


def _outer_edges(xs, ys):
    """Boundary edges of the tensor grid as (bottom, top, left, right) arrays."""
    nx, ny = xs.size - 1, ys.size - 1
    ii = np.arange(nx)
    jj = np.arange(ny)
    bottom = np.column_stack([ii, ii + 1])
    top = bottom + ny * (nx + 1)
    left = np.column_stack([jj * (nx + 1), (jj + 1) * (nx + 1)])
    right = left + nx
    return bottom, top, left, right


def _tag_horizontal(edges, xs, cfg: DeviceConfig, gated: bool):
    mid = 0.5 * (xs[edges[:, 0] % xs.size] + xs[edges[:, 1] % xs.size])
    tags = []
    for m in mid:
        if gated and cfg.x_G < m < cfg.L - cfg.x_G:
            tags.append(BoundaryTag.DirichletGate)
        else:
            tags.append(BoundaryTag.Neumann)
    return tags


def build_tensor_mesh(cfg: DeviceConfig, xs, ys, subdomain_id: int = 0) -> Mesh2D:
    """Tagged triangulation of the tensor grid xs x ys.

    Vertical edges are source/drain contacts.  A horizontal side at y = 0 of a
    subdomain mesh (id 1 or 2) is the interface; the other horizontal sides
    carry the gate on (x_G, L - x_G) and are insulating elsewhere.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    Nx, Ny = xs.size - 1, ys.size - 1
    vertices, triangles = tensor_triangulation(xs, ys)
    bottom, top, left, right = _outer_edges(xs, ys)
    if subdomain_id == 1:
        interface_edges, outer = bottom, [top]
        interface_node_ids = np.arange(Nx + 1)
    elif subdomain_id == 2:
        interface_edges, outer = top, [bottom]
        interface_node_ids = Ny * (Nx + 1) + np.arange(Nx + 1)
    else:
        interface_edges, outer = np.empty((0, 2), dtype=np.int64), [bottom, top]
        interface_node_ids = np.empty(0, dtype=np.int64)

    edges = np.vstack([left, right, *outer, interface_edges])
    tags = [BoundaryTag.DirichletSource] * len(left) + [BoundaryTag.DirichletDrain] * len(right)
    for side in outer:
        tags += _tag_horizontal(side, xs, cfg, gated=True)
    tags += [BoundaryTag.Interface] * len(interface_edges)
    for arr in (xs, ys, vertices, triangles, edges, interface_node_ids):
        arr.setflags(write=False)
    return Mesh2D(
        subdomain_id=subdomain_id,
        xs=xs,
        ys=ys,
        vertices=vertices,
        triangles=triangles,
        boundary_edges=edges,
        boundary_tags=tuple(tags),
        interface_node_ids=interface_node_ids,
    )


def build_subdomain_mesh(cfg: DeviceConfig, subdomain_id: int, Nx=None, Ny=None) -> Mesh2D:
    """Triangulate the upper (1) or lower (2) oxide rectangle."""
    Nx = cfg.Nx if Nx is None else Nx
    Ny = cfg.Ny if Ny is None else Ny
    if int(Nx) != Nx or int(Ny) != Ny or Nx < 1 or Ny < 1:
        raise ConfigError(f"grid counts must be positive integers, got Nx={Nx}, Ny={Ny}")
    if subdomain_id not in (1, 2):
        raise ConfigError(f"subdomain_id must be 1 or 2, got {subdomain_id}")
    xs = np.linspace(0.0, cfg.L, int(Nx) + 1)
    half = cfg.l / 2.0
    if subdomain_id == 1:
        ys = np.linspace(0.0, half, int(Ny) + 1)
    else:
        ys = np.linspace(-half, 0.0, int(Ny) + 1)
    return build_tensor_mesh(cfg, xs, ys, subdomain_id)


def build_interface_grid(cfg: DeviceConfig, N_gamma=None) -> InterfaceGrid:
    N_gamma = cfg.N_gamma if N_gamma is None else N_gamma
    if int(N_gamma) != N_gamma or N_gamma < 2:
        raise ConfigError(f"N_gamma must be an integer >= 2, got {N_gamma}")
    return InterfaceGrid(np.linspace(0.0, cfg.L, int(N_gamma) + 1))


def trace_partition(mesh: Mesh2D) -> InterfaceGrid:
    return InterfaceGrid(mesh.vertices[mesh.interface_node_ids, 0])


def scaled_mesh_diameter(cfg: DeviceConfig, Nx=None, Ny=None) -> float:
    Nx = cfg.Nx if Nx is None else Nx
    Ny = cfg.Ny if Ny is None else Ny
    return float(np.sqrt(1.0 / Nx**2 + (cfg.l / cfg.L) ** 2 / Ny**2))


def dirichlet_values(mesh: Mesh2D, cfg: DeviceConfig) -> dict[int, float]:
    """Map every Dirichlet vertex to its prescribed potential.

    Raises ConfigError when one vertex receives two different values.
    """
    value_of = {
        BoundaryTag.DirichletSource: cfg.V_S,
        BoundaryTag.DirichletDrain: cfg.V_D,
        BoundaryTag.DirichletGate: cfg.V_G,
    }
    out: dict[int, float] = {}
    for edge, tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        if tag not in value_of:
            continue
        for v in edge:
            v = int(v)
            val = value_of[tag]
            if v in out and out[v] != val:
                x, y = mesh.vertices[v]
                raise ConfigError(
                    f"vertex {v} at ({x:g}, {y:g}) has incompatible Dirichlet values "
                    f"{out[v]} and {val}"
                )
            out[v] = val
    return out


def interpolate_p1(xs, ys, values, x, y) -> np.ndarray:
    """Evaluate a P1 field on the tensor triangulation of xs x ys at points."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    nx1 = xs.size
    V = np.asarray(values, dtype=float).reshape(ys.size, nx1)
    i = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, xs.size - 2)
    j = np.clip(np.searchsorted(ys, y, side="right") - 1, 0, ys.size - 2)
    s = (x - xs[i]) / (xs[i + 1] - xs[i])
    t = (y - ys[j]) / (ys[j + 1] - ys[j])
    v00, v10 = V[j, i], V[j, i + 1]
    v01, v11 = V[j + 1, i], V[j + 1, i + 1]
    lower = v00 + s * (v10 - v00) + t * (v11 - v10)
    upper = v00 + t * (v01 - v00) + s * (v11 - v01)
    return np.where(t <= s, lower, upper)
