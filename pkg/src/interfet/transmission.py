"""Resolved transmission problem: oxide / strip / oxide on one conforming mesh.

The strip |y| < d/2 carries the anisotropic permittivity diag(eps_par, eps_perp)
and the sheet charge is spread by a narrow Gaussian in y.  Nonlinear runs
linearize the density only on the midline y = 0 and eliminate everything else
through a dense Schur complement onto the midline nodes, so each Gummel step
costs one sparse back-substitution and one small dense solve.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from interfet.assembly import DirichletSplit, _gauss, _hat_matrix, interface_mass, p1_stiffness
from interfet.config import ConfigError, DeviceConfig
from interfet.mesh import (
    InterfaceGrid,
    Mesh2D,
    build_tensor_mesh,
    dirichlet_values,
    interpolate_p1,
)
from interfet.saddle import SolverError
from interfet.transport import (
    TransportState,
    bias_points,
    ConvergenceError,
    iterate_gummel,
)

log = logging.getLogger(__name__)

GROWTH_RATIO = 1.3
NY_OUTER = 32
_CHUNK = 64


def smoothed_delta(y, a: float):
    """Gaussian approximation (1 / (a sqrt(pi))) exp(-(y/a)^2) of delta(y)."""
    if not a > 0:
        raise ValueError("smoothing width a must be positive")
    y = np.asarray(y, dtype=float)
    return np.exp(-((y / a) ** 2)) / (a * np.sqrt(np.pi))


def _graded(y0: float, y1: float, h0: float, h_max: float, ratio: float) -> np.ndarray:
    """Nodes from y0 to y1 with steps growing from h0 by ``ratio`` up to h_max.

    The steps are scaled down uniformly so the last node lands on y1.
    """
    length = y1 - y0
    steps = []
    h = h0
    while sum(steps) < length * (1 - 1e-12):
        steps.append(min(h, h_max))
        h *= ratio
    steps = np.array(steps) * (length / sum(steps))
    return y0 + np.concatenate([[0.0], np.cumsum(steps)])


def strip_y_nodes(cfg: DeviceConfig, ratio=GROWTH_RATIO, Ny_outer=NY_OUTER) -> np.ndarray:
    """Symmetric y-levels: uniform a/2 up to 3a, graded to d/2, then to l/2."""
    a, half_d, half_l = cfg.smoothing_a, cfg.d / 2.0, cfg.l / 2.0
    h0 = a / 2.0
    h_max = max(half_l / Ny_outer, h0)
    core_end = min(3 * a, half_d)
    n_core = int(np.ceil(core_end / h0 - 1e-9))
    core = np.linspace(0.0, core_end, n_core + 1)
    pieces = [core]
    if half_d > core_end:
        pieces.append(_graded(core_end, half_d, h0 * ratio, h_max, ratio)[1:])
    inner = np.concatenate(pieces)
    last = inner[-1] - inner[-2]
    upper = np.concatenate([inner, _graded(half_d, half_l, last * ratio, h_max, ratio)[1:]])
    return np.concatenate([-upper[:0:-1], upper])


@dataclass(frozen=True, eq=False)
class StripMesh:
    """Whole-device triangulation with the strip resolved.

    ``coef`` holds (K_xx, K_yy) per triangle; ``mid_row`` is the y-index of
    the line y = 0.
    """

    mesh: Mesh2D
    coef: np.ndarray
    mid_row: int

    @property
    def xs(self) -> np.ndarray:
        return self.mesh.xs

    @property
    def ys(self) -> np.ndarray:
        return self.mesh.ys

    def midline_ids(self) -> np.ndarray:
        return self.mid_row * self.xs.size + np.arange(self.xs.size)

    def validate(self, cfg: DeviceConfig) -> None:
        ys = self.ys
        for level in (0.0, cfg.d / 2.0, -cfg.d / 2.0):
            if not np.any(np.abs(ys - level) <= 1e-12 * cfg.l):
                raise ConfigError(f"strip mesh lacks the mandatory node line y = {level:g}")
        if abs(ys[self.mid_row]) > 1e-12 * cfg.l:
            raise ConfigError("mid_row does not point at y = 0")
        near = np.abs(0.5 * (ys[1:] + ys[:-1])) <= 3 * cfg.smoothing_a
        if np.any(np.diff(ys)[near] > cfg.smoothing_a / 2.0 * (1 + 1e-9)):
            raise ConfigError("strip mesh too coarse for the smoothed delta")


def build_strip_mesh(cfg: DeviceConfig, Nx_ref=None, ys=None) -> StripMesh:
    Nx_ref = cfg.Nx_ref if Nx_ref is None else int(Nx_ref)
    xs = np.linspace(0.0, cfg.L, Nx_ref + 1)
    ys = strip_y_nodes(cfg) if ys is None else np.asarray(ys, dtype=float)
    mesh = build_tensor_mesh(cfg, xs, ys, subdomain_id=0)
    cy = mesh.vertices[mesh.triangles, 1].mean(axis=1)
    inside = np.abs(cy) < cfg.d / 2.0
    coef = np.empty((mesh.n_triangles, 2))
    coef[:] = cfg.eps_ox
    coef[inside] = (cfg.eps_par, cfg.eps_perp)
    mid = np.flatnonzero(np.abs(ys) <= 1e-12 * cfg.l)
    strip = StripMesh(mesh, coef, int(mid[0]) if mid.size else -1)
    strip.validate(cfg)
    return strip


def _triangle_rule(n: int):
    """Collapsed Gauss rule on the reference triangle (barycentric, weights)."""
    p, w = _gauss(n)
    s, t = np.meshgrid(p, p, indexing="ij")
    ws = (w[:, None] * w[None, :]) * (1 - s)
    l1 = s.ravel()
    l2 = (t * (1 - s)).ravel()
    bary = np.column_stack([1 - l1 - l2, l1, l2])
    return bary, ws.ravel()


def source_operators(strip: StripMesh, cfg: DeviceConfig, order: int = 5):
    """Doping load and the map from nodal x-densities to the smoothed load.

    Both exclude the factor s: the load is ``s * (doping - G @ rho)``.
    """
    mesh = strip.mesh
    bary, w = _triangle_rule(order)
    tri = mesh.triangles
    p = mesh.vertices[tri]  # (nt, 3, 2)
    qp = np.einsum("qk,tkd->tqd", bary, p)  # (nt, nq, 2)
    area = np.abs(mesh.areas())
    # factor 2: reference triangle weights sum to 1/2
    wq = 2.0 * area[:, None] * w[None, :] * smoothing_weights(qp[..., 1], cfg)
    nt, nq = wq.shape
    rows = np.repeat(tri, nq, axis=0)  # (nt*nq, 3)
    phi = np.tile(bary, (nt, 1))
    pts = np.arange(nt * nq)
    Phi = sp.csr_matrix(
        (phi.ravel(), (np.repeat(pts, 3), rows.ravel())), shape=(nt * nq, mesh.n_vertices)
    )
    W = sp.diags(wq.ravel())
    xq = qp[..., 0].ravel()
    doping = Phi.T @ (W @ cfg.doping(xq))
    G = (Phi.T @ W @ _hat_matrix(strip.xs, xq)).tocsr()
    return doping, G


def smoothing_weights(y, cfg: DeviceConfig):
    return smoothed_delta(y, cfg.smoothing_a)


@dataclass
class TransmissionSolution:
    strip: StripMesh
    u: np.ndarray
    state: TransportState | None = None

    @property
    def midline(self) -> np.ndarray:
        return self.u[self.strip.midline_ids()]


class TransmissionDevice:
    """Factorized transmission problem, reusable across Gummel steps and biases.

    ``grid`` is the x-partition of the midline; ``poisson_step`` maps a
    normalized density and the previous midline potential to the new one.
    """

    def __init__(self, cfg: DeviceConfig, strip: StripMesh | None = None, _shared=None):
        self.cfg = cfg
        if _shared is None:
            _shared = self._factorize(cfg, strip or build_strip_mesh(cfg))
        self._sh = _shared
        self.strip = _shared["strip"]
        self.grid = InterfaceGrid(self.strip.xs)
        n = self.strip.mesh.n_vertices
        dvals = dirichlet_values(self.strip.mesh, cfg)
        self.split = DirichletSplit.from_dict(n, dvals)
        if not np.array_equal(self.split.fixed, _shared["fixed"]):
            raise ConfigError("contact layout changed; rebuild the device")
        g = self.split.lift()
        self._bc = -(_shared["K"] @ g)

    @staticmethod
    def _factorize(cfg, strip: StripMesh) -> dict:
        mesh = strip.mesh
        K = p1_stiffness(mesh.vertices, mesh.triangles, strip.coef).tocsr()
        fixed = np.array(sorted(dirichlet_values(mesh, cfg)), dtype=np.int64)
        free_mask = np.ones(mesh.n_vertices, dtype=bool)
        free_mask[fixed] = False
        mid_all = strip.midline_ids()
        mid = mid_all[free_mask[mid_all]]
        inner_mask = free_mask.copy()
        inner_mask[mid] = False
        inner = np.flatnonzero(inner_mask)
        K_II = K[inner][:, inner].tocsc()
        K_Im = K[inner][:, mid].toarray()
        K_mm = K[mid][:, mid].toarray()
        lu = spla.splu(K_II)
        S = K_mm.copy()
        for c0 in range(0, mid.size, _CHUNK):
            X = lu.solve(K_Im[:, c0 : c0 + _CHUNK])
            S[:, c0 : c0 + _CHUNK] -= K_Im.T @ X
        S = 0.5 * (S + S.T)
        doping, G = source_operators(strip, cfg)
        # midline column indices (positions in xs) of the free midline nodes
        mid_cols = mid - strip.mid_row * strip.xs.size
        return dict(
            strip=strip, K=K, fixed=fixed, mid=mid, inner=inner, mid_cols=mid_cols,
            lu=lu, K_Im=sp.csr_matrix(K_Im), S=S, doping=doping, G=G,
        )

    def at_bias(self, V_DS: float) -> TransmissionDevice:
        return TransmissionDevice(self.cfg.replace(V_D=self.cfg.V_S + V_DS), _shared=self._sh)

    def _load(self, rho_n) -> np.ndarray:
        sh = self._sh
        return self.cfg.charge_scale * (sh["doping"] - sh["G"] @ np.asarray(rho_n, dtype=float))

    def _solve_mid(self, rho_n, u_prev=None, linearize=True):
        sh = self._sh
        b = self._load(rho_n) + self._bc
        b_I, b_m = b[sh["inner"]], b[sh["mid"]]
        y_I = sh["lu"].solve(b_I)
        rhs = b_m - sh["K_Im"].T @ y_I
        S = sh["S"]
        if linearize:
            cfg = self.cfg
            E = (cfg.charge_scale / cfg.U_T) * interface_mass(self.grid, rho_n).toarray()
            cols = sh["mid_cols"]
            E = E[np.ix_(cols, cols)]
            S = S + E
            rhs = rhs + E @ np.asarray(u_prev, dtype=float)[cols]
        try:
            u_m = la.cho_solve(la.cho_factor(S), rhs)
        except la.LinAlgError as exc:
            raise SolverError(f"midline Schur complement not positive definite: {exc}") from exc
        return u_m, y_I

    def poisson_step(self, rho_n, u_prev) -> np.ndarray:
        u_m, _ = self._solve_mid(rho_n, u_prev)
        out = self.split.lift()[self.strip.midline_ids()]
        out[self._sh["mid_cols"]] = u_m
        return out

    def solve_fixed(self, rho_n) -> np.ndarray:
        """Full nodal potential for a frozen normalized density on the x-grid."""
        sh = self._sh
        u_m, y_I = self._solve_mid(rho_n, linearize=False)
        u = self.split.lift()
        u[sh["mid"]] = u_m
        u[sh["inner"]] = y_I - sh["lu"].solve(sh["K_Im"] @ u_m)
        return u

    def load_vector(self, rho_n) -> np.ndarray:
        return self._load(rho_n)

    @property
    def stiffness(self) -> sp.csr_matrix:
        return self._sh["K"]


def solve_transmission(cfg: DeviceConfig, rho=None, V_DS=None, *, device=None, initial=None) -> TransmissionSolution:
    """Transmission-problem potential.

    With ``rho`` (m^-2, nodal on the strip x-grid, or a callable of x) the
    density is frozen and one linear solve is done.  Otherwise the problem is
    coupled self-consistently to transport driven by the midline trace.
    """
    if device is None:
        device = TransmissionDevice(cfg)
    if V_DS is not None and V_DS != device.cfg.V_DS:
        device = device.at_bias(V_DS)
    if rho is not None:
        xs = device.strip.xs
        vals = rho(xs) if callable(rho) else np.asarray(rho, dtype=float)
        if vals.shape != xs.shape:
            raise ConfigError(f"density has {vals.size} values, strip x-grid has {xs.size}")
        return TransmissionSolution(device.strip, device.solve_fixed(vals / device.cfg.N_plus))
    state = iterate_gummel(device, initial)
    u = device.solve_fixed(state.rho / device.cfg.N_plus)
    return TransmissionSolution(device.strip, u, state)


def transmission_sweep(cfg: DeviceConfig, V_max=None, *, device=None, dV=None):
    """I-V continuation for the transmission model; returns (V_DS, J, solution) rows."""
    V_max = cfg.V_max if V_max is None else V_max
    dV = cfg.dV_step if dV is None else dV
    if device is None:
        device = TransmissionDevice(cfg)
    rows = []
    state = None
    for V in bias_points(V_max, dV):
        dev = device.at_bias(float(V))
        try:
            state = iterate_gummel(dev, state)
        except ConvergenceError as exc:
            raise ConvergenceError(f"transmission sweep failed at V_DS={V:g}: {exc}", exc.state) from exc
        u = dev.solve_fixed(state.rho / cfg.N_plus)
        rows.append((float(V), state.J, TransmissionSolution(dev.strip, u, state)))
    return rows


def vertical_slice(strip: StripMesh, u, x: float):
    """(y, u(x, y)) at every mesh y-level by P1 interpolation."""
    if not strip.xs[0] <= x <= strip.xs[-1]:
        raise ValueError(f"x={x} outside [0, {strip.xs[-1]}]")
    ys = strip.ys
    vals = interpolate_p1(strip.xs, ys, u, np.full(ys.size, float(x)), ys)
    return list(zip(ys.tolist(), vals.tolist()))
