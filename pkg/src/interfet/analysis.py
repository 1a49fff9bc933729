"""Cross-mesh error norms, convergence slopes and I-V extraction.

Coarse P1 fields are transferred to a nested fine mesh by interpolation at the
fine nodes, after which norms are evaluated exactly with fine mass and
stiffness matrices.  On nested 1D grids, and on 2D meshes refined by the same
factor in x and y, this reproduces the continuous norm of the difference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from interfet.assembly import interface_mass, p1_mass, p1_stiffness
from interfet.config import DeviceConfig
from interfet.mesh import (
    InterfaceGrid,
    build_subdomain_mesh,
    interpolate_p1,
    scaled_mesh_diameter,
)
from interfet.saddle import SolutionFields
from interfet.transport import sg_fluxes

NEST_TOL = 1e-9


class NestingError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorRecord:
    """Errors of one run against the reference.

    ``h`` is the scaled triangle diameter of the oxide mesh and ``h_gamma``
    the scaled interface spacing 1/N_gamma.
    """

    h: float
    E_1D: float
    E_2D: float
    E_Linf: float
    E_rho: float
    argmax_location: tuple
    h_gamma: float = float("nan")

    def __post_init__(self):
        vals = (self.h, self.E_1D, self.E_2D, self.E_Linf, self.E_rho)
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise ValueError(f"error record has negative or non-finite entries: {vals}")


def _nodes(grid) -> np.ndarray:
    return grid.nodes if isinstance(grid, InterfaceGrid) else np.asarray(grid, dtype=float)


def _check_nested(coarse, fine, what="grid"):
    scale = max(abs(fine[-1] - fine[0]), 1.0)
    idx = np.clip(np.searchsorted(fine, coarse), 0, fine.size - 1)
    lo = np.clip(idx - 1, 0, fine.size - 1)
    dist = np.minimum(np.abs(fine[idx] - coarse), np.abs(fine[lo] - coarse))
    if np.any(dist > NEST_TOL * scale) or abs(coarse[0] - fine[0]) > NEST_TOL * scale or abs(coarse[-1] - fine[-1]) > NEST_TOL * scale:
        raise NestingError(f"coarse {what} is not nested in the fine {what}")


def _h1_gram_1d(nodes: np.ndarray):
    h = np.diff(nodes)
    n = nodes.size
    main = np.zeros(n)
    main[:-1] += 1 / h
    main[1:] += 1 / h
    K = sp.diags([-1 / h, main, -1 / h], [-1, 0, 1])
    return interface_mass(InterfaceGrid(nodes)) + K


def h1_norm_1d(grid, values) -> float:
    v = np.asarray(values, dtype=float)
    return float(np.sqrt(max(v @ (_h1_gram_1d(_nodes(grid)) @ v), 0.0)))


def h1_error_interface(grid_c, u_c, grid_f, u_ref) -> float:
    """Relative full H1 error of a coarse P1 function against a fine reference."""
    xc, xf = _nodes(grid_c), _nodes(grid_f)
    _check_nested(xc, xf)
    diff = np.interp(xf, xc, np.asarray(u_c, dtype=float)) - np.asarray(u_ref, dtype=float)
    G = _h1_gram_1d(xf)
    num = diff @ (G @ diff)
    ref = np.asarray(u_ref, dtype=float)
    den = ref @ (G @ ref)
    if den <= 0:
        raise ValueError("reference function has zero H1 norm")
    return float(np.sqrt(max(num, 0.0) / den))


def _prolong_2d(mesh_c, u_c, mesh_f) -> np.ndarray:
    _check_nested(mesh_c.xs, mesh_f.xs, "x-grid")
    _check_nested(mesh_c.ys, mesh_f.ys, "y-grid")
    v = mesh_f.vertices
    return interpolate_p1(mesh_c.xs, mesh_c.ys, u_c, v[:, 0], v[:, 1])


def h1_error_2d(meshes_c, fields_c, meshes_f, fields_ref) -> float:
    """Relative H1 error summed over subdomains: sqrt(sum |e_i|^2 / sum |ref_i|^2)."""
    num = den = 0.0
    for mc, uc, mf, uf in zip(meshes_c, fields_c, meshes_f, fields_ref):
        uf = np.asarray(uf, dtype=float)
        e = _prolong_2d(mc, uc, mf) - uf
        G = p1_mass(mf.vertices, mf.triangles) + p1_stiffness(mf.vertices, mf.triangles, 1.0)
        num += e @ (G @ e)
        den += uf @ (G @ uf)
    if den <= 0:
        raise ValueError("reference field has zero H1 norm")
    return float(np.sqrt(max(num, 0.0) / den))


def linf_error_2d(meshes_c, fields_c, meshes_f, fields_ref):
    """Sup over fine nodes of the difference, over sup of the reference, and its location."""
    best, where, ref_sup = -1.0, (np.nan, np.nan), 0.0
    for mc, uc, mf, uf in zip(meshes_c, fields_c, meshes_f, fields_ref):
        uf = np.asarray(uf, dtype=float)
        e = np.abs(_prolong_2d(mc, uc, mf) - uf)
        k = int(np.argmax(e))
        if e[k] > best:
            best, where = float(e[k]), tuple(float(c) for c in mf.vertices[k])
        ref_sup = max(ref_sup, float(np.max(np.abs(uf))))
    if ref_sup == 0:
        raise ValueError("reference field vanishes identically")
    return best / ref_sup, where


@dataclass
class RunResult:
    """What the error harness needs from one self-consistent run."""

    cfg: DeviceConfig
    fields: SolutionFields
    rho: np.ndarray

    def meshes(self):
        return [build_subdomain_mesh(self.cfg, i) for i in (1, 2)]

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.cfg.L, self.cfg.N_gamma + 1)


def error_record(run: RunResult, ref: RunResult) -> ErrorRecord:
    mc, mf = run.meshes(), ref.meshes()
    bulk_c = (run.fields.u1, run.fields.u2)
    bulk_f = (ref.fields.u1, ref.fields.u2)
    e_inf, loc = linf_error_2d(mc, bulk_c, mf, bulk_f)
    return ErrorRecord(
        h=scaled_mesh_diameter(run.cfg),
        E_1D=h1_error_interface(run.grid, run.fields.u_gamma, ref.grid, ref.fields.u_gamma),
        E_2D=h1_error_2d(mc, bulk_c, mf, bulk_f),
        E_Linf=e_inf,
        E_rho=h1_error_interface(run.grid, run.rho, ref.grid, ref.rho),
        argmax_location=loc,
        h_gamma=1.0 / run.cfg.N_gamma,
    )


INTERFACE_FIELDS = ("E_1D", "E_rho")


def convergence_slope(records, field: str = "E_1D") -> float:
    """Least-squares slope of log(error) against log(h); zero errors are skipped.

    ``records`` holds ErrorRecords or (h, error) pairs.  Interface errors are
    measured against h_gamma when the records carry it, oxide errors against h.
    """
    pts = []
    for r in records:
        if isinstance(r, ErrorRecord):
            h = r.h_gamma if field in INTERFACE_FIELDS and np.isfinite(r.h_gamma) else r.h
            e = getattr(r, field)
        else:
            h, e = r
        if e > 0:
            pts.append((h, e))
    if len({h for h, _ in pts}) < 3:
        raise ValueError("need at least three non-zero errors at distinct h")
    h, e = np.array(pts).T
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


@dataclass(frozen=True)
class IVRecord:
    V_DS: float
    J: float
    flux_spread: float


def extract_iv(points, cfg: DeviceConfig | None = None) -> list[IVRecord]:
    """(V_DS, J) rows sorted by bias.

    ``points`` are SweepPoints or (V_DS, J[, solution]) tuples.  J is reported
    as the current flowing into the drain, the negated SG flux, so it is
    positive for V_DS > 0.  With ``cfg`` the spread of the per-interval SG
    fluxes relative to |J| is recomputed from each converged state.
    """
    rows = []
    for p in points:
        if hasattr(p, "V_DS"):
            V, J, state = p.V_DS, p.J, p.state
        else:
            V, J = p[0], p[1]
            state = getattr(p[2], "state", None) if len(p) > 2 else None
        spread = 0.0
        if cfg is not None and state is not None and J != 0:
            x = np.linspace(0.0, cfg.L, state.u_gamma.size)
            fl = sg_fluxes(x, state.u_gamma, state.rho, cfg.mu, cfg.U_T)
            spread = float(np.ptp(fl) / abs(J))
        rows.append(IVRecord(float(V), 0.0 - float(J), spread))
    rows.sort(key=lambda r: r.V_DS)
    return rows
