"""Drift-diffusion transport on the interface and its Gummel coupling to Poisson.

Densities are handled internally in units of N_plus.  The interface source is
``s * (N_dop - rho)`` with ``s = DeviceConfig.charge_scale``, so the linearized
Poisson step adds ``(s / U_T) * rho^k`` to the interface mass term.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from interfet.assembly import (
    LinearFunctional1D,
    assemble_interface_load,
    interface_mass,
)
from interfet.config import NM, Q, DeviceConfig
from interfet.mesh import InterfaceGrid
from interfet.saddle import (
    SchurComplement,
    SolutionFields,
    SolverError,
    assemble_block_system,
    build_blocks,
)

log = logging.getLogger(__name__)

EXP_LIMIT = 500.0
_SMALL = 1e-4


class TransportError(RuntimeError):
    pass


class ConvergenceError(TransportError):
    def __init__(self, message, state=None, history=None):
        super().__init__(message)
        self.state = state
        self.history = history or []


def bernoulli(x):
    """B(x) = x / (exp(x) - 1), evaluated without cancellation or overflow."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < _SMALL
    pos = (x > 0) & ~small
    neg = (x < 0) & ~small
    xs = x[small]
    out[small] = 1.0 - xs / 2.0 + xs**2 / 12.0 - xs**4 / 720.0
    xp = x[pos]
    out[pos] = xp * np.exp(-xp) / -np.expm1(-xp)
    xn = x[neg]
    out[neg] = xn / np.expm1(xn)
    return out if out.ndim else float(out)


def equilibrium_density(u_gamma, N_plus, U_T):
    """Boltzmann density N_plus * exp(u / U_T)."""
    u = np.asarray(u_gamma, dtype=float)
    if np.any(np.abs(u) / U_T > EXP_LIMIT):
        raise TransportError(
            f"|u|/U_T = {np.max(np.abs(u)) / U_T:.1f} exceeds {EXP_LIMIT:g}; coupling diverged"
        )
    return N_plus * np.exp(u / U_T)


def _nodes(grid):
    return grid.nodes if isinstance(grid, InterfaceGrid) else np.asarray(grid, dtype=float)


def assemble_sg_system(grid, u_gamma, mu, U_T, bc=(1.0, 1.0)):
    """Tridiagonal Scharfetter-Gummel system for the nodal density.

    Interior rows state J_{j+1/2} - J_{j-1/2} = 0 with the flux
    (q mu U_T / h) [B(delta) rho_{j+1} - B(-delta) rho_j]; the first and last
    rows pin the boundary densities.  The common factor q mu U_T is dropped.
    """
    x = _nodes(grid)
    u = np.asarray(u_gamma, dtype=float)
    if u.shape != x.shape:
        raise TransportError(f"potential has {u.size} nodes, grid has {x.size}")
    h = np.diff(x)
    delta = np.diff(u) / U_T
    bp = bernoulli(delta) / h  # coefficient of rho_{j+1} in J_{j+1/2}
    bm = bernoulli(-delta) / h  # coefficient of -rho_j in J_{j+1/2}
    n = x.size
    lower = np.zeros(n - 1)
    diag = np.ones(n)
    upper = np.zeros(n - 1)
    # row j: J_{j+1/2} - J_{j-1/2} = bp_j r_{j+1} - bm_j r_j - bp_{j-1} r_j + bm_{j-1} r_{j-1}
    diag[1:-1] = -(bm[1:] + bp[:-1])
    upper[1:] = bp[1:]
    lower[:-1] = bm[:-1]
    rhs = np.zeros(n)
    rhs[0], rhs[-1] = bc
    matrix = sp.diags([lower, diag, upper], [-1, 0, 1], format="csr")
    return matrix, rhs


def sg_fluxes(grid, u_gamma, rho, mu, U_T) -> np.ndarray:
    """Per-interval SG current density, A/m for rho in m^-2 and grid in nm."""
    x = _nodes(grid)
    h = np.diff(x) * NM
    delta = np.diff(np.asarray(u_gamma, dtype=float)) / U_T
    rho = np.asarray(rho, dtype=float)
    return Q * mu * U_T / h * (bernoulli(delta) * rho[1:] - bernoulli(-delta) * rho[:-1])


def log_bernoulli(x):
    """log B(x), finite for every finite x."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < _SMALL
    pos = (x > 0) & ~small
    neg = (x < 0) & ~small
    out[small] = np.log(bernoulli(x[small]))
    xp = x[pos]
    out[pos] = np.log(xp) - xp - np.log(-np.expm1(-xp))
    xn = x[neg]
    out[neg] = np.log(-xn) - np.log(-np.expm1(xn))
    return out


def _logcumsumexp(a):
    m = np.max(a)
    return m + np.log(np.cumsum(np.exp(a - m)))


def solve_dd(grid, u_gamma, cfg: DeviceConfig, normalized: bool = False):
    """Density and current for a given interface potential.

    Returns ``(rho, J)``; rho is in m^-2 unless ``normalized`` (units of
    N_plus).  The SG system is solved exactly in the Slotboom variable
    g = rho exp(-u/U_T): the flux is c_j (g_{j+1} - g_j) with positive
    conductances c_j, so g is a weighted average of its boundary values.
    Working with logarithms keeps this free of overflow and cancellation for
    any potential within the density guard.
    """
    x = _nodes(grid)
    u = np.asarray(u_gamma, dtype=float)
    if u.shape != x.shape:
        raise TransportError(f"potential has {u.size} nodes, grid has {x.size}")
    if np.any(np.abs(u) / cfg.U_T > 2 * EXP_LIMIT):
        raise TransportError("interface potential exceeds the density guard")
    phi = u / cfg.U_T
    delta = np.diff(phi)
    # log of 1/c_j, the resistance of interval j
    log_r = np.log(np.diff(x)) - log_bernoulli(delta) - phi[1:]
    head = _logcumsumexp(log_r)  # log sum_{k<j} 1/c_k for j = 1..n
    total = head[-1]
    tail = _logcumsumexp(log_r[::-1])[::-1]  # log sum_{k>=j} 1/c_k for j = 0..n-1
    log_t = np.concatenate([[-np.inf], head - total])  # weight of the right end
    log_1mt = np.concatenate([tail - total, [-np.inf]])  # weight of the left end
    log_g0, log_gn = -phi[0], -phi[-1]  # normalized boundary densities are 1
    r = np.exp(log_1mt + log_g0 + phi) + np.exp(log_t + log_gn + phi)
    if np.any(r <= 0) or not np.all(np.isfinite(r)):
        raise TransportError("drift-diffusion solve produced a non-positive density")
    scale = Q * cfg.mu * cfg.U_T * cfg.N_plus / NM
    J = scale * float(np.exp(log_gn - total) - np.exp(log_g0 - total))
    fluxes = sg_fluxes(x, u, r * cfg.N_plus, cfg.mu, cfg.U_T)
    terms = scale * np.maximum(bernoulli(delta) * r[1:], bernoulli(-delta) * r[:-1]) / np.diff(x)
    spread = float(np.max(np.abs(fluxes - J)))
    if spread > max(1e-8 * abs(J), 1e-12 * float(np.max(terms))):
        raise TransportError(f"SG flux not constant: deviation {spread:.3e}, J {J:.3e}")
    return (r if normalized else r * cfg.N_plus), J


@dataclass
class TransportState:
    rho: np.ndarray  # m^-2
    u_gamma: np.ndarray
    J: float = 0.0
    gummel_iter: int = 0
    converged: bool = False
    history: list = field(default_factory=list)


class InterfaceDevice:
    """A discretized device prepared for repeated linearized Poisson solves.

    Bulk factorizations live in the Schur operator and are shared by every
    Gummel step and every bias point; only the interface block changes.
    """

    def __init__(self, cfg: DeviceConfig, mode: str | None = None, schur: SchurComplement | None = None):
        self.cfg = cfg
        self.mode = (mode or cfg.coupling_mode).lower()
        if schur is None:
            schur = SchurComplement(build_blocks(cfg), self.mode)
        self.schur = schur
        self.blocks = schur.blocks
        self.grid = self.blocks.grid
        self.mass = interface_mass(self.grid)
        self.doping_load = assemble_interface_load(
            self.grid, LinearFunctional1D(cfg.doping, degree=3, breakpoints=cfg.junctions)
        )

    def at_bias(self, V_DS: float) -> InterfaceDevice:
        cfg = self.cfg.replace(V_D=self.cfg.V_S + V_DS)
        return InterfaceDevice(cfg, self.mode, self.schur.with_contacts(cfg))

    def linearization(self, rho_n, u_gamma):
        """Interface load and A_gamma increment of the modified Poisson problem."""
        s, U_T = self.cfg.charge_scale, self.cfg.U_T
        weighted = interface_mass(self.grid, rho_n)
        extra = (s / U_T) * weighted
        load = s * (self.doping_load - self.mass @ rho_n) + extra @ u_gamma
        return load, extra

    def poisson_step(self, rho_n, u_gamma) -> np.ndarray:
        load, extra = self.linearization(rho_n, u_gamma)
        return self.schur.solve_interface(load, extra)

    def fields(self, rho_n, u_gamma) -> SolutionFields:
        load, extra = self.linearization(rho_n, u_gamma)
        return self.schur.solve(load, extra)

    def block_system(self, rho_n, u_gamma):
        load, extra = self.linearization(rho_n, u_gamma)
        return assemble_block_system(self.blocks, self.mode, load=load, gamma_extra=extra)


def gummel_step(state: TransportState, device: InterfaceDevice, equilibrium: bool | None = None):
    """One linearized Poisson solve followed by the density update."""
    cfg = device.cfg
    if equilibrium is None:
        equilibrium = cfg.V_DS == 0.0
    rho_n = state.rho / cfg.N_plus
    u_new = device.poisson_step(rho_n, state.u_gamma)
    if equilibrium:
        rho = equilibrium_density(u_new - cfg.V_S, cfg.N_plus, cfg.U_T)
        J = 0.0
    else:
        if np.any(np.abs(u_new) / cfg.U_T > EXP_LIMIT):
            raise TransportError("interface potential diverged during Gummel iteration")
        rho, J = solve_dd(device.grid, u_new, cfg)
    return TransportState(rho, u_new, J, state.gummel_iter + 1, False, list(state.history))


def initial_state(device: InterfaceDevice) -> TransportState:
    cfg = device.cfg
    x = device.grid.nodes
    u0 = cfg.V_S + (cfg.V_D - cfg.V_S) * x / cfg.L
    return TransportState(np.full(x.size, cfg.N_plus), u0)


def iterate_gummel(device: InterfaceDevice, state: TransportState | None = None) -> TransportState:
    cfg = device.cfg
    if state is None:
        state = initial_state(device)
    else:
        u = state.u_gamma.copy()
        u[0], u[-1] = cfg.V_S, cfg.V_D
        state = TransportState(state.rho.copy(), u, state.J, 0, False, [])
    for _ in range(cfg.gummel_max_iter):
        new = gummel_step(state, device)
        delta = float(np.max(np.abs(new.u_gamma - state.u_gamma)))
        new.history.append(delta)
        state = new
        if delta < cfg.gummel_tol:
            state.converged = True
            break
    if not state.converged:
        raise ConvergenceError(
            f"Gummel iteration did not converge in {cfg.gummel_max_iter} steps at "
            f"V_DS={cfg.V_DS:g} (last update {state.history[-1]:.3e} V)",
            state,
            state.history,
        )
    if cfg.V_DS == 0.0:
        state.J = 0.0
    else:
        _, state.J = solve_dd(device.grid, state.u_gamma, cfg)
    log.debug("Gummel converged in %d steps at V_DS=%g", state.gummel_iter, cfg.V_DS)
    return state


def self_consistent_solve(cfg: DeviceConfig, V_DS: float | None = None, *, device=None, initial=None):
    """Converged (SolutionFields, TransportState) at drain-source bias V_DS."""
    if device is None:
        device = InterfaceDevice(cfg)
    if V_DS is not None and V_DS != device.cfg.V_DS:
        device = device.at_bias(V_DS)
    state = iterate_gummel(device, initial)
    fields = device.fields(state.rho / device.cfg.N_plus, state.u_gamma)
    return fields, state


@dataclass
class SweepPoint:
    V_DS: float
    J: float
    fields: SolutionFields
    state: TransportState


def bias_points(V_max: float, dV: float) -> np.ndarray:
    n = V_max / dV
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"V_max={V_max} is not a multiple of dV_step={dV}")
    return np.round(np.arange(int(round(n)) + 1) * dV, 12)


def voltage_sweep(cfg: DeviceConfig, V_max: float | None = None, *, device=None, dV=None, keep_fields=True):
    """Continuation in V_DS from 0 to V_max, warm-starting every bias point."""
    V_max = cfg.V_max if V_max is None else V_max
    dV = cfg.dV_step if dV is None else dV
    if device is None:
        device = InterfaceDevice(cfg)
    out = []
    state = None
    for V in bias_points(V_max, dV):
        dev = device.at_bias(float(V))
        try:
            state = iterate_gummel(dev, state)
        except ConvergenceError as exc:
            raise ConvergenceError(f"sweep failed at V_DS={V:g}: {exc}", exc.state, exc.history) from exc
        fields = dev.fields(state.rho / cfg.N_plus, state.u_gamma) if keep_fields else None
        out.append(SweepPoint(float(V), state.J, fields, state))
    return out


__all__ = [
    "bernoulli",
    "equilibrium_density",
    "assemble_sg_system",
    "sg_fluxes",
    "solve_dd",
    "TransportState",
    "InterfaceDevice",
    "gummel_step",
    "iterate_gummel",
    "self_consistent_solve",
    "voltage_sweep",
    "SweepPoint",
    "ConvergenceError",
    "TransportError",
    "SolverError",
]
