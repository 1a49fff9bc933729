"""Block saddle-point system (u1, u2, lambda1, lambda2, u_gamma) and its solvers.

The monolithic path factors the whole reduced block matrix.  The Schur path
eliminates the bulk fields and multipliers and solves a dense SPD system on
the free interface unknowns; its bulk factorizations are independent of the
interface block, so Gummel updates of ``A_gamma`` only redo the small dense
solve.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from interfet.assembly import (
    DirichletSplit,
    assemble_cross_coupling,
    assemble_interface_stiffness,
    assemble_multiplier_mass,
    assemble_stiffness_2d,
    assemble_trace_coupling,
    build_multiplier_space,
)
from interfet.config import DeviceConfig
from interfet.mesh import (
    build_interface_grid,
    build_subdomain_mesh,
    dirichlet_values,
    trace_partition,
)

SOLVE_RTOL = 1e-10


class SolverError(RuntimeError):
    pass


@dataclass(eq=False)
class InterfaceBlocks:
    """Unreduced operators of one discretized device, plus Dirichlet data."""

    cfg: DeviceConfig
    meshes: tuple
    grid: object
    mults: tuple
    A: tuple
    A_gamma: sp.csr_matrix
    B: tuple
    B_gamma: tuple
    C: tuple
    splits: tuple  # (split_1, split_2, split_gamma)

    @property
    def n_mult(self) -> tuple[int, int]:
        return tuple(m.dof_count for m in self.mults)


def build_blocks(cfg: DeviceConfig) -> InterfaceBlocks:
    meshes = (build_subdomain_mesh(cfg, 1), build_subdomain_mesh(cfg, 2))
    grid = build_interface_grid(cfg)
    mults = tuple(build_multiplier_space(trace_partition(m)) for m in meshes)
    A = tuple(assemble_stiffness_2d(m, cfg.eps_ox) for m in meshes)
    B = tuple(assemble_trace_coupling(m, mu) for m, mu in zip(meshes, mults))
    B_gamma = tuple(assemble_cross_coupling(mu, grid) for mu in mults)
    C = tuple(assemble_multiplier_mass(mu) for mu in mults)
    A_gamma = assemble_interface_stiffness(grid, cfg.d, cfg.eps_par)
    splits = _dirichlet_splits(meshes, grid, cfg)
    return InterfaceBlocks(cfg, meshes, grid, mults, A, A_gamma, B, B_gamma, C, splits)


def _dirichlet_splits(meshes, grid, cfg):
    n_g = grid.nodes.size
    return (
        DirichletSplit.from_dict(meshes[0].n_vertices, dirichlet_values(meshes[0], cfg)),
        DirichletSplit.from_dict(meshes[1].n_vertices, dirichlet_values(meshes[1], cfg)),
        DirichletSplit.from_dict(n_g, {0: cfg.V_S, n_g - 1: cfg.V_D}),
    )


def with_contacts(blocks: InterfaceBlocks, cfg: DeviceConfig) -> InterfaceBlocks:
    """Same operators with the Dirichlet data of ``cfg``."""
    return dataclasses.replace(
        blocks, cfg=cfg, splits=_dirichlet_splits(blocks.meshes, blocks.grid, cfg)
    )


@dataclass(eq=False)
class SolutionFields:
    u1: np.ndarray
    u2: np.ndarray
    lam1: np.ndarray
    lam2: np.ndarray
    u_gamma: np.ndarray

    def as_tuple(self):
        return (self.u1, self.u2, self.lam1, self.lam2, self.u_gamma)

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(f))) for f in self.as_tuple())

    def max_diff(self, other: SolutionFields) -> float:
        return max(
            float(np.max(np.abs(a - b))) for a, b in zip(self.as_tuple(), other.as_tuple())
        )


def _resolve_alpha(blocks, mode, alpha):
    mode = mode.lower()
    if mode == "dirichlet":
        if alpha not in (None, 0, 0.0):
            raise ValueError("alpha must be zero in Dirichlet mode")
        return mode, 0.0
    if mode == "robin":
        alpha = blocks.cfg.alpha if alpha is None else float(alpha)
        if alpha < 0:
            raise ValueError("Robin coefficient must be non-negative")
        return mode, alpha
    raise ValueError(f"unknown coupling mode {mode!r}")


@dataclass(eq=False)
class BlockSystem:
    """Reduced block operator with unknowns (u1_f, u2_f, lam1, lam2, u_gamma_f)."""

    blocks: InterfaceBlocks
    mode: str
    alpha: float
    load: np.ndarray
    gamma_extra: sp.csr_matrix | None
    matrix: sp.csr_matrix
    rhs: np.ndarray
    offsets: np.ndarray

    def split_vector(self, x):
        return [x[a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    def fields(self, x) -> SolutionFields:
        u1, u2, l1, l2, ug = self.split_vector(x)
        s1, s2, sg = self.blocks.splits
        return SolutionFields(s1.expand(u1), s2.expand(u2), l1.copy(), l2.copy(), sg.expand(ug))

    def vector(self, fields: SolutionFields) -> np.ndarray:
        s1, s2, sg = self.blocks.splits
        return np.concatenate([
            fields.u1[s1.free], fields.u2[s2.free], fields.lam1, fields.lam2,
            fields.u_gamma[sg.free],
        ])


def _gamma_matrix(blocks, gamma_extra):
    Ag = blocks.A_gamma
    if gamma_extra is not None:
        Ag = (Ag + gamma_extra).tocsr()
    return Ag


def _bulk_rhs(blocks: InterfaceBlocks):
    """Dirichlet contributions to the bulk and multiplier rows."""
    sg = blocks.splits[2]
    gg = sg.lift()
    out = []
    for A, B, Bg, s in zip(blocks.A, blocks.B, blocks.B_gamma, blocks.splits[:2]):
        g = s.lift()
        r_u = -(A @ g)[s.free]
        r_lam = -(B @ g) + Bg @ gg
        out.append((r_u, r_lam))
    return out


def assemble_block_system(
    blocks: InterfaceBlocks, mode: str = "dirichlet", alpha=None, load=None, gamma_extra=None
) -> BlockSystem:
    mode, alpha = _resolve_alpha(blocks, mode, alpha)
    s1, s2, sg = blocks.splits
    n_g = blocks.grid.nodes.size
    load = np.zeros(n_g) if load is None else np.asarray(load, dtype=float)
    if load.shape != (n_g,):
        raise ValueError(f"interface load has shape {load.shape}, expected ({n_g},)")
    for A, B, Bg, C, s in zip(blocks.A, blocks.B, blocks.B_gamma, blocks.C, (s1, s2)):
        if A.shape != (s.n, s.n) or B.shape[1] != s.n or Bg.shape != (B.shape[0], n_g) or C.shape != (B.shape[0],) * 2:
            raise ValueError("inconsistent block dimensions")

    Ag = _gamma_matrix(blocks, gamma_extra)
    f = [s.free for s in (s1, s2)]
    fg = sg.free
    Af = [A[fi][:, fi] for A, fi in zip(blocks.A, f)]
    Bf = [B[:, fi] for B, fi in zip(blocks.B, f)]
    Bgf = [Bg[:, fg] for Bg in blocks.B_gamma]
    mult_diag = [alpha * C if alpha else None for C in blocks.C]

    matrix = sp.bmat(
        [
            [Af[0], None, -Bf[0].T, None, None],
            [None, Af[1], None, -Bf[1].T, None],
            [Bf[0], None, mult_diag[0], None, -Bgf[0]],
            [None, Bf[1], None, mult_diag[1], -Bgf[1]],
            [None, None, Bgf[0].T, Bgf[1].T, Ag[fg][:, fg]],
        ],
        format="csr",
    )
    (r_u1, r_l1), (r_u2, r_l2) = _bulk_rhs(blocks)
    r_g = (load - Ag @ sg.lift())[fg]
    rhs = np.concatenate([r_u1, r_u2, r_l1, r_l2, r_g])
    sizes = [len(f[0]), len(f[1]), Bf[0].shape[0], Bf[1].shape[0], len(fg)]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    return BlockSystem(blocks, mode, alpha, load, gamma_extra, matrix, rhs, offsets)


def solve_block(system: BlockSystem) -> SolutionFields:
    M = system.matrix.tocsc()
    b = system.rhs
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return system.fields(np.zeros_like(b))
    try:
        lu = spla.splu(M)
    except RuntimeError as exc:
        raise SolverError(f"block factorization failed (n={M.shape[0]}): {exc}") from exc
    x = lu.solve(b)
    res = b - M @ x
    for _ in range(3):
        if np.linalg.norm(res) <= SOLVE_RTOL * bnorm:
            break
        x += lu.solve(res)
        res = b - M @ x
    rel = np.linalg.norm(res) / bnorm
    if not np.isfinite(rel) or rel > SOLVE_RTOL:
        raise SolverError(f"block solve residual {rel:.3e} exceeds {SOLVE_RTOL:g}")
    return system.fields(x)


def residual_report(system: BlockSystem, fields: SolutionFields) -> dict[str, float]:
    """Euclidean norms of the five block-row residuals b - M x."""
    res = system.rhs - system.matrix @ system.vector(fields)
    names = ("u1", "u2", "lambda1", "lambda2", "u_gamma")
    return {n: float(np.linalg.norm(r)) for n, r in zip(names, system.split_vector(res))}


class SchurComplement:
    """Interface reduction of the block system for fixed bulk operators.

    Factors each reduced A_i once and the dense multiplier Schur blocks
    K_i = B_i A_i^-1 B_i^T + alpha C_i; ``solve`` then only assembles the
    interface operator A_gamma + sum_i B_gamma^T K_i^-1 B_gamma.
    """

    chunk = 64

    def __init__(self, blocks: InterfaceBlocks, mode: str = "dirichlet", alpha=None):
        self.blocks = blocks
        self.mode, self.alpha = _resolve_alpha(blocks, mode, alpha)
        sg = blocks.splits[2]
        fg = sg.free
        self._lu, self._K, self._Bf, self._Bgf = [], [], [], []
        coupling = np.zeros((fg.size, fg.size))
        for A, B, Bg, C, s in zip(blocks.A, blocks.B, blocks.B_gamma, blocks.C, blocks.splits[:2]):
            f = s.free
            Af = A[f][:, f].tocsc()
            Bf = B[:, f].tocsr()
            try:
                lu = spla.splu(Af)
            except RuntimeError as exc:
                raise SolverError(f"bulk factorization failed: {exc}") from exc
            K = self._inner_schur(lu, Bf)
            if self.alpha:
                K = K + self.alpha * C.toarray()
            try:
                Kc = la.cho_factor(K)
            except la.LinAlgError as exc:
                raise SolverError("multiplier Schur block is not positive definite") from exc
            Bgf = Bg[:, fg].toarray()
            coupling += Bgf.T @ la.cho_solve(Kc, Bgf)
            self._lu.append(lu)
            self._K.append(Kc)
            self._Bf.append(Bf)
            self._Bgf.append(Bgf)
        self.coupling = coupling
        self._set_contacts(blocks)

    def _set_contacts(self, blocks: InterfaceBlocks) -> None:
        self.blocks = blocks
        self._r_u, self._c = [], []
        for lu, Bf, (r_u, r_lam) in zip(self._lu, self._Bf, _bulk_rhs(blocks)):
            self._r_u.append(r_u)
            self._c.append(r_lam - Bf @ lu.solve(r_u))
        self._rhs_shift = sum(
            Bgf.T @ la.cho_solve(Kc, c) for Bgf, Kc, c in zip(self._Bgf, self._K, self._c)
        )

    def with_contacts(self, cfg: DeviceConfig) -> SchurComplement:
        """Reuse all factorizations for new contact voltages."""
        new = copy.copy(self)
        new._set_contacts(with_contacts(self.blocks, cfg))
        return new

    def _inner_schur(self, lu, Bf) -> np.ndarray:
        n_m = Bf.shape[0]
        BfT = Bf.T.tocsc()
        K = np.empty((n_m, n_m))
        for start in range(0, n_m, self.chunk):
            stop = min(start + self.chunk, n_m)
            Y = lu.solve(BfT[:, start:stop].toarray())
            K[:, start:stop] = Bf @ Y
        return 0.5 * (K + K.T)

    def interface_operator(self, gamma_extra=None) -> np.ndarray:
        fg = self.blocks.splits[2].free
        Ag = _gamma_matrix(self.blocks, gamma_extra)
        return Ag[fg][:, fg].toarray() + self.coupling

    def solve(self, load=None, gamma_extra=None) -> SolutionFields:
        blocks = self.blocks
        sg = blocks.splits[2]
        u_gamma = self.solve_interface(load, gamma_extra)
        ug = u_gamma[sg.free]
        lams, us = [], []
        for lu, Kc, Bf, Bgf, c, r_u, s in zip(
            self._lu, self._K, self._Bf, self._Bgf, self._c, self._r_u, blocks.splits[:2]
        ):
            lam = la.cho_solve(Kc, c + Bgf @ ug)
            lams.append(lam)
            us.append(s.expand(lu.solve(r_u + Bf.T @ lam)))
        return SolutionFields(us[0], us[1], lams[0], lams[1], u_gamma)

    def solve_interface(self, load=None, gamma_extra=None) -> np.ndarray:
        """Interface potential only (skips the bulk back-substitution)."""
        blocks = self.blocks
        sg = blocks.splits[2]
        n_g = blocks.grid.nodes.size
        load = np.zeros(n_g) if load is None else np.asarray(load, dtype=float)
        Ag = _gamma_matrix(blocks, gamma_extra)
        S = Ag[sg.free][:, sg.free].toarray() + self.coupling
        r = (load - Ag @ sg.lift())[sg.free] - self._rhs_shift
        try:
            return sg.expand(la.cho_solve(la.cho_factor(S), r))
        except la.LinAlgError as exc:
            raise SolverError("interface Schur operator is not positive definite") from exc


def schur_solve(blocks: InterfaceBlocks, mode: str = "dirichlet", alpha=None, load=None, gamma_extra=None) -> SolutionFields:
    return SchurComplement(blocks, mode, alpha).solve(load, gamma_extra)
