"""Run orchestration: reference runs, error tables, convergence and model comparison."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from interfet.analysis import (
    RunResult,
    convergence_slope,
    error_record,
    extract_iv,
)
from interfet.config import DeviceConfig
from interfet.io import emit_solution_csv, write_csv
from interfet.mesh import build_subdomain_mesh, interpolate_p1
from interfet.saddle import SolverError
from interfet.transmission import TransmissionDevice, solve_transmission, transmission_sweep, vertical_slice
from interfet.transport import (
    InterfaceDevice,
    TransportError,
    self_consistent_solve,
    voltage_sweep,
)

log = logging.getLogger(__name__)

REF_NX = 960
REF_NY = 64
TABLE_BIASES = (0.0, 0.04)
TABLE1_NY = (8, 16, 32, 64)
TABLE2_N = (60, 120, 240, 480)
TABLE3_NGAMMA = (30, 120, 240, 480, 960)
# mesh of the model comparison unless the config sets one
COMPARE_GRID = dict(Nx=240, Ny=16, N_gamma=240)


def solve_at(cfg: DeviceConfig, V_DS: float = 0.0, device=None):
    """Converged (fields, state) at V_DS, continued from equilibrium in dV_step increments."""
    device = device or InterfaceDevice(cfg)
    if V_DS == 0.0:
        return self_consistent_solve(cfg, 0.0, device=device)
    n = max(int(round(V_DS / cfg.dV_step)), 1)
    pts = voltage_sweep(cfg, V_DS, device=device, dV=V_DS / n, keep_fields=False)
    dev = device.at_bias(V_DS)
    state = pts[-1].state
    return dev.fields(state.rho / cfg.N_plus, state.u_gamma), state


def run_result(cfg: DeviceConfig, V_DS: float = 0.0) -> RunResult:
    fields, state = solve_at(cfg, V_DS)
    return RunResult(cfg.replace(V_D=cfg.V_S + V_DS), fields, state.rho)


def reference_run(cfg: DeviceConfig, V_DS: float = 0.0) -> RunResult:
    """The finest run of the convergence sequence, used as ground truth."""
    return run_result(cfg.replace(Nx=REF_NX, Ny=REF_NY, N_gamma=REF_NX), V_DS)


class ReferenceCache:
    """Reference runs keyed by bias so several studies can share them."""

    def __init__(self, cfg: DeviceConfig):
        self.cfg = cfg
        self._runs: dict[float, RunResult] = {}

    def __call__(self, V_DS: float) -> RunResult:
        if V_DS not in self._runs:
            log.info("computing %dx%d reference at V_DS=%g", REF_NX, REF_NY, V_DS)
            self._runs[V_DS] = reference_run(self.cfg, V_DS)
        return self._runs[V_DS]


@dataclass
class TableRow:
    V_DS: float
    Nx: int
    Ny: int
    N_gamma: int
    record: object = None
    status: str = "ok"


def _row(cfg, V, Nx, Ny, Ng, ref) -> TableRow:
    row = TableRow(V, Nx, Ny, Ng)
    try:
        run = run_result(cfg.replace(Nx=Nx, Ny=Ny, N_gamma=Ng), V)
        row.record = error_record(run, ref)
    except (TransportError, SolverError) as exc:
        row.status = f"failed: {exc}"
    return row


def table_rows(cfg: DeviceConfig, which: int, refs: ReferenceCache | None = None) -> list[TableRow]:
    refs = refs or ReferenceCache(cfg)
    rows = []
    for V in TABLE_BIASES:
        ref = refs(V)
        if which == 1:
            grids = [(60, ny, 60) for ny in TABLE1_NY]
        elif which == 2:
            grids = [(n, 16, n) for n in TABLE2_N]
        elif which == 3:
            grids = [(60, 16, ng) for ng in TABLE3_NGAMMA]
        else:
            raise ValueError(f"no table {which}")
        rows += [_row(cfg, V, *g, ref) for g in grids]
    return rows


_TABLE_COLUMNS = {
    1: ("E_1D", "E_2D"),
    2: ("E_1D", "E_rho"),
    3: ("E_1D", "E_rho"),
}


def _cells(row: TableRow, names):
    if row.record is None:
        return [float("nan")] * len(names)
    return [getattr(row.record, n) for n in names]


def run_tables(cfg: DeviceConfig, out_dir, refs: ReferenceCache | None = None) -> dict[int, Path]:
    """table1.csv (Ny study), table2.csv (Nx = N_gamma) and table3.csv (N_gamma at Nx = 60)."""
    refs = refs or ReferenceCache(cfg)
    out = Path(out_dir)
    paths = {}
    for k in (1, 2, 3):
        names = _TABLE_COLUMNS[k]
        rows = table_rows(cfg, k, refs)
        paths[k] = write_csv(
            out / f"table{k}.csv",
            ["V_DS", "Nx", "Ny", "N_gamma", *names, "status"],
            ([r.V_DS, r.Nx, r.Ny, r.N_gamma, *_cells(r, names), r.status] for r in rows),
            cfg,
            {"reference": f"Nx=N_gamma={REF_NX},Ny={REF_NY}"},
        )
    return paths


def convergence_study(cfg: DeviceConfig, V_DS: float = 0.0, levels: int = 4, refs=None):
    """Errors for Nx = N_gamma = 60 * 2^i and Ny = 2^(i+2), i < levels."""
    refs = refs or ReferenceCache(cfg)
    ref = refs(V_DS)
    records = []
    for i in range(levels):
        c = cfg.replace(Nx=60 * 2**i, N_gamma=60 * 2**i, Ny=2 ** (i + 2))
        records.append((c, error_record(run_result(c, V_DS), ref)))
    return records


def run_converge(cfg: DeviceConfig, out_dir, refs=None) -> list[Path]:
    refs = refs or ReferenceCache(cfg)
    out = Path(out_dir)
    rows, slopes = [], []
    for V in TABLE_BIASES:
        recs = convergence_study(cfg, V, refs=refs)
        for i, (c, r) in enumerate(recs):
            rows.append([V, i, c.Nx, c.Ny, c.N_gamma, r.h, r.h_gamma, r.E_1D, r.E_2D, r.E_Linf, r.E_rho, *r.argmax_location])
        for name in ("E_1D", "E_2D", "E_Linf", "E_rho"):
            slopes.append([V, name, convergence_slope([r for _, r in recs], name)])
    meta = {"linf_normalization": "max_fine_nodes|u-u_ref|/max|u_ref|"}
    return [
        write_csv(
            out / "converge.csv",
            ["V_DS", "i", "Nx", "Ny", "N_gamma", "h", "h_gamma", "E_1D", "E_2D", "E_Linf", "E_rho", "argmax_x", "argmax_y"],
            rows,
            cfg,
            meta,
        ),
        write_csv(out / "slopes.csv", ["V_DS", "error", "slope"], slopes, cfg),
    ]


# ------------------------------------------------------------ comparison


def interface_slice(cfg: DeviceConfig, fields, x: float):
    """(y, u) along x for the two oxide fields; y = 0 appears once per side."""
    out = []
    for i, u in ((2, fields.u2), (1, fields.u1)):
        m = build_subdomain_mesh(cfg, i)
        vals = interpolate_p1(m.xs, m.ys, u, np.full(m.ys.size, float(x)), m.ys)
        out += list(zip(m.ys.tolist(), vals.tolist()))
    return out


@dataclass
class Comparison:
    u_center: dict
    gaps: dict
    slices: dict
    iv: dict | None = None


def compare_models(cfg: DeviceConfig, iv: bool = False, transmission: TransmissionDevice | None = None) -> Comparison:
    """Dirichlet- and Robin-coupled interface models against the transmission problem at V_DS = 0."""
    cfg = cfg.replace(V_D=cfg.V_S)
    x_mid = cfg.L / 2.0
    tdev = transmission or TransmissionDevice(cfg)
    tsol = solve_transmission(cfg, device=tdev)
    xs = tdev.strip.xs
    u_t = float(np.interp(x_mid, xs, tsol.midline))
    centers = {"transmission": u_t}
    gaps, slices = {}, {"transmission": vertical_slice(tdev.strip, tsol.u, x_mid)}
    devices = {}
    for mode in ("dirichlet", "robin"):
        c = cfg.replace(coupling_mode=mode)
        devices[mode] = InterfaceDevice(c, mode)
        fields, state = self_consistent_solve(c, 0.0, device=devices[mode])
        x = np.linspace(0.0, c.L, c.N_gamma + 1)
        centers[mode] = float(np.interp(x_mid, x, state.u_gamma))
        gaps[mode] = abs(u_t - centers[mode])
        slices[mode] = interface_slice(c, fields, x_mid)
    curves = None
    if iv:
        curves = {
            mode: extract_iv(voltage_sweep(dev.cfg, device=dev, keep_fields=False), dev.cfg)
            for mode, dev in devices.items()
        }
        curves["transmission"] = extract_iv(transmission_sweep(cfg, device=tdev), cfg)
    return Comparison(centers, gaps, slices, curves)


def run_compare(cfg: DeviceConfig, out_dir, iv: bool = False) -> list[Path]:
    out = Path(out_dir)
    cmp = compare_models(cfg, iv=iv)
    rows = [
        [m, cmp.u_center[m], cmp.gaps.get(m, 0.0)] for m in ("dirichlet", "robin", "transmission")
    ]
    paths = [write_csv(out / "compare.csv", ["model", "u_center", "gap"], rows, cfg)]
    for m, sl in cmp.slices.items():
        paths.append(write_csv(out / f"slice_{m}.csv", ["y", "u"], sl, cfg, {"x": cfg.L / 2.0}))
    if cmp.iv is not None:
        models = ("dirichlet", "robin", "transmission")
        table = zip(*(cmp.iv[m] for m in models))
        paths.append(
            write_csv(
                out / "iv_compare.csv",
                ["V_DS", *(f"J_{m}" for m in models)],
                ([r[0].V_DS, *(p.J for p in r)] for r in table),
                cfg,
            )
        )
    return paths


def run_sweep(cfg: DeviceConfig, out_dir) -> list[Path]:
    out = Path(out_dir)
    pts = voltage_sweep(cfg)
    rows = extract_iv(pts, cfg)
    paths = [write_csv(out / "iv.csv", ["V_DS", "J", "flux_spread"], ([r.V_DS, r.J, r.flux_spread] for r in rows), cfg)]
    last = pts[-1]
    paths += emit_solution_csv(last.fields, last.state, cfg.replace(V_D=cfg.V_S + last.V_DS), out)
    return paths


def run_solve(cfg: DeviceConfig, out_dir) -> list[Path]:
    fields, state = solve_at(cfg, cfg.V_DS) if cfg.V_DS else self_consistent_solve(cfg)
    return emit_solution_csv(fields, state, cfg, out_dir)
