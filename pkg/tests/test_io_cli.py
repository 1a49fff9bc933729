import math

import numpy as np
import pytest

from interfet import cli
from interfet.config import ConfigError, DeviceConfig
from interfet.io import emit_solution_csv, load_config, parse_config, parse_overrides, read_csv, write_csv
from interfet.studies import COMPARE_GRID, interface_slice, run_compare, run_tables
from interfet.transport import self_consistent_solve

TINY = ["Nx=12", "Ny=4", "N_gamma=12"]


def test_empty_config_gives_device_defaults():
    c = parse_config("")
    assert (c.L, c.l, c.d, c.x_G, c.T) == (60.0, 4.0, 0.2, 10.0, 77.0)
    assert (c.eps_ox, c.eps_par, c.eps_perp) == (3.9, 13.9, 6.9)
    assert (c.N_plus, c.N_minus, c.V_G) == (1e17, 1e14, 0.0)
    assert c == DeviceConfig()


def test_mobility_is_read_in_cm2():
    c = parse_config("[device]\nmu = 4.5e3\n")
    assert c.mu == pytest.approx(0.45, rel=1e-15)


def test_robin_alpha():
    c = parse_config("[solver]\ncoupling_mode = robin  # Robin transmission\n[device]\neps_perp = 0.1\n")
    assert c.coupling_mode == "robin"
    assert c.alpha == pytest.approx(0.2 / (2 * 0.1))


@pytest.mark.parametrize(
    "text, line",
    [
        ("[solver]\n\nNx = abc\n", 3),
        ("[device]\nfoo = 1\n", 2),
        ("[device]\nNx = 10\n", 2),
        ("[solver]\nNx = 10\nNx = 20\n", 3),
        ("Nx = 10\n", 1),
        ("[mesh]\n", 1),
        ("[solver]\nNx 10\n", 2),
    ],
)
def test_config_errors_name_the_line(text, line):
    with pytest.raises(ConfigError, match=f"<config>:{line}:"):
        parse_config(text)


def test_invalid_values_are_rejected():
    with pytest.raises(ConfigError):
        parse_config("[solver]\nNx = -5\n")
    with pytest.raises(ConfigError):
        parse_overrides(["bogus=1"])
    with pytest.raises(ConfigError):
        parse_overrides(["device.Nx=1"])


def test_precedence_of_defaults_file_and_overrides(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[solver]\nNy = 8\n[device]\nV_G = 0.1\n")
    c = load_config(path, ["device.V_G=0.2"], defaults=COMPARE_GRID)
    assert (c.Nx, c.Ny, c.N_gamma, c.V_G) == (240, 8, 240, 0.2)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")


def test_csv_format_and_round_trip(tmp_path):
    cfg = DeviceConfig()
    vals = [0.1, 1 / 3, 6.02214076e23, -2.5e-300]
    p = write_csv(tmp_path / "a.csv", ["x", "y"], [(v, 2 * v) for v in vals], cfg, {"note": "x"})
    raw = p.read_bytes()
    assert b"\r" not in raw
    meta, cols, rows = read_csv(p)
    assert cols == ["x", "y"]
    assert meta["Nx"] == "60" and meta["eps_perp"] == "6.9" and meta["note"] == "x"
    assert [float(r[0]) for r in rows] == vals
    assert rows[0][0] == "0.1"


@pytest.fixture(scope="module")
def tiny_solution(tmp_path_factory):
    cfg = DeviceConfig(Nx=12, Ny=4, N_gamma=12, V_S=0.01, V_D=0.01)
    fields, state = self_consistent_solve(cfg)
    out = tmp_path_factory.mktemp("sol")
    return cfg, out, emit_solution_csv(fields, state, cfg, out)


def test_solution_files(tiny_solution):
    cfg, out, paths = tiny_solution
    names = sorted(p.name for p in paths)
    assert names == ["bulk_1.csv", "bulk_2.csv", "interface.csv", "multipliers_1.csv", "multipliers_2.csv"]
    _, cols, rows = read_csv(out / "interface.csv")
    assert cols == ["x", "u_gamma", "rho", "N_dop"]
    assert len(rows) == cfg.N_gamma + 1
    assert float(rows[0][1]) == cfg.V_S
    rho = np.array([float(r[2]) for r in rows])
    assert np.all(rho >= min(cfg.N_minus, cfg.N_plus)) and np.all(rho > 0)
    _, cols, rows = read_csv(out / "bulk_2.csv")
    assert cols == ["x", "y", "u_2"] and len(rows) == (cfg.Nx + 1) * (cfg.Ny + 1)
    _, cols, rows = read_csv(out / "multipliers_1.csv")
    assert cols == ["x", "lambda_1"] and len(rows) == cfg.Nx + 1


def test_cli_solve_is_deterministic(tmp_path, capsys):
    for d in ("a", "b"):
        assert cli.main(["solve", "--out", str(tmp_path / d), *sum((["--set", s] for s in TINY), [])]) == 0
    out = capsys.readouterr().out
    assert "interface.csv" in out
    for name in ("interface.csv", "bulk_1.csv", "multipliers_2.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_sweep(tmp_path):
    args = ["sweep", "--out", str(tmp_path), "--mode", "robin", "--set", "V_max=0.02"]
    assert cli.main(args + sum((["--set", s] for s in TINY), [])) == 0
    meta, cols, rows = read_csv(tmp_path / "iv.csv")
    assert cols == ["V_DS", "J", "flux_spread"] and meta["coupling_mode"] == "robin"
    J = [float(r[1]) for r in rows]
    assert [float(r[0]) for r in rows] == [0.0, 0.01, 0.02] and J[0] == 0.0 and J[1] < J[2]


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["solve", "--out", str(tmp_path), "--set", "Nx=abc"]) == cli.EXIT_CONFIG
    assert cli.main(["solve", "--config", str(tmp_path / "none.ini")]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.ini"
    bad.write_text("[solver]\nNy = 4\nwhat = 3\n")
    assert cli.main(["solve", "--config", str(bad), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "bad.ini:3" in capsys.readouterr().err
    args = ["solve", "--out", str(tmp_path), "--set", "gummel_max_iter=1"]
    assert cli.main(args + sum((["--set", s] for s in TINY), [])) == cli.EXIT_SOLVER
    assert "did not converge" in capsys.readouterr().err


def test_compare_outputs(tmp_path):
    cfg = DeviceConfig(Nx=30, Ny=4, N_gamma=30, Nx_ref=60)
    paths = run_compare(cfg, tmp_path)
    assert {p.name for p in paths} == {"compare.csv", "slice_dirichlet.csv", "slice_robin.csv", "slice_transmission.csv"}
    _, cols, rows = read_csv(tmp_path / "compare.csv")
    assert cols == ["model", "u_center", "gap"]
    assert [r[0] for r in rows] == ["dirichlet", "robin", "transmission"]
    assert float(rows[2][2]) == 0.0


def _slice_gap(c):
    slices = []
    for mode in ("dirichlet", "robin"):
        fields, _ = self_consistent_solve(c.replace(coupling_mode=mode))
        slices.append(np.array(interface_slice(c, fields, c.L / 2))[:, 1])
    d, r = slices
    return np.max(np.abs(d - r)), np.max(np.abs(d))


@pytest.mark.xfail(strict=True, reason="the Robin shift alpha*lambda is ~1e-2 of the potential at "
                   "eps_perp = eps_par; the published 6.9 eps0 gaps already differ by several 1e-3")
def test_isotropic_strip_slices_nearly_coincide(cfg):
    gap, scale = _slice_gap(cfg.replace(eps_perp=cfg.eps_par, **COMPARE_GRID))
    assert gap < 1e-3 * scale


def test_robin_shift_scales_with_alpha(cfg):
    c = cfg.replace(**COMPARE_GRID)
    g1, _ = _slice_gap(c)
    g2, _ = _slice_gap(c.replace(eps_perp=2 * c.eps_perp))
    assert g2 / g1 == pytest.approx(0.5, rel=0.05)


def test_tables_record_failed_rows(tmp_path):
    cfg = DeviceConfig(gummel_max_iter=1)
    paths = run_tables(cfg, tmp_path, refs=lambda V: None)
    for k, p in paths.items():
        _, cols, rows = read_csv(p)
        assert cols[-1] == "status" and cols[:4] == ["V_DS", "Nx", "Ny", "N_gamma"]
        assert len(rows) == {1: 8, 2: 8, 3: 10}[k]
        assert all(r[-1].startswith("failed") and math.isnan(float(r[4])) for r in rows)
