"""Config files and CSV output.

Config files are INI-like: ``[device]``, ``[solver]`` and ``[sweep]``
sections of ``key = value`` lines with ``#`` comments.  The standard
configparser does not report line numbers for bad values, so parsing is done
here directly.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from interfet.assembly import build_multiplier_space
from interfet.config import ConfigError, DeviceConfig
from interfet.mesh import build_interface_grid, build_subdomain_mesh, trace_partition

CM2_TO_M2 = 1e-4

# key -> (section, DeviceConfig field, converter)
_KEYS = {
    "L": ("device", "L", float),
    "l": ("device", "l", float),
    "d": ("device", "d", float),
    "x_G": ("device", "x_G", float),
    "junctions": ("device", "junctions", lambda v: tuple(float(p) for p in v.split(","))),
    "eps_ox": ("device", "eps_ox", float),
    "eps_par": ("device", "eps_par", float),
    "eps_perp": ("device", "eps_perp", float),
    "N_plus": ("device", "N_plus", float),
    "N_minus": ("device", "N_minus", float),
    "T": ("device", "T", float),
    "mu": ("device", "mu", lambda v: float(v) * CM2_TO_M2),
    "V_S": ("device", "V_S", float),
    "V_D": ("device", "V_D", float),
    "V_G": ("device", "V_G", float),
    "coupling_mode": ("solver", "coupling_mode", lambda v: v.strip().lower()),
    "smoothing_a": ("solver", "smoothing_a", float),
    "Nx": ("solver", "Nx", int),
    "Ny": ("solver", "Ny", int),
    "N_gamma": ("solver", "N_gamma", int),
    "Nx_ref": ("solver", "Nx_ref", int),
    "gummel_tol": ("solver", "gummel_tol", float),
    "gummel_max_iter": ("solver", "gummel_max_iter", int),
    "dV_step": ("sweep", "dV_step", float),
    "V_max": ("sweep", "V_max", float),
}
SECTIONS = ("device", "solver", "sweep")


def _convert(key: str, raw: str, where: str):
    conv = _KEYS[key][2]
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"{where}: invalid value {raw!r} for {key}") from None


def parse_overrides(pairs, where="--set") -> dict:
    """``key=value`` strings (optionally ``section.key``) to DeviceConfig fields."""
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"{where}: expected key=value, got {pair!r}")
        key, raw = (p.strip() for p in pair.split("=", 1))
        if "." in key:
            section, key = key.split(".", 1)
            if key in _KEYS and _KEYS[key][0] != section:
                raise ConfigError(f"{where}: {key} belongs to [{_KEYS[key][0]}], not [{section}]")
        if key not in _KEYS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        out[_KEYS[key][1]] = _convert(key, raw, where)
    return out


def parse_config(text: str, overrides=None, source: str = "<config>", defaults=None) -> DeviceConfig:
    """Parse config text; missing keys keep the GFET defaults.

    Mobility is read in cm^2 V^-1 s^-1.  ``defaults`` (DeviceConfig field
    values) replace the built-in defaults, and ``overrides`` are applied last.
    """
    values: dict = dict(defaults or {})
    section = None
    seen: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        where = f"{source}:{lineno}"
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("["):
            if not body.endswith("]"):
                raise ConfigError(f"{where}: malformed section header {line.strip()!r}")
            section = body[1:-1].strip().lower()
            if section not in SECTIONS:
                raise ConfigError(f"{where}: unknown section [{section}]")
            continue
        if "=" not in body:
            raise ConfigError(f"{where}: expected key = value, got {line.strip()!r}")
        if section is None:
            raise ConfigError(f"{where}: key outside of a section")
        key, raw = (p.strip() for p in body.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if _KEYS[key][0] != section:
            raise ConfigError(f"{where}: {key} belongs to [{_KEYS[key][0]}], not [{section}]")
        if key in seen:
            raise ConfigError(f"{where}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        values[_KEYS[key][1]] = _convert(key, raw, where)
    values.update(parse_overrides(overrides))
    try:
        return DeviceConfig(**values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path=None, overrides=None, defaults=None) -> DeviceConfig:
    if path is None:
        return parse_config("", overrides, defaults=defaults)
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, overrides, source=str(path), defaults=defaults)


# ------------------------------------------------------------------ CSV


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (tuple, list)):
        return ";".join(_fmt(x) for x in v)
    return str(v)


def config_header(cfg: DeviceConfig, extra: dict | None = None) -> list[str]:
    items = dict(cfg.as_dict())
    if extra:
        items.update(extra)
    return [f"# {k}={_fmt(v)}" for k, v in items.items()]


def write_csv(path, columns, rows, cfg: DeviceConfig | None = None, meta: dict | None = None) -> Path:
    """Write rows with a ``# key=value`` header, LF endings and round-trip floats."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        if cfg is not None or meta:
            lines = config_header(cfg, meta) if cfg is not None else [f"# {k}={_fmt(v)}" for k, v in meta.items()]
            fh.write("\n".join(lines) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path):
    """Header metadata, column names and string rows of a file from write_csv."""
    meta, rows, columns = {}, [], None
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for line in fh:
            if line.startswith("# "):
                k, _, v = line[2:].rstrip("\n").partition("=")
                meta[k] = v
                continue
            rec = next(csv.reader([line]))
            if columns is None:
                columns = rec
            else:
                rows.append(rec)
    return meta, columns, rows


def emit_solution_csv(fields, state, cfg: DeviceConfig, out_dir) -> list[Path]:
    """interface.csv, bulk_{1,2}.csv and multipliers_{1,2}.csv for one solution."""
    out = Path(out_dir)
    grid = build_interface_grid(cfg)
    x = grid.nodes
    n_dop = cfg.doping(x) * cfg.N_plus
    paths = [
        write_csv(
            out / "interface.csv",
            ["x", "u_gamma", "rho", "N_dop"],
            zip(x, fields.u_gamma, state.rho, n_dop),
            cfg,
        )
    ]
    for i, (u, lam) in enumerate(((fields.u1, fields.lam1), (fields.u2, fields.lam2)), start=1):
        mesh = build_subdomain_mesh(cfg, i)
        v = mesh.vertices
        paths.append(write_csv(out / f"bulk_{i}.csv", ["x", "y", f"u_{i}"], zip(v[:, 0], v[:, 1], u), cfg))
        mult = build_multiplier_space(trace_partition(mesh))
        xs = mult.partition.nodes
        nodal = mult.prolongation.T @ lam
        paths.append(write_csv(out / f"multipliers_{i}.csv", ["x", f"lambda_{i}"], zip(xs, nodal), cfg))
    return paths
