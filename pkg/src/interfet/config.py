"""Device and solver parameters.

Geometry is stored in nm, permittivities as multiples of the vacuum
permittivity, surface densities in m^-2 and potentials in volts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy import constants

Q = constants.e
K_B = constants.k
EPS0 = constants.epsilon_0
NM = 1e-9

COUPLING_MODES = ("dirichlet", "robin")


class ConfigError(ValueError):
    """Invalid device or solver configuration."""


@dataclass(frozen=True)
class DeviceConfig:
    # geometry, nm
    L: float = 60.0
    l: float = 4.0
    d: float = 0.2
    x_G: float = 10.0
    junctions: tuple[float, float] = (20.0, 40.0)
    # permittivities, units of eps0
    eps_ox: float = 3.9
    eps_par: float = 13.9
    eps_perp: float = 6.9
    # doping, m^-2
    N_plus: float = 1e17
    N_minus: float = 1e14
    # transport
    T: float = 77.0
    mu: float = 0.45  # m^2 V^-1 s^-1
    # contacts, V
    V_S: float = 0.0
    V_D: float = 0.0
    V_G: float = 0.0
    # discretization and solver settings
    coupling_mode: str = "dirichlet"
    smoothing_a: float = 0.008
    Nx: int = 60
    Ny: int = 16
    N_gamma: int = 60
    Nx_ref: int = 960
    gummel_tol: float = 1e-9
    gummel_max_iter: int = 200
    dV_step: float = 0.01
    V_max: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "junctions", tuple(float(j) for j in self.junctions))
        object.__setattr__(self, "coupling_mode", str(self.coupling_mode).lower())
        self.validate()

    def validate(self) -> None:
        if not (self.L > 0 and self.l > 0):
            raise ConfigError("L and l must be positive")
        if not 0 < self.d < self.l:
            raise ConfigError("d must satisfy 0 < d < l")
        if not 0 <= self.x_G < self.L / 2:
            raise ConfigError("x_G must satisfy 0 <= x_G < L/2")
        for name in ("eps_ox", "eps_par", "eps_perp"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not (self.N_minus > 0 and self.N_plus >= self.N_minus):
            raise ConfigError("doping must satisfy N_plus >= N_minus > 0")
        if len(self.junctions) != 2:
            raise ConfigError("junctions must hold exactly two x-coordinates")
        j1, j2 = self.junctions
        if not 0 < j1 < j2 < self.L:
            raise ConfigError("junctions must be ordered and strictly inside (0, L)")
        if not (self.T > 0 and self.mu > 0):
            raise ConfigError("T and mu must be positive")
        if self.coupling_mode not in COUPLING_MODES:
            raise ConfigError(f"coupling_mode must be one of {COUPLING_MODES}")
        if not self.smoothing_a > 0:
            raise ConfigError("smoothing_a must be positive")
        for name in ("Nx", "Ny", "Nx_ref", "gummel_max_iter"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if int(self.N_gamma) != self.N_gamma or self.N_gamma < 2:
            raise ConfigError("N_gamma must be an integer >= 2")
        if not (self.gummel_tol > 0 and self.dV_step > 0 and self.V_max >= 0):
            raise ConfigError("gummel_tol, dV_step must be positive and V_max >= 0")

    def replace(self, **changes) -> DeviceConfig:
        return dataclasses.replace(self, **changes)

    @property
    def alpha(self) -> float:
        """Robin coefficient d / (2 eps_perp), nm per eps0."""
        return self.d / (2.0 * self.eps_perp)

    @property
    def U_T(self) -> float:
        """Thermal potential k_B T / q in volts."""
        return K_B * self.T / Q

    @property
    def V_DS(self) -> float:
        return self.V_D - self.V_S

    @property
    def charge_scale(self) -> float:
        """Interface source per unit normalized density, V/nm.

        Densities are carried in units of N_plus; multiplying by this factor
        turns q * rho / eps0 into the nm-scaled load of the interface equation.
        """
        return Q * self.N_plus * NM / EPS0

    def doping(self, x):
        """Normalized doping N_dop(x) / N_plus (piecewise constant)."""
        x = np.asarray(x, dtype=float)
        j1, j2 = self.junctions
        inside = (x > j1) & (x < j2)
        return np.where(inside, self.N_minus / self.N_plus, 1.0)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)
