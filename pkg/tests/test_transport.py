import numpy as np
import pytest
from scipy.integrate import quad

from interfet.config import DeviceConfig
from interfet.saddle import assemble_block_system
from interfet.transport import (
    NM,
    Q,
    ConvergenceError,
    InterfaceDevice,
    TransportError,
    assemble_sg_system,
    bernoulli,
    equilibrium_density,
    gummel_step,
    initial_state,
    self_consistent_solve,
    sg_fluxes,
    solve_dd,
    voltage_sweep,
)

SMALL = DeviceConfig(Nx=30, Ny=8, N_gamma=60)


def solve_sg(x, u, U_T, bc):
    A, b = assemble_sg_system(x, u, 1.0, U_T, bc)
    return np.linalg.solve(A.toarray(), b)


def bvp_solution(phi, x, bc):
    """Exact density of U_T rho' - rho u' = const with u = U_T phi."""
    F = np.array([quad(lambda s: np.exp(-phi(s)), 0.0, xi, epsabs=1e-14, epsrel=1e-13)[0] for xi in x])
    c = (bc[1] * np.exp(-phi(x[-1])) - bc[0]) / F[-1]
    return np.exp(phi(x)) * (bc[0] + c * F)


def test_bernoulli_values():
    assert bernoulli(0.0) == 1.0
    assert bernoulli(1.0) == pytest.approx(1 / (np.e - 1), rel=1e-15)
    assert bernoulli(1.0) == pytest.approx(0.581977, abs=5e-7)
    x = np.array([1e-9, 1e-5, 9e-5, 2e-4])
    np.testing.assert_allclose(bernoulli(x), x / np.expm1(x), rtol=1e-12)


def test_bernoulli_identity():
    x = np.concatenate([[0.5, 5.0, 50.0], np.linspace(-50, 50, 20001)])
    assert np.max(np.abs(bernoulli(-x) - bernoulli(x) - x)) <= 1e-14 * np.maximum(1, np.abs(x)).max()
    for v in (0.5, 5.0, 50.0):
        assert abs(bernoulli(-v) - bernoulli(v) - v) <= 1e-14 * max(1.0, v)


def test_bernoulli_no_overflow():
    assert bernoulli(800.0) >= 0.0
    assert bernoulli(-800.0) == pytest.approx(800.0)


def test_equilibrium_density():
    c = DeviceConfig()
    np.testing.assert_allclose(equilibrium_density(np.zeros(5), c.N_plus, c.U_T), c.N_plus)
    u = c.U_T * np.log(c.N_minus / c.N_plus)
    assert equilibrium_density(u, c.N_plus, c.U_T) == pytest.approx(c.N_minus, rel=1e-12)
    k_B, q = 1.380649e-23, 1.602176634e-19  # exact SI values
    assert c.U_T == pytest.approx(k_B * 77.0 / q, rel=1e-12)
    assert c.U_T == pytest.approx(6.6349e-3, rel=1e-4)
    with pytest.raises(TransportError):
        equilibrium_density(np.array([501 * c.U_T]), c.N_plus, c.U_T)


def test_sg_equilibrium_flux_vanishes(rng):
    c = DeviceConfig()
    x = np.linspace(0, c.L, 241)
    h = np.min(np.diff(x)) * NM
    scale = Q * c.mu * c.U_T * c.N_plus / h
    for _ in range(20):
        u = rng.uniform(-10 * c.U_T, 0.0, x.size)
        rho = equilibrium_density(u, c.N_plus, c.U_T)
        assert np.max(np.abs(sg_fluxes(x, u, rho, c.mu, c.U_T))) <= 1e-12 * scale


def test_constant_potential_gives_linear_density():
    x = np.sort(np.random.default_rng(1).uniform(0, 1, 20))
    x = np.concatenate([[0], x, [1]])
    r = solve_sg(x, np.full(x.size, 0.3), 0.01, (1.0, 3.0))
    np.testing.assert_allclose(r, 1.0 + 2.0 * x, rtol=1e-12)


def test_two_interval_toy_matches_quadrature():
    U_T = 0.02
    x = np.array([0.0, 0.5, 1.0])
    r = solve_sg(x, np.array([0.0, U_T, 0.0]), U_T, (1.0, 1.0))
    phi = lambda s: np.interp(s, x, [0.0, 1.0, 0.0])
    np.testing.assert_allclose(r, bvp_solution(phi, x, (1.0, 1.0)), rtol=1e-10)
    # unequal boundary densities exercise the non-equilibrium part of the solution
    r = solve_sg(x, np.array([0.0, U_T, 0.0]), U_T, (1.0, 2.0))
    np.testing.assert_allclose(r, bvp_solution(phi, x, (1.0, 2.0)), rtol=1e-10)


def test_manufactured_bvp_second_order():
    U_T = 0.05
    phi = lambda s: 2.0 * np.sin(np.pi * s) + s
    errs = []
    for n in (20, 40, 80, 160):
        x = np.linspace(0, 1, n + 1)
        r = solve_sg(x, U_T * phi(x), U_T, (1.0, 2.0))
        errs.append(np.max(np.abs(r - bvp_solution(phi, x, (1.0, 2.0)))))
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(np.abs(orders - 2.0) < 0.15), orders


def test_ramp_current_sign():
    c = DeviceConfig()
    x = np.linspace(0, c.L, 61)
    for dv in (0.01, 0.05, -0.03):
        _, J = solve_dd(x, dv * x / c.L, c)
        assert np.sign(J) == -np.sign(dv)


def test_density_positive_under_random_potentials(rng):
    c = DeviceConfig()
    x = np.linspace(0, c.L, 61)
    for _ in range(1000):
        u = rng.uniform(-30 * c.U_T, 30 * c.U_T, x.size)
        r, _ = solve_dd(x, u, c, normalized=True)
        bound = np.exp(-(u.max() - u.min()) / c.U_T)
        assert np.all(r > 0) and np.all(r >= bound * (1 - 1e-9))


def test_solve_dd_matches_assembled_system(rng):
    c = DeviceConfig()
    x = np.sort(np.concatenate([[0, c.L], rng.uniform(0, c.L, 40)]))
    for _ in range(20):
        u = rng.uniform(-5 * c.U_T, 5 * c.U_T, x.size)
        r, _ = solve_dd(x, u, c, normalized=True)
        np.testing.assert_allclose(r, solve_sg(x, u, c.U_T, (1.0, 1.0)), rtol=1e-9)


def test_solve_dd_boundary_values_and_constant_flux():
    c = DeviceConfig()
    x = np.linspace(0, c.L, 121)
    u = 0.02 * np.sin(3 * x / c.L) - 0.04 * (x > 25)
    rho, J = solve_dd(x, u, c)
    assert rho[0] == pytest.approx(c.N_plus) and rho[-1] == pytest.approx(c.N_plus)
    fl = sg_fluxes(x, u, rho, c.mu, c.U_T)
    assert np.ptp(fl) <= 1e-8 * abs(J)
    with pytest.raises(TransportError):
        solve_dd(x, u[:-1], c)


def test_monotonicity_surrogate(rng):
    c = DeviceConfig()
    x = np.linspace(0, c.L, 61)
    w = np.full(x.size, x[1] - x[0])
    w[[0, -1]] /= 2
    kappa = np.exp(-30) * c.N_plus / c.U_T
    for _ in range(200):
        u, v = rng.uniform(-30 * c.U_T, 0, (2, x.size))
        lhs = np.sum((equilibrium_density(u, c.N_plus, c.U_T) - equilibrium_density(v, c.N_plus, c.U_T)) * (u - v) * w)
        assert lhs >= kappa * np.sum(w * (u - v) ** 2)


def test_flat_doping_is_neutral():
    c = SMALL.replace(N_minus=SMALL.N_plus)
    _, state = self_consistent_solve(c)
    assert np.max(np.abs(state.u_gamma)) <= 1e-12
    np.testing.assert_allclose(state.rho, c.N_plus, rtol=1e-12)
    assert state.gummel_iter == 1


def test_first_step_forms_barrier():
    dev = InterfaceDevice(SMALL)
    s0 = initial_state(dev)
    s1 = gummel_step(s0, dev)
    x = dev.grid.nodes
    channel = (x > 20) & (x < 40)
    assert np.all(s1.u_gamma[channel] < 0)


def test_equilibrium_properties(cfg):
    fields, state = self_consistent_solve(cfg)
    assert state.converged and state.gummel_iter <= 60
    assert state.J == 0.0
    x = np.linspace(0, cfg.L, cfg.N_gamma + 1)
    assert np.all(state.rho > 0)
    assert state.rho[0] == pytest.approx(cfg.N_plus) and state.rho[-1] == pytest.approx(cfg.N_plus)
    assert state.u_gamma[np.argmin(np.abs(x - 30))] < -0.01  # barrier over the channel
    # the density solved from the converged potential carries no current
    _, J = solve_dd(x, state.u_gamma, cfg)
    scale = Q * cfg.mu * cfg.U_T * cfg.N_plus / (cfg.L / cfg.N_gamma * NM)
    assert abs(J) <= 1e-8 * scale


@pytest.mark.xfail(strict=True, reason="channel density is ~45 N_minus: the oxide field screens the "
                   "low doping, so the quasi-neutral estimate does not hold for this geometry")
def test_quasi_neutral_channel_density(cfg):
    _, state = self_consistent_solve(cfg)
    x = np.linspace(0, cfg.L, cfg.N_gamma + 1)
    mid = state.rho[np.argmin(np.abs(x - 30))]
    assert cfg.N_minus / 2 <= mid <= 2 * cfg.N_minus


def test_gummel_fixed_point(cfg):
    dev = InterfaceDevice(cfg).at_bias(0.02)
    pts = voltage_sweep(cfg, 0.02, device=InterfaceDevice(cfg), keep_fields=False)
    state = pts[-1].state
    again = gummel_step(state, dev)
    assert np.max(np.abs(again.u_gamma - state.u_gamma)) <= 1e-8
    np.testing.assert_allclose(again.rho, state.rho, rtol=1e-6)


def test_gummel_touches_only_interface_block():
    dev = InterfaceDevice(SMALL)
    base = assemble_block_system(dev.blocks, dev.mode).matrix
    rho_n = np.linspace(0.5, 1.5, SMALL.N_gamma + 1)
    lin = dev.block_system(rho_n, np.zeros(SMALL.N_gamma + 1))
    diff = (lin.matrix - base).tocoo()
    diff.eliminate_zeros()
    start = lin.offsets[4]
    assert diff.nnz > 0
    assert np.all(diff.row >= start) and np.all(diff.col >= start)
    assert np.max(np.abs(diff.row - diff.col)) <= 1  # tridiagonal band


def test_sweep_to_zero_is_single_point():
    pts = voltage_sweep(SMALL, 0.0)
    assert len(pts) == 1 and pts[0].J == 0.0


def test_sweep_step_independence(cfg):
    coarse = voltage_sweep(cfg, 0.04, dV=0.01, keep_fields=False)[-1].J
    fine = voltage_sweep(cfg, 0.04, dV=0.005, keep_fields=False)[-1].J
    assert abs(fine - coarse) <= 1e-6 * abs(coarse)


def test_sweep_rejects_non_multiple():
    with pytest.raises(ValueError):
        voltage_sweep(SMALL, 0.035, dV=0.01)


def test_non_convergence_carries_history():
    c = SMALL.replace(gummel_max_iter=2)
    with pytest.raises(ConvergenceError) as exc:
        self_consistent_solve(c)
    assert len(exc.value.history) == 2 and exc.value.state is not None
