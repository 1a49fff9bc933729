import numpy as np
import pytest

from scipy.integrate import trapezoid

from interfet.assembly import DirichletSplit, eliminate_dirichlet, p1_stiffness
from interfet.config import ConfigError, DeviceConfig
from interfet.mesh import dirichlet_values
from interfet.transmission import (
    TransmissionDevice,
    build_strip_mesh,
    smoothed_delta,
    solve_transmission,
    strip_y_nodes,
    vertical_slice,
)

SMALL = DeviceConfig(Nx_ref=60)


def density(x):
    return 1e17 * (0.2 + 0.8 * np.cos(np.pi * x / 60.0) ** 2)


def test_smoothed_delta_peak_and_symmetry():
    assert smoothed_delta(0.0, 0.008) == pytest.approx(1 / (0.008 * np.sqrt(np.pi)))
    assert smoothed_delta(0.0, 0.008) == pytest.approx(70.52, abs=5e-3)
    y = np.linspace(-0.05, 0.05, 101)
    np.testing.assert_array_equal(smoothed_delta(y, 0.008), smoothed_delta(-y, 0.008))
    with pytest.raises(ValueError):
        smoothed_delta(y, 0.0)


def test_smoothed_delta_discrete_normalization():
    c = DeviceConfig()
    ys = strip_y_nodes(c)
    assert 0.999 <= trapezoid(smoothed_delta(ys, c.smoothing_a), ys) <= 1.001


def test_strip_mesh_invariants():
    c = DeviceConfig()
    strip = build_strip_mesh(c, Nx_ref=60)
    ys = strip.ys
    for level in (0.0, c.d / 2, -c.d / 2, c.l / 2, -c.l / 2):
        assert np.min(np.abs(ys - level)) <= 1e-12
    np.testing.assert_allclose(ys, -ys[::-1], atol=1e-12)
    h = np.diff(ys)
    mid = 0.5 * (ys[1:] + ys[:-1])
    assert np.all(h[np.abs(mid) <= 3 * c.smoothing_a] <= c.smoothing_a / 2 * (1 + 1e-9))
    upper = h[mid > 0]
    assert np.all(upper[1:] / upper[:-1] <= 1.3 * (1 + 1e-9))
    assert upper.max() <= c.l / 2 / 32 * (1 + 1e-9)
    cy = strip.mesh.vertices[strip.mesh.triangles, 1].mean(axis=1)
    inside = np.abs(cy) < c.d / 2
    np.testing.assert_array_equal(strip.coef[inside], [[c.eps_par, c.eps_perp]] * inside.sum())
    np.testing.assert_array_equal(strip.coef[~inside], c.eps_ox)
    assert abs(ys[strip.mid_row]) == 0.0


def test_strip_mesh_rejects_coarse_levels():
    c = DeviceConfig()
    with pytest.raises(ConfigError):
        build_strip_mesh(c, Nx_ref=60, ys=np.linspace(-c.l / 2, c.l / 2, 21))


def test_constant_contacts_and_neutral_source_give_constant_field():
    c = SMALL.replace(N_minus=SMALL.N_plus, V_S=0.2, V_D=0.2, V_G=0.2)
    sol = solve_transmission(c, rho=lambda x: np.full_like(x, c.N_plus))
    np.testing.assert_allclose(sol.u, 0.2, atol=1e-12)


def test_isotropic_tensor_matches_plain_poisson():
    c = SMALL.replace(eps_par=3.9, eps_perp=3.9, V_G=0.1, V_D=0.03)
    dev = TransmissionDevice(c)
    xs = dev.strip.xs
    u = solve_transmission(c, rho=density(xs), device=dev).u
    mesh = dev.strip.mesh
    K = p1_stiffness(mesh.vertices, mesh.triangles, 3.9)
    split = DirichletSplit.from_dict(mesh.n_vertices, dirichlet_values(mesh, c))
    K_ff, b_f, expand = eliminate_dirichlet(K, dev.load_vector(density(xs) / c.N_plus), split)
    ref = expand(np.linalg.solve(K_ff.toarray(), b_f))
    assert np.max(np.abs(u - ref)) <= 1e-10 * np.max(np.abs(ref))


def test_energy_identity():
    c = SMALL.replace(V_S=0.0, V_D=0.0, V_G=0.0)
    dev = TransmissionDevice(c)
    u = solve_transmission(c, rho=density, device=dev).u
    F = dev.load_vector(density(dev.strip.xs) / c.N_plus)
    a = u @ (dev.stiffness @ u)
    assert a == pytest.approx(F @ u, rel=1e-10)


def test_density_shape_is_checked():
    with pytest.raises(ConfigError):
        solve_transmission(SMALL, rho=np.ones(7))


def test_vertical_slice_of_simple_fields():
    strip = build_strip_mesh(DeviceConfig(), Nx_ref=60)
    const = vertical_slice(strip, np.full(strip.mesh.n_vertices, 0.7), 13.3)
    assert all(v == pytest.approx(0.7, abs=1e-14) for _, v in const)
    lin = vertical_slice(strip, strip.mesh.vertices[:, 1].copy(), 41.7)
    assert all(v == pytest.approx(y, abs=1e-13) for y, v in lin)
    with pytest.raises(ValueError):
        vertical_slice(strip, np.zeros(strip.mesh.n_vertices), 61.0)


def test_self_consistent_equilibrium(cfg, transmission_device):
    sol = solve_transmission(cfg, device=transmission_device)
    st = sol.state
    assert st.converged and st.J == 0.0
    assert np.all(st.rho > 0)
    np.testing.assert_allclose(st.rho[[0, -1]], cfg.N_plus)
    x = transmission_device.strip.xs
    assert sol.midline[np.argmin(np.abs(x - 30))] < -0.01
    np.testing.assert_allclose(sol.midline, st.u_gamma, atol=10 * cfg.gummel_tol)


def test_strong_anisotropy_kink(comparison_strong_anisotropy, comparison):
    """With eps_perp = 0.1 most of the vertical drop happens inside the strip."""

    def strip_share(sl):
        y, u = np.array(sl).T
        inside = np.interp(0.1, y, u) - np.interp(0.0, y, u)
        total = np.interp(2.0, y, u) - np.interp(0.0, y, u)
        return inside / total

    weak = strip_share(comparison.slices["transmission"])
    strong = strip_share(comparison_strong_anisotropy.slices["transmission"])
    assert strong > 0.5 and strong > 5 * weak


@pytest.mark.slow
def test_reference_refinement_gate(cfg, comparison, transmission_device):
    """Halving every spacing moves u(L/2, 0) by less than the measured model gaps."""
    base = solve_transmission(cfg, device=transmission_device)
    xs = transmission_device.strip.xs
    rho = lambda x: np.interp(x, xs, base.state.rho)
    ys = transmission_device.strip.ys
    fine_ys = np.sort(np.concatenate([ys, 0.5 * (ys[1:] + ys[:-1])]))
    fine = TransmissionDevice(cfg, build_strip_mesh(cfg, Nx_ref=2 * cfg.Nx_ref, ys=fine_ys))
    u_fine = solve_transmission(cfg, rho=rho, device=fine).midline
    u_base = solve_transmission(cfg, rho=base.state.rho, device=transmission_device).midline
    change = abs(np.interp(cfg.L / 2, fine.strip.xs, u_fine) - np.interp(cfg.L / 2, xs, u_base))
    assert change < min(comparison.gaps.values())
