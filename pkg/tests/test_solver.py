import math

import numpy as np
import pytest

from wavelab.errors import BlowUp, BudgetExceeded, NoContraction, UnderResolved
from wavelab.fields import KGrid, SpectralField, convolve, l1, linf_physical, to_r
from wavelab.dispersion import nls_band
from wavelab.models import constant_bands, toy_preset, toy_problem
from wavelab.solver import (
    EvolutionProblem,
    SolverConfig,
    SusceptibilityModel,
    apply_nonlinearity,
    apply_term,
    integral_residual,
    integrate,
    multilinear_norm,
    oscillatory_multilinear,
    reconstruct_physical,
    solve_integrated,
    write_diagnostics_csv,
)


def _rand(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# susceptibilities


def test_multilinear_norm_of_matrix_is_spectral_norm():
    A = _rand(np.random.default_rng(0), (3, 3))
    assert multilinear_norm(A) == pytest.approx(np.linalg.norm(A, 2), rel=1e-10)


def test_multilinear_norm_of_rank_one_tensor():
    rng = np.random.default_rng(1)
    a, b, c = (_rand(rng, 2) for _ in range(3))
    T = np.einsum("i,j,k->ijk", a, b, c)
    want = np.linalg.norm(a) * np.linalg.norm(b) * np.linalg.norm(c)
    assert multilinear_norm(T) == pytest.approx(want, rel=1e-10)


def test_tensor_shape_validation():
    with pytest.raises(ValueError):
        SusceptibilityModel(2, {2: np.zeros((2, 2))})
    with pytest.raises(ValueError):
        SusceptibilityModel(2, mode="sideways")
    with pytest.raises(ValueError):
        SusceptibilityModel(2, mode="grid", kernel=lambda *a: None)


def test_product_of_grid_deltas():
    g = KGrid(64, 0.25)
    chi = SusceptibilityModel(1, {2: np.ones((1, 1, 1))})
    i, j = g.index_of(1.0), g.index_of(-0.5)
    f = np.zeros((1, g.M), dtype=complex)
    h = np.zeros((1, g.M), dtype=complex)
    f[0, i] = 2.0 / g.dk
    h[0, j] = 3.0 / g.dk
    for method in ("fft", "direct"):
        out = apply_term(chi, 2, [f, h], g, method)
        want = np.zeros_like(out)
        want[0, g.index_of(0.5)] = 6.0 / g.dk / (2 * math.pi)
        assert np.max(np.abs(out - want)) <= 1e-9 * np.max(np.abs(want)), method


def test_pointwise_bound_holds_for_random_fields():
    rng = np.random.default_rng(2)
    g = KGrid(128, 0.1)
    T = _rand(rng, (2, 2, 2, 2))
    chi = SusceptibilityModel(2, {3: T})
    for _ in range(10):
        us = [_rand(rng, (2, g.M)) for _ in range(3)]
        bound = chi.tensor_norm(3) * np.prod([l1(u, g) for u in us])
        assert l1(apply_term(chi, 3, us, g), g) <= bound * (1 + 1e-9)


def test_pointwise_bound_is_nearly_attained_by_aligned_spikes():
    # every factor a single spike along the maximising direction of T
    g = KGrid(64, 0.5)
    T = np.zeros((2, 2, 2))
    T[0, 0, 0], T[1, 1, 1], T[0, 1, 0] = 1.0, 0.5, 0.2
    chi = SusceptibilityModel(2, {2: T})
    best = 0.0
    for x in (np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0]) / math.sqrt(2)):
        u = np.zeros((2, g.M), dtype=complex)
        u[:, g.index_of(0.0)] = x / g.dk
        out = apply_term(chi, 2, [u, u], g)
        best = max(best, l1(out, g) / (chi.tensor_norm(2) * l1(u, g) ** 2))
    assert best >= 0.95


def test_direct_sum_budget():
    g = KGrid(512, 0.1)
    chi = SusceptibilityModel(1, {3: np.ones((1,) * 4)})
    u = np.ones((1, g.M), dtype=complex)
    with pytest.raises(BudgetExceeded):
        apply_term(chi, 3, [u, u, u], g, "direct")


def test_fft_and_convolve_agree_for_scalar_square():
    rng = np.random.default_rng(3)
    g = KGrid(64, 0.2)
    chi = SusceptibilityModel(1, {2: np.ones((1, 1, 1))})
    u = _rand(rng, (1, g.M))
    assert np.allclose(apply_nonlinearity(chi, u, g), convolve(g, u[0], u[0])[None], atol=1e-12)


# evolution problems


def _constant_problem(tensors, initial, rho=0.1, tau_star=0.5, omega=1.0, grid=None):
    grid = grid or KGrid(32, 0.25)
    bs = constant_bands([omega])
    return EvolutionProblem(bs, SusceptibilityModel(2, tensors), rho, SpectralField(grid, initial), tau_star, grid)


def _delta(grid, amp):
    u = np.zeros((2, grid.M), dtype=complex)
    u[0, grid.index_of(0.0)] = amp / grid.dk
    return u


def test_zero_susceptibility_keeps_initial_data():
    g = KGrid(32, 0.25)
    u0 = _rand(np.random.default_rng(4), (2, g.M))
    pr = _constant_problem({2: np.zeros((2, 2, 2))}, u0, grid=g)
    for method in ("ifrk4", "picard"):
        traj = solve_integrated(pr, SolverConfig(method=method))
        assert np.array_equal(traj.final, u0), method


def test_scalar_ode_limit():
    a = 1.0
    exact = lambda t: a / (1 - a * t)
    for method in ("ifrk4", "picard"):
        traj = integrate(lambda t, x: x * x, np.array([a]), 0.5, 0.1, lambda x: float(np.abs(x).max()),
                         SolverConfig(method=method, dtau=1e-3, quadrature="trapezoid"))
        err = np.max(np.abs(traj.states[:, 0] - exact(traj.taus)))
        assert err <= (1e-10 if method == "ifrk4" else 1e-5), method


def test_blowup_is_reported_with_partial_trajectory():
    with pytest.raises(BlowUp) as info:
        integrate(lambda t, x: x * x, np.array([1.0]), 2.0, 0.1, lambda x: float(np.abs(x).max()),
                  SolverConfig(dtau=1e-3))
    assert info.value.partial is not None and info.value.partial.taus[-1] <= 1.0 + 1e-9


def test_unresolved_step_and_unknown_method():
    f = lambda t, x: x
    with pytest.raises(UnderResolved):
        integrate(f, np.ones(1), 1.0, 0.1, np.linalg.norm, SolverConfig(dtau=0.02))
    with pytest.raises(ValueError):
        integrate(f, np.ones(1), 1.0, 0.1, np.linalg.norm, SolverConfig(method="euler"))


def test_picard_stops_when_iteration_cannot_contract():
    with pytest.raises(NoContraction):
        integrate(lambda t, x: 50 * x, np.ones(1), 1.0, 1.0, lambda x: float(np.abs(x).max()),
                  SolverConfig(method="picard", dtau=0.1, slab=10, picard_max_iter=30, blowup_factor=1e300))


# oscillatory integrals


def test_oscillatory_integral_vanishes_at_zero():
    g = KGrid(32, 0.25)
    pr = _constant_problem({2: np.ones((2, 2, 2))}, _delta(g, 1.0), grid=g)
    s = np.repeat(pr.initial.values[None], 3, axis=0)
    out = oscillatory_multilinear(pr, 2, [s, s], np.array([0.0, 0.005, 0.01]))
    assert not np.any(out[0])


def test_resonant_term_grows_linearly():
    # u * conj(u) * u on a constant band carries no net phase
    g = KGrid(32, 0.25)
    T = np.zeros((2,) * 4)
    T[0, 0, 1, 0] = 1.0
    pr = EvolutionProblem(constant_bands([1.0]), SusceptibilityModel(2, {3: T}), 0.1,
                          SpectralField(g, _delta(g, 1.0)), 1.0, g)
    u = _delta(g, 1.0)
    u[1] = np.conj(u[0])
    taus = np.linspace(0, 1, 101)
    s = np.repeat(u[None], taus.size, axis=0)
    out = oscillatory_multilinear(pr, 3, [s] * 3, taus)[:, 0, g.index_of(0.0)]
    rate = 1 / g.dk / (2 * math.pi) ** 2
    assert np.allclose(out, taus * rate, rtol=1e-12)


def test_nonresonant_term_stays_bounded():
    # u * u picks up exp(-i tau / rho): |integral| <= 2 rho / |phase| times the integrand
    g = KGrid(32, 0.25)
    rho = 0.05
    T = np.zeros((2, 2, 2))
    T[0, 0, 0] = 1.0
    pr = EvolutionProblem(constant_bands([1.0]), SusceptibilityModel(2, {2: T}), rho,
                          SpectralField(g, _delta(g, 1.0)), 2.0, g)
    taus = np.linspace(0, 2, 801)
    s = np.repeat(pr.initial.values[None], taus.size, axis=0)
    out = np.abs(oscillatory_multilinear(pr, 2, [s, s], taus)[:, 0, g.index_of(0.0)])
    size = 1 / g.dk / (2 * math.pi)
    # trapezoid error at 20 nodes per period is below 1e-3 relative
    assert out.max() <= 2 * rho * size * (1 + 1e-3)
    assert out.max() >= 1.9 * rho * size


def test_node_spacing_guard():
    g = KGrid(32, 0.25)
    pr = _constant_problem({2: np.ones((2, 2, 2))}, _delta(g, 1.0), grid=g)
    s = np.repeat(pr.initial.values[None], 2, axis=0)
    with pytest.raises(UnderResolved):
        oscillatory_multilinear(pr, 2, [s, s], np.array([0.0, 0.02]))


# toy problem: dispersive transport plus a quadratic nonlinearity

TOY_GRID = KGrid(1024, 2 * math.pi / 64)


@pytest.fixture(scope="module")
def toy():
    model = toy_preset(1.0, rho=0.1)
    pr = toy_problem(model, TOY_GRID, 0.2)
    rk = solve_integrated(pr, SolverConfig(dtau=1e-3))
    pc = solve_integrated(pr, SolverConfig(method="picard", dtau=1e-3, slab=16, picard_tol=1e-12,
                                           quadrature="trapezoid"))
    return pr, rk, pc


def test_picard_solves_its_discrete_equation(toy):
    pr, _, pc = toy
    res = integral_residual(pr, pc, quadrature="trapezoid")
    assert res.max() <= 1e-10 * pc.sup_l1()


def test_picard_and_rk4_agree(toy):
    _, rk, pc = toy
    gap = max(l1(a - b, TOY_GRID) for a, b in zip(rk.states, pc.states))
    assert gap <= 1e-5 * rk.sup_l1()


def test_initial_reconstruction_and_real_fields(toy):
    pr, rk, _ = toy
    U = reconstruct_physical(pr, rk)
    assert np.allclose(U[0], to_r(TOY_GRID, pr.initial.values))
    assert np.max(np.abs(U.imag)) <= 1e-8 * np.max(np.abs(U.real))
    # U(-k) = conj U(k) for real fields; the grid has one unpaired Nyquist point
    u = rk.final[:, 1:]
    assert np.max(np.abs(u - np.conj(u[:, ::-1]))) <= 1e-8 * np.max(np.abs(u))


def test_sup_norm_bounded_by_l1_along_trajectory(toy):
    pr, rk, _ = toy
    U = reconstruct_physical(pr, rk)
    for i in range(0, len(rk.taus), 20):
        assert linf_physical(U[i]) <= l1(rk.states[i], TOY_GRID) / (2 * math.pi) * (1 + 1e-12)


def test_plane_wave_carrier_without_nonlinearity():
    g = KGrid(64, 0.25)
    bs = nls_band(1.0, 0.0, 0.5)
    k0 = 1.0
    u = np.zeros((2, g.M), dtype=complex)
    u[0, g.index_of(k0)] = 2 * math.pi / g.dk
    rho = 0.1
    pr = EvolutionProblem(bs, SusceptibilityModel(2, {2: np.zeros((2, 2, 2))}), rho, SpectralField(g, u), 0.3, g)
    traj = solve_integrated(pr)
    U = reconstruct_physical(pr, traj)[-1, 0]
    w = float(bs.frequency(1, k0))
    assert np.allclose(U, np.exp(1j * (k0 * g.r - w * traj.taus[-1] / rho)), atol=1e-10)


def test_diagnostics_csv(tmp_path, toy):
    _, _, pc = toy
    path = tmp_path / "diag.csv"
    write_diagnostics_csv(path, pc)
    lines = path.read_text().splitlines()
    assert lines[0] == "tau,l1_norm,residual,iterations"
    assert len(lines) == len(pc.step_taus) + 1
