import math
from dataclasses import replace

import numpy as np
import pytest

from wavelab.dispersion import nls_band
from wavelab.errors import PastBlowUp
from wavelab.fields import KGrid, to_r
from wavelab.models import (
    CoupledNLSParams,
    ODECase,
    bump,
    coupled_nls_problem,
    coupled_nls_reference,
    coupled_nls_tensor,
    dispersive_sup_trend,
    nls_grid,
    ode4_case,
    preset,
    single_nls,
    standard_reductions,
    toy_closed_form,
    toy_oracle_error,
    toy_preset,
    toy_tensor,
)
from wavelab.reduced import ModalPolynomial, ModalTerm
from wavelab.solver import SolverConfig, SusceptibilityModel, integrate, solve_integrated

# toy model


def test_closed_form_at_zero_is_initial_data():
    m = toy_preset(0.8)
    x = np.linspace(-10, 10, 201)
    v1, v2 = toy_closed_form(m, x, 0.0)
    assert np.array_equal(v1, m.h(1, x)) and not np.any(v2)


def test_closed_form_solves_transport_riccati_equation():
    # v_tau + (c / rho) v_x = v^2, checked by centred differences
    m = toy_preset(1.0)
    x = np.linspace(-2, 2, 41)
    tau, h = 0.3, 1e-5
    v = lambda t, y: toy_closed_form(m, y, t)[0]
    vt = (v(tau + h, x) - v(tau - h, x)) / (2 * h)
    vx = (v(tau, x + h) - v(tau, x - h)) / (2 * h)
    resid = vt + m.c1 / m.rho * vx - v(tau, x) ** 2
    assert np.max(np.abs(resid)) <= 1e-4


def test_blowup_time_is_independent_of_rho():
    times = [toy_preset(1.0, rho=r).blowup_time() for r in (0.1, 0.01, 0.001)]
    assert max(times) == min(times) == pytest.approx(1.0)
    with pytest.raises(PastBlowUp):
        toy_closed_form(toy_preset(1.0), np.zeros(3), 1.0)


def test_toy_model_validation():
    with pytest.raises(ValueError):
        toy_preset(c1=1.0, c2=1.0)
    with pytest.raises(ValueError):
        toy_preset(k1=2.0, k2=-2.0)
    with pytest.raises(ValueError):
        toy_closed_form(replace(toy_preset(), env2=bump()), np.zeros(3), 0.1)


def test_toy_tensor_copies_coupling_to_mirror_fields():
    T = toy_tensor(0.3, 0.7)
    assert np.array_equal(T[:2, :2, :2], T[2:, 2:, 2:])
    assert not np.any(T[:2, 2:]) and not np.any(T[:2, :, 2:])


def test_spectral_toy_solution_matches_closed_form():
    res = toy_oracle_error(toy_preset(1.0, rho=0.1), KGrid(1024, 2 * math.pi / 64), SolverConfig(), tau=0.2)
    assert res["error"] <= 1e-6
    assert res["mirror"] <= 1e-12


# standard reductions

BAND = nls_band(1.0, 0.0, 0.5)


def test_small_data_scaling():
    chi = SusceptibilityModel(2, {3: np.ones((2,) * 4), 5: np.ones((2,) * 6)})
    sf = standard_reductions("small_data", alpha0=0.1, bs=BAND, chi=chi, grid=KGrid(64, 0.1))
    assert sf.rho == pytest.approx(0.01) and sf.tau_per_t == pytest.approx(0.01)
    assert np.allclose(sf.problem.chi.tensors[5], 0.01) and np.allclose(sf.problem.chi.tensors[3], 1.0)


def test_small_nonlinearity_scaling():
    chi = SusceptibilityModel(2, {3: np.ones((2,) * 4)})
    sf = standard_reductions("small_nonlinearity", alpha=0.05, bs=BAND, chi=chi)
    assert sf.rho == 0.05 and sf.problem is None


def test_high_frequency_scaling():
    chi = SusceptibilityModel(2, {3: np.ones((2,) * 4)})
    g = KGrid(64, 0.01)
    sf = standard_reductions("high_frequency", M=10, beta=0.5, bs=BAND, chi=chi, grid=g)
    assert sf.rho == pytest.approx(0.01) and sf.beta == pytest.approx(0.05)
    k = np.array([-0.2, 0.1, 0.3])
    assert np.allclose(sf.problem.bs.frequency(1, k), 0.01 * BAND.frequency(1, 10 * k))
    # the physical-time phase rho * omega_x(M k) / rho is unchanged by the rescaling
    assert np.allclose(sf.problem.bs.frequency(1, k) / sf.rho, BAND.frequency(1, 10 * k))


def test_hyperbolic_extension_keeps_mirror_at_zero():
    model = toy_preset(1.0, rho=0.1)
    g = KGrid(512, 2 * math.pi / 64)
    sf = standard_reductions("hyperbolic_extension", model=model, grid=g, tau_star=0.2)
    traj = solve_integrated(sf.problem)
    U = to_r(g, sf.problem.physical(traj.final, traj.taus[-1]))
    assert np.max(np.abs(U[2:])) <= 1e-12


def test_unknown_reduction():
    with pytest.raises(ValueError):
        standard_reductions("large_data")


# coupled NLS


SMALL = CoupledNLSParams(beta=0.2, rho=0.02, tau_star=0.1)


def test_band_coefficients_flip_derivative_signs():
    assert SMALL.band_coefficients() == [(1.0, -0.0, 0.5), (2.0, -0.0, 0.5)]


def test_tensor_is_closed_under_conjugation():
    T = coupled_nls_tensor(SMALL)
    conj = np.array([1, 0, 3, 2])
    assert np.allclose(T[np.ix_(conj, conj, conj, conj)], np.conj(T))


def test_second_field_stays_zero_without_source():
    p = replace(SMALL, env2=None, c=(0.0, 0.0))
    g = nls_grid(p)
    pr = coupled_nls_problem(p, g)
    traj = solve_integrated(pr)
    assert not np.any(traj.states[:, 2:])


def test_linear_packet_moves_at_group_speed_over_rho():
    p = replace(SMALL, env2=None, b=((0, 0), (0, 0)), c=(0, 0), beta=0.1, rho=0.01, tau_star=0.05)
    g = nls_grid(p, kmax=4.0)
    pr = coupled_nls_problem(p, g)
    traj = solve_integrated(pr)
    w = np.abs(to_r(g, pr.physical(traj.final, traj.taus[-1]))[0]) ** 2
    centroid = float(np.sum(g.r * w) / np.sum(w))
    # omega = 1 + k^2 / 2 has unit group velocity at k = 1
    want = traj.taus[-1] / p.rho
    assert centroid == pytest.approx(want, rel=1e-2)


def test_reference_scenarios():
    g = nls_grid(SMALL)
    pres = coupled_nls_reference(SMALL, g, "preservation")
    assert pres.error_form(0.1, 0.01) == 0.01
    assert not np.any(pres.full.initial.values[2:])
    sup = coupled_nls_reference(SMALL, g, "superposition")
    assert sup.error_form(0.1, 0.01, 0.5) == pytest.approx(0.01 / 0.1**1.5 + 0.1)
    with pytest.raises(ValueError):
        coupled_nls_reference(SMALL, g, "other")


def test_dispersive_trend_is_logged(caplog):
    with caplog.at_level("INFO", logger="wavelab.models"):
        rows = dispersive_sup_trend(single_nls(), 0.01, [0.3, 0.2], KGrid(1024, 0.01), 0.05)
    assert [r[0] for r in rows] == [0.3, 0.2]
    assert rows[0][1] == pytest.approx(9.0) and all(r[2] > 0 for r in rows)
    assert sum("sup|U|" in m for m in caplog.messages) == 2


# finite-dimensional averaging


def test_ode_case_validation():
    F = ModalPolynomial(2, ())
    with pytest.raises(ValueError):
        ODECase((1.0, 1.0), F, (1,), 0.1, np.zeros(4))
    with pytest.raises(ValueError):
        ODECase((1.0, -2.0), F, (1,), 0.1, np.zeros(4))


def test_ode_zero_data_stays_zero():
    case = replace(ode4_case(0), initial=np.zeros(8, dtype=complex))
    traj = integrate(case.rhs, case.initial, 0.5, case.rho, lambda x: float(np.abs(x).max()), SolverConfig())
    assert not np.any(traj.states)


def test_averaged_ode_keeps_unexcited_modes_at_zero():
    case = ode4_case(1)
    assert case.resonance_invariant()
    traj = integrate(case.averaged_rhs, case.initial, 1.0, case.rho, lambda x: float(np.abs(x).max()),
                     SolverConfig())
    assert not np.any(traj.states[:, case.unexcited])


def test_averaged_ode_keeps_only_resonant_terms():
    case = ode4_case(2)
    avg = case.averaged()
    assert 0 < len(avg.F.terms) < len(case.F.terms)
    assert all(abs(case.F.detuning(t, case.omega0)) <= 1e-9 for t in avg.F.terms)


def test_single_mode_phase_rotation_case():
    # u' = i|u|^2 u averages to itself and conserves |u|
    F = ModalPolynomial(1, (ModalTerm((1, 1), 1j, ((1, 1), (1, 1), (-1, 1))),
                            ModalTerm((1, -1), -1j, ((-1, 1), (-1, 1), (1, 1)))))
    case = ODECase((1.0,), F, (1,), 0.05, np.array([0.6, 0.6], dtype=complex))
    traj = integrate(case.rhs, case.initial, 1.0, case.rho, lambda x: float(np.abs(x).max()), SolverConfig())
    assert np.allclose(np.abs(traj.states[:, 0]), 0.6, atol=1e-10)
    assert np.allclose(traj.states[-1, 0], 0.6 * np.exp(1j * 0.36), atol=1e-8)


# presets


def test_presets():
    assert preset("toy").env1 is not None
    assert preset("single_nls", k_star=2.0).k_star == 2.0
    assert isinstance(preset("coupled_nls"), CoupledNLSParams)
    with pytest.raises(ValueError):
        preset("nope")


def test_bump_shape():
    env = bump(2.0)
    assert env(0.0) == 2.0 and env(1.0) == 0.0 and env(-3.0) == 0.0
    assert env.support == 1.0
