"""Analytic oracles and example systems.

* the two-speed transport model with quadratic coupling, which has a
  closed-form travelling-wave solution when only one field is excited;
* finite-dimensional oscillatory ODEs for checking time averaging;
* coupled NLS-type equations used for the preservation and superposition
  experiments;
* rescalings that bring common equations into the standard form
  ``dU/dtau = -(i/rho) L U + F(U)``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .dispersion import BandStructure, coupled_nls_bands, diagonal_bands, mode_index, nls_band, two_speed
from .errors import PastBlowUp
from .fields import KGrid, SpectralField, WavepacketSpec, scaled_gaussian, synthesize_multiwavepacket, to_k, to_r
from .reduced import ModalPolynomial, ModalTerm, all_strings, labels
from .resonance import NKSpectrum, is_resonance_invariant
from .solver import EvolutionProblem, SolverConfig, SusceptibilityModel, Trajectory, integrate, solve_integrated

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# two-speed transport model


def bump(amplitude: float = 1.0) -> Callable:
    """C^2 bump amplitude * (1 - y^2)^3 on |y| < 1, zero outside."""

    def env(y):
        y = np.asarray(y, dtype=float)
        return amplitude * np.where(np.abs(y) < 1, (1 - np.minimum(y * y, 1.0)) ** 3, 0.0)

    env.amplitude = amplitude
    env.support = 1.0
    return env


@dataclass(frozen=True)
class ToyModel:
    """u1_tau = -(c1/rho) u1_x + u1^2 + a1 u1 u2, u2 likewise with c2, a2.

    Initial data h_j(x) = env_j(beta x) cos(k_j x); a ``None`` envelope
    means the field starts at zero.
    """

    c1: float = 1.0
    c2: float = 2.0
    a1: float = 1.0
    a2: float = 1.0
    env1: Optional[Callable] = None
    env2: Optional[Callable] = None
    k1: float = 2.0
    k2: float = 3.0
    beta: float = 0.25
    rho: float = 0.1

    def __post_init__(self):
        if self.c1 == self.c2:
            raise ValueError("the two speeds must differ")
        if abs(self.k1) == abs(self.k2):
            raise ValueError("carriers must have different |k|")

    def speed(self, j: int) -> float:
        return self.c1 if j == 1 else self.c2

    def envelope(self, j: int) -> Optional[Callable]:
        return self.env1 if j == 1 else self.env2

    def h(self, j: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        env = self.envelope(j)
        if env is None:
            return np.zeros_like(x)
        k = self.k1 if j == 1 else self.k2
        return env(self.beta * x) * np.cos(k * x)

    def active(self) -> tuple:
        return tuple(j for j in (1, 2) if self.envelope(j) is not None)

    def blowup_time(self, j: int = 1, x=None) -> float:
        """1 / sup|h_j|; the sup is taken over ``x`` or a dense sample of the support."""
        if x is None:
            half = getattr(self.envelope(j), "support", 10.0) / self.beta
            x = np.concatenate([np.linspace(-half, half, 200001), [0.0]])
        top = float(np.max(np.abs(self.h(j, x))))
        return math.inf if top == 0 else 1.0 / top


def toy_closed_form(model: ToyModel, x, tau: float) -> tuple:
    """Travelling-wave solution (v1, v2) with one active field.

    v(x, tau) = h(y) / (1 - tau h(y)), y = x - c tau / rho.
    """
    act = model.active()
    if len(act) > 1:
        raise ValueError("closed form needs a single active component")
    x = np.asarray(x, dtype=float)
    out = [np.zeros_like(x), np.zeros_like(x)]
    for j in act:
        if tau >= model.blowup_time(j):
            raise PastBlowUp(f"tau={tau} is past the blow-up time {model.blowup_time(j)}")
        hy = model.h(j, x - model.speed(j) * tau / model.rho)
        out[j - 1] = hy / (1 - tau * hy)
    return tuple(out)


def toy_tensor(a1: float, a2: float) -> np.ndarray:
    """Quadratic tensor on (u1, u2, w1, w2); the w pair copies the u coupling."""
    T = np.zeros((4,) * 3)
    for base in (0, 2):
        p, q = base, base + 1
        T[p, p, p] = 1.0
        T[p, p, q] = T[p, q, p] = a1 / 2
        T[q, q, q] = 1.0
        T[q, p, q] = T[q, q, p] = a2 / 2
    return T


def toy_problem(model: ToyModel, grid: KGrid, tau_star: float | None = None) -> EvolutionProblem:
    """Four-component extension with zero data in the mirror fields w1, w2."""
    bs = two_speed(model.c1, model.c2)
    chi = SusceptibilityModel(4, {2: toy_tensor(model.a1, model.a2)})
    U = np.zeros((4, grid.M), dtype=complex)
    U[0] = model.h(1, grid.r)
    U[1] = model.h(2, grid.r)
    if tau_star is None:
        t0 = min(model.blowup_time(j) for j in model.active()) if model.active() else 1.0
        tau_star = 0.5 * t0
    return EvolutionProblem(bs, chi, model.rho, SpectralField(grid, to_k(grid, U)), tau_star, grid)


def toy_physical(problem: EvolutionProblem, u_slow: np.ndarray, tau: float) -> np.ndarray:
    """Real r-space fields (u1, u2, w1, w2) from a slow-variable state."""
    return to_r(problem.grid, problem.physical(u_slow, tau)).real


def toy_oracle_error(model: ToyModel, grid: KGrid, config: SolverConfig, tau: float | None = None) -> dict:
    """Relative L-infinity error of the spectral solution against the closed form at ``tau``."""
    (j,) = model.active()
    tau = 0.5 * model.blowup_time(j) if tau is None else tau
    pr = toy_problem(model, grid, tau)
    traj = solve_integrated(pr, config)
    U = toy_physical(pr, traj.final, traj.taus[-1])
    exact = toy_closed_form(model, grid.r, traj.taus[-1])[j - 1]
    err = float(np.max(np.abs(U[j - 1] - exact)) / np.max(np.abs(exact)))
    return {"error": err, "mirror": float(np.max(np.abs(U[2:]))), "tau": float(traj.taus[-1]),
            "dtau": traj.dtau, "trajectory": traj, "problem": pr}


# ---------------------------------------------------------------------------
# finite-dimensional averaging


def constant_bands(omega0: Sequence[float]) -> BandStructure:
    """Diagonal bands with k-independent frequencies omega0[n-1]."""
    return diagonal_bands([lambda k, w=float(w): w + 0.0 * np.asarray(k, dtype=float) for w in omega0],
                          name="constant", params={"omega0": [float(w) for w in omega0]})


def _eval_tensors(tensors: dict, u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u)
    for m, T in tensors.items():
        val = T
        for _ in range(m):
            val = val @ u
        out = out + val
    return out


@dataclass
class ODECase:
    """dU/dtau = -(i/rho) diag(zeta omega0_n) U + F(U) on 2J coordinates.

    Coordinates follow the label order (1,+), (1,-), (2,+), ...; the
    eigenvectors are the coordinate unit vectors.  ``B`` lists the excited
    modes; ``initial`` must vanish outside them.
    """

    omega0: tuple
    F: ModalPolynomial
    B: tuple
    rho: float
    initial: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.omega0, dtype=float)
        if len(set(np.round(w, 12))) != w.size or np.any(w <= 0):
            raise ValueError("omega0 must hold distinct positive frequencies")
        self.omega0 = tuple(float(x) for x in w)
        self.initial = np.asarray(self.initial, dtype=complex)
        self._T = self.F.to_tensors()
        lam = np.zeros(2 * len(w))
        for n, om in enumerate(w, start=1):
            lam[mode_index(n, 1)] = om
            lam[mode_index(n, -1)] = -om
        self.Lambda = lam

    @property
    def J(self) -> int:
        return len(self.omega0)

    @property
    def unexcited(self) -> np.ndarray:
        idx = [mode_index(n, z) for n in range(1, self.J + 1) if n not in self.B for z in (1, -1)]
        return np.array(idx, dtype=int)

    @property
    def orders(self) -> tuple:
        return tuple(sorted(self._T))

    def resonance_invariant(self, tol: float = 1e-9) -> bool:
        """Invariance of B under the resonance map with every carrier at k = 0."""
        S = NKSpectrum(tuple((n, 0.0) for n in self.B))
        return is_resonance_invariant(S, constant_bands(self.omega0), self.orders, tol)

    def rhs(self, tau: float, u: np.ndarray) -> np.ndarray:
        ph = np.exp(1j * tau * self.Lambda / self.rho)
        return ph * _eval_tensors(self._T, np.conj(ph) * u)

    def averaged(self) -> "ODECase":
        return replace(self, F=self.F.averaged(self.omega0))

    def averaged_rhs(self, tau: float, v: np.ndarray) -> np.ndarray:
        return _eval_tensors(self._avg, v)

    @property
    def _avg(self) -> dict:
        cache = getattr(self, "_avg_cache", None)
        if cache is None:
            cache = self.F.averaged(self.omega0).to_tensors()
            self._avg_cache = cache
        return cache


@dataclass
class ODEComparison:
    rhos: np.ndarray
    unexcited: np.ndarray
    gaps: np.ndarray
    invariant: bool


def _maxabs(x) -> float:
    return float(np.max(np.abs(x)))


def ode_average_compare(case: ODECase, tau_star: float, rhos: Sequence[float],
                        config: SolverConfig | None = None) -> ODEComparison:
    """Full oscillatory ODE against the averaged one over a rho sweep.

    Returns sup_tau |U_n'| over modes outside B and sup_tau |v - u|.
    """
    config = config or SolverConfig()
    invariant = case.resonance_invariant()
    if not invariant:
        warnings.warn("excited set is not resonance invariant; unexcited-mode bound does not apply",
                      RuntimeWarning)
    une, gaps = [], []
    for rho in rhos:
        c = replace(case, rho=float(rho))
        full = integrate(c.rhs, c.initial, tau_star, c.rho, _maxabs, config)
        avg = integrate(c.averaged_rhs, c.initial, tau_star, c.rho, _maxabs, config)
        idx = c.unexcited
        une.append(float(np.max(np.abs(full.states[:, idx]))) if idx.size else 0.0)
        gaps.append(float(np.max(np.abs(full.states - avg.states))))
    return ODEComparison(np.asarray(rhos, dtype=float), np.array(une), np.array(gaps), invariant)


def generic_polynomial(J: int, orders: Sequence[int], rng: np.random.Generator, scale: float = 1.0) -> ModalPolynomial:
    """Every string of every order with an independent complex Gaussian coefficient."""
    terms = []
    for m in orders:
        for lab in labels(J):
            for s in all_strings(J, m):
                c = scale * complex(rng.normal(), rng.normal()) / math.sqrt(2)
                terms.append(ModalTerm(lab, c, s.lam))
    return ModalPolynomial(J, tuple(terms))


def ode4_case(seed: int = 0, rho: float = 0.1, orders: Sequence[int] = (3,), scale: float = 0.3) -> ODECase:
    """Four modes at 1, sqrt 2, sqrt 3, sqrt 5 with modes 1 and 2 excited."""
    rng = np.random.default_rng(seed)
    omega0 = (1.0, math.sqrt(2), math.sqrt(3), math.sqrt(5))
    F = generic_polynomial(4, orders, rng, scale)
    u0 = np.zeros(8, dtype=complex)
    for n in (1, 2):
        a = complex(rng.normal(), rng.normal()) * 0.5
        u0[mode_index(n, 1)] = a
        u0[mode_index(n, -1)] = np.conj(a)
    return ODECase(omega0, F, (1, 2), rho, u0)


# ---------------------------------------------------------------------------
# coupled NLS-type equations


@dataclass(frozen=True)
class CoupledNLSParams:
    """Coefficients of two coupled NLS-type equations.

    du_j/dtau = -(i/rho)[g0_j + i g1_j d_x + g2_j d_x^2] u_j
                + (b_j1 |u1|^2 + b_j2 |u2|^2) u_j + c_j |u_other|^2 u_other

    ``gamma[j] = (g0, g1, g2)`` are the PDE coefficients; ``c = (c12, c22)``.
    Data u_j(0) = env_j(beta x) exp(i k_j x).
    """

    gamma: tuple = ((1.0, 0.0, -0.5), (2.0, 0.0, -0.5))
    b: tuple = ((1j, 2j), (2j, 1j))
    c: tuple = (0.5j, 0.5j)
    k: tuple = (1.0, -1.0)
    env1: Optional[Callable] = field(default_factory=lambda: scaled_gaussian(1.0, 1.0))
    env2: Optional[Callable] = field(default_factory=lambda: scaled_gaussian(1.0, 1.0))
    beta: float = 0.1
    rho: float = 0.01
    tau_star: float = 1.0

    def band_coefficients(self) -> list:
        return [(g0, -g1, -g2) for g0, g1, g2 in self.gamma]

    def decoupled(self, drop_second: bool = False) -> "CoupledNLSParams":
        """Cross terms removed; ``drop_second`` also zeroes the second field's data."""
        b = ((self.b[0][0], 0.0), (0.0, self.b[1][1]))
        return replace(self, b=b, c=(0.0, 0.0), env2=None if drop_second else self.env2)


_CONJ = np.array([1, 0, 3, 2])


def coupled_nls_tensor(p: CoupledNLSParams) -> np.ndarray:
    """Cubic tensor on (u1, conj u1, u2, conj u2)."""
    T = np.zeros((4,) * 4, dtype=complex)
    (b11, b12), (b21, b22) = p.b
    c12, c22 = p.c
    T[0, 0, 1, 0] += b11
    T[0, 2, 3, 0] += b12
    T[0, 2, 3, 2] += c12
    T[2, 0, 1, 2] += b21
    T[2, 2, 3, 2] += b22
    T[2, 0, 1, 0] += c22
    for a, bb, cc, d in zip(*np.nonzero(T)):
        T[_CONJ[a], _CONJ[bb], _CONJ[cc], _CONJ[d]] = np.conj(T[a, bb, cc, d])
    return T


def coupled_nls_problem(p: CoupledNLSParams, grid: KGrid) -> EvolutionProblem:
    bs = coupled_nls_bands(p.band_coefficients())
    chi = SusceptibilityModel(4, {3: coupled_nls_tensor(p)})
    x = grid.r
    U = np.zeros((4, grid.M), dtype=complex)
    for j, env in enumerate((p.env1, p.env2)):
        if env is not None:
            U[2 * j] = env(p.beta * x) * np.exp(1j * p.k[j] * x)
            U[2 * j + 1] = np.conj(U[2 * j])
    return EvolutionProblem(bs, chi, p.rho, SpectralField(grid, to_k(grid, U)), p.tau_star, grid)


@dataclass
class CoupledNLSBundle:
    scenario: str
    params: CoupledNLSParams
    full: EvolutionProblem
    reference: EvolutionProblem
    error_form: Callable  # (beta, rho, eps) -> predicted order of the gap

    def physical_fields(self, problem: EvolutionProblem, traj: Trajectory) -> np.ndarray:
        """(nodes, 2, M) r-space samples of u1 and u2."""
        return np.array([to_r(problem.grid, problem.physical(u, t))[[0, 2]] for t, u in zip(traj.taus, traj.states)])

    def gap(self, full: Trajectory, reference: Trajectory) -> float:
        """sup_tau ||D1||_inf + sup_tau ||D2||_inf."""
        a = self.physical_fields(self.full, full)
        b = self.physical_fields(self.reference, reference)
        d = np.max(np.abs(a - b), axis=-1)
        return float(np.sum(np.max(d, axis=0)))

    def run(self, config: SolverConfig | None = None) -> float:
        config = config or SolverConfig()
        return self.gap(solve_integrated(self.full, config), solve_integrated(self.reference, config))


def coupled_nls_reference(p: CoupledNLSParams, grid: KGrid, scenario: str = "superposition") -> CoupledNLSBundle:
    """Full coupled problem plus its decoupled reference.

    ``preservation``: second field starts at zero, reference drops the cross
    terms, predicted gap ~ rho.  ``superposition``: both fields excited,
    reference drops all cross terms, predicted gap ~ rho / beta^(1+eps) + beta.
    """
    if scenario == "preservation":
        full_p = replace(p, env2=None)
        ref_p = p.decoupled(drop_second=True)
        form = lambda beta, rho, eps=0.0: rho
    elif scenario == "superposition":
        full_p = p
        ref_p = p.decoupled()
        form = lambda beta, rho, eps=0.0: rho / beta ** (1 + eps) + beta
    else:
        raise ValueError(f"unknown scenario {scenario!r}")
    return CoupledNLSBundle(scenario, full_p, coupled_nls_problem(full_p, grid), coupled_nls_problem(ref_p, grid), form)


def nls_grid(p: CoupledNLSParams, points_per_width: int = 8, kmax: float = 2.5) -> KGrid:
    """Power-of-two grid resolving envelopes of unit width at scale beta."""
    dk = p.beta / points_per_width
    M = 16
    while M * dk / 2 < kmax:
        M *= 2
    return KGrid(M, dk)


# ---------------------------------------------------------------------------
# rescalings into standard form


@dataclass
class StandardForm:
    """A rescaled problem with the factors that relate it to the original."""

    kind: str
    problem: Optional[EvolutionProblem]
    rho: float
    tau_per_t: float
    beta: Optional[float] = None


def rescaled_band(bs: BandStructure, M: float, rho: float) -> BandStructure:
    """Band structure of y = M x in standard form: omega_y(k) = rho omega_x(M k)."""

    def omega_fn(n, zeta, k):
        return rho * bs.omega(n, zeta, M * np.asarray(k, dtype=float))

    def eigvec_fn(n, zeta, k):
        return bs.eigvec(n, zeta, M * np.asarray(k, dtype=float))

    def crossing_fn(k, r):
        return bs.crossing_fn(M * np.asarray(k, dtype=float), r * M)

    derivs = {p: (lambda n, zeta, k, p=p: rho * M**p * bs.derivative(n, zeta, M * np.asarray(k, dtype=float), p))
              for p in bs.derivs}
    return BandStructure(bs.J, omega_fn, eigvec_fn, crossing_fn, derivs, bs.d, f"{bs.name}@y",
                         {**bs.params, "M": M}, bs.r_bc)


def _initial(params: dict, bs: BandStructure, grid: Optional[KGrid]):
    init = params.get("initial")
    if grid is None:
        return None
    if init is None:
        return SpectralField(grid, np.zeros((bs.ncomp, grid.M), dtype=complex))
    return init if isinstance(init, SpectralField) else SpectralField(grid, np.asarray(init, dtype=complex))


def standard_reductions(kind: str, **params) -> StandardForm:
    """Rescale a problem into standard form.

    small_nonlinearity: dU/dt = -i L U + alpha F(U); tau = alpha t, rho = alpha.
    small_data: U(0) = alpha0 h; with V = U / alpha0 and lowest order m,
        tau = alpha0^(m-1) t, rho = alpha0^(m-1), order-m' tensors gain alpha0^(m'-m).
    high_frequency: carrier M k, envelope width beta; y = M x gives
        rho = 1 / M^2 and beta1 = beta / M.
    hyperbolic_extension: two-speed model with zero mirror fields.

    A problem is built when ``grid`` is supplied (``initial`` defaults to 0).
    """
    tau_star = params.get("tau_star", 1.0)
    grid = params.get("grid")
    if kind == "small_nonlinearity":
        alpha = float(params["alpha"])
        bs, chi = params["bs"], params["chi"]
        init = _initial(params, bs, grid)
        pr = EvolutionProblem(bs, chi, alpha, init, tau_star, grid) if init is not None else None
        return StandardForm(kind, pr, alpha, alpha)
    if kind == "small_data":
        a0 = float(params["alpha0"])
        bs, chi = params["bs"], params["chi"]
        m = min(chi.orders)
        rho = a0 ** (m - 1)
        scaled = SusceptibilityModel(chi.ncomp, {mm: T * a0 ** (mm - m) for mm, T in chi.tensors.items()})
        init = _initial(params, bs, grid)
        pr = EvolutionProblem(bs, scaled, rho, init, tau_star, grid) if init is not None else None
        return StandardForm(kind, pr, rho, rho)
    if kind == "high_frequency":
        M = float(params["M"])
        rho = 1.0 / M**2
        beta1 = float(params["beta"]) / M
        pr = None
        if grid is not None:
            bs = rescaled_band(params["bs"], M, rho)
            init = _initial(params, bs, grid)
            pr = EvolutionProblem(bs, params["chi"], rho, init, tau_star, grid)
        return StandardForm(kind, pr, rho, 1.0, beta1)
    if kind == "hyperbolic_extension":
        model = params["model"]
        pr = toy_problem(model, grid, params.get("tau_star")) if grid is not None else None
        return StandardForm(kind, pr, model.rho, 1.0, model.beta)
    raise ValueError(f"unknown reduction {kind!r}")


# ---------------------------------------------------------------------------
# named presets


@dataclass
class SingleNLS:
    """Cubic single-wavepacket problem used for the preservation experiments."""

    bs: BandStructure
    chi: SusceptibilityModel
    S: NKSpectrum
    k_star: float
    width: float
    amplitude: float
    eps: float

    def spec(self, beta: float) -> WavepacketSpec:
        return WavepacketSpec(1, self.k_star, beta, scaled_gaussian(self.width, self.amplitude), eps=self.eps, real=True)

    def problem(self, beta: float, rho: float, grid: KGrid, tau_star: float) -> EvolutionProblem:
        h = synthesize_multiwavepacket([self.spec(beta)], grid, self.bs)
        return EvolutionProblem(self.bs, self.chi, rho, h, tau_star, grid)


def dispersive_sup_trend(case: SingleNLS, rho: float, betas: Sequence[float], grid: KGrid, tau_star: float,
                         config: SolverConfig | None = None) -> list:
    """(beta, beta^2 / rho, sup_r |U(tau_star)|) per beta, logged at INFO.

    Long dispersion times should flatten the packet; no rate is asserted
    because the decay depends on the envelope equation, not on the windowing.
    """
    rows = []
    for beta in betas:
        pr = case.problem(beta, rho, grid, tau_star)
        traj = solve_integrated(pr, config)
        sup = float(np.max(np.abs(to_r(grid, pr.physical(traj.final, traj.taus[-1])))))
        rows.append((float(beta), beta**2 / rho, sup))
        log.info("beta=%g beta^2/rho=%.3g sup|U|=%.4g", beta, beta**2 / rho, sup)
    return rows


def single_nls(k_star: float = 1.0, width: float = 0.25, amplitude: float = 1.0, eps: float = 0.5) -> SingleNLS:
    """omega = 1 + k^2 / 2 with F = (u + conj u)^3 on the pair (u, conj u)."""
    return SingleNLS(nls_band(1.0, 0.0, 0.5), SusceptibilityModel(2, {3: np.ones((2,) * 4)}),
                     NKSpectrum.of((1, k_star)), k_star, width, amplitude, eps)


def toy_preset(amplitude: float = 1.0, **kw) -> ToyModel:
    return ToyModel(env1=bump(amplitude), **kw)


PRESETS = {
    "toy": toy_preset,
    "ode4": ode4_case,
    "coupled_nls": CoupledNLSParams,
    "single_nls": single_nls,
}


def preset(name: str, **params):
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**params)
