"""Reduced systems on a multi-wavepacket: interaction, averaged, scalar and minimal.

State layout.  A carrier label ``(l, theta)`` addresses the window around
``theta * k_l`` on branch ``(n_l, theta)``; labels are stored in the order
``(1,+), (1,-), (2,+), ...`` so label ``(l, theta)`` sits at row
``2(l-1) + (0 if theta > 0 else 1)``.  Index strings use the resonance
module's convention: a tuple of ``(zeta, l)`` entries.

All systems are written in the slow variable of their own linear part, so
the generic integrator in :mod:`wavelab.solver` drives every rung of the
ladder and trajectories of adjacent rungs compare node by node.
"""

from __future__ import annotations

import cmath
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dispersion import BandStructure, taylor_coefficients
from .errors import GaugeUndefined, GridMismatch, NotResonanceInvariant, WindowOverlap
from .fields import (
    EPS_DEFAULT,
    KGrid,
    crop,
    cutoff_psi,
    l1,
    pad,
    pad_factor,
    to_k,
    to_r,
    window_radius,
)
from .resonance import NEAR_FACTOR, IndexString, NKSpectrum, is_resonance_invariant, same_k
from .solver import (
    EvolutionProblem,
    SolverConfig,
    SusceptibilityModel,
    Trajectory,
    _pointwise,
    _quad_weights,
    apply_nonlinearity,
    apply_term,
    integrate,
)

log = logging.getLogger(__name__)

Q_STEP = 1e-4


def label_index(l: int, theta: int) -> int:
    return 2 * (l - 1) + (0 if theta > 0 else 1)


def labels(N: int) -> list:
    return [(l, th) for l in range(1, N + 1) for th in (1, -1)]


def all_strings(N: int, m: int):
    alpha = [(z, l) for l in range(1, N + 1) for z in (1, -1)]
    for lam in itertools.product(alpha, repeat=m):
        yield IndexString(lam, N)


# ---------------------------------------------------------------------------
# polynomials in modal amplitudes


@dataclass(frozen=True)
class ModalTerm:
    out: tuple  # (l, theta)
    coeff: complex
    lam: tuple  # ((zeta, l), ...)


@dataclass(frozen=True)
class ModalPolynomial:
    """F_{l,theta}(u) = sum coeff * prod_j u[(l_j, zeta_j)] over its terms.

    ``u`` has 2N rows in label order (extra trailing axes broadcast).
    """

    N: int
    terms: tuple

    def evaluate(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=complex)
        out = np.zeros_like(u)
        for t in self.terms:
            prod = t.coeff
            for z, l in t.lam:
                prod = prod * u[label_index(l, z)]
            out[label_index(*t.out)] += prod
        return out

    def detuning(self, term: ModalTerm, phi: Sequence[float]) -> float:
        """theta phi_l - sum zeta_j phi_{l_j}; zero exactly for resonant terms."""
        l, th = term.out
        return th * phi[l - 1] - sum(z * phi[lj - 1] for z, lj in term.lam)

    def averaged(self, phi: Sequence[float], T: Optional[float] = None, tol: float = 1e-9) -> "ModalPolynomial":
        """A_T F = (1/T) int_0^T e^{-i theta phi_l t} F_{l,theta}(e^{i zeta phi t} u) dt.

        ``T=None`` takes the limit: resonant terms stay, the rest vanish.
        """
        scale = max((abs(p) for p in phi), default=1.0) or 1.0
        kept = []
        for t in self.terms:
            om = self.detuning(t, phi)
            if abs(om) <= tol * scale:
                kept.append(t)
            elif T is not None:
                kept.append(ModalTerm(t.out, t.coeff * average_factor(om, T), t.lam))
        return ModalPolynomial(self.N, tuple(kept))

    def term_strings(self) -> dict:
        out = {lab: [] for lab in labels(self.N)}
        for t in self.terms:
            out[t.out].append(t.lam)
        return {k: tuple(v) for k, v in out.items()}

    def to_tensors(self) -> dict:
        """Dense order-m tensors over the 2N label coordinates (output index first)."""
        out = {}
        for t in self.terms:
            m = len(t.lam)
            T = out.setdefault(m, np.zeros((2 * self.N,) * (m + 1), dtype=complex))
            idx = (label_index(*t.out),) + tuple(label_index(l, z) for z, l in t.lam)
            T[idx] += t.coeff
        return out


def average_factor(detuning: float, T: float) -> complex:
    """(1/T) int_0^T e^{-i detuning t} dt."""
    x = detuning * T
    if abs(x) < 1e-12:
        return 1.0 + 0j
    return (1 - cmath.exp(-1j * x)) / (1j * x)


def universal_strings(N: int, m: int, l: int, theta: int) -> tuple:
    """Strings whose net multiplicity vector is theta * e_l."""
    target = tuple(theta if i == l else 0 for i in range(1, N + 1))
    return tuple(s.lam for s in all_strings(N, m) if s.delta == target)


def universal_polynomial(N: int, orders: Sequence[int], coeff: Callable | None = None,
                         rng: np.random.Generator | None = None) -> ModalPolynomial:
    """Polynomial built only from universal strings.

    ``coeff(out, lam)`` supplies coefficients; by default they are random
    complex numbers from ``rng``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    terms = []
    for m in orders:
        for l, th in labels(N):
            for lam in universal_strings(N, m, l, th):
                c = coeff((l, th), lam) if coeff else complex(rng.normal(), rng.normal())
                terms.append(ModalTerm((l, th), c, lam))
    return ModalPolynomial(N, tuple(terms))


# ---------------------------------------------------------------------------
# resonant term lists


@dataclass(frozen=True)
class ResonantTermList:
    """Per carrier label, the strings kept by time averaging."""

    N: int
    terms: dict
    near: dict = field(default_factory=dict)

    def __getitem__(self, key) -> tuple:
        return self.terms[key]

    def strings(self, key, m: int | None = None) -> tuple:
        return tuple(s for s in self.terms[key] if m is None or len(s) == m)

    @property
    def count(self) -> int:
        return sum(len(v) for v in self.terms.values())

    def as_sets(self) -> dict:
        return {k: frozenset(v) for k, v in self.terms.items()}


def candidate_strings(S: NKSpectrum, arities: Sequence[int]) -> dict:
    """Strings whose wavevector sum lands on each carrier centre theta * k_l."""
    N = len(S)
    ks = [p.k_star for p in S.pairs]
    out = {lab: [] for lab in labels(N)}
    for m in sorted(set(arities)):
        for s in all_strings(N, m):
            kap = sum(z * ks[l - 1] for z, l in s.lam)
            for l, th in labels(N):
                if same_k(kap, th * ks[l - 1]):
                    out[(l, th)].append(s.lam)
    return {k: tuple(v) for k, v in out.items()}


def time_average_nonlinearity(terms: dict, phi: Sequence[float], tol: float = 1e-9) -> ResonantTermList:
    """Keep the strings whose detuning theta phi_l - sum zeta_j phi_{l_j} vanishes.

    Strings within NEAR_FACTOR * tol are recorded in ``near`` and dropped.
    """
    phi = [float(p) for p in phi]
    N = len(phi)
    scale = max((abs(p) for p in phi), default=1.0) or 1.0
    kept, near = {}, {}
    for (l, th), strings in terms.items():
        keep, almost = [], []
        for lam in strings:
            om = abs(th * phi[l - 1] - sum(z * phi[lj - 1] for z, lj in lam))
            if om <= tol * scale:
                keep.append(tuple(lam))
            elif om <= NEAR_FACTOR * tol * scale:
                almost.append(tuple(lam))
        kept[(l, th)] = tuple(keep)
        if almost:
            near[(l, th)] = tuple(almost)
            log.warning("near-resonant strings into %s excluded from averaging: %s", (l, th), almost)
    return ResonantTermList(N, kept, near)


def carrier_frequencies(S: NKSpectrum, bs: BandStructure) -> list:
    return [float(bs.frequency(p.n, p.k_star)) for p in S.pairs]


def resonant_terms(S: NKSpectrum, bs: BandStructure, arities: Sequence[int], tol: float = 1e-9) -> ResonantTermList:
    return time_average_nonlinearity(candidate_strings(S, arities), carrier_frequencies(S, bs), tol)


# ---------------------------------------------------------------------------
# windowed systems on the k-grid


def _check_invariant(S, bs, arities, tol, strict: bool):
    ok = not len(S) or is_resonance_invariant(S, bs, arities, tol)
    if not ok:
        if strict:
            raise NotResonanceInvariant("the nk-spectrum is not resonance invariant")
        log.warning("nk-spectrum is not resonance invariant; approximation bounds do not apply")
    return ok


def _nk_windows(S: NKSpectrum, beta: float, eps: float):
    rad = window_radius(beta, eps)
    wins = [(l, th, S.pairs[l - 1].n, th * S.pairs[l - 1].k_star) for l, th in labels(len(S))]
    for a in range(len(wins)):
        for b in range(a + 1, len(wins)):
            same_branch = wins[a][2] == wins[b][2] and wins[a][1] == wins[b][1]
            if same_branch and abs(wins[a][3] - wins[b][3]) <= 2 * rad:
                raise WindowOverlap(f"windows at {wins[a][3]} and {wins[b][3]} intersect (radius {rad:.3g})")
    return rad, wins


class InteractionSystem:
    """Windowed integrated equation for the 2N carrier components.

    ``averaged=False`` gives the interaction system: each component is the
    window-and-branch projection of F applied to the sum of components.
    ``averaged=True`` keeps only the resonant strings of ``terms``.
    The state has shape (2N, ncomp, M).
    """

    def __init__(self, problem: EvolutionProblem, S: NKSpectrum, beta: float, eps: float = EPS_DEFAULT,
                 averaged: bool = False, terms: ResonantTermList | None = None, tol: float = 1e-9,
                 strict: bool = False):
        self.problem, self.S, self.beta, self.eps = problem, S, beta, eps
        self.averaged = averaged
        self.grid = problem.grid
        self.rho = problem.rho
        self.tau_star = problem.tau_star
        self.kind = "averaged" if averaged else "interaction"
        self.invariant = _check_invariant(S, problem.bs, problem.chi.orders, tol, strict)
        self.radius, wins = _nk_windows(S, beta, eps)
        k = self.grid.k
        self.sel, self.g = [], []
        for l, th, n, c in wins:
            idx = np.flatnonzero(cutoff_psi(k, c, self.radius) > 0)
            self.sel.append(idx)
            self.g.append(problem.bs.eigvec(n, th, k[idx]) if idx.size else np.zeros((0, problem.bs.ncomp)))
        if averaged and terms is None:
            terms = resonant_terms(S, problem.bs, problem.chi.orders, tol)
        self.terms = terms
        self.initial = self.project_all(np.broadcast_to(problem.initial.values, (2 * len(S),) + problem.initial.values.shape))

    @property
    def size(self) -> int:
        return 2 * len(self.S)

    def project(self, i: int, x: np.ndarray) -> np.ndarray:
        """Psi(k, theta k_l) Pi(n_l, theta, k) x."""
        out = np.zeros(x.shape, dtype=complex)
        idx, g = self.sel[i], self.g[i]
        if idx.size:
            coef = np.einsum("ji,ij->j", np.conj(g), x[:, idx])
            out[:, idx] = (coef[:, None] * g).T
        return out

    def project_all(self, xs) -> np.ndarray:
        return np.array([self.project(i, xs[i]) for i in range(self.size)])

    def window_full(self, u: np.ndarray) -> np.ndarray:
        """Carrier components of a full-equation state."""
        return np.array([self.project(i, u) for i in range(self.size)])

    @staticmethod
    def assemble(w: np.ndarray) -> np.ndarray:
        return np.asarray(w).sum(axis=0)

    def norm(self, w) -> float:
        return float(sum(l1(wi, self.grid) for wi in w))

    def rhs(self, tau: float, w: np.ndarray) -> np.ndarray:
        pr = self.problem
        if not self.averaged:
            U = pr.rotate(self.assemble(w), tau, -1)
            total = pr.rotate(apply_nonlinearity(pr.chi, U, self.grid), tau, +1)
            return np.array([self.project(i, total) for i in range(self.size)])
        U = pr.rotate(np.asarray(w), tau, -1)
        F = self._resonant_products(U)
        F = pr.rotate(F, tau, +1)
        return np.array([self.project(i, F[i]) for i in range(self.size)])

    def _resonant_products(self, U: np.ndarray) -> np.ndarray:
        chi, grid = self.problem.chi, self.grid
        out = np.zeros_like(U)
        if chi.mode == "constant":
            f = max(pad_factor(m) for m in chi.orders)
            pg = grid.padded(f)
            Ur = to_r(pg, pad(U, f))
            acc = np.zeros(Ur.shape, dtype=complex)
            for i, lab in enumerate(labels(len(self.S))):
                for lam in self.terms[lab]:
                    acc[i] += _pointwise(chi.tensors[len(lam)], [Ur[label_index(l, z)] for z, l in lam])
            return crop(to_k(pg, acc), grid.M)
        for i, lab in enumerate(labels(len(self.S))):
            for lam in self.terms[lab]:
                out[i] += apply_term(chi, len(lam), [U[label_index(l, z)] for z, l in lam], grid)
        return out


class ScalarSystem:
    """Amplitudes v_{l,theta} = g(n_l, theta, k) . w_{l,theta} of a windowed system.

    The right-hand side reconstructs vectors by v g, applies the base system
    and projects back, so the scalar and vector systems are equivalent.
    """

    def __init__(self, base: InteractionSystem):
        self.base = base
        self.grid, self.rho, self.tau_star = base.grid, base.rho, base.tau_star
        self.kind = base.kind + "-scalar"
        bs = base.problem.bs
        k = self.grid.k
        self.gtab = np.zeros((base.size, bs.ncomp, self.grid.M), dtype=complex)
        for i, (idx, g) in enumerate(zip(base.sel, base.g)):
            if idx.size and np.any(bs.crossing(k[idx])):
                raise GaugeUndefined(f"window {labels(len(base.S))[i]} touches the crossing set")
            self.gtab[i][:, idx] = g.T
        self.initial = self.scalarize(base.initial)

    def scalarize(self, w: np.ndarray) -> np.ndarray:
        return np.einsum("icm,...icm->...im", np.conj(self.gtab), w)

    def to_vector(self, v: np.ndarray) -> np.ndarray:
        return v[..., :, None, :] * self.gtab

    def norm(self, v) -> float:
        return float(sum(l1(vi, self.grid) for vi in v))

    def rhs(self, tau: float, v: np.ndarray) -> np.ndarray:
        return self.scalarize(self.base.rhs(tau, self.to_vector(v)))


# ---------------------------------------------------------------------------
# rescaling to the envelope variable


def eta_grid_for(grid: KGrid, beta: float, eps: float = EPS_DEFAULT, radius_factor: float = 2.0) -> KGrid:
    """eta-grid with spacing dk / beta covering |eta| <= radius_factor * beta^-eps."""
    d_eta = grid.dk / beta
    need = 2 * radius_factor * beta ** (-eps) / d_eta
    M = 8
    while M < need:
        M *= 2
    return KGrid(M, d_eta, grid.d)


def _centre_index(grid: KGrid, k: float) -> int:
    if not grid.on_grid(k):
        raise GridMismatch(f"carrier {k} is not a k-grid node")
    return grid.index_of(k)


def _check_eta(grid: KGrid, eta_grid: KGrid, beta: float, eps: float):
    if not math.isclose(eta_grid.dk * beta, grid.dk, rel_tol=1e-9):
        raise GridMismatch(f"eta spacing {eta_grid.dk} != dk / beta = {grid.dk / beta}")
    if eta_grid.M // 2 * eta_grid.dk < beta ** (-eps) * (1 - 1e-12):
        raise GridMismatch("eta-grid does not cover the window radius beta^-eps")


def rescale_amplitudes(v: np.ndarray, grid: KGrid, S: NKSpectrum, beta: float, eta_grid: KGrid,
                       eps: float = EPS_DEFAULT) -> np.ndarray:
    """z_{l,theta}(eta) = beta v_{l,theta}(theta k_l + beta eta); k outside the grid reads as 0."""
    _check_eta(grid, eta_grid, beta, eps)
    v = np.asarray(v)
    Me = eta_grid.M
    z = np.zeros(v.shape[:-1] + (Me,), dtype=complex)
    off = np.arange(Me) - Me // 2
    for l, th in labels(len(S)):
        i = label_index(l, th)
        src = _centre_index(grid, th * S.pairs[l - 1].k_star) + off
        ok = (src >= 0) & (src < grid.M)
        z[..., i, ok] = beta * v[..., i, src[ok]]
    return z


def unrescale_amplitudes(z: np.ndarray, grid: KGrid, S: NKSpectrum, beta: float, eta_grid: KGrid,
                         eps: float = EPS_DEFAULT) -> np.ndarray:
    """Inverse of :func:`rescale_amplitudes`; eta points off the k-grid must carry no mass."""
    _check_eta(grid, eta_grid, beta, eps)
    z = np.asarray(z)
    Me = eta_grid.M
    v = np.zeros(z.shape[:-1] + (grid.M,), dtype=complex)
    off = np.arange(Me) - Me // 2
    for l, th in labels(len(S)):
        i = label_index(l, th)
        dst = _centre_index(grid, th * S.pairs[l - 1].k_star) + off
        ok = (dst >= 0) & (dst < grid.M)
        if np.any(z[..., i, ~ok] != 0):
            raise GridMismatch("eta samples fall outside the k-grid")
        v[..., i, dst[ok]] = z[..., i, ok] / beta
    return v


# ---------------------------------------------------------------------------
# minimal systems


@dataclass(frozen=True)
class MinimalSystemSpec:
    """Orders and scales of a minimal envelope system.

    ``rho1 = rho / beta`` scales the linear phase, ``rho2 = rho / beta^2``
    the quadratic one (infinite for mu = 1).
    """

    mu: int
    nu: int
    rho1: float
    rho2: float
    beta: float
    eps: float = EPS_DEFAULT
    cutoff_enabled: bool = True

    def __post_init__(self):
        if self.mu not in (1, 2, 3):
            raise ValueError(f"mu must be 1, 2 or 3, got {self.mu}")
        if self.nu not in (0, 1):
            raise ValueError(f"nu must be 0 or 1, got {self.nu}")
        if self.rho1 <= 0 or self.rho2 <= 0 or self.beta <= 0:
            raise ValueError("rho1, rho2 and beta must be positive")

    @classmethod
    def from_rho(cls, mu: int, nu: int, rho: float, beta: float, eps: float = EPS_DEFAULT,
                 cutoff_enabled: bool = True) -> "MinimalSystemSpec":
        rho2 = math.inf if mu == 1 else rho / beta**2
        return cls(mu, nu, rho / beta, rho2, beta, eps, cutoff_enabled)

    @property
    def rho(self) -> float:
        return self.rho1 * self.beta

    def consistent(self, tol: float = 1e-9) -> bool:
        if math.isinf(self.rho2):
            return self.mu == 1
        return math.isclose(self.rho2 * self.beta**2, self.rho, rel_tol=tol)


def _tensor_at(chi: SusceptibilityModel, m: int, k_out: float, ks: Sequence[float]) -> np.ndarray:
    if chi.mode == "constant":
        return chi.tensors[m]
    return np.asarray(chi.kernel(m, np.array([k_out]), [np.array([x]) for x in ks]))[0]


def coupling_coefficient(bs: BandStructure, chi: SusceptibilityModel, S: NKSpectrum, out: tuple, lam: tuple,
                         shift: Sequence[float] | None = None) -> complex:
    """g(n_l, theta, k_out) . chi[g(lam_1, k_1), ...] with k_j = zeta_j k_{l_j} + shift_j."""
    l, th = out
    m = len(lam)
    shift = [0.0] * m if shift is None else list(shift)
    ks = [z * S.pairs[lj - 1].k_star + s for (z, lj), s in zip(lam, shift)]
    k_out = sum(ks)
    T = _tensor_at(chi, m, k_out, ks)
    gs = [bs.eigvec(S.pairs[lj - 1].n, z, np.array([kj]))[0] for (z, lj), kj in zip(lam, ks)]
    g_out = bs.eigvec(S.pairs[l - 1].n, th, np.array([k_out]))[0]
    val = T
    for g in gs:
        val = np.tensordot(val, g, axes=([1], [0]))
    return complex(np.vdot(g_out, val))


def coupling_gradient(bs, chi, S, out, lam, h: float = Q_STEP) -> np.ndarray:
    """d/d beta of the coupling along each input slot (output shifts with it)."""
    m = len(lam)
    q = np.zeros(m, dtype=complex)
    for j in range(m):
        e = np.zeros(m)
        e[j] = h
        q[j] = (coupling_coefficient(bs, chi, S, out, lam, e) - coupling_coefficient(bs, chi, S, out, lam, -e)) / (2 * h)
    return q


class MinimalSystem:
    """Envelope system on the eta-grid with Taylor dispersion and frozen couplings.

    The slow variable removes exp(-i tau L_z) with
    ``L_z = a1 eta / rho1 + a2 eta^2 / rho2 + a3 beta eta^3 / rho2``
    built from Taylor coefficients a_p = omega^(p) / p! of branch
    (n_l, theta) at theta k_l; constant terms cancel on resonant strings.
    ``nu=1`` adds sin(beta eta) first-order coupling corrections.
    """

    def __init__(self, spec: MinimalSystemSpec, S: NKSpectrum, bs: BandStructure, chi: SusceptibilityModel,
                 eta_grid: KGrid, H: np.ndarray, tau_star: float, terms: ResonantTermList | None = None,
                 tol: float = 1e-9):
        if not is_resonance_invariant(S, bs, chi.orders, tol):
            raise NotResonanceInvariant("minimal systems need a resonance-invariant nk-spectrum")
        self.spec, self.S, self.bs, self.chi = spec, S, bs, chi
        self.grid = eta_grid
        self.tau_star = tau_star
        self.kind = "minimal"
        self.terms = terms if terms is not None else resonant_terms(S, bs, chi.orders, tol)
        N = len(S)
        eta = eta_grid.k
        self.psi = cutoff_psi(eta, 0.0, spec.beta ** (-spec.eps)) if spec.cutoff_enabled else np.ones_like(eta)
        self.rate = np.zeros((2 * N, eta.size))
        self.taylor = {}
        for l, th in labels(N):
            p = S.pairs[l - 1]
            a = taylor_coefficients(bs, p.n, th * p.k_star, spec.mu, zeta=th)
            self.taylor[(l, th)] = a
            r = a[1] * eta / spec.rho1
            if spec.mu >= 2:
                r = r + a[2] * eta**2 / spec.rho2
            if spec.mu >= 3:
                r = r + a[3] * spec.beta * eta**3 / spec.rho2
            self.rate[label_index(l, th)] = r
        self.Q, self.q = {}, {}
        for lab in labels(N):
            for lam in self.terms[lab]:
                self.Q[(lab, lam)] = coupling_coefficient(bs, chi, S, lab, lam)
                if spec.nu == 1:
                    self.q[(lab, lam)] = coupling_gradient(bs, chi, S, lab, lam)
        self.sin_eta = np.sin(spec.beta * eta)
        H = np.asarray(H, dtype=complex)
        if H.shape != (2 * N, eta.size):
            raise GridMismatch(f"initial amplitudes must have shape {(2 * N, eta.size)}, got {H.shape}")
        self.initial = H * self.psi

    @property
    def rho(self) -> float:
        """Time scale used for step-size control."""
        return self.spec.rho

    def norm(self, z) -> float:
        return float(sum(l1(zi, self.grid) for zi in z))

    def polynomial(self) -> ModalPolynomial:
        """Frozen couplings as a polynomial in the 2N amplitudes (nu=0 part)."""
        return ModalPolynomial(len(self.S), tuple(ModalTerm(lab, c, lam) for (lab, lam), c in self.Q.items()))

    def rhs(self, tau: float, z: np.ndarray) -> np.ndarray:
        ph = np.exp(1j * tau * self.rate)
        Z = z * np.conj(ph)
        f = max(pad_factor(m) for m in self.chi.orders)
        pg = self.grid.padded(f)
        Zr = to_r(pg, pad(Z, f))
        Sr = to_r(pg, pad(Z * self.sin_eta, f)) if self.spec.nu == 1 else None
        acc = np.zeros(Zr.shape, dtype=complex)
        for (lab, lam), c in self.Q.items():
            i = label_index(*lab)
            facs = [Zr[label_index(l, zz)] for zz, l in lam]
            prod = facs[0]
            for x in facs[1:]:
                prod = prod * x
            acc[i] += c * prod
            if Sr is not None:
                q = self.q[(lab, lam)]
                for j, (zz, l) in enumerate(lam):
                    if q[j] == 0:
                        continue
                    term = q[j]
                    for jj, (z2, l2) in enumerate(lam):
                        term = term * (Sr[label_index(l2, z2)] if jj == j else Zr[label_index(l2, z2)])
                    acc[i] += term
        F = crop(to_k(pg, acc), self.grid.M)
        return F * ph * self.psi


def minimal_initial(specs_by_label: dict, S: NKSpectrum, eta_grid: KGrid) -> np.ndarray:
    """Amplitude data H_{l,theta}(eta) from envelope callables keyed by label."""
    H = np.zeros((2 * len(S), eta_grid.M), dtype=complex)
    for lab, env in specs_by_label.items():
        if env is not None:
            H[label_index(*lab)] = env(eta_grid.k)
    return H


# ---------------------------------------------------------------------------
# solving and diagnostics


def solve_reduced(system, config: SolverConfig | None = None, tau_star: float | None = None) -> Trajectory:
    """Integrate any reduced system from its windowed initial data."""
    config = config or SolverConfig()
    tau_star = system.tau_star if tau_star is None else tau_star
    return integrate(system.rhs, system.initial, tau_star, system.rho, system.norm, config)


def fixed_point_defect(rhs: Callable, x0: np.ndarray, taus: np.ndarray, states: np.ndarray, norm: Callable,
                       quadrature: str = "trapezoid") -> np.ndarray:
    """||x(tau) - x0 - int_0^tau rhs(t, x(t)) dt|| at each node (uniform nodes from 0)."""
    taus = np.asarray(taus, dtype=float)
    if taus.size < 2:
        return np.array([norm(states[0] - x0)])
    h = float(taus[1] - taus[0])
    if not np.allclose(np.diff(taus), h, rtol=1e-9, atol=1e-15):
        raise ValueError("defect needs uniform nodes; integrate with save_every=1")
    vals = np.array([rhs(t, x) for t, x in zip(taus, states)])
    W = _quad_weights(taus.size - 1, h, quadrature)
    integ = np.tensordot(W, vals, axes=(1, 0))
    return np.array([norm(states[i] - x0 - integ[i]) for i in range(taus.size)])


def sup_gap(a_states: np.ndarray, b_states: np.ndarray, norm: Callable) -> float:
    """sup over common nodes of norm(a - b)."""
    if len(a_states) != len(b_states):
        raise ValueError(f"trajectories have {len(a_states)} and {len(b_states)} nodes")
    return float(max(norm(a - b) for a, b in zip(a_states, b_states)))


@dataclass
class LadderGap:
    level_a: str
    level_b: str
    rho: float
    beta: float
    sup_tau_l1_gap: float


def full_vs_interaction(problem: EvolutionProblem, full: Trajectory, system: InteractionSystem,
                        reduced: Trajectory) -> float:
    """sup_tau ||u - sum_l w_l||_L1."""
    return sup_gap(full.states, np.array([system.assemble(w) for w in reduced.states]),
                   lambda x: l1(x, problem.grid))


def windows_of_full(system: InteractionSystem, full: Trajectory) -> np.ndarray:
    return np.array([system.window_full(u) for u in full.states])


def necessary_defect(system: InteractionSystem, full: Trajectory, quadrature: str = "trapezoid") -> np.ndarray:
    """Defect of the windowed full solution in the interaction system, per node."""
    ws = windows_of_full(system, full)
    return fixed_point_defect(system.rhs, system.initial, full.taus, ws, system.norm, quadrature)


def interaction_defect_in_full(problem: EvolutionProblem, system: InteractionSystem, reduced: Trajectory,
                               quadrature: str = "trapezoid") -> np.ndarray:
    """D(w) = w - F(w) - h for the assembled interaction solution, per node."""
    us = np.array([system.assemble(w) for w in reduced.states])
    return fixed_point_defect(problem.rhs, problem.initial.values, reduced.taus, us,
                              lambda x: l1(x, problem.grid), quadrature)
