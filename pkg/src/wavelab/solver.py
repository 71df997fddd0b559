"""Spectral solver for  dU/dtau = -(i/rho) L U + F(U)  in slow variables.

The slow variable is u_hat = exp(i tau L / rho) U_hat; it satisfies

    d u_hat / d tau = exp(i tau L/rho) F_hat(exp(-i tau L/rho) u_hat),

equivalently the integrated equation u_hat = F(u_hat) + h_hat.  Two
integrators are provided: Picard iteration on the integrated equation
(composite quadrature over time slabs) and classical RK4 on the slow
variable (integrating-factor RK4).
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dispersion import BandStructure
from .errors import BlowUp, BudgetExceeded, NoContraction, SizeMismatch, UnderResolved
from .fields import KGrid, SpectralField, crop, l1, pad, pad_factor, to_k, to_r, _vals

log = logging.getLogger(__name__)

DIRECT_BUDGET = 10**8
OSC_FACTOR = 0.1


# ---------------------------------------------------------------------------
# susceptibilities


def multilinear_norm(T: np.ndarray, restarts: int = 8, iters: int = 200, seed: int = 0) -> float:
    """sup |T[x_1, ..., x_m]| over unit vectors, by alternating maximisation.

    ``T`` has shape (n_out, n, ..., n) with the output index first.  The
    result is a lower bound that is exact for the small tensors used here
    (several restarts from random and coordinate starts).
    """
    T = np.asarray(T, dtype=complex)
    m = T.ndim - 1
    if m == 0:
        return float(np.linalg.norm(T))
    n = T.shape[1]
    rng = np.random.default_rng(seed)
    best = 0.0
    starts = [[np.eye(n)[i % n] for _ in range(m)] for i in range(n)]
    starts += [[_unit(rng.standard_normal(n) + 1j * rng.standard_normal(n)) for _ in range(m)] for _ in range(restarts)]
    for xs in starts:
        xs = [x.astype(complex) for x in xs]
        val = 0.0
        for _ in range(iters):
            for j in range(m):
                A = _partial(T, xs, j)
                u, s, vh = np.linalg.svd(A)
                xs[j] = np.conj(vh[0])
            new = float(np.linalg.norm(_contract(T, xs)))
            if abs(new - val) <= 1e-15 * max(new, 1.0):
                val = new
                break
            val = new
        best = max(best, val)
    return best


def _unit(v):
    return v / np.linalg.norm(v)


def _contract(T, xs):
    out = T
    for x in reversed(xs):
        out = out @ x
    return out


def _partial(T, xs, j):
    """Matrix A with A @ x_j = T[x_1..x_m] for fixed others."""
    m = len(xs)
    sub = "abcdefgh"[: m + 1]
    ops, args = [sub], [T]
    for i in range(m):
        if i != j:
            ops.append(sub[i + 1])
            args.append(xs[i])
    expr = ",".join(ops) + "->" + sub[0] + sub[j + 1]
    return np.einsum(expr, *args)


@dataclass
class SusceptibilityModel:
    """Homogeneous polynomial nonlinearity F = sum_m F^(m).

    ``mode='constant'``: ``tensors[m]`` has shape (ncomp,)*(m+1) with the
    output index first; F^(m) acts pointwise in r.
    ``mode='center'``: ``kernel(m, k_out, ks)`` gives the tensor at the
    window centres; each grid point is assigned to its nearest centre in
    ``centers`` and the tensor is frozen per centre combination.
    ``mode='grid'``: ``kernel(m, k_out, ks)`` is evaluated on every term of
    the direct sum (vectorised over the output axis, returns shape
    (len(k_out), ncomp, ..., ncomp)).
    """

    ncomp: int
    tensors: dict = field(default_factory=dict)
    mode: str = "constant"
    kernel: Optional[Callable] = None
    orders: tuple = ()
    centers: tuple = ()

    def __post_init__(self):
        if self.mode not in ("constant", "center", "grid"):
            raise ValueError(f"unknown susceptibility mode {self.mode!r}")
        self.tensors = {int(m): np.asarray(T, dtype=complex) for m, T in self.tensors.items()}
        for m, T in self.tensors.items():
            if m < 2 or T.shape != (self.ncomp,) * (m + 1):
                raise ValueError(f"order-{m} tensor must have shape {(self.ncomp,) * (m + 1)}, got {T.shape}")
        if self.mode == "constant":
            self.orders = tuple(sorted(self.tensors))
        elif not self.orders:
            raise ValueError("kernel modes need explicit orders")

    def tensor_norm(self, m: int) -> float:
        """(2 pi)^-(m-1) sup |chi^(m)| (constant mode; kernels sampled at centres)."""
        if self.mode == "constant":
            T = self.tensors[m]
        else:
            c = self.centers or (0.0,)
            T = max((np.asarray(self.kernel(m, np.array([sum(cs)]), [np.array([x]) for x in cs]))[0]
                     for cs in itertools.product(c, repeat=m)), key=lambda A: np.abs(A).max())
        return multilinear_norm(T) / (2 * math.pi) ** (m - 1)

    def C_chi(self) -> float:
        return max(self.tensor_norm(m) for m in self.orders)

    def lipschitz_bound(self, R: float) -> float:
        """C_chi m_F^2 (4R)^(m_F - 1) with m_F the top order."""
        mF = max(self.orders)
        return self.C_chi() * mF**2 * (4 * R) ** (mF - 1)


def _einsum_expr(m: int) -> str:
    sub = "bcdefgh"[:m]
    return "a" + sub + "," + ",".join(s + "p" for s in sub) + "->ap"


_SPARSE_CACHE: dict = {}


def _monomials(T: np.ndarray):
    key = (id(T), T.shape)
    hit = _SPARSE_CACHE.get(key)
    if hit is not None and hit[0] is T:
        return hit[1]
    idx = np.argwhere(T != 0)
    mons = [(tuple(int(i) for i in row), complex(T[tuple(row)])) for row in idx]
    if len(_SPARSE_CACHE) > 256:
        _SPARSE_CACHE.clear()
    _SPARSE_CACHE[key] = (T, mons)
    return mons


def _pointwise(T: np.ndarray, factors: Sequence[np.ndarray]) -> np.ndarray:
    """out[a] = sum T[a, b1..bm] f1[b1] ... fm[bm] pointwise in the last axis."""
    mons = _monomials(T)
    if len(mons) > 4 * T.shape[0] ** 2:
        return np.einsum(_einsum_expr(len(factors)), T, *factors, optimize=True)
    out = np.zeros((T.shape[0],) + factors[0].shape[1:], dtype=complex)
    for (a, *bs), c in mons:
        term = factors[0][bs[0]]
        for f, b in zip(factors[1:], bs[1:]):
            term = term * f[b]
        out[a] += c * term
    return out


def apply_term(chi: SusceptibilityModel, m: int, args: Sequence, grid: KGrid, method: str = "fft") -> np.ndarray:
    """F_hat^(m)(u_1, ..., u_m) on the grid (truncated to the grid box)."""
    args = [np.asarray(_vals(a), dtype=complex) for a in args]
    if len(args) != m:
        raise ValueError(f"order {m} needs {m} arguments, got {len(args)}")
    for a in args:
        if a.shape != (chi.ncomp, grid.M):
            raise SizeMismatch(f"argument shape {a.shape} != {(chi.ncomp, grid.M)}")
    if chi.mode == "grid" or method == "direct":
        return _direct(chi, m, args, grid)
    if method != "fft":
        raise ValueError(f"unknown convolution method {method!r}")
    if chi.mode == "constant":
        return _fft_product(chi.tensors[m], args, grid)
    return _center_product(chi, m, args, grid)


def apply_nonlinearity(chi: SusceptibilityModel, u, grid: KGrid, method: str = "fft") -> np.ndarray:
    """F_hat(u) = sum over orders of F_hat^(m)(u, ..., u)."""
    u = np.asarray(_vals(u), dtype=complex)
    if chi.mode == "constant" and method == "fft":
        f = max(pad_factor(m) for m in chi.orders)
        pg = grid.padded(f)
        ur = to_r(pg, pad(u, f))
        acc = np.zeros_like(ur)
        for m in chi.orders:
            acc += _pointwise(chi.tensors[m], [ur] * m)
        return crop(to_k(pg, acc), grid.M)
    return sum(apply_term(chi, m, [u] * m, grid, method) for m in chi.orders)


def _fft_product(T, args, grid):
    f = pad_factor(len(args))
    pg = grid.padded(f)
    rs = [to_r(pg, pad(a, f)) for a in args]
    return crop(to_k(pg, _pointwise(T, rs)), grid.M)


def _center_product(chi, m, args, grid):
    cs = np.asarray(chi.centers, dtype=float)
    owner = np.argmin(np.abs(grid.k[None, :] - cs[:, None]), axis=0)
    pieces = [[np.where(owner == i, a, 0.0) for i in range(len(cs))] for a in args]
    out = np.zeros((chi.ncomp, grid.M), dtype=complex)
    for combo in itertools.product(range(len(cs)), repeat=m):
        if any(not np.any(pieces[j][c]) for j, c in enumerate(combo)):
            continue
        kin = [cs[c] for c in combo]
        T = np.asarray(chi.kernel(m, np.array([sum(kin)]), [np.array([x]) for x in kin]))[0]
        out += _fft_product(T, [pieces[j][c] for j, c in enumerate(combo)], grid)
    return out


def _direct(chi, m, args, grid):
    M = grid.M
    if float(M) ** m > DIRECT_BUDGET:
        raise BudgetExceeded(f"direct sum needs M^m = {M}^{m} terms > {DIRECT_BUDGET}")
    k = grid.k
    out = np.zeros((chi.ncomp, M), dtype=complex)
    i_all = np.arange(M)
    const = chi.mode == "constant"
    T = chi.tensors.get(m) if const else None
    for js in itertools.product(range(M), repeat=m - 1):
        # k_i - sum k_j has index i - sum j + (m-1) M/2
        jm = i_all - sum(js) + (m - 1) * (M // 2)
        ok = (jm >= 0) & (jm < M)
        if not ok.any():
            continue
        i = i_all[ok]
        last = args[-1][:, jm[ok]]
        if const:
            A = T
            for a, j in zip(args[:-1], js):
                A = np.tensordot(A, a[:, j], axes=([1], [0]))
            out[:, i] += A @ last
        else:
            ks = [np.full(i.size, k[j]) for j in js] + [k[jm[ok]]]
            Tk = np.asarray(chi.kernel(m, k[i], ks))
            A = Tk
            for a, j in zip(args[:-1], js):
                A = np.tensordot(A, a[:, j], axes=([1], [0]))
            out[:, i] += np.einsum("pab,bp->ap", A, last)
    return out * (grid.dk / (2 * math.pi)) ** (m - 1)


# ---------------------------------------------------------------------------
# problems and trajectories


@dataclass
class EvolutionProblem:
    bs: BandStructure
    chi: SusceptibilityModel
    rho: float
    initial: SpectralField
    tau_star: float
    grid: KGrid

    def __post_init__(self):
        if self.rho <= 0 or self.tau_star <= 0:
            raise ValueError("rho and tau_star must be positive")
        if self.initial.values.shape != (self.bs.ncomp, self.grid.M):
            raise SizeMismatch("initial field does not match band structure and grid")
        if self.chi.ncomp != self.bs.ncomp:
            raise SizeMismatch("susceptibility and band structure disagree on component count")
        W, G, mask = self.bs.modal_tables(self.grid.k)
        self._W, self._G, self.crossing_mask = W, G, mask
        Lsym = np.einsum("jab,bj,jcb->jac", G, W, np.conj(G))
        off = Lsym - np.einsum("jaa->ja", Lsym)[..., None] * np.eye(self.bs.ncomp)
        self.diagonal = float(np.max(np.abs(off))) <= 1e-13 * max(1.0, float(np.max(np.abs(W))))
        self._Ldiag = np.real(np.einsum("jaa->aj", Lsym)) if self.diagonal else None

    @property
    def excluded_measure(self) -> float:
        return float(np.count_nonzero(self.crossing_mask) * self.grid.dk)

    def _phase(self, tau: float) -> np.ndarray:
        """exp(i tau w / rho), cached for the most recent tau."""
        cached = getattr(self, "_phase_cache", None)
        if cached is not None and cached[0] == tau:
            return cached[1]
        w = self._Ldiag if self.diagonal else self._W
        ph = np.exp(1j * (tau / self.rho) * w)
        self._phase_cache = (tau, ph)
        return ph

    def rotate(self, u: np.ndarray, tau: float, sign: int) -> np.ndarray:
        """exp(sign * i tau L / rho) applied to u (last axis = grid)."""
        ph = self._phase(tau)
        if sign < 0:
            ph = np.conj(ph)
        if self.diagonal:
            return u * ph
        a = np.einsum("jba,...bj->...aj", np.conj(self._G), u)
        return np.einsum("jab,...bj->...aj", self._G, a * ph)

    def physical(self, u_slow: np.ndarray, tau: float) -> np.ndarray:
        """U_hat(tau) from the slow variable."""
        return self.rotate(u_slow, tau, -1)

    def rhs(self, tau: float, u: np.ndarray, method: str = "fft") -> np.ndarray:
        U = self.rotate(u, tau, -1)
        return self.rotate(apply_nonlinearity(self.chi, U, self.grid, method), tau, +1)


@dataclass
class SolverConfig:
    method: str = "ifrk4"
    dtau: Optional[float] = None
    picard_tol: float = 1e-10
    picard_max_iter: int = 200
    convolution: str = "fft"
    quadrature: str = "rectangle"
    slab: int = 64
    save_every: int = 1
    blowup_factor: float = 1e3

    def step(self, rho: float) -> float:
        return OSC_FACTOR * rho if self.dtau is None else self.dtau


@dataclass
class Trajectory:
    taus: np.ndarray
    states: np.ndarray
    step_taus: np.ndarray
    step_l1: np.ndarray
    residual: np.ndarray
    iterations: np.ndarray
    dtau: float

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def sup_l1(self) -> float:
        return float(np.max(self.step_l1))


def _grid_steps(tau_star: float, dtau: float) -> tuple[int, float]:
    n = max(1, int(math.ceil(tau_star / dtau - 1e-9)))
    return n, tau_star / n


def solve_integrated(problem: EvolutionProblem, config: SolverConfig | None = None) -> Trajectory:
    """Integrate the slow variable from ``problem.initial`` up to ``tau_star``."""
    config = config or SolverConfig()
    rhs = lambda t, x: problem.rhs(t, x, config.convolution)
    norm = lambda x: l1(x, problem.grid)
    return integrate(rhs, problem.initial.values, problem.tau_star, problem.rho, norm, config)


def integrate(rhs: Callable, x0: np.ndarray, tau_star: float, rho: float, norm: Callable,
              config: SolverConfig) -> Trajectory:
    """Generic driver shared by the full problem and the reduced systems."""
    h = config.step(rho)
    if config.method == "ifrk4":
        if h > OSC_FACTOR * rho * (1 + 1e-12):
            raise UnderResolved(f"dtau={h} exceeds {OSC_FACTOR} rho = {OSC_FACTOR * rho}")
        n, h = _grid_steps(tau_star, h)
        return _rk4(rhs, np.asarray(x0, dtype=complex), n, h, norm, config)
    if config.method == "picard":
        n, h = _grid_steps(tau_star, h)
        return _picard(rhs, np.asarray(x0, dtype=complex), n, h, norm, config)
    raise ValueError(f"unknown method {config.method!r}")


class _Recorder:
    def __init__(self, x0, norm, cfg, h):
        self.norm, self.cfg, self.h = norm, cfg, h
        l0 = norm(x0)
        self.limit = cfg.blowup_factor * max(l0, 1e-300)
        self.taus, self.states = [0.0], [x0.copy()]
        self.st, self.sl = [0.0], [l0]
        self.res, self.its = [0.0], [0]

    def trajectory(self) -> Trajectory:
        return Trajectory(np.array(self.taus), np.array(self.states), np.array(self.st), np.array(self.sl),
                          np.array(self.res), np.array(self.its), self.h)

    def push(self, i: int, n: int, x, resid=math.nan, it=0):
        t = i * self.h
        nrm = self.norm(x)
        self.st.append(t)
        self.sl.append(nrm)
        if i % self.cfg.save_every == 0 or i == n:
            self.taus.append(t)
            self.states.append(x.copy())
            self.res.append(resid)
            self.its.append(it)
        if not np.isfinite(nrm) or nrm > self.limit:
            raise BlowUp(f"l1 norm {nrm:.3e} exceeded {self.limit:.3e} at tau={t:.4g}", self.trajectory())


def _rk4(rhs, u, n, h, norm, cfg) -> Trajectory:
    rec = _Recorder(u, norm, cfg, h)
    rec.res[0] = math.nan
    for i in range(n):
        t = i * h
        k1 = rhs(t, u)
        k2 = rhs(t + h / 2, u + h / 2 * k1)
        k3 = rhs(t + h / 2, u + h / 2 * k2)
        k4 = rhs(t + h, u + h * k3)
        u = u + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        rec.push(i + 1, n, u)
    return rec.trajectory()


def _quad_weights(n: int, h: float, rule: str) -> np.ndarray:
    """Cumulative weights: row i gives integral 0..tau_i as sum_j w[i, j] f_j."""
    w = np.zeros((n + 1, n + 1))
    for i in range(1, n + 1):
        if rule == "rectangle":
            w[i, :i] = h
        elif rule == "trapezoid":
            w[i, :i + 1] = h
            w[i, 0] = w[i, i] = h / 2
        else:
            raise ValueError(f"unknown quadrature {rule!r}")
    return w


def _picard(rhs, u0, n, h, norm, cfg) -> Trajectory:
    """Picard iteration on the integrated equation, one time slab at a time.

    Inside a slab the integral uses the composite rule ``cfg.quadrature``
    with the phases evaluated exactly at the nodes; the converged slab end
    seeds the next slab.
    """
    rec = _Recorder(u0, norm, cfg, h)
    start, ua = 0, u0
    while start < n:
        ns = min(cfg.slab, n - start)
        tloc = (start + np.arange(ns + 1)) * h
        W = _quad_weights(ns, h, cfg.quadrature)
        X = np.repeat(ua[None], ns + 1, axis=0)
        hist, it = [], 0
        while True:
            it += 1
            Fx = np.array([rhs(t, x) for t, x in zip(tloc, X)])
            Xn = ua[None] + np.tensordot(W, Fx, axes=(1, 0))
            resid = max(norm(Xn[i] - X[i]) for i in range(1, ns + 1))
            X = Xn
            hist.append(resid)
            if not np.isfinite(resid) or max(norm(x) for x in X) > rec.limit:
                raise BlowUp(f"Picard iterate exceeded {rec.limit:.3e} near tau={tloc[0]:.4g}", rec.trajectory())
            if resid <= cfg.picard_tol:
                break
            if len(hist) >= 4 and hist[-1] >= hist[-2] >= hist[-3] >= hist[-4]:
                raise NoContraction(f"Picard residual stalled at {resid:.3e} near tau={tloc[0]:.4g}")
            if it >= cfg.picard_max_iter:
                raise NoContraction(f"Picard did not converge in {it} sweeps (residual {resid:.3e})")
        for i in range(1, ns + 1):
            rec.push(start + i, n, X[i], resid, it)
        ua = X[-1]
        start += ns
    return rec.trajectory()


# ---------------------------------------------------------------------------
# post-processing


def reconstruct_physical(problem: EvolutionProblem, traj: Trajectory) -> np.ndarray:
    """U(r, tau) on grid.r for every saved tau, shape (n_saved, ncomp, M)."""
    out = np.empty_like(traj.states)
    for i, (t, u) in enumerate(zip(traj.taus, traj.states)):
        out[i] = to_r(problem.grid, problem.physical(u, t))
    return out


def oscillatory_multilinear(problem: EvolutionProblem, m: int, series: Sequence[np.ndarray], taus: np.ndarray,
                            quadrature: str = "trapezoid", method: str = "fft") -> np.ndarray:
    """Cumulative integral of exp(i t L/rho) F^(m)(exp(-i t L/rho) u_1, ...) at each node.

    ``series[j]`` has shape (n_nodes, ncomp, M) on uniform nodes ``taus``
    starting at 0.
    """
    taus = np.asarray(taus, dtype=float)
    if taus.size < 2:
        return np.zeros((taus.size,) + problem.initial.values.shape, dtype=complex)
    h = float(taus[1] - taus[0])
    if not np.allclose(np.diff(taus), h, rtol=1e-9, atol=1e-15):
        raise ValueError("nodes must be uniform")
    if h > OSC_FACTOR * problem.rho * (1 + 1e-12):
        raise UnderResolved(f"node spacing {h} exceeds {OSC_FACTOR} rho")
    vals = []
    for i, t in enumerate(taus):
        args = [problem.rotate(s[i], t, -1) for s in series]
        vals.append(problem.rotate(apply_term(problem.chi, m, args, problem.grid, method), t, +1))
    vals = np.array(vals)
    W = _quad_weights(taus.size - 1, h, quadrature)
    return np.tensordot(W, vals, axes=(1, 0))


def oscillatory_term(problem: EvolutionProblem, traj: Trajectory, m: int, quadrature: str = "trapezoid") -> np.ndarray:
    """F^(m)(u_hat, ..., u_hat) at every saved node of ``traj``."""
    return oscillatory_multilinear(problem, m, [traj.states] * m, traj.taus, quadrature)


def integral_residual(problem: EvolutionProblem, traj: Trajectory, quadrature: str = "trapezoid") -> np.ndarray:
    """||u_hat - F(u_hat) - h_hat||_L1 at each saved node."""
    acc = np.zeros_like(traj.states)
    for m in problem.chi.orders:
        acc = acc + oscillatory_term(problem, traj, m, quadrature)
    h0 = problem.initial.values
    return np.array([l1(traj.states[i] - acc[i] - h0, problem.grid) for i in range(len(traj.taus))])


def write_diagnostics_csv(path, traj: Trajectory) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "l1_norm", "residual", "iterations"])
        saved = {round(t, 12): (r, it) for t, r, it in zip(traj.taus, traj.residual, traj.iterations)}
        for t, nrm in zip(traj.step_taus, traj.step_l1):
            r, it = saved.get(round(t, 12), (math.nan, 0))
            w.writerow([f"{t:.12g}", f"{nrm:.12g}", f"{r:.6g}", int(it)])
