"""Spectral grids, fields, wavepacket synthesis, windows and norms.

Fourier convention (d = 1):

    U_hat(k) = int U(r) exp(-i k r) dr,    U(r) = (2 pi)^-1 int U_hat(k) exp(i k r) dk,

so that the transform of a product is (2 pi)^-1 times the convolution of
transforms.  A grid with M points and spacing dk represents
k_j = (j - M/2) dk on a periodic box of length 2 pi / dk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .dispersion import BandStructure
from .errors import DegenerateFit, GridTooCoarse, OverlapError, SizeMismatch

EPS_DEFAULT = 0.1


@dataclass(frozen=True)
class KGrid:
    M: int
    dk: float
    d: int = 1

    def __post_init__(self):
        if self.M < 8 or self.M & (self.M - 1):
            raise ValueError(f"M must be a power of two >= 8, got {self.M}")
        if not self.dk > 0:
            raise ValueError("dk must be positive")
        if self.d != 1:
            raise NotImplementedError("only d = 1 grids are supported")

    @property
    def k(self) -> np.ndarray:
        return (np.arange(self.M) - self.M // 2) * self.dk

    @property
    def dr(self) -> float:
        return 2 * math.pi / (self.M * self.dk)

    @property
    def r(self) -> np.ndarray:
        return (np.arange(self.M) - self.M // 2) * self.dr

    @property
    def length(self) -> float:
        return 2 * math.pi / self.dk

    @property
    def kmax(self) -> float:
        return (self.M // 2 - 1) * self.dk

    def index_of(self, k: float) -> int:
        return int(round(k / self.dk)) + self.M // 2

    def on_grid(self, k: float, tol: float = 1e-9) -> bool:
        return abs(k / self.dk - round(k / self.dk)) <= tol

    def padded(self, factor: int) -> "KGrid":
        return KGrid(self.M * factor, self.dk, self.d)


@dataclass
class SpectralField:
    """Values ``(2J, M)`` on a k-grid."""

    grid: KGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.ndim == 1:
            self.values = self.values[None, :]
        if self.values.shape[-1] != self.grid.M:
            raise SizeMismatch(f"field has {self.values.shape[-1]} points, grid has {self.grid.M}")

    @property
    def ncomp(self) -> int:
        return self.values.shape[0]

    def copy(self) -> "SpectralField":
        return SpectralField(self.grid, self.values.copy())

    def __add__(self, other):
        return SpectralField(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return SpectralField(self.grid, self.values - _vals(other))


def _vals(x) -> np.ndarray:
    return x.values if isinstance(x, SpectralField) else np.asarray(x)


# ---------------------------------------------------------------------------
# transforms


def to_k(grid: KGrid, u_r) -> np.ndarray:
    """Physical samples on ``grid.r`` to spectral samples on ``grid.k``."""
    u = np.asarray(u_r)
    if u.shape[-1] != grid.M:
        raise SizeMismatch(f"expected last axis {grid.M}, got {u.shape[-1]}")
    return grid.dr * np.fft.fftshift(np.fft.fft(np.fft.ifftshift(u, axes=-1), axis=-1), axes=-1)


def to_r(grid: KGrid, u_k) -> np.ndarray:
    u = np.asarray(u_k)
    if u.shape[-1] != grid.M:
        raise SizeMismatch(f"expected last axis {grid.M}, got {u.shape[-1]}")
    scale = grid.dk * grid.M / (2 * math.pi)
    return scale * np.fft.fftshift(np.fft.ifft(np.fft.ifftshift(u, axes=-1), axis=-1), axes=-1)


def fourier_pair(grid: KGrid, u, direction: str = "forward") -> np.ndarray:
    """``direction='forward'`` maps r -> k, ``'inverse'`` maps k -> r."""
    if direction == "forward":
        return to_k(grid, u)
    if direction == "inverse":
        return to_r(grid, u)
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def pad_factor(m: int) -> int:
    """Smallest power-of-two zero-padding factor making an m-fold product alias-free.

    Alias-free truncated convolution needs P >= (m + 1) M / 2 points.
    """
    f = 1
    while 2 * f < m + 1:
        f *= 2
    return f


def pad(u: np.ndarray, factor: int) -> np.ndarray:
    M = u.shape[-1]
    P = M * factor
    out = np.zeros(u.shape[:-1] + (P,), dtype=complex)
    s = P // 2 - M // 2
    out[..., s:s + M] = u
    return out


def crop(u: np.ndarray, M: int) -> np.ndarray:
    P = u.shape[-1]
    s = P // 2 - M // 2
    return u[..., s:s + M]


def convolve(grid: KGrid, *factors) -> np.ndarray:
    """Truncated convolution of scalar spectra with measure (dk / 2 pi)^(m-1).

    Computed by zero-padded FFT products; exact (to rounding) against the
    direct sum restricted to the grid.
    """
    m = len(factors)
    if m == 1:
        return np.asarray(factors[0], dtype=complex).copy()
    f = pad_factor(m)
    pg = grid.padded(f)
    prod = None
    for a in factors:
        ar = to_r(pg, pad(np.asarray(a, dtype=complex), f))
        prod = ar if prod is None else prod * ar
    return crop(to_k(pg, prod), grid.M)


def convolve_direct(grid: KGrid, a, b) -> np.ndarray:
    """Direct O(M^2) truncated convolution of two scalar spectra."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    M = grid.M
    out = np.zeros(M, dtype=complex)
    for j in range(M):
        # k_i - k_j has index i - j + M/2
        lo, hi = max(0, j - M // 2), min(M, j + M // 2)
        i = np.arange(lo, hi)
        out[i] += a[j] * b[i - j + M // 2]
    return out * grid.dk / (2 * math.pi)


# ---------------------------------------------------------------------------
# windows and wavepackets


def cutoff_psi(k, center: float, radius: float) -> np.ndarray:
    """Indicator of the closed ball |k - center| <= radius (relative slack 1e-12)."""
    k = np.asarray(k, dtype=float)
    return (np.abs(k - center) <= radius * (1 + 1e-12)).astype(float)


def window_radius(beta: float, eps: float) -> float:
    return beta ** (1.0 - eps)


def gaussian_envelope(eta):
    return np.exp(-np.asarray(eta) ** 2 / 2) / math.sqrt(2 * math.pi)


def scaled_gaussian(width: float, amplitude: float = 1.0) -> Callable:
    """Gaussian in eta with standard deviation ``width`` and unit L1 times amplitude."""
    def env(eta):
        eta = np.asarray(eta, dtype=float)
        return amplitude * np.exp(-eta**2 / (2 * width**2)) / (math.sqrt(2 * math.pi) * width)
    return env


def algebraic_envelope(power: float, amplitude: float = 1.0) -> Callable:
    """(1 + eta^2)^(-power); tails beyond R carry mass ~ R^(1 - 2 power)."""
    def env(eta):
        return amplitude * (1.0 + np.asarray(eta, dtype=float) ** 2) ** (-power)
    return env


@dataclass
class WavepacketSpec:
    """One carrier (n, k*) with envelopes for both branches.

    The branch zeta is centred at zeta * k*.  With ``real=True`` the minus
    envelope is conj(env_plus(-eta)), which makes doublets real in r when
    the eigenvectors satisfy g(n,-,-k) = conj g(n,+,k).
    """

    n: int
    k_star: float
    beta: float
    env_plus: Optional[Callable] = gaussian_envelope
    env_minus: Optional[Callable] = None
    eps: float = EPS_DEFAULT
    real: bool = False

    def envelope(self, zeta: int) -> Optional[Callable]:
        if zeta > 0:
            return self.env_plus
        if self.real and self.env_plus is not None:
            ep = self.env_plus
            return lambda eta: np.conj(ep(-np.asarray(eta)))
        return self.env_minus

    @property
    def radius(self) -> float:
        return window_radius(self.beta, self.eps)


def synthesize_multiwavepacket(specs: Sequence[WavepacketSpec], grid: KGrid, bs: BandStructure) -> SpectralField:
    """Sum of windowed wavepackets beta^-1 H((k - zeta k*)/beta) g(n, zeta, k)."""
    centers = []
    for i, s in enumerate(specs):
        if s.radius < 4 * grid.dk:
            raise GridTooCoarse(f"window radius {s.radius:.3g} < 4 dk = {4 * grid.dk:.3g}")
        if abs(s.k_star) + s.radius > grid.kmax:
            raise GridTooCoarse(f"window around {s.k_star} leaves the grid")
        for z in (1, -1):
            if s.envelope(z) is not None:
                centers.append(((s.n, z), z * s.k_star, s.radius))
    # windows on different branches live in orthogonal eigenspaces and may overlap
    for a in range(len(centers)):
        for b in range(a + 1, len(centers)):
            if centers[a][0] != centers[b][0]:
                continue
            if abs(centers[a][1] - centers[b][1]) <= centers[a][2] + centers[b][2]:
                raise OverlapError(f"windows at {centers[a][1]} and {centers[b][1]} overlap on branch {centers[a][0]}")
    k = grid.k
    out = np.zeros((bs.ncomp, grid.M), dtype=complex)
    for s in specs:
        for z in (1, -1):
            env = s.envelope(z)
            if env is None:
                continue
            c = z * s.k_star
            psi = cutoff_psi(k, c, s.radius)
            sel = psi > 0
            g = bs.eigvec(s.n, z, k[sel])
            amp = env((k[sel] - c) / s.beta) / s.beta
            out[:, sel] += (amp[:, None] * g).T
    return SpectralField(grid, out)


def band_window_project(u, S, l: int, beta: float, eps: float, bs: BandStructure, grid: KGrid | None = None,
                        zetas=(1, -1)) -> np.ndarray:
    """sum over zeta of Psi(k, zeta k_l) Pi(n_l, zeta, k) u(k)."""
    if isinstance(u, SpectralField):
        grid = u.grid
    vals = _vals(u)
    pair = S.pairs[l - 1]
    k = grid.k
    rad = window_radius(beta, eps)
    out = np.zeros_like(vals, dtype=complex)
    for z in zetas:
        psi = cutoff_psi(k, z * pair.k_star, rad)
        sel = psi > 0
        if not sel.any():
            continue
        g = bs.eigvec(pair.n, z, k[sel])
        coef = np.einsum("ji,ij->j", np.conj(g), vals[:, sel])
        out[:, sel] += (coef[:, None] * g).T
    return out


def windowed_sum(u, S, beta: float, eps: float, bs: BandStructure, grid: KGrid | None = None) -> np.ndarray:
    return sum(band_window_project(u, S, l, beta, eps, bs, grid) for l in range(1, len(S) + 1))


# ---------------------------------------------------------------------------
# norms and weights


@dataclass(frozen=True)
class WeightFunction:
    """A weight psi(r) for norms int exp(psi(|k|)) |u| dk."""

    psi: Callable
    a: float = 0.0

    @classmethod
    def logarithmic(cls, a: float) -> "WeightFunction":
        return cls(lambda r: a * np.log1p(r), a)

    def __call__(self, r):
        return self.psi(np.asarray(r, dtype=float))

    def check(self, r: np.ndarray, a: float | None = None) -> dict:
        """Defects of: positivity/monotonicity, sublinearity, growth over a ln r."""
        r = np.sort(np.asarray(r, dtype=float))
        a = self.a if a is None else a
        v = self(r)
        mono = float(np.max(np.maximum(v[:-1] - v[1:], 0.0)))
        sub = float(np.max(self(r[:, None] + r[None, :]) - v[:, None] - v[None, :]))
        big = r[r >= 1.0]
        growth = float(np.min(self(big) - a * np.log(big))) if big.size else math.nan
        return {"psi0": float(self(0.0)), "monotone_defect": mono, "sublinear_const": sub, "growth_margin": growth}


def pointwise_abs(vals: np.ndarray) -> np.ndarray:
    vals = np.asarray(vals)
    if vals.ndim == 1:
        return np.abs(vals)
    return np.sqrt(np.sum(np.abs(vals) ** 2, axis=tuple(range(vals.ndim - 1))))


def norm(u, kind: str = "l1", grid: KGrid | None = None, a: float = 0.0, psi: WeightFunction | None = None,
         exclude: np.ndarray | None = None) -> float:
    """L1-type norms with Euclidean pointwise magnitude over components."""
    if isinstance(u, SpectralField):
        grid = u.grid
    if grid is None:
        raise ValueError("a grid is needed for raw arrays")
    mag = pointwise_abs(_vals(u))
    k = np.abs(grid.k)
    if kind == "l1":
        w = 1.0
    elif kind == "l1a":
        w = (1.0 + k) ** a
    elif kind == "weighted":
        if psi is None:
            raise ValueError("weighted norm needs psi")
        w = np.exp(psi(k))
    else:
        raise ValueError(f"unknown norm {kind!r}")
    integrand = w * mag
    if exclude is not None:
        integrand = np.where(exclude, 0.0, integrand)
    return float(np.sum(integrand) * grid.dk)


def l1(u, grid: KGrid | None = None) -> float:
    return norm(u, "l1", grid)


def linf_physical(u_r) -> float:
    return float(np.max(pointwise_abs(u_r)))


# ---------------------------------------------------------------------------
# dilation


def dilate(u, beta: float, grid: KGrid):
    """B_beta u(eta) = beta u(beta eta), returned on the grid with spacing dk / beta."""
    g2 = KGrid(grid.M, grid.dk / beta, grid.d)
    return g2, beta * _vals(u)


# ---------------------------------------------------------------------------
# diagnostics


@dataclass
class WavepacketDiagnostics:
    betas: np.ndarray
    tails: np.ndarray
    s: float
    intercept: float
    r2: float
    degenerate: bool = False


def loglog_fit(x, y):
    """Least-squares line through (log10 x, log10 y): slope, intercept, R^2."""
    lx = np.log10(np.asarray(x, dtype=float))
    ly = np.log10(np.asarray(y, dtype=float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ np.array([slope, icpt])
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(icpt), float(r2)


def wavepacket_diagnostics(fields_by_beta: dict, S, eps: float, bs: BandStructure,
                           raise_on_degenerate: bool = False) -> WavepacketDiagnostics:
    """Out-of-window mass sup_tau ||u - sum_l window_l u||_L1 per beta and its decay order.

    ``fields_by_beta`` maps beta to a SpectralField or a sequence of them.
    Needs at least three betas spanning a decade.  When every tail is
    below 1e-14 the order is reported as infinity.
    """
    betas = np.array(sorted(fields_by_beta, reverse=True), dtype=float)
    if betas.size < 3 or betas.max() / betas.min() < 10 * (1 - 1e-9):
        raise ValueError("need at least 3 betas spanning a decade")
    tails = []
    for b in betas:
        fam = fields_by_beta[b]
        fam = [fam] if isinstance(fam, SpectralField) else list(fam)
        tails.append(max(l1(f.values - windowed_sum(f, S, b, eps, bs), f.grid) for f in fam))
    tails = np.array(tails)
    if np.all(tails < 1e-14):
        if raise_on_degenerate:
            raise DegenerateFit("all tails below 1e-14")
        return WavepacketDiagnostics(betas, tails, math.inf, math.nan, math.nan, True)
    pos = tails > 0
    s, c, r2 = loglog_fit(betas[pos], tails[pos])
    return WavepacketDiagnostics(betas, tails, s, c, r2)


# ---------------------------------------------------------------------------
# text dump


def save_field(path, u: SpectralField) -> None:
    path = Path(path)
    ncomp = u.ncomp
    J = ncomp // 2
    cols = [u.grid.k]
    for c in range(ncomp):
        cols += [u.values[c].real, u.values[c].imag]
    header = f"kgrid {u.grid.d} {u.grid.M} {u.grid.dk!r} {J}"
    np.savetxt(path, np.column_stack(cols), fmt="%.17g", header=header, comments="# ")


def load_field(path) -> SpectralField:
    path = Path(path)
    with path.open() as fh:
        head = fh.readline().split()
    if len(head) != 6 or head[:2] != ["#", "kgrid"]:
        raise ValueError(f"{path}: missing '# kgrid d M dk J' header")
    d, M, dk, J = int(head[2]), int(head[3]), float(head[4]), int(head[5])
    data = np.loadtxt(path, comments="#", ndmin=2)
    grid = KGrid(M, dk, d)
    if data.shape != (M, 1 + 4 * J):
        raise SizeMismatch(f"{path}: expected {M} rows of {1 + 4 * J} columns, got {data.shape}")
    vals = data[:, 1::2] + 1j * data[:, 2::2]
    return SpectralField(grid, vals.T)
