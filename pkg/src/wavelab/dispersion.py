"""Band structures: dispersion relations, eigenvectors and projectors.

A band structure for a system with ``2J`` components is the spectral
decomposition of the Hermitian symbol ``L(k)``.  Bands are addressed by
``(n, zeta)`` with ``n = 1..J`` and ``zeta = +1/-1`` and always satisfy

    omega(n, -1, k) == -omega(n, +1, -k).

Component order of a modal vector is ``(1,+), (1,-), (2,+), (2,-), ...``;
``mode_index(n, zeta)`` gives the flat position.

Only ``d = 1`` is exercised by the numerics.  Wavevectors are floats or
1-D arrays of floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import BandCrossing, EmptySample, IndexOutOfRange

R_BC = 1e-6
FD_STEP = 1e-4
# higher derivatives lose digits to cancellation; the step grows with order
_FD_STEP_BY_ORDER = {1: 1e-4, 2: 1e-3, 3: 1e-2}


def mode_index(n: int, zeta: int) -> int:
    return 2 * (n - 1) + (0 if zeta > 0 else 1)


def mode_of_index(b: int) -> tuple[int, int]:
    return b // 2 + 1, (1 if b % 2 == 0 else -1)


def fix_gauge(v: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Rotate each vector (last axis) so its largest component is real positive.

    Ties within ``tol`` go to the lowest index.
    """
    v = np.asarray(v, dtype=complex)
    mag = np.abs(v)
    top = mag.max(axis=-1, keepdims=True)
    idx = np.argmax(mag >= top - tol * np.maximum(top, 1.0), axis=-1)
    lead = np.take_along_axis(v, idx[..., None], axis=-1)
    phase = np.where(np.abs(lead) > 0, lead / np.where(lead == 0, 1, np.abs(lead)), 1.0)
    return v / phase


def _fd(f: Callable[[np.ndarray], np.ndarray], k: np.ndarray, order: int) -> np.ndarray:
    """Fourth-order central differences with step scaled by (1 + |k|)."""
    k = np.asarray(k, dtype=float)
    h = _FD_STEP_BY_ORDER[order] * (1.0 + np.abs(k))
    if order == 1:
        return (-f(k + 2 * h) + 8 * f(k + h) - 8 * f(k - h) + f(k - 2 * h)) / (12 * h)
    if order == 2:
        return (-f(k + 2 * h) + 16 * f(k + h) - 30 * f(k) + 16 * f(k - h) - f(k - 2 * h)) / (12 * h**2)
    if order == 3:
        return (
            -f(k + 3 * h) + 8 * f(k + 2 * h) - 13 * f(k + h)
            + 13 * f(k - h) - 8 * f(k - 2 * h) + f(k - 3 * h)
        ) / (8 * h**3)
    raise ValueError(f"finite differences only up to order 3, got {order}")


@dataclass(frozen=True)
class BandStructure:
    """Spectral data of the linear symbol on ``2J`` components.

    ``omega_fn(n, zeta, k)`` and ``eigvec_fn(n, zeta, k)`` are vectorised in
    ``k``; ``eigvec_fn`` returns shape ``k.shape + (2J,)``.  ``derivs`` maps
    a derivative order to an analytic ``(n, zeta, k) -> array`` callable;
    missing orders fall back to finite differences.
    """

    J: int
    omega_fn: Callable
    eigvec_fn: Callable
    crossing_fn: Callable
    derivs: dict = field(default_factory=dict)
    d: int = 1
    name: str = "custom"
    params: dict = field(default_factory=dict)
    r_bc: float = R_BC

    @property
    def ncomp(self) -> int:
        return 2 * self.J

    def _check(self, n: int, zeta: int) -> None:
        if not (1 <= n <= self.J) or zeta not in (1, -1):
            raise IndexOutOfRange(f"band ({n}, {zeta}) outside 1..{self.J} x {{+1,-1}}")

    def omega(self, n: int, zeta: int, k) -> np.ndarray:
        self._check(n, zeta)
        return self.omega_fn(n, zeta, np.asarray(k, dtype=float))

    def frequency(self, n: int, k) -> np.ndarray:
        """omega_n(k) = omega(n, +1, k)."""
        return self.omega(n, 1, k)

    def derivative(self, n: int, zeta: int, k, order: int) -> np.ndarray:
        self._check(n, zeta)
        if order == 0:
            return self.omega(n, zeta, k)
        fn = self.derivs.get(order)
        if fn is not None:
            return fn(n, zeta, np.asarray(k, dtype=float))
        return _fd(lambda q: self.omega_fn(n, zeta, q), k, order)

    def grad_omega(self, n: int, zeta: int, k) -> np.ndarray:
        return self.derivative(n, zeta, k, 1)

    def hess_omega(self, n: int, zeta: int, k) -> np.ndarray:
        return self.derivative(n, zeta, k, 2)

    def crossing(self, k) -> np.ndarray:
        """True where k is within r_bc of the band-crossing set."""
        k = np.asarray(k, dtype=float)
        return np.asarray(self.crossing_fn(k, self.r_bc), dtype=bool)

    def eigvec(self, n: int, zeta: int, k) -> np.ndarray:
        self._check(n, zeta)
        return fix_gauge(self.eigvec_fn(n, zeta, np.asarray(k, dtype=float)))

    def projector(self, n: int, zeta: int, k) -> np.ndarray:
        g = self.eigvec(n, zeta, k)
        return g[..., :, None] * np.conj(g[..., None, :])

    def symbol(self, k) -> np.ndarray:
        """L(k) = sum over bands of omega * g g^dagger, shape k.shape + (2J, 2J)."""
        k = np.asarray(k, dtype=float)
        out = np.zeros(k.shape + (self.ncomp, self.ncomp), dtype=complex)
        for n in range(1, self.J + 1):
            for z in (1, -1):
                out += self.omega(n, z, k)[..., None, None] * self.projector(n, z, k)
        return out

    def modal_tables(self, k: np.ndarray):
        """Frequencies ``W[b, j]`` and eigenvector matrices ``G[j, :, b]`` on a grid.

        Grid points on the crossing set take eigenvectors from the nearest
        non-crossing neighbour (one-sided limit); frequencies are always
        evaluated at the point itself.  Returns ``(W, G, crossing_mask)``.
        """
        k = np.asarray(k, dtype=float)
        mask = self.crossing(k)
        src = np.arange(k.size)
        if mask.any():
            good = np.flatnonzero(~mask)
            if good.size == 0:
                raise BandCrossing("every grid point lies on the crossing set")
            for j in np.flatnonzero(mask):
                src[j] = good[np.argmin(np.abs(k[good] - k[j]) + 1e-9 * (k[good] < k[j]))]
        W = np.empty((self.ncomp, k.size))
        G = np.empty((k.size, self.ncomp, self.ncomp), dtype=complex)
        for n in range(1, self.J + 1):
            for z in (1, -1):
                b = mode_index(n, z)
                W[b] = self.omega(n, z, k)
                G[:, :, b] = self.eigvec(n, z, k[src])
        return W, G, mask


def eval_band(bs: BandStructure, n: int, zeta: int, k):
    """Return ``(omega, g, projector)`` at a single wavevector."""
    bs._check(n, zeta)
    kk = np.asarray(k, dtype=float)
    if np.any(bs.crossing(kk)):
        raise BandCrossing(f"k={k} lies on the band-crossing set")
    return bs.omega(n, zeta, kk), bs.eigvec(n, zeta, kk), bs.projector(n, zeta, kk)


# ---------------------------------------------------------------------------
# builtin constructors


def _unit(ncomp: int, i, shape) -> np.ndarray:
    out = np.zeros(tuple(shape) + (ncomp,), dtype=complex)
    out[..., i] = 1.0
    return out


def diagonal_bands(
    freqs: Sequence[Callable[[np.ndarray], np.ndarray]],
    derivs: Optional[Sequence[Sequence[Optional[Callable]]]] = None,
    name: str = "diagonal",
    params: Optional[dict] = None,
    r_bc: float = R_BC,
) -> BandStructure:
    """Bands with constant eigenvectors: component ``(n, zeta)`` is its own band.

    ``freqs[n-1]`` is omega_n(k); the minus branch is -omega_n(-k).
    ``derivs[n-1][p-1]`` optionally gives the p-th derivative of omega_n.
    The crossing set is where two branch values coincide or a first band
    value vanishes.
    """
    J = len(freqs)
    dtab = derivs or [[] for _ in range(J)]

    def omega_fn(n, zeta, k):
        f = freqs[n - 1]
        return f(k) if zeta > 0 else -f(-k)

    def eigvec_fn(n, zeta, k):
        return _unit(2 * J, mode_index(n, zeta), np.shape(k))

    def crossing_fn(k, r):
        vals = [omega_fn(n, z, k) for n in range(1, J + 1) for z in (1, -1)]
        scale = max(1.0, max(float(np.max(np.abs(v))) for v in vals))
        hit = np.zeros(np.shape(k), dtype=bool)
        tol = 1e-12 * scale
        for i in range(len(vals)):
            for j in range(i + 1, len(vals)):
                hit |= np.abs(vals[i] - vals[j]) <= tol
        hit |= np.abs(vals[0]) <= tol
        hit |= np.abs(vals[1]) <= tol
        return hit

    table = {}
    for order in (1, 2, 3):
        fns = [row[order - 1] if len(row) >= order else None for row in dtab]
        if all(f is not None for f in fns):
            def dfn(n, zeta, k, fns=fns, order=order):
                f = fns[n - 1]
                # d^p/dk^p [-f(-k)] = (-1)^(p+1) f^(p)(-k)
                return f(k) if zeta > 0 else (-1) ** (order + 1) * f(-k)
            table[order] = dfn
    return BandStructure(J, omega_fn, eigvec_fn, crossing_fn, table, 1, name, dict(params or {}), r_bc)


def scalar_band(omega, d1=None, d2=None, d3=None, name="scalar", params=None) -> BandStructure:
    """Single band (J = 1) from a callable omega(k) and optional derivatives."""
    return diagonal_bands([omega], [[d1, d2, d3]], name=name, params=params)


def nls_band(gamma0: float, gamma1: float, gamma2: float) -> BandStructure:
    """omega(k) = gamma0 + gamma1 k + gamma2 k^2 on the pair (u, conj u).

    These are band coefficients.  The PDE
    du/dtau = -(i/rho)[g0 u + i g1 u_x + g2 u_xx] + ...
    has band coefficients (g0, -g1, -g2).
    """
    g0, g1, g2 = float(gamma0), float(gamma1), float(gamma2)
    return diagonal_bands(
        [lambda k: g0 + g1 * k + g2 * k**2],
        [[lambda k: g1 + 2 * g2 * k, lambda k: 2 * g2 + 0 * k, lambda k: 0 * k]],
        name="nls",
        params={"gamma0": g0, "gamma1": g1, "gamma2": g2},
    )


def coupled_nls_bands(coeffs: Sequence[Sequence[float]]) -> BandStructure:
    """One quadratic band per field: ``coeffs[j] = (gamma0, gamma1, gamma2)``.

    Components are ``(u1, conj u1, u2, conj u2, ...)``.  Band order follows
    field order, so pick gamma0 values that keep omega_1 <= omega_2 <= ...
    on the region of interest.
    """
    freqs, derivs = [], []
    for g0, g1, g2 in coeffs:
        g0, g1, g2 = float(g0), float(g1), float(g2)
        freqs.append(lambda k, g0=g0, g1=g1, g2=g2: g0 + g1 * k + g2 * k**2)
        derivs.append([
            lambda k, g1=g1, g2=g2: g1 + 2 * g2 * k,
            lambda k, g2=g2: 2 * g2 + 0 * k,
            lambda k: 0 * k,
        ])
    return diagonal_bands(freqs, derivs, name="coupled_nls", params={"coeffs": [list(c) for c in coeffs]})


def two_speed(c1: float, c2: float) -> BandStructure:
    """Transport bands omega(n, zeta, k) = zeta c_n |k| on (u1, u2, w1, w2).

    ``u_j`` moves with speed c_j, ``w_j`` is its mirror.  For k > 0 band
    (n, +) is ``u_n``; for k < 0 it is ``w_n``.  k = 0 is a crossing.
    Requires 0 < c1 < c2 so that band order matches speed order.
    """
    c1, c2 = float(c1), float(c2)
    if not 0 < c1 < c2:
        raise ValueError(f"two_speed needs 0 < c1 < c2, got {c1}, {c2}")
    c = (c1, c2)

    def omega_fn(n, zeta, k):
        return zeta * c[n - 1] * np.abs(k)

    def eigvec_fn(n, zeta, k):
        k = np.asarray(k, dtype=float)
        u_slot, w_slot = n - 1, n + 1
        pos = (k >= 0) if zeta > 0 else (k < 0)
        out = np.zeros(k.shape + (4,), dtype=complex)
        out[..., u_slot] = np.where(pos, 1.0, 0.0)
        out[..., w_slot] = np.where(pos, 0.0, 1.0)
        return out

    def crossing_fn(k, r):
        return np.abs(k) <= r

    derivs = {
        1: lambda n, zeta, k: zeta * c[n - 1] * np.sign(k),
        2: lambda n, zeta, k: 0.0 * k,
        3: lambda n, zeta, k: 0.0 * k,
    }
    return BandStructure(2, omega_fn, eigvec_fn, crossing_fn, derivs, 1, "two_speed", {"c1": c1, "c2": c2})


def two_speed_component(n: int, physical: str = "u") -> int:
    """Flat component index of u_n or w_n in the two-speed layout."""
    return (n - 1) if physical == "u" else (n + 1)


def tabulated(path) -> BandStructure:
    """Single band from a two-column ``k omega`` file (cubic spline).

    Rows must have strictly increasing k.  The table has to cover -k as
    well as k wherever the minus branch is used.
    """
    path = Path(path)
    try:
        data = np.loadtxt(path, comments="#", ndmin=2)
    except OSError as exc:  # pragma: no cover - exercised through the CLI
        raise OSError(f"cannot read dispersion table {path}: {exc}") from exc
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns, got {data.shape[1]}")
    return tabulated_from_arrays(data[:, 0], data[:, 1], name=f"tabulated:{path.name}")


def tabulated_from_arrays(k, w, name="tabulated") -> BandStructure:
    k = np.asarray(k, dtype=float)
    w = np.asarray(w, dtype=float)
    if k.size < 4:
        raise ValueError("a tabulated band needs at least 4 rows")
    if np.any(np.diff(k) <= 0):
        raise ValueError("tabulated k values must be strictly increasing")
    spl = CubicSpline(k, w)
    lo, hi = k[0], k[-1]

    def guard(q):
        q = np.asarray(q, dtype=float)
        if np.any(q < lo - 1e-12) or np.any(q > hi + 1e-12):
            raise ValueError(f"k outside tabulated range [{lo}, {hi}]")
        return q

    omega = lambda q: spl(guard(q))
    ds = [lambda q, p=p: spl(guard(q), p) for p in (1, 2, 3)]
    return diagonal_bands([omega], [ds], name=name, params={"kmin": lo, "kmax": hi})


def build_band(kind: str, **params) -> BandStructure:
    """Name-based constructor used by configs and presets."""
    if kind == "two_speed":
        return two_speed(params["c1"], params["c2"])
    if kind == "nls":
        return nls_band(params.get("gamma0", 0.0), params.get("gamma1", 0.0), params.get("gamma2", 0.0))
    if kind == "coupled_nls":
        return coupled_nls_bands(params["coeffs"])
    if kind == "tabulated":
        return tabulated(params["path"])
    raise ValueError(f"unknown band kind {kind!r}")


# ---------------------------------------------------------------------------
# Taylor models and degeneracy probes


def taylor_dispersion(bs: BandStructure, n: int, k_star: float, mu: int, offset, zeta: int = 1):
    """Degree-mu Taylor polynomial of omega(n, zeta, .) about k_star at k_star + offset."""
    if mu not in (1, 2, 3):
        raise ValueError(f"Taylor order must be 1, 2 or 3, got {mu}")
    offset = np.asarray(offset, dtype=float)
    total = np.zeros_like(offset) + bs.omega(n, zeta, k_star)
    for p in range(1, mu + 1):
        total = total + bs.derivative(n, zeta, k_star, p) * offset**p / math.factorial(p)
    return total


def taylor_coefficients(bs: BandStructure, n: int, k_star: float, mu: int, zeta: int = 1) -> np.ndarray:
    """[omega, omega', omega''/2, ...] of branch (n, zeta) at k_star."""
    return np.array(
        [float(bs.derivative(n, zeta, k_star, p)) / math.factorial(p) for p in range(mu + 1)]
    )


@dataclass(frozen=True)
class DegeneracyReport:
    flags: frozenset
    residuals: dict

    def __contains__(self, item) -> bool:
        return item in self.flags


def probe_omega_degeneracy(
    bs: BandStructure,
    box: tuple[float, float],
    grid: int = 257,
    tol: float = 1e-9,
) -> DegeneracyReport:
    """Sample omega_n over ``box`` and flag the four degenerate patterns.

    Residuals are max-norm defects relative to the sample scale of omega.
    ``linear_dependence`` uses the smallest singular value of the
    column-normalised matrix [omega_1, ..., omega_J, 1].
    """
    if grid < 2:
        raise EmptySample("degeneracy probe needs at least two samples")
    # frequencies stay well defined on the crossing set, so no samples are dropped
    k = np.linspace(box[0], box[1], grid)
    J = bs.J
    om = np.array([bs.frequency(n, k) for n in range(1, J + 1)])
    scale = max(1.0, float(np.max(np.abs(om))))
    flags, res = set(), {}

    cols = np.vstack([om, np.ones_like(k)]).T
    norms = np.linalg.norm(cols, axis=0)
    sv = np.linalg.svd(cols / np.where(norms > 0, norms, 1.0), compute_uv=False)
    res["linear_dependence"] = float(sv[-1] / sv[0])
    if res["linear_dependence"] < tol or np.any(norms == 0):
        flags.add("linear_dependence")

    lin = []
    for n in range(J):
        A = np.vstack([np.ones_like(k), k]).T
        coef, *_ = np.linalg.lstsq(A, om[n], rcond=None)
        lin.append(float(np.max(np.abs(A @ coef - om[n]))) / scale)
    res["linear_band"] = min(lin)
    if res["linear_band"] < tol:
        flags.add("linear_band")

    best = math.inf
    for C in (2, -2, 3, -3):
        for n in range(1, J + 1):
            try:
                r = np.max(np.abs(C * bs.frequency(n, k) - bs.frequency(n, C * k))) / scale
            except ValueError:
                continue
            best = min(best, float(r))
    res["scaling_relation"] = best
    if best < tol:
        flags.add("scaling_relation")

    best = math.inf
    for n in range(1, J + 1):
        for n2 in range(1, J + 1):
            if n2 == n:
                continue
            try:
                r = np.max(np.abs(bs.frequency(n, k) - bs.frequency(n2, -k))) / scale
            except ValueError:
                continue
            best = min(best, float(r))
    res["mirror_relation"] = best
    if best < tol:
        flags.add("mirror_relation")
    return DegeneracyReport(frozenset(flags), res)


def check_band_invariants(bs: BandStructure, k: np.ndarray, tol: float = 1e-12) -> dict:
    """Max defects of the structural identities on sample points ``k``."""
    k = np.asarray(k, dtype=float)
    k = k[~bs.crossing(k) & ~bs.crossing(-k)]
    eye = np.eye(bs.ncomp)
    total = np.zeros(k.shape + (bs.ncomp, bs.ncomp), dtype=complex)
    idem = herm = orth = sym = 0.0
    projs = {}
    for n in range(1, bs.J + 1):
        for z in (1, -1):
            P = bs.projector(n, z, k)
            projs[(n, z)] = P
            total += P
            idem = max(idem, float(np.max(np.abs(P @ P - P))))
            herm = max(herm, float(np.max(np.abs(P - np.conj(np.swapaxes(P, -1, -2))))))
            sym = max(sym, float(np.max(np.abs(bs.omega(n, -1, -k) + bs.omega(n, 1, k)))))
    keys = list(projs)
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            orth = max(orth, float(np.max(np.abs(projs[keys[i]] @ projs[keys[j]]))))
    order = 0.0
    om = np.array([bs.frequency(n, k) for n in range(1, bs.J + 1)])
    if bs.J > 1:
        order = max(order, float(np.max(np.maximum(om[:-1] - om[1:], 0.0))))
    order = max(order, float(np.max(np.maximum(-om[0], 0.0))))
    return {
        "resolution": float(np.max(np.abs(total - eye))),
        "idempotent": idem,
        "hermitian": herm,
        "orthogonal": orth,
        "branch_symmetry": sym,
        "ordering": order,
    }
