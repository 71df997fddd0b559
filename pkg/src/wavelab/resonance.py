"""Resonance algebra over finite sets of (band, wavevector) pairs.

A spectrum ``S = {(n_l, k_l)}`` fixes the carrier waves.  An index string
``lam = ((zeta_1, l_1), ..., (zeta_m, l_m))`` picks m of them with signs;
its output wavevector is ``kappa = sum zeta_j k_{l_j}`` and its frequency
sum is ``sum zeta_j omega_{n_{l_j}}(k_{l_j})``.  A string resonates into
branch (n, zeta) when

    omega(n, zeta, zeta * kappa) == sum zeta_j omega_{n_{l_j}}(k_{l_j}),

equivalently ``zeta * omega_n(kappa_out) == frequency sum`` with
``kappa_out = zeta * kappa``.  Indices ``n`` and ``l`` are 1-based.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dispersion import BandStructure
from .errors import BandCrossing, BudgetExceeded, IndexOutOfRange, NoConvergence

log = logging.getLogger(__name__)

STRING_BUDGET = 10**7
NEAR_FACTOR = 1e3


def k_tol(k: float) -> float:
    return 1e-9 * (1.0 + abs(k))


def same_k(a: float, b: float) -> bool:
    return abs(a - b) <= k_tol(max(abs(a), abs(b)))


@dataclass(frozen=True, order=True)
class NKPair:
    n: int
    k_star: float


@dataclass(frozen=True)
class NKSpectrum:
    """Ordered set of distinct (n, k*) pairs.

    Pairs are stored so that the first ``len(distinct_k)`` entries carry
    the distinct wavevectors (first occurrence order); the rest follow in
    input order.  ``l`` indices refer to this stored order.
    """

    pairs: tuple

    def __post_init__(self):
        raw = [p if isinstance(p, NKPair) else NKPair(int(p[0]), float(p[1])) for p in self.pairs]
        for i, a in enumerate(raw):
            if a.n < 1:
                raise ValueError(f"band index must be >= 1, got {a.n}")
            for b in raw[:i]:
                if a.n == b.n and same_k(a.k_star, b.k_star):
                    raise ValueError(f"duplicate pair {a}")
        head, tail, seen = [], [], []
        for p in raw:
            if any(same_k(p.k_star, q) for q in seen):
                tail.append(p)
            else:
                seen.append(p.k_star)
                head.append(p)
        object.__setattr__(self, "pairs", tuple(head + tail))

    @classmethod
    def of(cls, *pairs, bs: BandStructure | None = None) -> "NKSpectrum":
        spec = cls(tuple(pairs))
        if bs is not None:
            spec.validate(bs)
        return spec

    def validate(self, bs: BandStructure) -> None:
        for p in self.pairs:
            if p.n > bs.J:
                raise ValueError(f"band {p.n} exceeds J={bs.J}")
            if bs.crossing(p.k_star):
                raise BandCrossing(f"k*={p.k_star} lies on the crossing set")

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    @property
    def distinct_k(self) -> tuple:
        out = []
        for p in self.pairs:
            if not any(same_k(p.k_star, q) for q in out):
                out.append(p.k_star)
        return tuple(out)

    def contains(self, n: int, k: float) -> bool:
        return any(p.n == n and same_k(p.k_star, k) for p in self.pairs)

    def key(self) -> frozenset:
        """Order-free identity up to the wavevector tolerance (rounded)."""
        return frozenset((p.n, round(p.k_star, 8)) for p in self.pairs)

    def same_set(self, other: "NKSpectrum") -> bool:
        return len(self) == len(other) and all(other.contains(p.n, p.k_star) for p in self.pairs)

    def union(self, extra: Iterable[NKPair]) -> "NKSpectrum":
        pairs = list(self.pairs)
        for p in sorted(extra):
            if not any(q.n == p.n and same_k(q.k_star, p.k_star) for q in pairs):
                pairs.append(p)
        return NKSpectrum(tuple(pairs))


@dataclass(frozen=True, order=True)
class IndexString:
    """``lam`` is a tuple of (zeta, l) pairs; ``delta[l-1]`` is the net sign count of l."""

    lam: tuple
    N: int
    delta: tuple = field(init=False, compare=False)

    def __post_init__(self):
        lam = tuple((int(z), int(l)) for z, l in self.lam)
        for z, l in lam:
            if z not in (1, -1):
                raise ValueError(f"string signs must be +1 or -1, got {z}")
            if not 1 <= l <= self.N:
                raise IndexOutOfRange(f"string index {l} outside 1..{self.N}")
        object.__setattr__(self, "lam", lam)
        d = [0] * self.N
        for z, l in lam:
            d[l - 1] += z
        object.__setattr__(self, "delta", tuple(d))

    @property
    def m(self) -> int:
        return len(self.lam)

    def kappa(self, S: NKSpectrum) -> float:
        return float(sum(z * S.pairs[l - 1].k_star for z, l in self.lam))

    def frequency_sum(self, S: NKSpectrum, bs: BandStructure) -> float:
        return float(sum(z * bs.frequency(S.pairs[l - 1].n, S.pairs[l - 1].k_star) for z, l in self.lam))

    def universal_target(self):
        """(l, zeta) if exactly one delta is +-1 and the rest vanish, else None."""
        nz = [(i + 1, d) for i, d in enumerate(self.delta) if d != 0]
        if len(nz) == 1 and abs(nz[0][1]) == 1:
            return nz[0][0], nz[0][1]
        return None


def kappa(lam: IndexString, S: NKSpectrum) -> float:
    return lam.kappa(S)


@dataclass(frozen=True, order=True)
class ResonanceSolution:
    m: int
    zeta: int
    n: int
    lam: IndexString
    k_out: float = field(compare=False)
    kind: str = field(compare=False)
    mismatch: float = field(compare=False, default=0.0)

    @property
    def pair(self) -> NKPair:
        return NKPair(self.n, self.k_out)


@dataclass
class ResonanceAnalysis:
    solutions: tuple
    near: tuple
    skipped: tuple
    out_k: tuple
    omega_scale: float

    def by_kind(self, kind: str) -> tuple:
        return tuple(s for s in self.solutions if s.kind == kind)

    @property
    def internal(self) -> tuple:
        return tuple(s for s in self.solutions if s.kind in ("universal", "internal"))

    @property
    def universal(self) -> tuple:
        return self.by_kind("universal")

    @property
    def external(self) -> tuple:
        return self.by_kind("external")


def _alphabet(N: int) -> list:
    return [(z, l) for z in (-1, 1) for l in range(1, N + 1)]


def _unique_k(values: Iterable[float]) -> tuple:
    out = []
    for v in sorted(values):
        if not out or not same_k(out[-1], v):
            out.append(float(v))
    return tuple(out)


def analyze(S: NKSpectrum, bs: BandStructure, arities: Sequence[int], tol: float = 1e-9) -> ResonanceAnalysis:
    """Enumerate all strings of the given arities and classify resonances.

    The threshold is ``tol * omega_scale`` with omega_scale the largest
    |omega_n(k*)| over S.  Strings within NEAR_FACTOR of the threshold are
    reported as near-resonances; output wavevectors on the crossing set
    are skipped.
    """
    S = S if isinstance(S, NKSpectrum) else NKSpectrum(tuple(S))
    N = len(S)
    arities = sorted(set(int(m) for m in arities))
    if any(m < 2 for m in arities):
        raise ValueError("arities must be >= 2")
    work = sum((2 * N) ** m for m in arities) * 2 * bs.J
    if work > STRING_BUDGET:
        raise BudgetExceeded(f"{work} string/branch combinations exceed {STRING_BUDGET}")
    if N == 0:
        return ResonanceAnalysis((), (), (), (), 1.0)
    ks = np.array([p.k_star for p in S.pairs])
    ns = [p.n for p in S.pairs]
    oms = np.array([float(bs.frequency(n, k)) for n, k in zip(ns, ks)])
    scale = float(np.max(np.abs(oms))) if N else 1.0
    scale = scale if scale > 0 else 1.0
    thr = tol * scale
    alpha = _alphabet(N)
    zs = np.array([a[0] for a in alpha])
    ls = np.array([a[1] for a in alpha])

    sols, near, skipped, outk = [], [], [], []
    for m in arities:
        idx = np.array(list(itertools.product(range(len(alpha)), repeat=m)), dtype=int).reshape(-1, m)
        z = zs[idx]
        l = ls[idx]
        kap = np.sum(z * ks[l - 1], axis=1)
        fsum = np.sum(z * oms[l - 1], axis=1)
        outk.extend(kap.tolist())
        for zeta in (1, -1):
            kout = zeta * kap
            cross = bs.crossing(kout)
            for n in range(1, bs.J + 1):
                good = ~cross
                res = np.full(kap.shape, np.inf)
                if good.any():
                    res[good] = np.abs(zeta * bs.frequency(n, kout[good]) - fsum[good])
                for i in np.flatnonzero(cross):
                    skipped.append((m, zeta, n, tuple(alpha[j] for j in idx[i])))
                for i in np.flatnonzero(res <= NEAR_FACTOR * thr):
                    lam = IndexString(tuple(alpha[j] for j in idx[i]), N)
                    if res[i] > thr:
                        near.append((m, zeta, n, lam, float(res[i])))
                        continue
                    ko = float(kout[i])
                    target = lam.universal_target()
                    if target is not None and ns[target[0] - 1] == n and target[1] == zeta:
                        kind = "universal"
                    elif S.contains(n, ko):
                        kind = "internal"
                    else:
                        kind = "external"
                    sols.append(ResonanceSolution(m, zeta, n, lam, ko, kind, float(res[i])))
    for m, zeta, n, lam, r in near:
        log.warning("near-resonance m=%d zeta=%+d n=%d lam=%s mismatch=%.3e", m, zeta, n, lam.lam, r)
    if skipped:
        log.info("skipped %d strings whose output hits the crossing set", len(skipped))
    sols.sort()
    return ResonanceAnalysis(tuple(sols), tuple(near), tuple(skipped), _unique_k(outk), scale)


def resonance_solutions(S, bs, arities, tol=1e-9) -> tuple:
    """All (m, zeta, n, lam) solving the resonance equation, canonically sorted."""
    return analyze(S, bs, arities, tol).solutions


def resonance_selection(S, bs, arities, tol=1e-9):
    """Return ``(out_k, out_res, R_S)``: output wavevectors, resonant pairs, S plus resonant pairs."""
    S = S if isinstance(S, NKSpectrum) else NKSpectrum(tuple(S))
    a = analyze(S, bs, arities, tol)
    res = []
    for s in a.solutions:
        p = NKPair(s.n, s.k_out)
        if not any(q.n == p.n and same_k(q.k_star, p.k_star) for q in res):
            res.append(p)
    res.sort()
    return a.out_k, tuple(res), S.union(res)


@dataclass(frozen=True)
class ClosureResult:
    R_inf: NKSpectrum
    resonance_invariant: bool
    universally_invariant: bool
    iterations: int


def is_resonance_invariant(S, bs, arities, tol=1e-9) -> bool:
    """R(S) = S, without iterating the selection map."""
    S = S if isinstance(S, NKSpectrum) else NKSpectrum(tuple(S))
    return resonance_selection(S, bs, arities, tol)[2].same_set(S)


def closure_and_invariance(S, bs, arities, tol=1e-9, max_iter=10) -> ClosureResult:
    """Iterate the selection map to a fixpoint.

    The two flags describe the input S: invariant when R(S) = S, and
    universally invariant when in addition every internal solution is
    universal.
    """
    S = S if isinstance(S, NKSpectrum) else NKSpectrum(tuple(S))
    _, _, R1 = resonance_selection(S, bs, arities, tol)
    invariant = R1.same_set(S)
    a = analyze(S, bs, arities, tol)
    univ = invariant and len(a.universal) == len(a.internal)
    cur, it = S, 0
    while it < max_iter:
        it += 1
        _, _, nxt = resonance_selection(cur, bs, arities, tol)
        if nxt.same_set(cur):
            return ClosureResult(cur, invariant, univ, it)
        cur = nxt
    raise NoConvergence(f"no fixpoint after {max_iter} iterations", ClosureResult(cur, False, False, it))


def internal_term_list(S: NKSpectrum, bs: BandStructure, arities, tol=1e-9) -> dict:
    """Map (l, theta) to the strings resonating into that carrier.

    These are the internal solutions with n = n_l and output k_l; they are
    exactly the terms kept by time averaging at the carrier frequencies.
    """
    S = S if isinstance(S, NKSpectrum) else NKSpectrum(tuple(S))
    a = analyze(S, bs, arities, tol)
    out = {(l, th): [] for l in range(1, len(S) + 1) for th in (1, -1)}
    for s in a.internal:
        for l, p in enumerate(S.pairs, start=1):
            if p.n == s.n and same_k(p.k_star, s.k_out):
                out[(l, s.zeta)].append(s.lam)
    return {key: tuple(v) for key, v in out.items()}
