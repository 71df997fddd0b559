import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavelab.dispersion import nls_band, scalar_band, two_speed
from wavelab.errors import BandCrossing, BudgetExceeded, IndexOutOfRange, NoConvergence
from wavelab.resonance import (
    IndexString,
    NKSpectrum,
    analyze,
    closure_and_invariance,
    internal_term_list,
    kappa,
    resonance_selection,
    resonance_solutions,
)

QUAD = nls_band(1.0, 0.0, 1.0)
QUARTIC = scalar_band(lambda k: 1 + k**4, name="quartic")
BANDS = [QUAD, QUARTIC, nls_band(0.5, 0.3, 1.0)]


def test_kappa_examples():
    S = NKSpectrum.of((1, 0.8))
    assert kappa(IndexString(((-1, 1), (1, 1), (1, 1)), 1), S) == pytest.approx(0.8)
    assert kappa(IndexString(((1, 1), (1, 1), (1, 1)), 1), S) == pytest.approx(2.4)
    assert kappa(IndexString(((1, 1), (-1, 1)), 1), S) == 0.0


def test_index_string_validates_entries():
    with pytest.raises(IndexOutOfRange):
        IndexString(((1, 3),), 2)
    with pytest.raises(ValueError):
        IndexString(((0, 1),), 1)


@given(st.lists(st.tuples(st.sampled_from([1, -1]), st.integers(1, 3)), min_size=1, max_size=5),
       st.lists(st.floats(-2, 2, allow_nan=False), min_size=3, max_size=3, unique=True))
@settings(max_examples=60, deadline=None)
def test_kappa_equals_delta_combination(lam, ks):
    if any(abs(a - b) < 1e-3 for a, b in itertools.combinations(ks, 2)):
        return
    S = NKSpectrum.of(*[(1, k) for k in ks])
    s = IndexString(tuple(lam), 3)
    assert sum(s.delta) == sum(z for z, _ in lam)
    assert s.kappa(S) == pytest.approx(sum(d * p.k_star for d, p in zip(s.delta, S.pairs)), abs=1e-12)


def test_quadratic_band_has_no_external_solutions_at_07():
    a = analyze(NKSpectrum.of((1, 0.7)), QUAD, [2])
    assert a.external == ()


def test_empty_spectrum_selects_nothing():
    _, res, R = resonance_selection(NKSpectrum(()), QUAD, [3])
    assert res == () and len(R) == 0


def test_budget_guard():
    S = NKSpectrum.of(*[(1, 0.1 * (i + 1)) for i in range(8)])
    with pytest.raises(BudgetExceeded):
        analyze(S, QUAD, [7])


def test_crossing_outputs_are_skipped():
    # kappa = 0 is a crossing of the transport bands
    a = analyze(NKSpectrum.of((1, 1.0)), two_speed(1.0, 2.0), [2])
    assert a.skipped and all(s.k_out != 0 for s in a.solutions)


def test_spectrum_validation_rejects_crossing():
    with pytest.raises(BandCrossing):
        NKSpectrum.of((1, 0.0), bs=two_speed(1.0, 2.0))


def test_nonconvergent_closure_reports_partial():
    # third harmonics keep spawning on a quadratic band tuned to the first one
    k = 3**-0.5
    with pytest.raises(NoConvergence) as info:
        closure_and_invariance(NKSpectrum.of((1, k)), QUAD, [3], max_iter=1)
    assert info.value.partial is not None


def test_internal_term_list_matches_universal_strings_for_single_pair():
    terms = internal_term_list(NKSpectrum.of((1, 0.7)), QUAD, [3])
    assert len(terms[(1, 1)]) == 3 and len(terms[(1, -1)]) == 3
    assert all(lam.delta == (1,) for lam in terms[(1, 1)])


spectra = st.lists(st.floats(0.2, 1.5, allow_nan=False), min_size=1, max_size=2).flatmap(
    lambda mags: st.tuples(st.just(mags), st.lists(st.sampled_from([1, -1]), min_size=len(mags), max_size=len(mags))))


def _spectrum(data):
    mags, signs = data
    ks = [m * s for m, s in zip(mags, signs)]
    if len(ks) == 2 and abs(ks[0] - ks[1]) < 1e-3:
        return None
    return NKSpectrum.of(*[(1, k) for k in ks])


@given(spectra, st.sampled_from(range(len(BANDS))), st.sampled_from([[2], [3], [2, 3]]))
@settings(max_examples=40, deadline=None)
def test_selection_contains_input(data, b, orders):
    S = _spectrum(data)
    if S is None:
        return
    _, _, R = resonance_selection(S, BANDS[b], orders)
    assert all(R.contains(p.n, p.k_star) for p in S.pairs)


@given(spectra, st.sampled_from(range(len(BANDS))), st.sampled_from([[2], [3]]))
@settings(max_examples=40, deadline=None)
def test_solution_class_inclusions(data, b, orders):
    S = _spectrum(data)
    if S is None:
        return
    a = analyze(S, BANDS[b], orders)
    assert set(a.universal) <= set(a.internal) <= set(a.solutions)
    for s in a.internal:
        assert S.contains(s.n, s.k_out)
    assert list(a.solutions) == sorted(set(a.solutions))


@pytest.mark.parametrize("ks", [(0.7,), (0.7, -0.7), (0.6, 1.1)])
def test_universal_set_survives_wavevector_shift(ks):
    key = lambda a: {(s.m, s.zeta, s.n, s.lam.lam) for s in a.universal}
    a = analyze(NKSpectrum.of(*[(1, k) for k in ks]), QUARTIC, [3])
    b = analyze(NKSpectrum.of(*[(1, k + 1e-2) for k in ks]), QUARTIC, [3])
    assert key(a) == key(b)


def _brute_force(S, bs, orders, tol=1e-9):
    """Direct loop over every (m, zeta, n, lam) without the vectorised enumeration."""
    pairs = S.pairs
    scale = max(abs(float(bs.frequency(p.n, p.k_star))) for p in pairs)
    out = set()
    alphabet = [(z, l) for z in (-1, 1) for l in range(1, len(pairs) + 1)]
    for m in orders:
        for lam in itertools.product(alphabet, repeat=m):
            k_sum = sum(z * pairs[l - 1].k_star for z, l in lam)
            f_sum = sum(float(bs.omega(pairs[l - 1].n, z, z * pairs[l - 1].k_star)) for z, l in lam)
            for zeta in (1, -1):
                for n in range(1, bs.J + 1):
                    if abs(float(bs.omega(n, zeta, k_sum)) - f_sum) <= tol * scale:
                        out.add((m, zeta, n, lam))
    return out


@pytest.mark.parametrize("ks,bs,orders", [
    ((0.7,), QUAD, [2, 3]),
    ((0.7, -0.7), QUAD, [3]),
    ((2**-0.5,), QUAD, [2]),
    ((2**-0.5, 2**0.5), QUAD, [2, 3]),
    ((39**-0.25, 3 * 39**-0.25), QUARTIC, [3]),
])
def test_brute_force_cross_check(ks, bs, orders):
    S = NKSpectrum.of(*[(1, k) for k in ks])
    got = {(s.m, s.zeta, s.n, s.lam.lam) for s in resonance_solutions(S, bs, orders)}
    assert got == _brute_force(S, bs, orders)


def test_repeated_analysis_is_identical():
    S = NKSpectrum.of((1, 0.7), (1, -0.7))
    assert analyze(S, QUAD, [3]).solutions == analyze(S, QUAD, [3]).solutions


def test_distinct_wavevectors_come_first():
    S = NKSpectrum.of((1, 0.5), (2, 0.5), (1, 0.9))
    assert [p.k_star for p in S.pairs[:2]] == [0.5, 0.9]
    assert S.distinct_k == (0.5, 0.9)
    with pytest.raises(ValueError):
        NKSpectrum.of((1, 0.5), (1, 0.5 + 1e-12))


def test_third_harmonic_set_on_quadratic_band_is_not_invariant():
    # 3 omega(k) = omega(3k) at k^2 = 1/3, but 2 omega(3k) + omega(-k) = omega(5k) too
    k = 3 ** -0.5
    S = NKSpectrum.of((1, 3 * k), (1, k), (1, -k), (1, -3 * k))
    _, _, R = resonance_selection(S, QUAD, [3])
    assert {round(p.k_star, 9) for p in R.pairs} == {round(j * k, 9) for j in (-5, -3, -1, 1, 3, 5)}
