import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from mopasym.asymptotics import log_potential, piece_nodes
from mopasym.ensembles import (
    BandEnsembleSpec,
    BandLimit,
    FixedSymbolTable,
    IntegrationError,
    VaryingProfile,
    _adaptive,
    band_coefficients,
    band_limit_density,
    band_limit_profile,
    band_varying_profile,
    empirical_vs_limit,
    mu0s_density,
    mu0s_potential,
    sample_band_matrix,
    scaled_spectrum,
    seed_streams,
)
from mopasym.symbol import SymbolPair, solve_roots
from oracles import arcsine_density, semicircle_cdf, semicircle_density


def sqrt_profile():
    return VaryingProfile.power([[1.0]], [[0.0]], 0.5, 0.0)


# -- varying profiles --------------------------------------------------------

def test_power_profile_limits():
    prof = VaryingProfile.power([[2.0]], [[1.0]], 0.5, 1.0)
    A, B = prof.limit_map(0.25)
    assert A[0, 0] == pytest.approx(1.0) and B[0, 0] == pytest.approx(0.25)
    assert prof.sample(25, 100)[0][0, 0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        prof.symbol(0.0)
    assert prof.to_dict()["type"] == "power"


def test_profile_is_lipschitz_on_grid():
    spec = BandEnsembleSpec(2, (1.0, 5.0), 4)
    prof = band_varying_profile(spec)
    us = np.linspace(0.05, 0.5, 40)
    A = [prof.symbol(u).A for u in us]
    steps = [np.linalg.norm(A[i + 1] - A[i], 2) / (us[i + 1] - us[i]) for i in range(len(us) - 1)]
    # sqrt(u) has slope at most 1/(2 sqrt(0.05)) times the pattern norm
    assert max(steps) <= np.linalg.norm(A[-1], 2) / math.sqrt(0.5) / (2 * math.sqrt(0.05)) + 1e-9


def test_band_sampler_matches_limit_map():
    spec = BandEnsembleSpec(2, (1.0, 2.0), 4)
    prof = band_varying_profile(spec)
    gaps = []
    for N in (100, 1000, 10000):
        i = N // 4  # i / N = 1/4
        A_nN, B_nN = prof.sample(i, N)
        A_u, B_u = prof.limit_map(0.25)
        gaps.append(np.linalg.norm(A_nN - A_u) + np.linalg.norm(B_nN - B_u))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] <= 1e-3


# -- averaged zero density ---------------------------------------------------

@pytest.mark.parametrize("x, expected", [(0.0, 1 / math.pi), (1.0, math.sqrt(3) / (2 * math.pi))])
def test_averaged_density_examples(x, expected):
    assert mu0s_density(sqrt_profile(), 1.0, x) == pytest.approx(expected, abs=1e-9)


def test_averaged_density_is_semicircle():
    for x in np.linspace(-1.95, 1.95, 9):
        assert mu0s_density(sqrt_profile(), 1.0, x) == pytest.approx(semicircle_density(x, 4.0), abs=1e-4)


def test_averaged_density_off_support():
    assert mu0s_density(sqrt_profile(), 1.0, 2.5) == 0.0
    assert mu0s_density(sqrt_profile(), 0.25, 1.5) == 0.0


def test_averaged_density_as_arcsine_average():
    # A_s = 1, B_s = s: (1/s) int_0^s arcsine(x; 1, u) du
    prof = VaryingProfile.power([[1.0]], [[1.0]], 0.0, 1.0)
    x = 0.4
    expected = quad(lambda u: arcsine_density(x, 1.0, u), 0, 1, limit=200)[0]
    assert mu0s_density(prof, 1.0, x) == pytest.approx(expected, abs=1e-7)


def test_averaged_density_mass():
    prof = VaryingProfile.power([[1.0]], [[1.0]], 0.5, 1.0)
    # support of the u-symbol is [u - 2 sqrt(u), u + 2 sqrt(u)]
    lo, hi = 1 - 2.0, 1 + 2.0
    cuts = [lo, 0.0, hi]
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        xs, ws = piece_nodes(a, b, 30)
        total += sum(w * mu0s_density(prof, 1.0, x) for x, w in zip(xs, ws))
    assert total == pytest.approx(1.0, abs=1e-3)


def test_averaged_density_rejects_bad_s():
    with pytest.raises(ValueError):
        mu0s_density(sqrt_profile(), 0.0, 0.0)
    with pytest.raises(ValueError):
        mu0s_potential(sqrt_profile(), -1.0, 3.0)


# -- averaged potential ------------------------------------------------------

def test_averaged_potential_semicircle():
    expected = -quad(lambda t: math.log(abs(3 - t)) * semicircle_density(t, 4.0), -2, 2)[0]
    assert mu0s_potential(sqrt_profile(), 1.0, 3.0) == pytest.approx(expected, abs=1e-3)
    assert mu0s_potential(sqrt_profile(), 1.0, 3.0) == pytest.approx(expected, abs=1e-9)


def test_averaged_potential_unit_mass():
    assert mu0s_potential(sqrt_profile(), 1.0, 1e6) + math.log(1e6) == pytest.approx(0.0, abs=1e-5)


def test_averaged_potential_small_s():
    prof = VaryingProfile(1, lambda s: ([[1.0 + s]], [[0.0]]))
    fixed = log_potential(SymbolPair([[1.0]], [[0.0]]), 3.0)
    assert mu0s_potential(prof, 1e-3, 3.0) == pytest.approx(fixed, abs=1e-3)


def test_averaged_potential_matches_density_quadrature():
    prof = VaryingProfile.power([[1.0]], [[1.0]], 0.5, 1.0)
    xs, ws = [], []
    for a, b in [(-1.0, 0.0), (0.0, 3.0)]:
        px, pw = piece_nodes(a, b, 24)
        xs.extend(px)
        ws.extend(pw)
    dens = np.array([mu0s_density(prof, 1.0, t) for t in xs])
    for x in (4.0, -2.5, 1.0 + 2j):
        quad_val = np.dot(np.array(ws) * dens, np.log(np.abs(x - np.array(xs))))
        assert mu0s_potential(prof, 1.0, x) + quad_val == pytest.approx(0.0, abs=1e-3)


def test_averaged_potential_rejects_support():
    with pytest.raises(ValueError):
        mu0s_potential(sqrt_profile(), 1.0, 0.5)


# -- band coefficients -------------------------------------------------------

def test_band_spec_validation():
    with pytest.raises(ValueError):
        BandEnsembleSpec(2, (1.0,), 4)
    with pytest.raises(ValueError):
        BandEnsembleSpec(1, (0.0,), 4)
    with pytest.raises(ValueError):
        BandEnsembleSpec(2, (1.0, 1.0), 5)
    with pytest.raises(ValueError):
        BandEnsembleSpec(1, (1.0,), 4, seed=-1)


@pytest.mark.parametrize("i", [1, 3, 10])
def test_band_coefficients_scalar(i):
    spec = BandEnsembleSpec(1, (1.0,), 10)
    A, B = band_coefficients(spec, i)
    assert A[0, 0] == pytest.approx(math.sqrt(i / 20), abs=1e-15) and B[0, 0] == 0


def test_band_coefficients_first_block():
    A, B = band_coefficients(BandEnsembleSpec(2, (1.0, 1.0), 4), 1)
    assert np.allclose(A, np.array([[1, 0], [math.sqrt(2), math.sqrt(2)]]) / math.sqrt(8), atol=1e-15)
    assert np.allclose(B, B.T) and np.all(np.diag(B) == 0)
    assert np.all(np.diag(A) > 0) and A[0, 1] == 0


def test_band_coefficients_range():
    spec = BandEnsembleSpec(2, (1.0, 1.0), 4)
    for i in (0, 3):
        with pytest.raises(IndexError):
            band_coefficients(spec, i)


def test_band_coefficients_approach_limit():
    gaps = []
    for n in (100, 1000, 10000):
        spec = BandEnsembleSpec(2, (1.0, 3.0), n)
        A, B = band_coefficients(spec, n // 2)  # i / n = 1/2
        lim = band_limit_profile(spec, 0.5)
        gaps.append(np.linalg.norm(A - lim.A))
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] <= 1e-3


def test_band_limit_profile_examples():
    sym = band_limit_profile(BandEnsembleSpec(1, (1.0,), 1), 1.0)
    assert sym.A[0, 0] == pytest.approx(1 / math.sqrt(2)) and sym.B[0, 0] == 0
    sym = band_limit_profile(BandEnsembleSpec(2, (1.0, 1.0), 2), 0.5)
    assert np.allclose(sym.A, np.array([[1, 0], [1, 1]]) / math.sqrt(2))
    assert np.allclose(sym.B, np.array([[0, 1], [1, 0]]) / math.sqrt(2))
    with pytest.raises(ValueError):
        band_limit_profile(BandEnsembleSpec(1, (1.0,), 1), 0.0)


def test_root_scaling_example():
    spec = BandEnsembleSpec(1, (1.0,), 1)
    a = solve_roots(band_limit_profile(spec, 0.25), 2.0).roots[0]
    b = solve_roots(band_limit_profile(spec, 1.0), 4.0).roots[0]
    assert abs(a - b) <= 1e-10


@given(st.sampled_from([(1.0,), (2.0,), (1.0, 1.0), (1.0, 5.0), (0.5, 2.0, 3.0)]),
       st.floats(-4, 4), st.floats(0.01, 1.0))
def test_root_scaling_identity(gammas, x, u):
    spec = BandEnsembleSpec(len(gammas), gammas, len(gammas))
    a = solve_roots(band_limit_profile(spec, u), x, vectors=False).roots
    b = solve_roots(band_limit_profile(spec, 1.0), x / math.sqrt(u), vectors=False).roots
    assert np.max(np.abs(a - b)) <= 1e-10 * (1 + np.abs(b).max())


# -- sampling ----------------------------------------------------------------

def test_scalar_band_is_tridiagonal_beta_ensemble():
    spec = BandEnsembleSpec(1, (2.0,), 6, seed=3)
    M = sample_band_matrix(spec).to_dense()
    assert np.allclose(M, M.T)
    assert np.all(np.triu(M, 2) == 0)
    assert np.all(np.diag(M, 1) > 0)


def test_band_structure_and_symmetry():
    M = sample_band_matrix(BandEnsembleSpec(3, (1.0, 2.0, 3.0), 12, seed=1)).to_dense()
    assert np.allclose(M, M.T)
    assert np.all(np.triu(M, 4) == 0) and np.all(np.diag(M, 3) != 0)


def test_band_mean_squares():
    spec = BandEnsembleSpec(2, (1.0, 3.0), 10)
    rng = np.random.default_rng(11)
    samples = 10_000
    acc = np.zeros((3, 10))
    sq = np.zeros((3, 10))
    for _ in range(samples):
        b = sample_band_matrix(spec, rng).bands ** 2
        acc += b
        sq += b * b
    mean = acc / samples
    se = np.sqrt((sq / samples - mean ** 2) / samples)
    n = spec.n
    for k in (1, 2):
        rows = np.arange(k + 1, n + 1)
        expected = (n - rows + 1) * spec.gamma(k) / 2
        assert np.all(np.abs(mean[k, : n - k] - expected) <= 3.5 * se[k, : n - k])
    assert np.all(np.abs(mean[0] - 1.0) <= 3.5 * se[0])


def test_sampling_is_deterministic():
    spec = BandEnsembleSpec(2, (1.0, 5.0), 200, seed=42)
    a = sample_band_matrix(spec).bands
    b = sample_band_matrix(spec).bands
    assert a.tobytes() == b.tobytes()
    c = sample_band_matrix(BandEnsembleSpec(2, (1.0, 5.0), 200, seed=43)).bands
    assert a.tobytes() != c.tobytes()


def test_seed_streams_are_reproducible_and_distinct():
    a = [g.random() for g in seed_streams(9, 3)]
    b = [g.random() for g in seed_streams(9, 3)]
    assert a == b and len(set(a)) == 3


def test_banded_eigenvalues_match_dense():
    band = sample_band_matrix(BandEnsembleSpec(3, (1.0, 2.0, 0.5), 90, seed=2))
    assert np.allclose(band.eigenvalues(), np.linalg.eigvalsh(band.to_dense()), atol=1e-10)


# -- limit density -----------------------------------------------------------

@pytest.mark.parametrize("gamma", [1.0, 2.0, 5.0])
def test_scalar_band_limit_closed_form(gamma):
    spec = BandEnsembleSpec(1, (gamma,), 1)
    edge = math.sqrt(2 * gamma)
    xs = np.linspace(-0.98 * edge, 0.98 * edge, 20)
    fast = BandLimit(spec).density(xs)
    for x, f in zip(xs, fast):
        closed = math.sqrt(2 * gamma - x * x) / (math.pi * gamma)
        assert band_limit_density(spec, x) == pytest.approx(closed, abs=1e-6)
        assert f == pytest.approx(closed, abs=1e-6)
    assert np.max(np.abs(BandLimit(spec).cdf(xs) - semicircle_cdf(xs, 2 * gamma))) <= 1e-6


def test_scalar_band_limit_examples():
    spec = BandEnsembleSpec(1, (1.0,), 1)
    assert band_limit_density(spec, 0.0) == pytest.approx(math.sqrt(2) / math.pi, abs=1e-9)
    assert band_limit_density(spec, math.sqrt(2)) == pytest.approx(0.0, abs=1e-9)
    assert band_limit_density(spec, -math.sqrt(2)) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("gammas", [(1.0, 1.0), (1.0, 5.0)])
def test_band_limit_equals_averaged_density(gammas):
    spec = BandEnsembleSpec(2, gammas, 2)
    prof = band_varying_profile(spec)
    for x in (-1.1, 0.35, 0.9):
        assert band_limit_density(spec, x) == pytest.approx(mu0s_density(prof, 0.5, x), abs=1e-8)


@pytest.mark.parametrize("gammas", [(1.0, 1.0), (1.0, 5.0), (2.0, 0.5, 1.0)])
def test_band_limit_mass_and_sign(gammas):
    spec = BandEnsembleSpec(len(gammas), gammas, len(gammas))
    limit = BandLimit(spec)
    assert limit.mass() == pytest.approx(1.0, abs=1e-3)
    lo, hi = limit.support
    xs = np.linspace(lo - 0.5, hi + 0.5, 301)
    assert np.all(limit.density(xs) >= 0)
    F = limit.cdf(xs)
    assert np.all(np.diff(F) >= -1e-9) and F[0] == 0 and F[-1] == pytest.approx(1, abs=1e-6)


def test_fast_band_density_matches_adaptive():
    spec = BandEnsembleSpec(2, (1.0, 5.0), 2)
    fast = BandLimit(spec)
    for x in (-2.0, -0.4, 0.1, 1.3, 2.6):
        assert fast.density(x)[0] == pytest.approx(band_limit_density(spec, x), abs=1e-6)


def test_fixed_symbol_table_scalar():
    table = FixedSymbolTable(SymbolPair([[1.0]], [[0.0]]))
    ys = np.linspace(-1.9, 1.9, 11)
    assert np.allclose(table.density(ys), [arcsine_density(y) for y in ys], rtol=1e-6)
    assert np.allclose(table.cdf(ys), 0.5 + np.arcsin(ys / 2) / math.pi, atol=1e-9)


def test_adaptive_quadrature_reports_interval():
    with pytest.raises(IntegrationError) as info:
        _adaptive(lambda u: float(u > 0.3), 0.0, 1.0, max_nodes=48, depth=0)
    assert info.value.interval == (0.0, 1.0)


# -- empirical comparison ----------------------------------------------------

def test_scalar_band_spectrum_is_semicircle():
    spec = BandEnsembleSpec(1, (1.0,), 2000, seed=7)
    eig = scaled_spectrum(spec)
    rep = empirical_vs_limit(spec, bins=40)
    assert rep.kolmogorov <= 0.03
    from mopasym.recurrence import EmpiricalMeasure
    assert EmpiricalMeasure(eig).kolmogorov_to_cdf(lambda x: semicircle_cdf(x, 2.0)) <= 0.03
    assert len(rep.histogram) == 40
    width = np.array([b - a for a, b, *_ in rep.histogram])
    assert np.dot(width, [h[2] for h in rep.histogram]) == pytest.approx(1.0)
    assert np.dot(width, [h[3] for h in rep.histogram]) == pytest.approx(1.0, abs=1e-6)
    assert rep.wasserstein < 0.02


@pytest.mark.parametrize("gammas", [(1.0,), (1.0, 1.0)])
def test_independent_seeds_agree(gammas):
    spec = BandEnsembleSpec(len(gammas), gammas, 2000, seed=123)
    limit = BandLimit(spec)
    ks = [empirical_vs_limit(spec, limit=limit, rng=g).kolmogorov for g in seed_streams(spec.seed, 5)]
    assert max(ks) <= 0.04
    assert np.std(ks, ddof=1) <= 0.01


def test_band_spectrum_near_spike():
    # r = 2, gamma = (1, 1): the limit has an integrable spike at x = 0, so the
    # comparison is a bin average (3% plus three binomial standard errors)
    spec = BandEnsembleSpec(2, (1.0, 1.0), 5000, seed=7)
    limit = BandLimit(spec)
    eig = scaled_spectrum(spec)
    a, b = -0.05, 0.05
    p = float(limit.cdf(b)[0] - limit.cdf(a)[0])
    frac = np.mean((eig > a) & (eig <= b))
    se = math.sqrt(p * (1 - p) / eig.size)
    assert abs(frac - p) <= 0.03 * p + 3 * se


def test_report_summary_and_bins():
    spec = BandEnsembleSpec(1, (1.0,), 500, seed=1)
    rep = empirical_vs_limit(spec, bins=10, check_mass=True)
    s = rep.summary()
    assert s["n_eigenvalues"] == 500 and s["limit_mass"] == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(ValueError):
        empirical_vs_limit(spec, bins=0)
