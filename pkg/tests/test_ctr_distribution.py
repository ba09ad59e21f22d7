import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.special import expit

from riskbid import (
    CtrPosterior,
    InvalidInputError,
    MomentTable,
    build_moment_table,
    lookup_moments,
    moments_mc,
    moments_quadrature,
    pdf,
)
from riskbid.ctr_distribution import _moments_gauss_hermite

from conftest import REF_M, REF_MEAN, REF_S2, REF_STD


class TestPosterior:
    @pytest.mark.parametrize("s2", [0.0, -1.0, float("nan")])
    def test_rejects_bad_variance(self, s2):
        with pytest.raises(InvalidInputError):
            CtrPosterior(0.0, s2)

    def test_rejects_infinite_mean(self):
        with pytest.raises(InvalidInputError):
            CtrPosterior(float("inf"), 1.0)


class TestPdf:
    def test_symmetric_at_zero_mean(self):
        p = CtrPosterior(0.0, 1.0)
        np.testing.assert_allclose(pdf(p, 0.3), pdf(p, 0.7), rtol=1e-14)

    def test_reference_shape_single_peak_below_half(self):
        y = np.linspace(1e-4, 1 - 1e-4, 20001)
        d = pdf(CtrPosterior(REF_M, REF_S2), y)
        peak = int(np.argmax(d))
        assert y[peak] < 0.5
        assert np.all(np.diff(d[: peak + 1]) >= 0)
        assert np.all(np.diff(d[peak:]) <= 0)

    def test_matches_transformed_normal(self):
        # density of sigmoid(a) via the change of variables, computed independently
        p = CtrPosterior(0.4, 2.0)
        y = np.array([0.05, 0.3, 0.6, 0.95])
        a = np.log(y / (1 - y))
        expected = stats.norm(0.4, math.sqrt(2.0)).pdf(a) / (y * (1 - y))
        np.testing.assert_allclose(pdf(p, y), expected, rtol=1e-12)

    @pytest.mark.parametrize("y", [0.0, 1.0, -0.1, 1.5])
    def test_outside_unit_interval(self, y):
        with pytest.raises(InvalidInputError):
            pdf(CtrPosterior(0.0, 1.0), y)

    def test_integrates_to_one(self):
        # composite Simpson on the logit scale with 1e5 panels
        p = CtrPosterior(REF_M, REF_S2)
        u = np.linspace(-12, 12, 200_001)
        y = expit(u)
        integrand = pdf(p, y) * y * (1 - y)
        np.testing.assert_allclose(integrate.simpson(integrand, x=u), 1.0, atol=1e-3)

    def test_samples_converge_to_density(self):
        # sup-distance between the empirical CDF of sigmoid draws and the integrated pdf
        p = CtrPosterior(-0.5, 0.8)
        y = np.sort(expit(p.m + math.sqrt(p.s2) * np.random.default_rng(2).standard_normal(1_000_000)))
        grid = np.linspace(0.01, 0.99, 99)
        cdf = np.cumsum([integrate.quad(lambda t: pdf(p, t), a, b)[0]
                         for a, b in zip(np.r_[1e-12, grid[:-1]], grid)])
        ecdf = np.searchsorted(y, grid) / y.size
        assert np.max(np.abs(ecdf - cdf)) < 0.003


class TestMomentsQuadrature:
    def test_reference_value(self):
        mean, std = moments_quadrature(CtrPosterior(REF_M, REF_S2))
        np.testing.assert_allclose(mean, 0.283, atol=0.005)
        np.testing.assert_allclose([mean, std], [REF_MEAN, REF_STD], rtol=1e-9)

    def test_degenerate_variance(self):
        mean, std = moments_quadrature(CtrPosterior(0.7, 1e-10))
        np.testing.assert_allclose(mean, expit(0.7), rtol=1e-9)
        assert std < 1e-5

    def test_panel_floor(self):
        with pytest.raises(InvalidInputError):
            moments_quadrature(CtrPosterior(0.0, 1.0), panels=50)

    def test_gauss_hermite_agrees(self, rng):
        m = rng.uniform(-8, 3, 50)
        s2 = rng.uniform(1e-3, 8, 50)
        gh_mean, gh_std = _moments_gauss_hermite(m, s2)
        ref = np.array([moments_quadrature(CtrPosterior(a, b)) for a, b in zip(m, s2)])
        np.testing.assert_allclose(gh_mean, ref[:, 0], atol=1e-8)
        np.testing.assert_allclose(gh_std, ref[:, 1], atol=1e-8)

    @given(st.floats(-8, 8), st.floats(0.01, 10))
    @settings(max_examples=60, deadline=None)
    def test_bounds(self, m, s2):
        mean, std = moments_quadrature(CtrPosterior(m, s2), panels=500)
        assert 0 < mean < 1
        assert 0 <= std <= 0.5

    @given(st.floats(-8, 7.5), st.floats(0.05, 0.5), st.floats(0.01, 10))
    @settings(max_examples=60, deadline=None)
    def test_mean_increases_with_m(self, m, dm, s2):
        lo, _ = moments_quadrature(CtrPosterior(m, s2), panels=500)
        hi, _ = moments_quadrature(CtrPosterior(m + dm, s2), panels=500)
        assert hi > lo


class TestMomentsMc:
    def test_repeatable(self):
        p = CtrPosterior(-2.0, 0.5)
        assert moments_mc(p, seed=3) == moments_mc(p, seed=3)
        assert moments_mc(p, seed=3) != moments_mc(p, seed=4)

    def test_default_sample_count(self):
        assert moments_mc.__defaults__[0] == 1000

    def test_reference_close_to_quadrature(self):
        mean, _ = moments_mc(CtrPosterior(REF_M, REF_S2), n=1_000_000, seed=0)
        assert abs(mean - REF_MEAN) < 0.002

    def test_within_three_standard_errors(self, rng):
        n = 200_000
        for _ in range(5):
            p = CtrPosterior(rng.uniform(-5, 2), rng.uniform(0.01, 4))
            mean_q, std_q = moments_quadrature(p)
            mean_mc, _ = moments_mc(p, n=n, seed=int(rng.integers(1 << 30)))
            assert abs(mean_mc - mean_q) <= 3 * std_q / math.sqrt(n)

    def test_rejects_bad_n(self):
        with pytest.raises(InvalidInputError):
            moments_mc(CtrPosterior(0, 1), n=0)


class TestMomentTable:
    def test_single_cell_is_direct_computation(self):
        t = build_moment_table((-1.5, -0.5, 1), (0.2, 0.4, 1))
        centre_s2 = ((math.sqrt(0.2) + math.sqrt(0.4)) / 2) ** 2
        mean, std = moments_quadrature(CtrPosterior(-1.0, centre_s2))
        np.testing.assert_allclose([t.mean[0, 0], t.std[0, 0]], [mean, std], atol=1e-9)

    def test_cell_centre_returns_stored_value(self):
        t = build_moment_table((-4, 1, 7), (0.01, 3, 5))
        mc, sc = t.m_centers(), t.s2_centers()
        for i in range(7):
            for j in range(5):
                assert lookup_moments(t, mc[i], sc[j]) == (t.mean[i, j], t.std[i, j])

    def test_clamps_out_of_range(self):
        t = build_moment_table((-4, 1, 7), (0.01, 3, 5))
        assert lookup_moments(t, 50.0, 100.0) == (t.mean[-1, -1], t.std[-1, -1])
        assert lookup_moments(t, -50.0, 0.0) == (t.mean[0, 0], t.std[0, 0])

    def test_cells_close_to_fresh_quadrature(self, rng):
        t = build_moment_table((-6, 1, 40), (1e-3, 5, 40))
        mc, sc = t.m_centers(), t.s2_centers()
        for i, j in rng.integers(0, 40, size=(30, 2)):
            mean, std = moments_quadrature(CtrPosterior(mc[i], sc[j]))
            assert abs(t.mean[i, j] - mean) < 0.01
            assert abs(t.std[i, j] - std) < 0.01

    def test_mc_cells_within_sampling_error(self, rng):
        n = 1000
        t = build_moment_table((-6, 1, 20), (1e-3, 5, 20), samples_per_cell=n, seed=1, method="mc")
        mc, sc = t.m_centers(), t.s2_centers()
        z = []
        for i in range(20):
            for j in range(20):
                mean, std = moments_quadrature(CtrPosterior(mc[i], sc[j]), panels=400)
                z.append((t.mean[i, j] - mean) / max(std / math.sqrt(n), 1e-12))
        z = np.array(z)
        assert np.max(np.abs(z)) < 4.5
        assert abs(np.mean(z)) < 0.2

    def test_lookup_error_within_lipschitz_bound(self, rng):
        # the error of nearest-cell rounding is bounded by the slope times half a cell
        t = build_moment_table((-6, 1, 60), (1e-3, 5, 60))
        m = rng.uniform(-6, 1, 200)
        s2 = rng.uniform(1e-3, 5, 200)
        got_mean, _ = t.lookup(m, s2)
        want = np.array([moments_quadrature(CtrPosterior(a, b), panels=400)[0] for a, b in zip(m, s2)])
        half_m = 0.5 * 7 / 60
        half_s = 0.5 * (math.sqrt(5) - math.sqrt(1e-3)) / 60
        # d mean/dm <= 1/4 ; d mean/d sqrt(s2) <= sqrt(2/pi)/4 * 2 (loose)
        bound = 0.25 * half_m + 0.5 * half_s
        assert np.max(np.abs(got_mean - want)) <= bound

    def test_mc_build_deterministic_and_schedule_free(self):
        kw = dict(m_grid=(-3, 0, 6), s2_grid=(0.01, 2, 4), samples_per_cell=200, seed=9, method="mc")
        a = build_moment_table(**kw, n_jobs=1)
        b = build_moment_table(**kw, n_jobs=4)
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.std, b.std)

    def test_nonpositive_s2_bound(self):
        with pytest.raises(InvalidInputError):
            build_moment_table((-1, 1, 2), (0.0, 1, 2))

    def test_bad_bins(self):
        with pytest.raises(InvalidInputError):
            build_moment_table((-1, 1, 0), (0.1, 1, 2))

    def test_file_round_trip(self, tmp_path):
        t = build_moment_table((-3, 0, 6), (0.01, 2, 4), samples_per_cell=50, seed=9, method="mc")
        t.save(tmp_path / "t.rbmt")
        raw = (tmp_path / "t.rbmt").read_bytes()
        assert raw.startswith(b"RBMT1\n")
        back = MomentTable.load(tmp_path / "t.rbmt")
        np.testing.assert_array_equal(back.mean, t.mean)
        np.testing.assert_array_equal(back.std, t.std)
        assert (back.m_grid, back.s2_grid, back.seed, back.method) == (t.m_grid, t.s2_grid, 9, "mc")
        # payload is little-endian float64 pairs, m-major
        payload = np.frombuffer(raw[-6 * 4 * 16:], dtype="<f8").reshape(6, 4, 2)
        np.testing.assert_array_equal(payload[..., 0], t.mean)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(b"NOPE\n{}\n")
        with pytest.raises(InvalidInputError):
            MomentTable.load(tmp_path / "x")

    def test_full_grid_sample_budget(self):
        # 1000 x 1000 cells at 1000 draws each is 1e9 samples
        d = build_moment_table.__defaults__
        assert d[0][2] * d[1][2] * d[2] == 10 ** 9
