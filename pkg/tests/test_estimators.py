import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import simpson

from spectral_sde.basis import BasisSpec
from spectral_sde.estimators import (
    CurveEstimate,
    DensityEstimate,
    EstimatorConfig,
    LaplaceEstimate,
    SpectralTriple,
    drift_from_triple,
    empirical_laplace,
    estimate_density,
    estimate_levels,
    estimate_pipeline,
    estimate_v1,
    estimate_v1_misspecified,
    invert_laplace,
    observation_moments,
    spectral_triple,
    volatility_from_triple,
)
from spectral_sde.harness import l2_distance
from spectral_sde.sde_sim import ObservationSet, SamplingScheme, draw_gaps, invariant_density_exact, benchmark_model
from spectral_sde.spectral_core import PrincipalPair

V1_RBM = -math.pi ** 2 / 2
KAPPA_RBM = math.exp(-math.pi ** 2 / 8)
CFG = EstimatorConfig()

positive_gaps = arrays(float, st.integers(1, 60), elements=st.floats(1e-3, 3.0))


def analytic_triple(m=2, v1=V1_RBM):
    u = np.zeros(m)
    u[1] = -1.0  # -sqrt(2) cos(pi x), increasing
    mu = np.zeros(m)
    mu[0] = 1.0
    return SpectralTriple(v1=v1, pair=PrincipalPair(KAPPA_RBM, u, True), density=DensityEstimate(mu))


class TestConfig:
    def test_curve_grid(self):
        x = CFG.curve_grid()
        assert x.size == 801 and x[0] == 0.1 and x[-1] == 0.9

    @pytest.mark.parametrize("kwargs", [dict(interval=(0.0, 0.9)), dict(interval=(0.5, 0.4)), dict(D=0.0),
                                        dict(derivative_floor=-1.0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            EstimatorConfig(**kwargs)


class TestDensity:
    def test_point_mass_at_half(self):
        obs = ObservationSet([0.0, 0.25, 0.5], [0.5, 0.5, 0.5])
        np.testing.assert_allclose(estimate_density(obs, BasisSpec(1)).coeffs, [1.0, 0.0], atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, st.integers(2, 100), elements=st.floats(0, 1)), st.integers(0, 10))
    def test_constant_coefficient_is_one(self, states, J):
        obs = ObservationSet(np.arange(states.size) * 0.1, states)
        assert estimate_density(obs, BasisSpec(J)).coeffs[0] == 1.0

    def test_reflected_bm(self, rbm_obs):
        d = estimate_density(rbm_obs, BasisSpec(4))
        x = np.linspace(0, 1, 2001)
        assert math.sqrt(simpson((d(x) - 1.0) ** 2, x=x)) <= 0.05

    def test_mean_reverting_model(self, model_obs):
        d = estimate_density(model_obs, BasisSpec(4))
        x = np.linspace(0, 1, 2001)
        mu = invariant_density_exact(benchmark_model(), x)
        assert math.sqrt(simpson((d(x) - mu) ** 2, x=x)) <= 0.1


class TestLaplace:
    def test_at_zero(self):
        assert empirical_laplace(LaplaceEstimate(np.array([0.1, 0.7])), 0.0) == 1.0

    def test_equal_gaps(self):
        assert empirical_laplace(LaplaceEstimate(np.full(5, 0.25)), 4.0) == pytest.approx(0.36787944117144233)

    def test_exponential_gaps(self):
        le = LaplaceEstimate(draw_gaps(SamplingScheme("exponential", 0.25), 10 ** 5, seed=3))
        assert empirical_laplace(le, 4.0) == pytest.approx(0.5, abs=0.005)
        assert invert_laplace(le, 0.5) == pytest.approx(4.0, abs=0.1)

    def test_closed_form_inverse(self):
        assert invert_laplace(LaplaceEstimate(np.full(7, 0.25)), math.exp(-1)) == pytest.approx(4.0, abs=1e-9)

    @pytest.mark.parametrize("kind", ["uniform", "beta", "exponential"])
    def test_round_trip_at_known_point(self, kind):
        le = LaplaceEstimate(draw_gaps(SamplingScheme(kind, 0.25), 500, seed=8))
        assert invert_laplace(le, empirical_laplace(le, 7.3)) == pytest.approx(7.3, abs=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(positive_gaps, st.sampled_from([0.1, 0.5, 0.9]))
    def test_round_trip(self, gaps, kappa):
        le = LaplaceEstimate(gaps)
        assert abs(empirical_laplace(le, invert_laplace(le, kappa)) - kappa) <= 1e-10

    @settings(max_examples=60, deadline=None)
    @given(positive_gaps, st.floats(0, 20), st.floats(1e-3, 5))
    def test_strictly_decreasing(self, gaps, y, dy):
        le = LaplaceEstimate(gaps)
        assert empirical_laplace(le, y) > empirical_laplace(le, y + dy)

    @pytest.mark.parametrize("kappa", [1.0, 1.5, 0.0, -0.3])
    def test_domain(self, kappa):
        with pytest.raises(ValueError):
            invert_laplace(LaplaceEstimate(np.array([0.2, 0.3])), kappa)

    def test_rejects_bad_samples(self):
        with pytest.raises(ValueError):
            LaplaceEstimate(np.array([]))
        with pytest.raises(ValueError):
            LaplaceEstimate(np.array([0.0, 0.0]))
        with pytest.raises(ValueError):
            empirical_laplace(LaplaceEstimate(np.array([0.3])), -1.0)


class TestV1:
    def test_invalid_pair(self):
        assert estimate_v1(PrincipalPair.fallback(3), LaplaceEstimate(np.full(3, 0.25))) == 0.0

    def test_equal_gaps(self):
        pair = PrincipalPair(math.exp(-1), np.array([0.0, -1.0]), True)
        assert estimate_v1(pair, LaplaceEstimate(np.full(3, 0.25))) == pytest.approx(-4.0)

    def test_misspecified_equals_method_for_equal_gaps(self):
        pair = PrincipalPair(0.3, np.array([0.0, -1.0]), True)
        le = LaplaceEstimate(np.full(4, 0.25))
        assert estimate_v1_misspecified(pair, le) == estimate_v1(pair, le)

    def test_misspecified_differs_for_random_gaps(self):
        pair = PrincipalPair(0.3, np.array([0.0, -1.0]), True)
        le = LaplaceEstimate(draw_gaps(SamplingScheme("exponential", 0.25), 1000, seed=1))
        # Jensen: the equal-gap inversion understates |v1|
        assert estimate_v1_misspecified(pair, le) > estimate_v1(pair, le)

    def test_reflected_bm(self, rbm_obs):
        triple, _, _ = estimate_pipeline(rbm_obs, 4)
        assert triple.v1 == pytest.approx(V1_RBM, abs=0.4)


class TestIdentification:
    @pytest.mark.parametrize("m", [2, 5])
    def test_volatility_identity(self, m):
        vol = volatility_from_triple(analytic_triple(m), CFG)
        assert vol.kind == "volatility" and vol.degenerate == 0
        np.testing.assert_allclose(vol.values, 1.0, atol=1e-6)

    @pytest.mark.parametrize("m", [2, 5])
    def test_drift_identity(self, m):
        triple = analytic_triple(m)
        drift = drift_from_triple(triple, volatility_from_triple(triple, CFG), CFG)
        assert not drift.thresholded
        np.testing.assert_allclose(drift.values, 0.0, atol=1e-6)

    def test_invalid_pair_gives_capped_curve(self):
        triple = SpectralTriple(0.0, PrincipalPair.fallback(3), DensityEstimate(np.array([1.0, 0.0, 0.0])))
        vol = volatility_from_triple(triple, EstimatorConfig(D=0.7))
        np.testing.assert_array_equal(vol.values, 0.7)
        assert vol.degenerate == vol.values.size

    def test_cap(self):
        vol = volatility_from_triple(analytic_triple(2, v1=3 * V1_RBM), EstimatorConfig(D=2.0))
        np.testing.assert_array_equal(vol.values, 2.0)
        assert vol.degenerate == 0

    def test_drift_threshold(self):
        # an overstated v1 leaves a drift residual far above 2 D
        triple = analytic_triple(2, v1=4 * V1_RBM)
        cfg = EstimatorConfig(D=0.1)
        drift = drift_from_triple(triple, volatility_from_triple(triple, cfg), cfg)
        assert drift.thresholded
        np.testing.assert_array_equal(drift.values, 0.0)
        assert drift.meta["raw_norm"] > 2 * cfg.D

    def test_drift_threshold_boundary(self):
        # b~ = (v1 - v_true) u/u' with u/u' = cot(pi x)/pi; pick v1 so that ||b~|| = 3 D
        triple = analytic_triple(2, v1=2 * V1_RBM)
        vol = CurveEstimate(CFG.curve_grid(), np.ones(801), "volatility")
        raw = drift_from_triple(triple, vol, EstimatorConfig(D=100.0))
        norm = raw.meta["raw_norm"]
        assert drift_from_triple(triple, vol, EstimatorConfig(D=norm / 3)).thresholded
        assert not drift_from_triple(triple, vol, EstimatorConfig(D=norm / 2)).thresholded

    def test_derivative_floor(self):
        # u' vanishes at 0 for -sqrt(2) cos(pi x); with interval close to 0 the floor bounds the ratio
        triple = analytic_triple(2)
        cfg = EstimatorConfig(interval=(0.001, 0.9), derivative_floor=1.0, D=50.0)
        vol = volatility_from_triple(triple, cfg)
        assert np.all(vol.values < volatility_from_triple(triple, EstimatorConfig(interval=(0.001, 0.9), D=50.0)).values + 1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-20, 0), arrays(float, 4, elements=st.floats(-1, 1)), arrays(float, 3, elements=st.floats(-0.5, 0.5)))
    def test_volatility_always_finite_and_capped(self, v1, u, mu_tail):
        if np.linalg.norm(u) == 0:
            return
        triple = SpectralTriple(v1, PrincipalPair(0.5, u / np.linalg.norm(u), True),
                                DensityEstimate(np.concatenate([[1.0], mu_tail])))
        vol = volatility_from_triple(triple, EstimatorConfig(D=1.5))
        assert np.all(np.isfinite(vol.values))
        assert np.all(vol.values > 0) and np.all(vol.values <= 1.5)


class TestPipeline:
    def test_needs_enough_gaps(self):
        obs = ObservationSet([0.0, 0.25, 0.5], [0.1, 0.2, 0.3])
        with pytest.raises(ValueError, match=r"N=2.*m=5"):
            estimate_pipeline(obs, 4)

    def test_reflected_bm(self, rbm_obs):
        triple, vol, drift = estimate_pipeline(rbm_obs, 4)
        assert triple.pair.kappa == pytest.approx(KAPPA_RBM, abs=0.02)
        assert l2_distance(vol, lambda x: np.ones_like(x), (0.1, 0.9)) <= 0.1
        assert vol.N == 20000 and vol.dim == 5

    def test_mean_reverting_model(self, model_obs):
        model = benchmark_model()
        _, vol, drift = estimate_pipeline(model_obs, 4)
        assert l2_distance(vol, model.sigma_sq, (0.1, 0.9)) < 0.03
        assert l2_distance(drift, model.drift, (0.1, 0.9)) < 0.15

    def test_bit_identical(self, model_obs):
        a = estimate_pipeline(model_obs, 3)
        b = estimate_pipeline(model_obs, 3)
        assert a[1].values.tobytes() == b[1].values.tobytes()
        assert a[2].values.tobytes() == b[2].values.tobytes()
        assert a[0].v1 == b[0].v1

    def test_levels_share_moments(self, model_obs):
        fits = estimate_levels(model_obs, [2, 4, 6], drift=False)
        mom = observation_moments(model_obs, 6)
        for m in (2, 4, 6):
            direct = estimate_pipeline(model_obs, m - 1)
            np.testing.assert_allclose(fits[m][1].values, direct[1].values, rtol=1e-12, atol=1e-14)
            assert spectral_triple(mom, m).v1 == pytest.approx(direct[0].v1, rel=1e-12)
            assert fits[m][2] is None

    def test_singular_gram_falls_back(self):
        obs = ObservationSet(np.arange(6) * 0.25, np.full(6, 0.5))
        triple, vol, _ = estimate_pipeline(obs, 2)
        assert triple.gram_singular and not triple.pair.valid and triple.v1 == 0.0
        np.testing.assert_array_equal(vol.values, CFG.D)

    def test_curve_csv_round_trip(self, tmp_path, model_obs):
        _, vol, _ = estimate_pipeline(model_obs, 4)
        f = tmp_path / "vol.csv"
        vol.to_csv(f)
        lines = f.read_text().splitlines()
        assert lines[0].startswith("# kind=volatility J=4 dim=5 N=20000")
        assert lines[1] == "x,value" and len(lines) == 803
        back = CurveEstimate.from_csv(f)
        np.testing.assert_array_equal(back.values, vol.values)
        assert back.dim == 5 and back.N == 20000
