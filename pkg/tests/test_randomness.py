import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import kstest

from maglorentz.randomness import (
    PrimitiveDraw,
    RandomStream,
    TWO_PI,
    alpha_density,
    split_stream,
    truncexp_mean,
    uniform_to_alpha,
    uniform_to_angle,
    uniform_to_exp,
    uniform_to_truncexp,
)

from conftest import chi2_pvalue


class TestInverseCdfs:
    def test_zero_uniform_gives_zero_angle(self):
        assert uniform_to_angle(0.0) == 0.0

    def test_exp_inverse_at_known_quantile(self):
        # u = 1 - e^-1 maps back to exactly 1
        assert abs(uniform_to_exp(1.0 - math.exp(-1.0)) - 1.0) < 1e-15

    def test_alpha_boundary_folds_to_zero(self):
        # u -> 1 drives the arccos argument to -1, i.e. the angle 2*pi,
        # which is folded back into [0, 2*pi)
        val = uniform_to_alpha(1.0)
        assert val == 0.0
        assert uniform_to_alpha(0.0) == 0.0

    def test_truncexp_support(self, stream):
        x = stream.sample_truncexp(TWO_PI, 200_000)
        assert x.min() >= 0.0
        assert x.max() <= TWO_PI

    def test_truncexp_rejects_bad_cutoff(self):
        with pytest.raises(ValueError):
            uniform_to_truncexp(0.5, 0.0)


class TestMoments:
    N = 1_000_000

    def test_uniform_angle_mean(self, stream):
        x = stream.sample_uniform_angle(self.N)
        se = x.std() / math.sqrt(self.N)
        # oracle: mean of the uniform density on [0, 2*pi] by quadrature
        target, _ = integrate.quad(lambda t: t / TWO_PI, 0.0, TWO_PI)
        assert abs(x.mean() - target) < 3 * se

    def test_exp_mean_and_tail(self, stream):
        x = stream.sample_exp(self.N)
        assert abs(x.mean() - 1.0) < 3 * x.std() / math.sqrt(self.N)
        p_tail = np.mean(x > TWO_PI)
        target = math.exp(-TWO_PI)
        se = math.sqrt(target * (1 - target) / self.N)
        assert abs(p_tail - target) < 3 * se

    def test_alpha_mean_matches_quadrature(self, stream):
        x = stream.sample_alpha(self.N)
        target, _ = integrate.quad(lambda t: t * 0.25 * math.sin(t / 2), 0.0, TWO_PI)
        assert abs(target - math.pi) < 1e-9
        assert abs(x.mean() - target) < 3 * x.std() / math.sqrt(self.N)

    def test_alpha_density_at_pi(self, stream):
        # histogram density estimate in a narrow band around pi
        x = stream.sample_alpha(self.N)
        h = 0.05
        est = np.mean(np.abs(x - math.pi) < h) / (2 * h)
        assert abs(est - 0.25) < 0.01

    def test_truncexp_mean_matches_quadrature(self, stream):
        x = stream.sample_truncexp(TWO_PI, self.N)
        norm, _ = integrate.quad(lambda t: math.exp(-t), 0.0, TWO_PI)
        target, _ = integrate.quad(lambda t: t * math.exp(-t) / norm, 0.0, TWO_PI)
        assert abs(target - 0.98824) < 1e-4
        assert abs(truncexp_mean(TWO_PI) - target) < 1e-12
        assert abs(x.mean() - target) < 3 * x.std() / math.sqrt(self.N)

    def test_truncexp_large_cutoff_recovers_exp(self, stream):
        x = stream.sample_truncexp(50.0, self.N)
        assert abs(x.mean() - 1.0) < 3 * x.std() / math.sqrt(self.N)


class TestDistributionShape:
    def test_uniform_angle_ks(self, stream):
        x = stream.sample_uniform_angle(100_000)
        stat = kstest(x / TWO_PI, "uniform").statistic
        assert stat < 0.01

    def test_alpha_chi_square_50_bins(self, stream):
        x = stream.sample_alpha(1_000_000)
        edges = np.linspace(0.0, TWO_PI, 51)
        counts, _ = np.histogram(x, bins=edges)
        # cell probabilities from the closed-form CDF (1 - cos(x/2)) / 2
        cdf = 0.5 * (1.0 - np.cos(0.5 * edges))
        p = chi2_pvalue(counts, np.diff(cdf))
        assert p > 1e-3


class TestStreams:
    def test_same_key_bit_identical(self):
        a = split_stream(123, 0).uniform01(10_000)
        b = split_stream(123, 0).uniform01(10_000)
        assert np.array_equal(a, b)

    def test_distinct_indices_differ(self):
        a = split_stream(123, 0).uniform01(10_000)
        b = split_stream(123, 1).uniform01(10_000)
        assert np.any(a != b)

    def test_cross_correlation_between_streams(self):
        a = split_stream(123, 0).uniform01(100_000)
        b = split_stream(123, 1).uniform01(100_000)
        r = np.corrcoef(a, b)[0, 1]
        assert abs(r) < 0.01

    def test_counter_tracks_consumption(self):
        s = RandomStream(5, 0)
        s.uniform01()
        s.uniform01(10)
        assert s.counter == 11

    def test_draw_types(self, stream):
        d = stream.draw()
        assert isinstance(d, PrimitiveDraw)
        assert d.xi > 0.0
        assert 0.0 <= d.alpha < TWO_PI

    def test_alpha_density_helper(self):
        assert alpha_density(math.pi) == pytest.approx(0.25)
        assert alpha_density(-0.1) == 0.0
