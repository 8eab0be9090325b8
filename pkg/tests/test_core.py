import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from zdjscc.core import (
    ChannelModel,
    QuantizerSpec,
    SourceModel,
    cell_masses,
    channel_output,
    index_bound,
    max_quantizer_distance,
    noise_variance,
    quantize,
    quantize_index,
    quantizer_moments,
    sample_source_pairs,
)


def moments_by_quad(q: QuantizerSpec):
    """Independent oracle: adaptive quadrature of t(s) s phi(s) and t(s)^2 phi(s)."""
    e_ts = e_tt = 0.0
    for k in q.indices:
        lo, hi = q.cell_edges(k)
        lo, hi = max(float(lo), -40.0), min(float(hi), 40.0)
        t = k * q.delta
        e_ts += t * integrate.quad(lambda s: s * norm.pdf(s), lo, hi, epsabs=1e-14)[0]
        e_tt += t * t * integrate.quad(norm.pdf, lo, hi, epsabs=1e-14)[0]
    return e_ts, e_tt


class TestModels:
    def test_source_rejects_unit_correlation(self):
        with pytest.raises(ValueError):
            SourceModel(1.0)

    def test_source_innovation_variance(self):
        assert SourceModel(0.6).sigma_n_sq == pytest.approx(0.64)

    def test_channel_noise_from_csnr(self):
        ch = ChannelModel.symmetric(2.0, 2.0, 10.0)
        assert ch.sigma_w_sq == pytest.approx(0.2)
        assert noise_variance(1.0, 0.0) == 1.0

    def test_gain_at_picks_the_interferer(self):
        ch = ChannelModel(0.5, 3.0, 1.0)
        assert ch.gain_at(1) == 3.0
        assert ch.gain_at(2) == 0.5
        with pytest.raises(ValueError):
            ch.gain_at(3)

    @pytest.mark.parametrize("kw", [dict(c1=1, c2=1, sigma_w_sq=0.0),
                                    dict(c1=-1, c2=1, sigma_w_sq=1.0)])
    def test_channel_validation(self, kw):
        with pytest.raises(ValueError):
            ChannelModel(**kw)


class TestQuantizer:
    @pytest.mark.parametrize("delta,k_max", [(1.0, 6), (2.0, 3), (0.5, 12), (12.0, 0),
                                             (100.0, 0), (0.3, 20), (4.0, 1)])
    def test_index_bound(self, delta, k_max):
        assert index_bound(delta) == k_max
        assert (k_max + 0.5) * delta >= 6.0
        if k_max > 0:
            assert (k_max - 0.5) * delta < 6.0

    def test_index_bound_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            index_bound(0.0)

    @pytest.mark.parametrize("s,expected", [(0.49, 0.0), (0.5, 1.0), (-0.5, 0.0),
                                            (-0.51, -1.0), (2.6, 3.0), (100.0, 6.0),
                                            (-100.0, -6.0)])
    def test_midtread_examples(self, s, expected):
        q = QuantizerSpec.for_step(1.0, 0.9)
        assert quantize(s, q) == expected

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-50, 50), st.floats(0.05, 5.0))
    def test_error_bounded_inside_range(self, s, delta):
        q = QuantizerSpec.for_step(delta, 0.5)
        t = quantize(s, q)
        assert abs(t / delta - round(t / delta)) < 1e-9
        if abs(s) <= (q.k_max + 0.5) * delta:
            assert abs(s - t) <= delta / 2 + 1e-12
        assert abs(t) <= q.k_max * delta + 1e-12

    def test_cell_masses_partition_unity(self):
        q = QuantizerSpec.for_step(0.7, 0.9)
        m = cell_masses(q)
        assert m.sum() == pytest.approx(1.0, abs=1e-14)
        assert np.all(m > 0)

    def test_neighbour_radius_covers_samples(self):
        rho = 0.9
        q = QuantizerSpec.for_step(0.8, rho)
        rng = np.random.default_rng(3)
        s1, s2 = sample_source_pairs(SourceModel(rho), rng, 200_000)
        gap = np.abs(quantize_index(s1, q) - quantize_index(s2, q))
        # M is a 3-sigma radius; violations must be rare
        assert np.mean(gap > q.m) < 3e-3

    def test_neighbour_radius_grows_with_innovation(self):
        assert max_quantizer_distance(0.5, 1.0, 6) > max_quantizer_distance(0.95, 1.0, 6)


class TestMoments:
    @pytest.mark.parametrize("delta", [0.3, 0.5, 1.0, 2.0, 3.0, 7.0])
    def test_against_adaptive_quadrature(self, delta):
        q = QuantizerSpec.for_step(delta, 0.9)
        got = quantizer_moments(q)
        e_ts, e_tt = moments_by_quad(q)
        assert got.e_t_s == pytest.approx(e_ts, abs=1e-12)
        assert got.e_t_sq == pytest.approx(e_tt, abs=1e-12)

    def test_identities(self):
        m = quantizer_moments(QuantizerSpec.for_step(1.3, 0.9))
        assert m.sigma_r_sq == pytest.approx(1 - 2 * m.e_t_s + m.e_t_sq)
        assert m.e_r_t == pytest.approx(m.e_t_s - m.e_t_sq)
        assert m.sigma_r_sq > 0

    def test_single_level_is_zero(self):
        m = quantizer_moments(QuantizerSpec.for_step(100.0, 0.9))
        assert (m.e_t_s, m.e_t_sq, m.sigma_r_sq) == (0.0, 0.0, 1.0)

    def test_fine_limit(self):
        m = quantizer_moments(QuantizerSpec.for_step(0.01, 0.9))
        assert abs(m.e_t_s - 1) < 1e-3 and abs(m.e_t_sq - 1) < 1e-3


class TestSampling:
    def test_pair_statistics(self):
        rng = np.random.default_rng(11)
        s1, s2 = sample_source_pairs(SourceModel(0.7), rng, 400_000)
        assert np.var(s2) == pytest.approx(1.0, abs=0.01)
        assert np.corrcoef(s1, s2)[0, 1] == pytest.approx(0.7, abs=0.005)

    def test_channel_output_injected_noise(self):
        y = channel_output(1.0, 2.0, 0.5, 1.0, noise=0.25)
        assert y == pytest.approx(2.25)

    def test_channel_output_needs_noise_source(self):
        with pytest.raises(ValueError):
            channel_output(1.0, 2.0, 0.5, 1.0)

    def test_channel_noise_variance(self):
        rng = np.random.default_rng(5)
        y = channel_output(np.zeros(200_000), np.zeros(200_000), 1.0, 0.04, rng=rng)
        assert np.var(y) == pytest.approx(0.04, rel=0.02)
        assert math.isclose(np.mean(y), 0.0, abs_tol=2e-3)
