import math

import numpy as np
import pytest

from zdjscc.analytic import (
    BIG,
    COMPONENT_NAMES,
    CORRECTION_NAMES,
    analytic_distortion,
    build_distance_set,
    cell_probabilities,
    distortion_polynomials,
    joint_pmf,
    moment_tables,
    neighbor_distances,
    scheme_b_report,
    user_distortion,
)
from zdjscc.codec import (
    EncoderParams,
    build_constellation,
    decode_pseudo_ml_indices,
    encode,
    reconstruct_scheme_b,
    solve_beta_for_power,
)
from zdjscc.core import ChannelModel, QuantizerSpec, quantize_index, quantizer_moments
from zdjscc.numerics import cell_window_integral, gauss_legendre

from oracles import exact_cell_prob

RHO = 0.9


def design(delta=1.75, gain=0.52, c=2.0, csnr=20.0):
    q = QuantizerSpec.for_step(delta, RHO)
    beta = solve_beta_for_power(1.0, gain, quantizer_moments(q))
    return q, EncoderParams.symmetric(gain, beta), ChannelModel.symmetric(c, 1.0, csnr)


def sample_scheme_b(q, params, ch, n, seed, gamma=None):
    rng = np.random.default_rng(seed)
    s1 = rng.standard_normal(n)
    s2 = RHO * s1 + math.sqrt(1 - RHO ** 2) * rng.standard_normal(n)
    w = ch.sigma_w * rng.standard_normal(n)
    y = encode(s1, 1, params, q) + ch.gain_at(1) * encode(s2, 2, params, q) + w
    l, nn = decode_pseudo_ml_indices(y, build_constellation(1, params, ch, q))
    out = dict(s1=s1, s2=s2, w=w, y=y, k=quantize_index(s1, q), m=quantize_index(s2, q),
               l=l, n=nn)
    if gamma is not None:
        out["err"] = (s1 - reconstruct_scheme_b(y, l * q.delta, nn * q.delta, gamma, 1,
                                                params, ch, RHO)) ** 2
    return out


@pytest.fixture(scope="module")
def base():
    q, params, ch = design()
    return q, params, ch, joint_pmf(1, params, ch, q, RHO)


class TestDistanceSet:
    def test_generators_reproduce_distances(self):
        q, params, ch = design()
        tab = build_distance_set(1, params, ch, q)
        rebuilt = (params.alpha(1) * tab.generators[:, 0]
                   + ch.gain_at(1) * params.alpha(2) * tab.generators[:, 1]) * q.delta
        np.testing.assert_allclose(rebuilt, tab.distances, atol=1e-12)
        assert np.all(np.diff(tab.distances) > 0)
        assert np.all(np.abs(tab.distances) <= tab.bound)
        assert 0.0 in tab.distances

    def test_neighbours(self):
        q, params, ch = design()
        tab = build_distance_set(1, params, ch, q, bound=20.0)
        d = tab.distances
        assert len(d) > 5
        assert neighbor_distances(tab, d[3]) == (d[2], d[4])
        assert neighbor_distances(tab, d[0])[0] == -BIG
        assert neighbor_distances(tab, d[-1])[1] == BIG
        with pytest.raises(KeyError):
            neighbor_distances(tab, d[0] + 1e-3)

    def test_cell_restricted_subset(self):
        q, params, ch = design()
        full = set(np.round(build_distance_set(1, params, ch, q).distances, 9))
        part = build_distance_set(1, params, ch, q, cell=(q.k_max, q.k_max))
        assert set(np.round(part.distances, 9)) <= full
        # at the top cell the decoder can only move down
        assert np.all(part.generators[:, 0] <= 0)


class TestCellProbabilities:
    def test_against_quadrature(self):
        q = QuantizerSpec.for_step(1.2, RHO)
        probs = cell_probabilities(q.delta, q.k_max, RHO, 24)
        for k, m in [(0, 0), (1, 0), (-2, -3), (q.k_max, q.k_max), (-q.k_max, -q.k_max + 1)]:
            got = probs[k + q.k_max, m + q.k_max]
            assert got == pytest.approx(exact_cell_prob(q, k, m, RHO), abs=1e-13)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)


class TestJointPmf:
    def test_total_and_sign(self, base):
        pmf = base[3]
        assert pmf.total == pytest.approx(1.0, abs=1e-9)
        assert np.all(pmf.prob >= 0)

    def test_marginals_match_exact_cells(self, base):
        q, _, _, pmf = base
        for (k, m), p in pmf.cell_marginals().items():
            assert p == pytest.approx(exact_cell_prob(q, k, m, RHO), abs=1e-10)

    def test_decisions_are_constellation_pairs(self, base):
        q, params, ch, pmf = base
        pairs = {tuple(p) for p in build_constellation(1, params, ch, q).pairs}
        assert {(int(a), int(b)) for a, b in zip(pmf.l, pmf.n)} <= pairs

    def test_interior_entries_against_2d_oracle(self, base):
        q, params, ch, pmf = base
        const = build_constellation(1, params, ch, q)
        mids = const.midpoints
        index = {tuple(p): j for j, p in enumerate(const.pairs)}
        b_own, g = params.beta_1, ch.gain_at(1) * params.beta_2
        a_own, a_int = params.alpha(1), ch.gain_at(1) * params.alpha(2)
        heavy = np.argsort(pmf.prob)[::-1]
        checked = 0
        for e in heavy:
            k, m, l, n = (int(v) for v in (pmf.k[e], pmf.m[e], pmf.l[e], pmf.n[e]))
            j = index[(l, n)]
            if j == 0 or j == len(const.points) - 1:
                continue
            # only check entries that are not the cell's first or last decision
            same = (pmf.k == k) & (pmf.m == m)
            if pmf.l[same][0] == l and pmf.n[same][0] == n or \
                    pmf.l[same][-1] == l and pmf.n[same][-1] == n:
                continue
            c0 = (a_own * k + a_int * m) * q.delta
            lo_i, hi_i = (max(float(v), -9) if i == 0 else min(float(v), 9)
                          for i, v in enumerate(q.cell_edges(k)))
            lo_o, hi_o = (max(float(v), -9) if i == 0 else min(float(v), 9)
                          for i, v in enumerate(q.cell_edges(m)))
            mu = lambda a, b: b_own * (a - k * q.delta) + g * (b - m * q.delta)
            win = (lambda a, b: mids[j - 1] - c0 - mu(a, b),
                   lambda a, b: mids[j] - c0 - mu(a, b))
            rule = gauss_legendre(60)
            p0 = cell_window_integral(0, (lo_i, hi_i), (lo_o, hi_o), k * q.delta, win, RHO,
                                      ch.sigma_w_sq, rule)
            p1 = cell_window_integral(1, (lo_i, hi_i), (lo_o, hi_o), k * q.delta, win, RHO,
                                      ch.sigma_w_sq, rule)
            assert pmf.prob[e] == pytest.approx(p0, abs=1e-9)
            assert pmf.moment1[e] == pytest.approx(p1, abs=1e-9)
            checked += 1
            if checked == 6:
                break
        assert checked == 6

    def test_order_convergence(self):
        q, params, ch = design()
        lo = analytic_distortion(1, params, ch, q, RHO, gauss_legendre(16)).d
        hi = analytic_distortion(1, params, ch, q, RHO, gauss_legendre(32)).d
        assert abs(lo - hi) / hi < 1e-6

    def test_csv(self, base, tmp_path):
        pmf = base[3]
        path = tmp_path / "pmf.csv"
        pmf.to_csv(path)
        rows = path.read_text().splitlines()
        assert rows[0] == "k,m,l,n,prob,moment1"
        assert len(rows) == len(pmf) + 1
        assert float(rows[1].split(",")[4]) == pmf.prob[0]


class TestMomentsAgainstSampling:
    """Every pmf-derived moment is a mean over samples; check each at 4 s.e."""

    def test_bundle(self, base):
        q, params, ch, pmf = base
        mb = moment_tables(pmf, q)
        smp = sample_scheme_b(q, params, ch, 1_000_000, 21)
        d = q.delta
        e1 = (smp["k"] - smp["l"]) * d
        e2 = (smp["m"] - smp["n"]) * d
        r = smp["s1"] - smp["k"] * d
        innov = smp["s2"] - RHO * smp["s1"]
        checks = {
            "s11": e1 * e1, "s12": e1 * e2, "s22": e2 * e2,
            "e1_n": e1 * innov, "e2_n": e2 * innov, "e1_w": e1 * smp["w"],
            "e2_w": e2 * smp["w"], "e_r_tc": r * smp["m"] * d,
            "e_r_that": r * smp["l"] * d, "e_r_thatc": r * smp["n"] * d,
        }
        for name, x in checks.items():
            se = x.std() / math.sqrt(len(x))
            assert abs(getattr(mb, name) - x.mean()) <= 4 * se + 1e-12, name


class TestDistortion:
    def test_components_sum(self, base):
        q, params, ch, pmf = base
        ud = analytic_distortion(1, params, ch, q, RHO, pmf=pmf)
        assert set(ud.components) == set(COMPONENT_NAMES + CORRECTION_NAMES)
        assert sum(ud.components.values()) == pytest.approx(ud.d)

    def test_gamma_is_stationary_and_minimal(self, base):
        q, params, ch, pmf = base
        polys = distortion_polynomials(1, params, ch, RHO, moment_tables(pmf, q))
        best = user_distortion(polys)
        h = 1e-6 * max(1.0, abs(best.gamma))
        dp = user_distortion(polys, best.gamma + h).d
        dm = user_distortion(polys, best.gamma - h).d
        assert abs(dp - dm) / (2 * h) < 1e-6
        for f in (0.9, 1.1):
            assert user_distortion(polys, best.gamma * f).d >= best.d

    @pytest.mark.parametrize("gamma", [None, 0.0, 0.8])
    def test_matches_sampling(self, base, gamma):
        q, params, ch, pmf = base
        ud = analytic_distortion(1, params, ch, q, RHO, gamma=gamma, pmf=pmf)
        err = sample_scheme_b(q, params, ch, 1_000_000, 33, gamma=ud.gamma)["err"]
        se = err.std() / math.sqrt(len(err))
        assert abs(ud.d - err.mean()) <= 4 * se

    def test_six_term_sum_misses_noise_coupling(self, base):
        """Without the lambda-noise products the distortion is biased low here."""
        q, params, ch, pmf = base
        full = analytic_distortion(1, params, ch, q, RHO, pmf=pmf)
        six = analytic_distortion(1, params, ch, q, RHO, gamma=full.gamma, corrections=False,
                                  pmf=pmf)
        assert six.d < full.d

    def test_error_free_limit(self):
        """With negligible decoding error the three error-free terms are the
        linear estimate of R from the residual ``g R + c beta_o N + W``."""
        q = QuantizerSpec.for_step(1.75, RHO)
        params = EncoderParams.symmetric(1.0, 0.02)
        ch = ChannelModel.symmetric(2.3, 1.0, 80.0)
        mom = quantizer_moments(q)
        g = params.beta_1 + ch.gain_at(1) * params.beta_2 * RHO
        c_b = ch.gain_at(1) * params.beta_2
        var_y = g * g * mom.sigma_r_sq + c_b ** 2 * (1 - RHO ** 2) + ch.sigma_w_sq
        gamma = g * mom.sigma_r_sq / var_y
        direct = mom.sigma_r_sq - (g * mom.sigma_r_sq) ** 2 / var_y
        ud = analytic_distortion(1, params, ch, q, RHO, gamma=gamma)
        clean = ("quant_error", "interference_noise", "channel_noise")
        assert sum(ud.components[nm] for nm in clean) == pytest.approx(direct, rel=1e-12)
        # residual errors come from source pairs outside the neighbour radius
        rest = sum(abs(v) for nm, v in ud.components.items() if nm not in clean)
        assert rest < 1e-3

    def test_symmetric_report_and_asymmetric_users(self):
        q, params, ch = design()
        rep = scheme_b_report(params, ch, q, RHO)
        assert rep.d1 == rep.d2 and rep.d_avg == rep.d1
        assert rep.sdr_db == pytest.approx(-10 * math.log10(rep.d_avg))
        asym = scheme_b_report(params, ChannelModel(1.5, 2.5, ch.sigma_w_sq), q, RHO)
        assert asym.d1 != asym.d2
