import math

import mpmath
import numpy as np
import pytest
from scipy import integrate
from scipy.stats import multivariate_normal, norm

from zdjscc.numerics import (
    SATURATION,
    bivariate_normal_cdf,
    bivariate_normal_pdf,
    cell_window_integral,
    clip_cell,
    gauss_legendre,
    integrate_cell_2d,
    log_normal_cdf_diff,
    normal_cdf,
    normal_pdf,
)


def bvn_by_quad(h, k, r):
    """Oracle: 1-D adaptive integral of phi(x) Phi((k - r x) / sqrt(1 - r^2))."""
    s = math.sqrt(1 - r * r)
    return integrate.quad(lambda x: norm.pdf(x) * norm.cdf((k - r * x) / s),
                          -40, h, epsabs=1e-15, epsrel=1e-13, limit=400)[0]


class TestUnivariate:
    @pytest.mark.parametrize("x", [-30.0, -8.0, -1.0, 0.0, 0.3, 5.0])
    def test_cdf_pdf_match_mpmath(self, x):
        with mpmath.workdps(40):
            cdf = float(mpmath.ncdf(x))
            pdf = float(mpmath.npdf(x))
        assert normal_cdf(x) == pytest.approx(cdf, rel=1e-12, abs=1e-300)
        assert normal_pdf(x) == pytest.approx(pdf, rel=1e-12, abs=1e-300)

    @pytest.mark.parametrize("a,b", [(-1.0, 1.0), (10.0, 11.0), (-12.0, -11.5), (3.0, 3.0001)])
    def test_log_cdf_diff(self, a, b):
        want = math.log(norm.sf(a) - norm.sf(b)) if a > 0 else math.log(norm.cdf(b) - norm.cdf(a))
        assert log_normal_cdf_diff(a, b) == pytest.approx(want, rel=1e-10)

    def test_log_cdf_diff_empty_interval(self):
        assert log_normal_cdf_diff(1.0, 1.0) == -np.inf


class TestBivariate:
    def test_pdf_matches_scipy(self):
        mv = multivariate_normal([0, 0], [[1, 0.8], [0.8, 1]])
        assert bivariate_normal_pdf(0.3, -0.4, 0.8) == pytest.approx(mv.pdf([0.3, -0.4]))

    @pytest.mark.parametrize("r", [-0.99, -0.6, 0.0, 0.3, 0.9, 0.95, 0.999])
    @pytest.mark.parametrize("h,k", [(0.0, 0.0), (-1.2, 0.7), (2.0, 1.5), (-3.0, -2.5),
                                     (4.0, -0.5)])
    def test_cdf_against_quadrature(self, h, k, r):
        assert bivariate_normal_cdf(h, k, r) == pytest.approx(bvn_by_quad(h, k, r), abs=2e-14)

    def test_known_values(self):
        assert bivariate_normal_cdf(0.0, 0.0, 0.0) == pytest.approx(0.25, abs=1e-15)
        # orthant identity: 1/4 + asin(r) / (2 pi)
        r = 0.5
        assert bivariate_normal_cdf(0.0, 0.0, r) == pytest.approx(
            0.25 + math.asin(r) / (2 * math.pi), abs=1e-15)

    def test_saturation_limits(self):
        big = SATURATION + 1
        assert bivariate_normal_cdf(big, 0.4, 0.7) == pytest.approx(norm.cdf(0.4), abs=1e-15)
        assert bivariate_normal_cdf(-big, 0.4, 0.7) == 0.0

    def test_vectorized_shape_and_error(self):
        out = bivariate_normal_cdf(np.zeros((2, 3)), 0.5, 0.2)
        assert out.shape == (2, 3)
        with pytest.raises(ValueError):
            bivariate_normal_cdf(0.0, 0.0, 1.0)


class TestQuadrature:
    @pytest.mark.parametrize("order", [1, 5, 24])
    def test_exact_for_polynomials(self, order):
        rule = gauss_legendre(order)
        x, w = rule.scaled(-0.5, 2.0)
        deg = 2 * order - 1
        assert np.sum(w * x ** deg) == pytest.approx((2.0 ** (deg + 1) - (-0.5) ** (deg + 1))
                                                    / (deg + 1), rel=1e-12)

    def test_rejects_bad_order(self):
        with pytest.raises(ValueError):
            gauss_legendre(0)

    def test_cell_2d_bivariate_mass(self):
        rho = 0.9
        got = integrate_cell_2d(lambda a, b: bivariate_normal_pdf(a, b, rho),
                                (-0.5, 0.5), (0.0, 1.0), gauss_legendre(32))
        want = (bivariate_normal_cdf(0.5, 1.0, rho) - bivariate_normal_cdf(-0.5, 1.0, rho)
                - bivariate_normal_cdf(0.5, 0.0, rho) + bivariate_normal_cdf(-0.5, 0.0, rho))
        assert got == pytest.approx(want, abs=1e-12)

    def test_cell_2d_rejects_infinite(self):
        with pytest.raises(ValueError):
            integrate_cell_2d(lambda a, b: a, (-np.inf, 0.0), (0.0, 1.0))

    def test_clip_cell(self):
        assert clip_cell(-np.inf, 1.0) == (-9.0, 1.0)


class TestWindowIntegral:
    def test_wide_window_gives_cell_mass(self):
        rho, cell = 0.8, ((0.0, 1.0), (-1.0, 2.0))
        full = cell_window_integral(0, *cell, 0.0, (lambda a, b: -1e3 + 0 * a,
                                                    lambda a, b: 1e3 + 0 * a),
                                    rho, 0.1, gauss_legendre(40))
        mass = integrate_cell_2d(lambda a, b: bivariate_normal_pdf(a, b, rho), *cell,
                                 gauss_legendre(40))
        assert full == pytest.approx(mass, rel=1e-12)

    def test_window_partition(self):
        """Splitting the noise axis at any boundary conserves the total."""
        rho, cell = 0.5, ((-0.5, 0.5), (0.0, 1.0))
        split = lambda a, b: 0.3 * a - 0.2 * b
        lo = cell_window_integral(1, *cell, 0.0, (lambda a, b: -1e3 + 0 * a, split), rho, 0.2)
        hi = cell_window_integral(1, *cell, 0.0, (split, lambda a, b: 1e3 + 0 * a), rho, 0.2)
        both = cell_window_integral(1, *cell, 0.0, (lambda a, b: -1e3 + 0 * a,
                                                    lambda a, b: 1e3 + 0 * a), rho, 0.2)
        assert lo + hi == pytest.approx(both, abs=1e-14)

    def test_against_dblquad(self):
        # lb < ub on the whole cell: the tensor rule is only exact for smooth slabs
        rho, sw2 = 0.9, 0.05
        lb = lambda a, b: -0.2 + 0.4 * a
        ub = lambda a, b: 0.7 - 0.1 * b
        got = cell_window_integral(0, (0.5, 1.5), (0.0, 2.0), 1.0, (lb, ub), rho, sw2,
                                   gauss_legendre(48))
        sd = math.sqrt(sw2)

        def f(b, a):
            m = max(norm.cdf(ub(a, b) / sd) - norm.cdf(lb(a, b) / sd), 0.0)
            return m * bivariate_normal_pdf(a, b, rho)

        want = integrate.dblquad(f, 0.5, 1.5, 0.0, 2.0, epsabs=1e-13)[0]
        assert got == pytest.approx(want, abs=1e-9)

    def test_argument_validation(self):
        w = (lambda a, b: a, lambda a, b: a)
        with pytest.raises(ValueError):
            cell_window_integral(2, (0, 1), (0, 1), 0.0, w, 0.5, 1.0)
        with pytest.raises(ValueError):
            cell_window_integral(0, (0, 1), (0, 1), 0.0, w, 0.5, 0.0)
