import math

import numpy as np
import pytest
import torch

from core.errors import NonFiniteIntegrandError, QuadratureError
from core.quadrature import (
    gauss_legendre,
    grid_cell_centers,
    improper_order_check,
    inner_order,
    integrate_box,
    integrate_improper,
    product_rule,
)


class TestGaussLegendre:
    def test_two_point_rule(self):
        rule = gauss_legendre(2, -1.0, 1.0)
        assert np.allclose(rule.nodes.numpy(), [-1 / math.sqrt(3), 1 / math.sqrt(3)], atol=1e-15)
        assert np.allclose(rule.weights.numpy(), [1.0, 1.0], atol=1e-15)

    def test_three_point_rule(self):
        rule = gauss_legendre(3, -1.0, 1.0)
        r = math.sqrt(3 / 5)
        assert np.allclose(rule.nodes.numpy(), [-r, 0.0, r], atol=1e-15)
        assert np.allclose(rule.weights.numpy(), [5 / 9, 8 / 9, 5 / 9], atol=1e-15)

    def test_affine_map(self):
        rule = gauss_legendre(2, 0.0, 2.0)
        assert np.allclose(rule.nodes.numpy(), [1 - 1 / math.sqrt(3), 1 + 1 / math.sqrt(3)], atol=1e-15)
        assert np.allclose(rule.weights.numpy(), [1.0, 1.0], atol=1e-15)

    @pytest.mark.parametrize("n", range(1, 17))
    def test_monomial_exactness(self, n):
        rule = gauss_legendre(n, 0.0, 1.0)
        for degree in range(2 * n):
            value = float((rule.weights * rule.nodes**degree).sum())
            assert value == pytest.approx(1.0 / (degree + 1), abs=1e-12)

    def test_matches_numpy_leggauss(self):
        x, w = np.polynomial.legendre.leggauss(20)
        rule = gauss_legendre(20, -1.0, 1.0)
        assert np.allclose(rule.nodes.numpy(), x, atol=1e-14)
        assert np.allclose(rule.weights.numpy(), w, atol=1e-14)

    @pytest.mark.parametrize("a,b", [(1.0, 1.0), (2.0, 1.0)])
    def test_empty_or_reversed_interval_rejected(self, a, b):
        with pytest.raises(QuadratureError):
            gauss_legendre(4, a, b)


class TestProductRule:
    def test_constant(self):
        rule = product_rule((3, 3, 3), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0))
        assert float(integrate_box(lambda t, x, y: torch.ones_like(t), rule)) == pytest.approx(1.0, abs=1e-15)

    def test_cubic_exact_with_two_nodes(self):
        rule = product_rule((2, 2, 2), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0))
        value = float(integrate_box(lambda t, x, y: t**3 * x**3 * y**3, rule))
        assert value == pytest.approx(1 / 64, abs=1e-15)

    def test_exponential(self):
        rule = product_rule((12, 12, 12), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0))
        value = float(integrate_box(lambda t, x, y: torch.exp(-t - x - y), rule))
        assert value == pytest.approx((1 - math.exp(-1)) ** 3, abs=1e-12)

    def test_degenerate_time_interval_has_zero_measure(self):
        rule = product_rule((4, 4, 4), (1.5, 1.5), (0.0, 1.0), (0.0, 1.0))
        assert rule.shape == (0, 4, 4)
        assert float(integrate_box(lambda t, x, y: torch.ones_like(t), rule)) == 0.0

    def test_non_finite_value_reports_node(self):
        rule = product_rule((2, 2, 2), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0))
        with pytest.raises(NonFiniteIntegrandError) as info:
            integrate_box(lambda t, x, y: torch.where(t > 0.5, torch.full_like(t, float("nan")), t), rule)
        assert info.value.node[0] > 0.5


class TestImproper:
    def test_exponential(self):
        assert float(integrate_improper(lambda tau: torch.exp(-tau), 32)) == pytest.approx(1.0, abs=1e-6)

    def test_faster_exponential(self):
        assert float(integrate_improper(lambda tau: torch.exp(-2 * tau), 32)) == pytest.approx(0.5, abs=1e-6)

    def test_gaussian_moment(self):
        assert float(integrate_improper(lambda tau: tau * torch.exp(-(tau**2)), 48)) == pytest.approx(0.5, abs=1e-5)

    def test_non_finite_reports_u(self):
        with pytest.raises(NonFiniteIntegrandError) as info:
            integrate_improper(lambda tau: torch.where(tau > 1.0, torch.full_like(tau, float("inf")), tau), 8)
        assert 0.5 < info.value.node[0] < 1.0

    def test_order_check(self):
        assert improper_order_check(None) == 32
        with pytest.raises(QuadratureError):
            improper_order_check(0)


def test_inner_order_grows_with_horizon():
    assert inner_order(12, 0.5) == 12
    assert inner_order(12, 3.0) == 16
    assert inner_order(12, 1000.0) == 80


def test_cell_centers():
    assert np.allclose(grid_cell_centers(0.0, 2.0, 4).numpy(), [0.25, 0.75, 1.25, 1.75])
