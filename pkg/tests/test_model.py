import dataclasses
import math

import numpy as np
import pytest
import torch

from core.errors import DomainError, HistoryOrderError
from core.events import Domain, EventSequence
from core.grids import eval_batch
from core.model import (
    KstppModel,
    homogeneous_background_value,
    influence_slice,
    intensity,
    intensity_on_quad_grid,
    log_joint,
    log_likelihood,
    softplus,
)
from core.grids import log_prior
from core.quadrature import gauss_legendre, spatial_weights
from core.tensor_kron import DTYPE
from tests.conftest import constant_model, small_model


def _background_mass(model: KstppModel) -> float:
    """∬ σ(g) over 𝒮 on the model's spatial rule"""
    rx = gauss_legendre(model.quad_orders[1], *model.domain.x_range)
    ry = gauss_legendre(model.quad_orders[2], *model.domain.y_range)
    ops = model.operators()
    g = model.background_on_grid(rx.nodes, ry.nodes, ops)
    return float((spatial_weights(rx, ry) * softplus(g, model.link_beta)).sum())


class TestSoftplus:
    def test_at_zero(self):
        assert float(softplus(0.0)) == pytest.approx(math.log(2.0), abs=1e-15)

    def test_saturates(self):
        assert float(softplus(50.0)) == pytest.approx(50.0, abs=1e-12)

    @pytest.mark.parametrize("z, beta", [(25.0, 1.0), (12.0, 2.0), (24.0, 0.9)])
    def test_keeps_tail_above_linear_regime(self, z, beta):
        tail = float(softplus(z, beta)) - z
        assert tail > 0.0
        assert tail == pytest.approx(math.log1p(math.exp(-beta * z)) / beta, rel=1e-3)

    def test_gradient_is_logistic(self):
        z = torch.tensor([-3.0, 0.0, 2.5, 40.0], dtype=DTYPE, requires_grad=True)
        (grad,) = torch.autograd.grad(softplus(z, 2.0).sum(), z)
        assert torch.allclose(grad, torch.sigmoid(2.0 * z.detach()), rtol=1e-12, atol=0.0)

    def test_small_but_positive(self):
        value = float(softplus(-50.0))
        assert 0.0 < value < 1e-21
        assert value == pytest.approx(math.exp(-50.0), rel=1e-10)

    def test_inverse_for_homogeneous_rates(self):
        for rate in (1e-3, 0.5, 2.0, 40.0):
            assert float(softplus(homogeneous_background_value(rate))) == pytest.approx(rate, rel=1e-12)


class TestIntensity:
    def test_empty_history_is_background(self, model):
        g = eval_batch(model.background, torch.tensor([[0.4, 1.3]], dtype=DTYPE))[0]
        assert float(intensity(model, 1.0, 0.4, 1.3, EventSequence.empty())) == pytest.approx(float(softplus(g)), rel=1e-12)

    def test_zero_influence_ignores_history(self, domain, toy_sequence):
        m = small_model(domain)
        m = dataclasses.replace(m, influence=dataclasses.replace(m.influence, values=torch.zeros_like(m.influence.values)))
        with_history = float(intensity(m, 4.0, 1.0, 1.0, toy_sequence))
        without = float(intensity(m, 4.0, 1.0, 1.0, EventSequence.empty()))
        assert with_history == pytest.approx(without, rel=1e-14)

    def test_single_event_matches_composition(self, model):
        history = EventSequence(np.array([0.8]), np.array([0.6]), np.array([1.4]))
        t, x, y = 1.7, 1.1, 0.9
        g = eval_batch(model.background, torch.tensor([[x, y]], dtype=DTYPE))[0]
        f = eval_batch(model.influence, torch.tensor([[t - 0.8, x - 0.6, y - 1.4]], dtype=DTYPE))[0]
        expected = float(softplus(g + f))
        assert float(intensity(model, t, x, y, history)) == pytest.approx(expected, rel=1e-12)

    def test_future_history_rejected(self, model, toy_sequence):
        with pytest.raises(HistoryOrderError):
            intensity(model, 1.0, 0.5, 0.5, toy_sequence)

    def test_grid_masks_events_after_each_time(self, model, toy_sequence):
        ts = torch.tensor([1.0, 2.0, 4.0], dtype=DTYPE)
        xs = torch.tensor([0.3, 1.7], dtype=DTYPE)
        ys = torch.tensor([0.9], dtype=DTYPE)
        grid = model.intensity_grid(ts, xs, ys, toy_sequence)
        for i, t in enumerate(ts.tolist()):
            for j, x in enumerate(xs.tolist()):
                ref = float(intensity(model, t, x, 0.9, toy_sequence.before(t)))
                assert float(grid[i, j, 0]) == pytest.approx(ref, rel=1e-12)

    def test_points_match_grid(self, model, toy_sequence):
        ts = torch.tensor([0.5, 1.65, 3.9], dtype=DTYPE)
        xs = torch.tensor([0.2, 1.0, 1.9], dtype=DTYPE)
        ys = torch.tensor([1.1, 0.3, 1.7], dtype=DTYPE)
        points = model.intensity_points(ts, xs, ys, toy_sequence)
        for k in range(3):
            ref = float(intensity(model, float(ts[k]), float(xs[k]), float(ys[k]), toy_sequence.before(float(ts[k]))))
            assert float(points[k]) == pytest.approx(ref, rel=1e-12)

    def test_horizon_drops_old_events(self, domain, toy_sequence):
        m = small_model(domain, horizon=1.0)
        far = float(intensity(m, 4.5, 1.0, 1.0, toy_sequence))
        assert far == pytest.approx(float(intensity(m, 4.5, 1.0, 1.0, EventSequence.empty())), rel=1e-14)


class TestQuadGrid:
    def test_empty_history_broadcasts_background(self, model):
        lam, rule = intensity_on_quad_grid(model, (0.0, 2.0), EventSequence.empty())
        assert lam.shape == rule.shape
        assert torch.allclose(lam, lam[0:1].expand_as(lam))

    def test_pointwise_with_one_event(self, domain):
        m = small_model(domain, quad_orders=(2, 2, 2))
        history = EventSequence(np.array([1.0]), np.array([0.7]), np.array([1.2]))
        lam, rule = intensity_on_quad_grid(m, (1.0, 3.0), history)
        assert lam.shape == (2, 2, 2)
        for i, t in enumerate(rule.rules[0].nodes.tolist()):
            for j, x in enumerate(rule.rules[1].nodes.tolist()):
                for k, y in enumerate(rule.rules[2].nodes.tolist()):
                    assert float(lam[i, j, k]) == pytest.approx(float(intensity(m, t, x, y, history)), rel=1e-12)

    def test_constant_background(self, domain):
        m = constant_model(domain, 0.0, background_sizes=(2, 2))
        lam, _ = intensity_on_quad_grid(m, (0.0, 1.0), EventSequence.empty())
        assert torch.allclose(lam, torch.full_like(lam, math.log(2.0)), atol=1e-12)

    def test_degenerate_interval(self, model):
        lam, rule = intensity_on_quad_grid(model, (1.0, 1.0), EventSequence.empty())
        assert lam.shape[0] == 0

    def test_history_past_interval_rejected(self, model, toy_sequence):
        with pytest.raises(HistoryOrderError):
            intensity_on_quad_grid(model, (1.0, 2.0), toy_sequence)

    def test_interval_outside_window_rejected(self, model):
        with pytest.raises(DomainError):
            intensity_on_quad_grid(model, (4.0, 6.0), EventSequence.empty())


class TestLogLikelihood:
    def test_empty_sequence_is_minus_compensator(self, model, domain):
        ll = float(log_likelihood(model, EventSequence.empty()))
        assert ll == pytest.approx(-domain.t_max * _background_mass(model), rel=1e-12)

    def test_homogeneous_constant(self, domain):
        m = constant_model(domain, 0.0)
        ll = float(log_likelihood(m, EventSequence.empty()))
        assert ll == pytest.approx(-math.log(2.0) * domain.t_max * domain.area, rel=1e-6)

    def test_one_event_zero_influence(self, domain):
        m = small_model(domain)
        m = dataclasses.replace(m, influence=dataclasses.replace(m.influence, values=torch.zeros_like(m.influence.values)))
        seq = EventSequence(np.array([2.0]), np.array([1.0]), np.array([1.0]))
        expected = math.log(float(intensity(m, 2.0, 1.0, 1.0, EventSequence.empty()))) - domain.t_max * _background_mass(m)
        assert float(log_likelihood(m, seq)) == pytest.approx(expected, rel=1e-10)

    def test_out_of_domain_sequence_rejected(self, model):
        seq = EventSequence(np.array([1.0]), np.array([3.0]), np.array([1.0]))
        with pytest.raises(DomainError):
            log_likelihood(model, seq)

    def test_underflow_is_clamped_and_counted(self, domain):
        m = constant_model(domain, -800.0)
        seq = EventSequence(np.array([1.0]), np.array([1.0]), np.array([1.0]))
        ll = float(log_likelihood(m, seq))
        assert math.isfinite(ll)
        assert ll == pytest.approx(math.log(1e-300), rel=1e-6)
        assert m.underflow_count == 1

    def test_converges_in_quadrature_order(self, domain, toy_sequence):
        base = small_model(domain, quad_orders=(24, 24, 24))
        coarse = dataclasses.replace(base, quad_orders=(12, 12, 12))
        assert float(log_likelihood(coarse, toy_sequence)) == pytest.approx(float(log_likelihood(base, toy_sequence)), rel=1e-6)


class TestLogJoint:
    def test_empty_batch_is_prior(self, model):
        prior = float(log_prior(model.background) + log_prior(model.influence))
        assert float(log_joint(model, [])) == pytest.approx(prior, rel=1e-12)

    def test_additivity(self, model, toy_sequence):
        single = float(log_joint(model, [toy_sequence]))
        double = float(log_joint(model, [toy_sequence, toy_sequence]))
        prior = float(log_joint(model, []))
        assert double - prior == pytest.approx(2 * (single - prior), rel=1e-12)

    def test_batch_rescaling(self, model, toy_sequence):
        prior = float(log_joint(model, []))
        scaled = float(log_joint(model, [toy_sequence], dataset_size=10))
        assert scaled - prior == pytest.approx(10 * float(log_likelihood(model, toy_sequence)), rel=1e-12)

    def test_parallel_matches_serial(self, model, toy_sequence):
        batch = [toy_sequence, toy_sequence.prefix(2), EventSequence.empty()]
        assert float(log_joint(model, batch, parallel=True)) == pytest.approx(float(log_joint(model, batch)), rel=1e-14)


class TestPayload:
    def test_round_trip(self, model, toy_sequence, domain):
        again = KstppModel.from_payload(model.to_payload(), domain)
        assert float(log_likelihood(again, toy_sequence)) == float(log_likelihood(model, toy_sequence))

    def test_influence_slice_shape(self, model):
        xs = torch.linspace(-1.0, 1.0, 5, dtype=DTYPE)
        assert influence_slice(model, 0.5, xs, xs[:3]).shape == (5, 3)


def test_matern_families_supported(domain, toy_sequence):
    m = small_model(domain, families=("Matern52",) * 3)
    assert math.isfinite(float(log_likelihood(m, toy_sequence)))
