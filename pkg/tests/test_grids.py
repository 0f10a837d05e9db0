import math

import numpy as np
import pytest
import torch
from scipy.stats import multivariate_normal

from core.errors import DimensionMismatchError, InvalidGridError
from core.grids import AxisGrid, GridGP, eval_batch, eval_on_product_grid, log_prior
from core.kernels import KernelSpec
from core.tensor_kron import DTYPE, kron_dense


def _gp(sizes, values=None, lengthscale=0.5, jitter=1e-6, family="SquaredExponential"):
    axes = tuple(AxisGrid.uniform(0.0, 1.0, m) for m in sizes)
    kernels = tuple(KernelSpec.create(family, lengthscale, 1.0) for _ in sizes)
    shape = tuple(sizes) if len(sizes) == 3 else (1,) + tuple(sizes)
    if values is None:
        values = torch.as_tensor(np.random.default_rng(1).standard_normal(shape), dtype=DTYPE)
    return GridGP(axes=axes, kernels=kernels, values=values, jitter=jitter)


class TestAxisGrid:
    def test_needs_two_points(self):
        with pytest.raises(InvalidGridError):
            AxisGrid.uniform(0.0, 1.0, 1)

    def test_points_must_increase(self):
        with pytest.raises(InvalidGridError):
            AxisGrid(torch.tensor([0.0, 0.5, 0.4], dtype=DTYPE), (0.0, 1.0))

    def test_points_inside_range(self):
        with pytest.raises(InvalidGridError):
            AxisGrid(torch.tensor([0.0, 1.5], dtype=DTYPE), (0.0, 1.0))


class TestLogPrior:
    def test_zero_values(self):
        gp = _gp((3, 2, 2), values=torch.zeros((3, 2, 2), dtype=DTYPE))
        ops = gp.build_operators()
        m = 12
        expected = -0.5 * sum((m / op.size) * float(torch.logdet(op.gram)) for op in ops) - 0.5 * m * math.log(2 * math.pi)
        assert float(log_prior(gp, ops)) == pytest.approx(expected, rel=1e-10)

    def test_identity_gram_limit(self):
        # tiny lengthscale: off-diagonal terms vanish and the Grams are ≈ identity
        values = torch.as_tensor(np.random.default_rng(4).standard_normal((2, 3, 2)), dtype=DTYPE)
        gp = _gp((2, 3, 2), values=values, lengthscale=1e-3, jitter=1e-12)
        expected = -0.5 * float((values**2).sum()) - 0.5 * 12 * math.log(2 * math.pi)
        assert float(log_prior(gp)) == pytest.approx(expected, rel=1e-9)

    def test_matches_dense_mvn(self):
        gp = _gp((3, 2, 2))
        ops = gp.build_operators()
        cov = kron_dense([op.gram for op in ops]).numpy()
        ref = multivariate_normal(mean=np.zeros(12), cov=cov).logpdf(gp.values.reshape(-1).numpy())
        assert float(log_prior(gp, ops)) == pytest.approx(ref, rel=1e-9)

    def test_two_axis_gp_matches_dense_mvn(self):
        gp = _gp((3, 4))
        ops = gp.build_operators()
        cov = kron_dense([op.gram for op in ops]).numpy()
        ref = multivariate_normal(mean=np.zeros(12), cov=cov).logpdf(gp.values.reshape(-1).numpy())
        assert float(log_prior(gp, ops)) == pytest.approx(ref, rel=1e-9)


class TestEval:
    def test_node_query_returns_stored_value(self):
        gp = _gp((3, 3, 3), lengthscale=0.4, jitter=1e-10)
        axes = [a.points for a in gp.axes]
        point = torch.tensor([[axes[0][1], axes[1][2], axes[2][0]]], dtype=DTYPE)
        assert float(eval_batch(gp, point)[0]) == pytest.approx(float(gp.values[1, 2, 0]), abs=1e-4)

    def test_constant_values_interpolate_to_constant(self):
        gp = _gp((9, 9, 9), values=torch.full((9, 9, 9), 2.0, dtype=DTYPE), lengthscale=0.3)
        queries = torch.as_tensor(np.random.default_rng(2).uniform(0.2, 0.8, size=(20, 3)), dtype=DTYPE)
        assert torch.allclose(eval_batch(gp, queries), torch.full((20,), 2.0, dtype=DTYPE), atol=1e-2)

    def test_zero_values(self):
        gp = _gp((3, 3, 3), values=torch.zeros((3, 3, 3), dtype=DTYPE))
        assert not eval_batch(gp, torch.rand((5, 3), dtype=DTYPE)).any()

    def test_product_grid_on_axes_returns_values(self):
        gp = _gp((3, 3, 3), lengthscale=0.4, jitter=1e-10)
        out = eval_on_product_grid(gp, [a.points for a in gp.axes])
        assert torch.allclose(out, gp.values, atol=1e-4)

    def test_single_query_consistency(self):
        gp = _gp((3, 3, 3))
        q = [torch.tensor([0.3], dtype=DTYPE), torch.tensor([0.6], dtype=DTYPE), torch.tensor([0.1], dtype=DTYPE)]
        out = eval_on_product_grid(gp, q)
        assert out.shape == (1, 1, 1)
        assert float(out[0, 0, 0]) == pytest.approx(float(eval_batch(gp, torch.tensor([[0.3, 0.6, 0.1]], dtype=DTYPE))[0]), abs=1e-12)

    def test_product_grid_matches_pointwise(self):
        gp = _gp((3, 3, 3))
        qs = [torch.linspace(-0.1, 1.1, 4, dtype=DTYPE) for _ in range(3)]
        grid = eval_on_product_grid(gp, qs)
        mesh = torch.stack(torch.meshgrid(*qs, indexing="ij"), dim=-1).reshape(-1, 3)
        assert torch.allclose(grid.reshape(-1), eval_batch(gp, mesh), atol=1e-10)

    def test_two_axis_product_grid_shape(self):
        gp = _gp((3, 4))
        out = eval_on_product_grid(gp, [torch.rand(5, dtype=DTYPE), torch.rand(2, dtype=DTYPE)])
        assert out.shape == (1, 5, 2)

    def test_wrong_query_width_rejected(self):
        with pytest.raises(DimensionMismatchError):
            eval_batch(_gp((3, 3, 3)), torch.zeros((2, 2), dtype=DTYPE))

    def test_values_shape_checked(self):
        with pytest.raises(DimensionMismatchError):
            _gp((3, 3, 3), values=torch.zeros((3, 3, 2), dtype=DTYPE))
