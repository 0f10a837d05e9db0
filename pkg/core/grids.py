# -*- coding: utf-8 -*-
"""
KSTPP Toolkit - Grid GPs

A GridGP carries free function values on a Cartesian inducing grid with one
KernelOperator per axis. Off-grid values are the GP conditional mean
values ×₀ η₀ ×₁ η₁ ×₂ η₂, and the log prior never forms the full covariance.
Two-axis GPs (the background) keep a leading mode of size 1.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from core.errors import DimensionMismatchError, InvalidGridError
from core.kernels import DEFAULT_JITTER, KernelOperator, KernelSpec, build_operator, cross_weights
from core.tensor_kron import (
    DTYPE,
    CholeskyFactor,
    Tensor3,
    kron_quadratic_form,
    logdet,
    mode_product,
)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class AxisGrid:
    points: torch.Tensor
    axis_range: Tuple[float, float]

    def __post_init__(self) -> None:
        pts = self.points
        if pts.dim() != 1 or pts.shape[0] < 2:
            raise InvalidGridError(f"an axis grid needs at least 2 points, got shape {tuple(pts.shape)}")
        if not bool((pts[1:] > pts[:-1]).all()):
            raise InvalidGridError("axis grid points must be strictly increasing")
        lo, hi = self.axis_range
        if float(pts[0]) < lo - 1e-12 or float(pts[-1]) > hi + 1e-12:
            raise InvalidGridError(f"axis grid points leave the range [{lo}, {hi}]")

    @classmethod
    def uniform(cls, lo: float, hi: float, size: int) -> "AxisGrid":
        if not lo < hi:
            raise InvalidGridError(f"axis range must satisfy lo < hi, got [{lo}, {hi}]")
        return cls(torch.as_tensor(np.linspace(lo, hi, int(size)), dtype=DTYPE), (float(lo), float(hi)))

    @property
    def size(self) -> int:
        return self.points.shape[0]


@dataclass
class GridGP:
    """
    GP represented by inducing values on a product grid

    ``values`` has shape (m₀, m₁, m₂) for three axes and (1, m₁, m₂) for two.
    """

    axes: Tuple[AxisGrid, ...]
    kernels: Tuple[KernelSpec, ...]
    values: Tensor3
    jitter: float = DEFAULT_JITTER
    name: str = "gp"

    def __post_init__(self) -> None:
        if len(self.axes) not in (2, 3) or len(self.kernels) != len(self.axes):
            raise DimensionMismatchError("a GridGP needs 2 or 3 axes with one kernel each")
        expected = self.value_shape
        if tuple(self.values.shape) != expected:
            raise DimensionMismatchError(f"values shape {tuple(self.values.shape)} does not match grid {expected}")

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def value_shape(self) -> Tuple[int, int, int]:
        sizes = [a.size for a in self.axes]
        if len(sizes) == 2:
            sizes = [1] + sizes
        return tuple(sizes)  # type: ignore[return-value]

    @property
    def num_values(self) -> int:
        return int(np.prod(self.value_shape))

    def build_operators(self, detach_factor: bool = False) -> Tuple[KernelOperator, ...]:
        """Per-axis Gram operators; rebuilt whenever hyperparameters may have changed"""
        return tuple(
            build_operator(spec, axis.points, jitter=self.jitter, axis=f"{self.name}[{i}]", detach_factor=detach_factor)
            for i, (spec, axis) in enumerate(zip(self.kernels, self.axes))
        )


def _resolve_ops(gp: GridGP, ops: Optional[Sequence[KernelOperator]]) -> Tuple[KernelOperator, ...]:
    return tuple(ops) if ops is not None else gp.build_operators()


def _full_factors(gp: GridGP, ops: Sequence[KernelOperator]) -> List[CholeskyFactor]:
    factors = [op.factor for op in ops]
    if gp.ndim == 2:
        factors = [CholeskyFactor.identity(1)] + factors
    return factors


def log_prior(gp: GridGP, ops: Optional[Sequence[KernelOperator]] = None) -> torch.Tensor:
    """
    log N(vec(values) | 0, K₀⊗K₁⊗K₂) including the −(m/2)·log 2π constant

    Uses log|⊗Kᵢ| = Σᵢ (m/mᵢ)·log|Kᵢ| and the factor-wise quadratic form.
    """
    ops = _resolve_ops(gp, ops)
    m = gp.num_values
    log_det = sum((m / op.size) * logdet(op.factor) for op in ops)
    quad = kron_quadratic_form(gp.values, _full_factors(gp, ops))
    return -0.5 * log_det - 0.5 * quad - 0.5 * m * LOG_2PI


def axis_weights(gp: GridGP, ops: Sequence[KernelOperator], per_axis: Sequence[torch.Tensor]) -> List[torch.Tensor]:
    """η matrices for each axis' query vector (2-axis GPs get a unit weight on the leading mode)"""
    weights = [cross_weights(op, torch.as_tensor(q, dtype=DTYPE).reshape(-1)) for op, q in zip(ops, per_axis)]
    return weights


def eval_batch(gp: GridGP, queries, ops: Optional[Sequence[KernelOperator]] = None) -> torch.Tensor:
    """
    Conditional mean at a batch of points

    Args:
        gp: the grid GP
        queries: (n, d) points with d equal to ``gp.ndim``

    Returns:
        Tensor of n values
    """
    ops = _resolve_ops(gp, ops)
    q = torch.as_tensor(queries, dtype=DTYPE)
    if q.dim() == 1:
        q = q.reshape(1, -1)
    if q.shape[1] != gp.ndim:
        raise DimensionMismatchError(f"queries have {q.shape[1]} coordinates, GP has {gp.ndim} axes")
    weights = axis_weights(gp, ops, [q[:, i] for i in range(gp.ndim)])
    if gp.ndim == 2:
        w1, w2 = weights
        return torch.einsum("jk,nj,nk->n", gp.values[0], w1, w2)
    w0, w1, w2 = weights
    # contract the leading mode first so intermediates stay (n, m1, m2)
    partial = w0 @ gp.values.reshape(gp.values.shape[0], -1)
    partial = partial.reshape(-1, gp.values.shape[1], gp.values.shape[2])
    return torch.einsum("njk,nj,nk->n", partial, w1, w2)


def eval_on_product_grid(
    gp: GridGP,
    axes_queries: Sequence,
    ops: Optional[Sequence[KernelOperator]] = None,
) -> Tensor3:
    """
    GP conditional mean on the Cartesian product of per-axis query lists

    Three mode products with the η matrices; the full cross-covariance is never formed.
    A 2-axis GP returns shape (1, |q₁|, |q₂|).
    """
    ops = _resolve_ops(gp, ops)
    if len(axes_queries) != gp.ndim:
        raise DimensionMismatchError(f"need {gp.ndim} query axes, got {len(axes_queries)}")
    weights = axis_weights(gp, ops, axes_queries)
    out = gp.values
    offset = 3 - gp.ndim
    for i, w in enumerate(weights):
        out = mode_product(out, w, i + offset)
    return out
