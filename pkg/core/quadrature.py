# -*- coding: utf-8 -*-
"""
KSTPP Toolkit - Gauss-Legendre quadrature

Standard rules come from Newton iteration on the Legendre recurrence, mapped to
[a, b] with ẑ = (b−a)/2·ξ + (b+a)/2 and w = (b−a)/2·α. Product rules over a
(t, x, y) box integrate with the outer-product weight tensor.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import torch

from core.errors import NonFiniteIntegrandError, QuadratureError
from core.tensor_kron import DTYPE, Tensor3

NEWTON_TOL = 1e-14
NEWTON_MAX_ITER = 100
DEFAULT_IMPROPER_ORDER = 32

Evaluator3 = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]


@lru_cache(maxsize=None)
def standard_rule(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [−1, 1], nodes increasing"""
    if n < 1:
        raise QuadratureError(f"quadrature order must be >= 1, got {n}")
    if n == 1:
        return np.array([0.0]), np.array([2.0])

    # Chebyshev-like initial guess, refined by Newton on P_n
    i = np.arange(1, n + 1)
    x = np.cos(np.pi * (i - 0.25) / (n + 0.5))
    dp = np.ones_like(x)
    for _ in range(NEWTON_MAX_ITER):
        p0 = np.ones_like(x)
        p1 = x.copy()
        for k in range(2, n + 1):
            p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
        # P'_n from the recurrence derivative identity
        dp = n * (x * p1 - p0) / (x * x - 1.0)
        dx = p1 / dp
        x = x - dx
        if np.max(np.abs(dx)) < NEWTON_TOL:
            break
    # final derivative at the converged nodes
    p0 = np.ones_like(x)
    p1 = x.copy()
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    dp = n * (x * p1 - p0) / (x * x - 1.0)
    w = 2.0 / ((1.0 - x * x) * dp * dp)

    order = np.argsort(x)
    x = x[order]
    w = w[order]
    # exact symmetry of the rule
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return x, w


@dataclass(frozen=True)
class QuadratureRule1D:
    nodes: torch.Tensor
    weights: torch.Tensor
    interval: Tuple[float, float]

    @property
    def order(self) -> int:
        return self.nodes.shape[0]

    @classmethod
    def empty(cls, at: float) -> "QuadratureRule1D":
        """Zero-measure rule for a degenerate interval [at, at]"""
        return cls(
            nodes=torch.zeros(0, dtype=DTYPE),
            weights=torch.zeros(0, dtype=DTYPE),
            interval=(float(at), float(at)),
        )


def gauss_legendre(n: int, a: float, b: float) -> QuadratureRule1D:
    """
    Order-n Gauss-Legendre rule on [a, b]

    Raises:
        QuadratureError: n < 1 or a >= b
    """
    a = float(a)
    b = float(b)
    if not a < b:
        raise QuadratureError(f"interval must satisfy a < b, got [{a}, {b}]")
    xi, alpha = standard_rule(int(n))
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    return QuadratureRule1D(
        nodes=torch.as_tensor(half * xi + mid, dtype=DTYPE),
        weights=torch.as_tensor(half * alpha, dtype=DTYPE),
        interval=(a, b),
    )


@dataclass(frozen=True)
class ProductRule3:
    """Tensor-product rule over a (t, x, y) box"""

    rules: Tuple[QuadratureRule1D, QuadratureRule1D, QuadratureRule1D]

    @property
    def weight_tensor(self) -> Tensor3:
        w0, w1, w2 = (r.weights for r in self.rules)
        return w0[:, None, None] * w1[None, :, None] * w2[None, None, :]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(r.order for r in self.rules)  # type: ignore[return-value]

    @property
    def volume(self) -> float:
        out = 1.0
        for r in self.rules:
            out *= r.interval[1] - r.interval[0]
        return out

    def mesh(self) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return torch.meshgrid(*(r.nodes for r in self.rules), indexing="ij")


def product_rule(
    orders: Sequence[int],
    t_interval: Tuple[float, float],
    x_range: Tuple[float, float],
    y_range: Tuple[float, float],
) -> ProductRule3:
    """Build the (t, x, y) product rule; a degenerate time interval gives an empty time rule"""
    q0, q1, q2 = orders
    t_lo, t_hi = t_interval
    if t_lo == t_hi:
        t_rule = QuadratureRule1D.empty(t_lo)
    else:
        t_rule = gauss_legendre(q0, t_lo, t_hi)
    return ProductRule3((t_rule, gauss_legendre(q1, *x_range), gauss_legendre(q2, *y_range)))


def spatial_weights(rule_x: QuadratureRule1D, rule_y: QuadratureRule1D) -> torch.Tensor:
    """Outer product of the two spatial weight vectors"""
    return rule_x.weights[:, None] * rule_y.weights[None, :]


def _first_bad(values: torch.Tensor) -> Tuple[int, ...]:
    bad = (~torch.isfinite(values)).nonzero()
    return tuple(int(i) for i in bad[0])


def integrate_values(values: Tensor3, rule: ProductRule3) -> torch.Tensor:
    """Σ w⁰ᵢw¹ⱼw²ₖ·values[i, j, k] for values already evaluated on the rule's grid"""
    if tuple(values.shape) != rule.shape:
        raise QuadratureError(f"values of shape {tuple(values.shape)} do not match rule {rule.shape}")
    return (rule.weight_tensor * values).sum()


def integrate_box(f: Evaluator3, rule: ProductRule3) -> torch.Tensor:
    """
    Tensor-product integral of ``f`` over the rule's box

    ``f`` receives three broadcast (ij-indexed) mesh tensors and returns values of
    the same shape.

    Raises:
        NonFiniteIntegrandError: with the (t, x, y) node of the first bad value
    """
    tt, xx, yy = rule.mesh()
    values = torch.as_tensor(f(tt, xx, yy), dtype=DTYPE)
    values = torch.broadcast_to(values, tt.shape)
    if not bool(torch.isfinite(values).all()):
        i, j, k = _first_bad(values)
        node = (float(tt[i, j, k]), float(xx[i, j, k]), float(yy[i, j, k]))
        raise NonFiniteIntegrandError(node=node, value=float(values[i, j, k]))
    return integrate_values(values, rule)


def improper_nodes(n: int = DEFAULT_IMPROPER_ORDER) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Nodes for ∫₀^∞ h(τ)dτ under τ = u/(1−u)

    Returns:
        (u, τ(u), w·(1−u)⁻²): the integral is Σ h(τ)·(last element)
    """
    rule = gauss_legendre(n, 0.0, 1.0)
    u = rule.nodes
    tau = u / (1.0 - u)
    jac = rule.weights / (1.0 - u) ** 2
    return u, tau, jac


def integrate_improper(h: Callable[[torch.Tensor], torch.Tensor], n: int = DEFAULT_IMPROPER_ORDER) -> torch.Tensor:
    """
    ∫₀^∞ h(τ)dτ = ∫₀¹ h(u/(1−u))/(1−u)² du by Gauss-Legendre on (0, 1)

    Raises:
        NonFiniteIntegrandError: carrying the u at which the transformed integrand broke
    """
    u, tau, jac = improper_nodes(n)
    values = torch.as_tensor(h(tau), dtype=DTYPE) * jac
    if not bool(torch.isfinite(values).all()):
        (idx,) = _first_bad(values)
        raise NonFiniteIntegrandError(node=(float(u[idx]),), value=float(values[idx]))
    return values.sum()


def inner_order(base_order: int, tau: float) -> int:
    """Order for a [0, τ] compensator rule: max(q₀, 8·⌈log₂(1+τ)⌉)"""
    return max(int(base_order), 8 * int(math.ceil(math.log2(1.0 + max(float(tau), 0.0)))))


def grid_cell_centers(lo: float, hi: float, n: int) -> torch.Tensor:
    """Cell centers of a uniform n-cell partition of [lo, hi]"""
    step = (hi - lo) / n
    return torch.as_tensor(lo + step * (np.arange(n) + 0.5), dtype=DTYPE)


def improper_order_check(n: Optional[int]) -> int:
    n = DEFAULT_IMPROPER_ORDER if n is None else int(n)
    if n < 1:
        raise QuadratureError(f"improper-integral order must be >= 1, got {n}")
    return n
