# -*- coding: utf-8 -*-
"""
KSTPP Toolkit - Per-axis covariance functions

Each axis of a separable product kernel gets its own KernelSpec; the Gram matrix
on that axis' grid, with its Cholesky factor, is a KernelOperator.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

import torch

from core.errors import InvalidGridError, KernelConditioningError, NotPositiveDefiniteError
from core.tensor_kron import DTYPE, CholeskyFactor, Matrix, cholesky, solve

DEFAULT_JITTER = 1e-6
SQRT5 = math.sqrt(5.0)

Scalar = Union[float, torch.Tensor]


class KernelFamily(str, Enum):
    SQUARED_EXPONENTIAL = "SquaredExponential"
    MATERN52 = "Matern52"

    @classmethod
    def parse(cls, value: Union[str, "KernelFamily"]) -> "KernelFamily":
        if isinstance(value, KernelFamily):
            return value
        aliases = {
            "se": cls.SQUARED_EXPONENTIAL,
            "rbf": cls.SQUARED_EXPONENTIAL,
            "squaredexponential": cls.SQUARED_EXPONENTIAL,
            "matern52": cls.MATERN52,
            "matern": cls.MATERN52,
            "matern-5/2": cls.MATERN52,
        }
        key = str(value).replace("_", "").replace(" ", "").lower()
        if key not in aliases:
            raise ValueError(f"unknown kernel family '{value}'")
        return aliases[key]


@dataclass
class KernelSpec:
    """
    One axis' covariance function

    Hyperparameters are stored as unconstrained logs (leaf tensors during training);
    ``lengthscale`` and ``variance`` read them through exp.
    """

    family: KernelFamily
    log_lengthscale: torch.Tensor
    log_variance: torch.Tensor

    @classmethod
    def create(cls, family: Union[str, KernelFamily], lengthscale: float, variance: float = 1.0) -> "KernelSpec":
        if lengthscale <= 0 or variance <= 0:
            raise ValueError(f"lengthscale and variance must be positive, got {lengthscale}, {variance}")
        return cls(
            family=KernelFamily.parse(family),
            log_lengthscale=torch.tensor(math.log(lengthscale), dtype=DTYPE),
            log_variance=torch.tensor(math.log(variance), dtype=DTYPE),
        )

    @property
    def lengthscale(self) -> torch.Tensor:
        return torch.exp(self.log_lengthscale)

    @property
    def variance(self) -> torch.Tensor:
        return torch.exp(self.log_variance)

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "log_lengthscale": float(self.log_lengthscale),
            "log_variance": float(self.log_variance),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        return cls(
            family=KernelFamily.parse(data["family"]),
            log_lengthscale=torch.tensor(float(data["log_lengthscale"]), dtype=DTYPE),
            log_variance=torch.tensor(float(data["log_variance"]), dtype=DTYPE),
        )


def eval_kernel(spec: KernelSpec, a: Scalar, b: Scalar) -> torch.Tensor:
    """
    k(a, b) with broadcasting over tensor arguments

    SE: v·exp(−r²/(2ℓ²)); Matérn-5/2: v·(1+√5r/ℓ+5r²/(3ℓ²))·exp(−√5r/ℓ), r = |a−b|.
    """
    a = torch.as_tensor(a, dtype=DTYPE)
    b = torch.as_tensor(b, dtype=DTYPE)
    diff = a - b
    ell = spec.lengthscale
    if spec.family is KernelFamily.SQUARED_EXPONENTIAL:
        return spec.variance * torch.exp(-0.5 * (diff / ell) ** 2)
    # r² form keeps the gradient finite at r = 0
    r2 = (diff / ell) ** 2
    r = torch.sqrt(r2 + 1e-300)
    return spec.variance * (1.0 + SQRT5 * r + (5.0 / 3.0) * r2) * torch.exp(-SQRT5 * r)


def cross_kernel(spec: KernelSpec, queries: torch.Tensor, nodes: torch.Tensor) -> Matrix:
    """κ(queries, nodes) as a (len(queries), len(nodes)) matrix"""
    return eval_kernel(spec, queries.reshape(-1, 1), nodes.reshape(1, -1))


@dataclass(frozen=True)
class KernelOperator:
    """Gram matrix K = κ(nodes, nodes) + jitter·I and its factor"""

    spec: KernelSpec
    nodes: torch.Tensor
    gram: Matrix
    factor: CholeskyFactor
    jitter: float
    axis: str = field(default="axis")

    @property
    def size(self) -> int:
        return self.nodes.shape[0]


def build_operator(
    spec: KernelSpec,
    nodes: torch.Tensor,
    jitter: float = DEFAULT_JITTER,
    axis: str = "axis",
    detach_factor: bool = False,
) -> KernelOperator:
    """
    Assemble and factor the Gram matrix on ``nodes``

    Args:
        spec: axis covariance
        nodes: strictly increasing grid, at least 2 points
        jitter: relative diagonal jitter; the diagonal receives ``jitter·variance``
        axis: name used in error messages
        detach_factor: build K from detached hyperparameters, which stops gradients
            through K⁻¹ (the speed approximation of training)

    Raises:
        InvalidGridError: fewer than 2 nodes or nodes not strictly increasing
        KernelConditioningError: Cholesky failed; message advises a larger jitter
    """
    nodes = torch.as_tensor(nodes, dtype=DTYPE).reshape(-1)
    if nodes.shape[0] < 2:
        raise InvalidGridError(f"axis '{axis}' needs at least 2 nodes, got {nodes.shape[0]}")
    if not bool((nodes[1:] > nodes[:-1]).all()):
        raise InvalidGridError(f"axis '{axis}' nodes must be strictly increasing")

    gram_spec = spec
    if detach_factor:
        gram_spec = KernelSpec(spec.family, spec.log_lengthscale.detach(), spec.log_variance.detach())
    diag_jitter = jitter * gram_spec.variance
    gram = cross_kernel(gram_spec, nodes, nodes)
    gram = 0.5 * (gram + gram.T) + diag_jitter * torch.eye(nodes.shape[0], dtype=DTYPE)
    try:
        factor = cholesky(gram)
    except NotPositiveDefiniteError as e:
        raise KernelConditioningError(axis=axis, pivot=e.pivot, jitter=jitter) from e
    return KernelOperator(
        spec=spec,
        nodes=nodes,
        gram=gram,
        factor=factor,
        jitter=float(diag_jitter.detach()),
        axis=axis,
    )


def cross_weights(op: KernelOperator, query: Scalar) -> torch.Tensor:
    """
    Interpolation weights η = κ(query, nodes)·K⁻¹

    A scalar query gives a row of length |nodes|; a 1-D tensor of queries gives one
    row per query. Extrapolation beyond the node range is allowed.
    """
    q = torch.as_tensor(query, dtype=DTYPE)
    scalar = q.dim() == 0
    k_cross = cross_kernel(op.spec, q.reshape(-1), op.nodes)
    weights = solve(op.factor, k_cross.T).T
    return weights[0] if scalar else weights


def default_lengthscale(lo: float, hi: float) -> float:
    """Initial lengthscale: a quarter of the axis range"""
    return 0.25 * (hi - lo)
