# -*- coding: utf-8 -*-
"""
KSTPP Toolkit - Dense small-tensor algebra

Mode products, Cholesky-based solves and the Kronecker quadratic form that every
grid GP operation is built from. Matrices and order-3 tensors are plain float64
``torch.Tensor`` values (row-major, last index fastest), so all operations here
are differentiable and vec(t) is ``t.reshape(-1)``.
"""

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import torch

from core.errors import DimensionMismatchError, NotPositiveDefiniteError

DTYPE = torch.float64

Matrix = torch.Tensor
Tensor3 = torch.Tensor

ArrayLike = Union[torch.Tensor, np.ndarray, Sequence]

SYMMETRY_RTOL = 1e-12


def as_matrix(data: ArrayLike) -> Matrix:
    """Convert to a finite float64 matrix"""
    m = torch.as_tensor(data, dtype=DTYPE)
    if m.dim() != 2:
        raise DimensionMismatchError(f"expected a matrix, got shape {tuple(m.shape)}")
    if not torch.isfinite(m).all():
        raise ValueError("matrix has non-finite entries")
    return m


def as_tensor3(data: ArrayLike) -> Tensor3:
    """Convert to a finite float64 order-3 tensor"""
    t = torch.as_tensor(data, dtype=DTYPE)
    if t.dim() != 3:
        raise DimensionMismatchError(f"expected an order-3 tensor, got shape {tuple(t.shape)}")
    if not torch.isfinite(t).all():
        raise ValueError("tensor has non-finite entries")
    return t


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor L with L·Lᵀ equal to the factored matrix"""

    lower: Matrix

    @property
    def size(self) -> int:
        return self.lower.shape[0]

    def reconstruct(self) -> Matrix:
        return self.lower @ self.lower.T

    @classmethod
    def identity(cls, n: int) -> "CholeskyFactor":
        return cls(torch.eye(n, dtype=DTYPE))


def mode_product(t: Tensor3, m: Matrix, mode: int) -> Tensor3:
    """
    Contract ``m`` against ``t`` along ``mode`` (t ×_mode m)

    Args:
        t: tensor of shape (m0, m1, m2)
        m: matrix with ``m.shape[1] == t.shape[mode]``
        mode: 0, 1 or 2

    Returns:
        Tensor with ``shape[mode]`` replaced by ``m.shape[0]``
    """
    if mode not in (0, 1, 2) or t.dim() != 3:
        raise DimensionMismatchError(f"mode must be 0, 1 or 2 for an order-3 tensor, got {mode}")
    if m.dim() != 2 or m.shape[1] != t.shape[mode]:
        raise DimensionMismatchError(
            f"mode-{mode} product needs {t.shape[mode]} matrix columns, got shape {tuple(m.shape)}"
        )
    out = torch.tensordot(m, t, dims=([1], [mode]))
    return torch.movedim(out, 0, mode)


def cholesky(m: Matrix) -> CholeskyFactor:
    """
    Factor a symmetric positive-definite matrix

    Raises:
        DimensionMismatchError: non-square input
        ValueError: input not symmetric to 1e-12 relative
        NotPositiveDefiniteError: a pivot is non-positive (index is 0-based)
    """
    if m.dim() != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatchError(f"Cholesky needs a square matrix, got shape {tuple(m.shape)}")
    scale = float(m.detach().abs().max()) if m.numel() else 0.0
    asym = float((m.detach() - m.detach().T).abs().max()) if m.numel() else 0.0
    if asym > SYMMETRY_RTOL * max(scale, 1.0):
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    lower, info = torch.linalg.cholesky_ex(m)
    if int(info) > 0:
        raise NotPositiveDefiniteError(pivot=int(info) - 1)
    return CholeskyFactor(lower)


def logdet(f: CholeskyFactor) -> torch.Tensor:
    """log|A| = 2·Σ log diag(L)"""
    return 2.0 * torch.log(torch.diagonal(f.lower)).sum()


def solve(f: CholeskyFactor, rhs: Matrix) -> Matrix:
    """Solve A·X = rhs for the factored A"""
    if rhs.dim() != 2 or rhs.shape[0] != f.size:
        raise DimensionMismatchError(f"rhs needs {f.size} rows, got shape {tuple(rhs.shape)}")
    return torch.cholesky_solve(rhs, f.lower, upper=False)


def whiten(f: CholeskyFactor, rhs: Matrix) -> Matrix:
    """L⁻¹·rhs"""
    if rhs.dim() != 2 or rhs.shape[0] != f.size:
        raise DimensionMismatchError(f"rhs needs {f.size} rows, got shape {tuple(rhs.shape)}")
    return torch.linalg.solve_triangular(f.lower, rhs, upper=False)


def mode_whiten(t: Tensor3, f: CholeskyFactor, mode: int) -> Tensor3:
    """t ×_mode L⁻¹ without forming the inverse"""
    if f.size != t.shape[mode]:
        raise DimensionMismatchError(f"factor of size {f.size} does not match mode {mode} of {tuple(t.shape)}")
    moved = torch.movedim(t, mode, 0)
    flat = moved.reshape(f.size, -1)
    out = whiten(f, flat).reshape(moved.shape)
    return torch.movedim(out, 0, mode)


def kron_quadratic_form(t: Tensor3, factors: Sequence[CholeskyFactor]) -> torch.Tensor:
    """
    vec(t)ᵀ (K₀⊗K₁⊗K₂)⁻¹ vec(t) using only the per-mode factors

    Computed as ‖t ×₀ L₀⁻¹ ×₁ L₁⁻¹ ×₂ L₂⁻¹‖², which is nonnegative by construction.
    """
    if len(factors) != 3:
        raise DimensionMismatchError(f"need one factor per mode, got {len(factors)}")
    for mode, f in enumerate(factors):
        if f.size != t.shape[mode]:
            raise DimensionMismatchError(
                f"factor {mode} has size {f.size}, tensor mode has {t.shape[mode]}"
            )
    z = t
    for mode, f in enumerate(factors):
        z = mode_whiten(z, f, mode)
    return (z * z).sum()


def kron_dense(mats: Sequence[Matrix]) -> Matrix:
    """Explicit A⊗B⊗… (small sizes only; used by oracles and diagnostics)"""
    out = torch.ones((1, 1), dtype=DTYPE)
    for m in mats:
        out = torch.kron(out, m)
    return out
