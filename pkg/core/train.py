# -*- coding: utf-8 -*-
"""
KSTPP Toolkit - Training

Gradient of the joint log probability by reverse-mode autograd, a functional
Adam ascent step, and the mini-batch fitting loop with validation early
stopping.
"""

import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch

from core.config import OptimizerConfig
from core.errors import DatasetFormatError, DimensionMismatchError, NonFiniteGradientError, TrainingAborted
from core.events import EventSequence, PointProcessModel
from core.grids import GridGP
from core.kernels import KernelSpec
from core.model import KstppModel, log_joint
from core.tensor_kron import DTYPE
from utils.logger import logger
from utils.parallel import pairwise_sum

INFLUENCE_VALUES = "influence_values"
BACKGROUND_VALUES = "background_values"
INFLUENCE_LOG_LENGTHSCALE = "influence_log_lengthscale"
INFLUENCE_LOG_VARIANCE = "influence_log_variance"
BACKGROUND_LOG_LENGTHSCALE = "background_log_lengthscale"
BACKGROUND_LOG_VARIANCE = "background_log_variance"

HYPERPARAMETER_BLOCKS = (
    INFLUENCE_LOG_LENGTHSCALE,
    INFLUENCE_LOG_VARIANCE,
    BACKGROUND_LOG_LENGTHSCALE,
    BACKGROUND_LOG_VARIANCE,
)
INFLUENCE_BLOCKS = (INFLUENCE_VALUES, INFLUENCE_LOG_LENGTHSCALE, INFLUENCE_LOG_VARIANCE)

Layout = Tuple[Tuple[str, Tuple[int, ...]], ...]


def _model_blocks(model: KstppModel) -> List[Tuple[str, torch.Tensor]]:
    f, g = model.influence, model.background
    return [
        (INFLUENCE_VALUES, f.values),
        (BACKGROUND_VALUES, g.values),
        (INFLUENCE_LOG_LENGTHSCALE, torch.stack([k.log_lengthscale for k in f.kernels])),
        (INFLUENCE_LOG_VARIANCE, torch.stack([k.log_variance for k in f.kernels])),
        (BACKGROUND_LOG_LENGTHSCALE, torch.stack([k.log_lengthscale for k in g.kernels])),
        (BACKGROUND_LOG_VARIANCE, torch.stack([k.log_variance for k in g.kernels])),
    ]


@dataclass(frozen=True)
class ParamVector:
    """
    Flat view over every trainable quantity of a KstppModel

    Blocks, in order: vec(ℱ), vec(𝒢), then per-axis log-lengthscales and
    log-variances of the influence GP and of the background GP.
    """

    data: torch.Tensor
    layout: Layout

    @classmethod
    def from_model(cls, model: KstppModel) -> "ParamVector":
        blocks = _model_blocks(model)
        layout = tuple((name, tuple(t.shape)) for name, t in blocks)
        data = torch.cat([t.detach().reshape(-1).to(DTYPE) for _, t in blocks])
        return cls(data=data, layout=layout)

    def __len__(self) -> int:
        return self.data.shape[0]

    def with_data(self, data: torch.Tensor) -> "ParamVector":
        if data.shape != self.data.shape:
            raise DimensionMismatchError(f"parameter data of shape {tuple(data.shape)} does not fit {tuple(self.data.shape)}")
        return ParamVector(data=data, layout=self.layout)

    def blocks(self) -> Dict[str, torch.Tensor]:
        out: Dict[str, torch.Tensor] = {}
        offset = 0
        for name, shape in self.layout:
            size = int(np.prod(shape)) if shape else 1
            out[name] = self.data[offset : offset + size].reshape(shape)
            offset += size
        return out

    def block(self, name: str) -> torch.Tensor:
        return self.blocks()[name]

    def block_slice(self, name: str) -> slice:
        offset = 0
        for block_name, shape in self.layout:
            size = int(np.prod(shape)) if shape else 1
            if block_name == name:
                return slice(offset, offset + size)
            offset += size
        raise KeyError(name)

    def zero_blocks(self, names: Iterable[str]) -> "ParamVector":
        data = self.data.clone()
        for name in names:
            data[self.block_slice(name)] = 0.0
        return self.with_data(data)

    def norm(self) -> float:
        return float(torch.linalg.vector_norm(self.data))

    def to_model(self, template: KstppModel) -> KstppModel:
        """
        A model shaped like ``template`` whose tensors are views of ``data``

        When ``data`` requires grad, everything computed from the returned model
        differentiates back to it.
        """
        if tuple((n, s) for n, s in self.layout) != tuple((n, tuple(t.shape)) for n, t in _model_blocks(template)):
            raise DimensionMismatchError("parameter layout does not match the model's shape")
        b = self.blocks()

        def _rebuild(gp: GridGP, values, log_ells, log_vars) -> GridGP:
            kernels = tuple(
                KernelSpec(k.family, log_ells[i], log_vars[i]) for i, k in enumerate(gp.kernels)
            )
            return dataclasses.replace(gp, values=values, kernels=kernels)

        influence = _rebuild(
            template.influence, b[INFLUENCE_VALUES], b[INFLUENCE_LOG_LENGTHSCALE], b[INFLUENCE_LOG_VARIANCE]
        )
        background = _rebuild(
            template.background, b[BACKGROUND_VALUES], b[BACKGROUND_LOG_LENGTHSCALE], b[BACKGROUND_LOG_VARIANCE]
        )
        return dataclasses.replace(template, influence=influence, background=background, underflow_count=0)

    def check_finite(self) -> None:
        for name, tensor in self.blocks().items():
            if not bool(torch.isfinite(tensor).all()):
                raise NonFiniteGradientError(name)


def grad_log_joint(
    model: KstppModel,
    batch: Sequence[EventSequence],
    dataset_size: Optional[int] = None,
    stop_kinv_grad: bool = False,
    parallel: bool = False,
) -> Tuple[float, ParamVector]:
    """
    Value and gradient of ``log_joint`` with respect to every ParamVector entry

    Args:
        model: current parameters
        batch: sequences of the mini-batch
        dataset_size: |𝒟| for the mini-batch rescaling, None for no rescaling
        stop_kinv_grad: build Gram factors from detached hyperparameters
        parallel: fan the per-sequence likelihoods out over threads

    Raises:
        NonFiniteGradientError: naming the first block with a non-finite entry
    """
    params = ParamVector.from_model(model)
    flat = params.data.detach().clone().requires_grad_(True)
    live = params.with_data(flat).to_model(model)
    ops = live.operators(detach_factor=stop_kinv_grad)
    value = log_joint(live, batch, dataset_size=dataset_size, ops=ops, parallel=parallel)
    (grad,) = torch.autograd.grad(value, flat, allow_unused=True)
    if grad is None:
        grad = torch.zeros_like(flat)
    model.underflow_count += live.underflow_count
    grad_vec = params.with_data(grad.detach())
    grad_vec.check_finite()
    return float(value.detach()), grad_vec


@dataclass(frozen=True)
class AdamState:
    step: int
    m: torch.Tensor
    v: torch.Tensor
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            step=0,
            m=torch.zeros(size, dtype=DTYPE),
            v=torch.zeros(size, dtype=DTYPE),
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(state: AdamState, params: ParamVector, grad: ParamVector) -> Tuple[AdamState, ParamVector]:
    """Bias-corrected Adam ascent: θ ← θ + lr·m̂/(√v̂ + ε)"""
    if not (params.data.shape == grad.data.shape == state.m.shape):
        raise DimensionMismatchError(
            f"Adam shapes differ: params {tuple(params.data.shape)}, grad {tuple(grad.data.shape)}, "
            f"state {tuple(state.m.shape)}"
        )
    g = grad.data
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    updated = params.data + state.lr * m_hat / (torch.sqrt(v_hat) + state.eps)
    return dataclasses.replace(state, step=step, m=m, v=v), params.with_data(updated)


@dataclass
class FitResult:
    model: PointProcessModel
    log: List[dict] = field(default_factory=list)
    epochs: List[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_validation: Optional[float] = None
    stopped_early: bool = False


def mean_log_likelihood(model: PointProcessModel, sequences: Sequence[EventSequence]) -> float:
    """Average per-sequence log-likelihood, without building a graph"""
    if not sequences:
        return float("nan")
    with torch.no_grad():
        if isinstance(model, KstppModel):
            ops = model.operators()
            lls = [model.log_likelihood(seq, ops=ops) for seq in sequences]
        else:
            lls = [model.log_likelihood(seq) for seq in sequences]
        return float(pairwise_sum(lls)) / len(sequences)


def frozen_blocks(config: OptimizerConfig) -> Tuple[str, ...]:
    names: List[str] = []
    if config.freeze_hyperparams:
        names.extend(HYPERPARAMETER_BLOCKS)
    if config.freeze_influence:
        names.extend(b for b in INFLUENCE_BLOCKS if b not in names)
    return tuple(names)


def shuffle_order(seed: int, epoch: int, size: int) -> np.ndarray:
    """Epoch permutation from a counter-based stream, independent of earlier epochs"""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(epoch)])))
    return rng.permutation(size)


def fit(
    dataset: Sequence[EventSequence],
    config: OptimizerConfig,
    model: KstppModel,
    validation: Optional[Sequence[EventSequence]] = None,
    on_step: Optional[Callable[[dict], None]] = None,
) -> FitResult:
    """
    Maximize the joint log probability by Adam over shuffled mini-batches

    Args:
        dataset: training sequences, all inside ``model.domain``
        config: optimizer block (lr, epochs, batch size, patience, seed, freezes)
        model: initial model; it is not modified
        validation: sequences for early stopping on mean log-likelihood
        on_step: called with every step record as it is produced

    Returns:
        FitResult holding the best-validation model (final model without validation)

    Raises:
        TrainingAborted: non-finite objective or gradient; carries the last good
            parameters as a checkpoint payload and the log so far
    """
    if not dataset:
        raise DatasetFormatError("training dataset is empty")
    for seq in dataset:
        seq.validate(model.domain)
    validation = list(validation or [])
    for seq in validation:
        seq.validate(model.domain)

    params = ParamVector.from_model(model)
    current = params.to_model(model)
    state = AdamState.zeros(len(params), lr=config.lr)
    frozen = frozen_blocks(config)
    result = FitResult(model=current)
    best_params = params
    best_score = -float("inf")
    bad_epochs = 0
    step = 0
    size = len(dataset)

    logger.info(
        f"[TRAIN] 🚀 Fitting on {size} sequences: epochs={config.epochs} batch={config.batch_size} "
        f"lr={config.lr} seed={config.seed} frozen={list(frozen) or 'none'}"
    )
    for epoch in range(config.epochs):
        order = shuffle_order(config.seed, epoch, size)
        objectives: List[float] = []
        for start in range(0, size, config.batch_size):
            batch = [dataset[i] for i in order[start : start + config.batch_size]]
            tic = time.perf_counter()
            try:
                value, grad = grad_log_joint(
                    current, batch, dataset_size=size, stop_kinv_grad=config.stop_kinv_grad
                )
            except NonFiniteGradientError as e:
                _abort(f"non-finite gradient in block '{e.block}' at step {step}", params, model, result)
            if not np.isfinite(value):
                _abort(f"objective became {value} at step {step}", params, model, result)
            if frozen:
                grad = grad.zero_blocks(frozen)
            state, params = adam_step(state, params, grad)
            current = params.to_model(model)
            record = {
                "step": step,
                "epoch": epoch,
                "objective": value,
                "grad_norm": grad.norm(),
                "wall_ms": (time.perf_counter() - tic) * 1000.0,
            }
            result.log.append(record)
            if on_step is not None:
                on_step(record)
            logger.debug(f"[TRAIN] step {step}: objective={value:.6g} grad_norm={record['grad_norm']:.3g}")
            objectives.append(value)
            step += 1
            if config.max_steps is not None and step >= config.max_steps:
                break

        summary = {"epoch": epoch, "objective_mean": float(np.mean(objectives)), "validation_ll": None}
        if validation:
            score = mean_log_likelihood(current, validation)
            summary["validation_ll"] = score
            if score > best_score:
                best_score, best_params, bad_epochs = score, params, 0
                result.best_epoch = epoch
            else:
                bad_epochs += 1
        else:
            best_params = params
            result.best_epoch = epoch
        result.epochs.append(summary)
        logger.info(
            f"[TRAIN] epoch {epoch}: mean objective {summary['objective_mean']:.6g}"
            + (f", validation ll {summary['validation_ll']:.6g}" if validation else "")
        )
        if validation and bad_epochs >= config.patience:
            result.stopped_early = True
            logger.info(f"[TRAIN] Early stop after {epoch + 1} epochs (best epoch {result.best_epoch})")
            break
        if config.max_steps is not None and step >= config.max_steps:
            break

    result.model = best_params.to_model(model)
    result.best_validation = best_score if validation else None
    logger.info(f"[TRAIN] ✅ Finished after {step} steps")
    return result


def _abort(message: str, params: ParamVector, template: KstppModel, result: FitResult) -> None:
    logger.error(f"[TRAIN] ❌ {message}; returning last good parameters")
    last_good = params.to_model(template)
    raise TrainingAborted(message, checkpoint=last_good.to_payload(), log=result.log)


def write_training_log(records: Sequence[dict], path: Union[str, Path]) -> Path:
    """
    Line-delimited JSON: one record per step

    Every column except ``wall_ms`` repeats exactly for a repeated seed.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = ["step", "epoch", "objective", "grad_norm", "wall_ms"]
    frame = pd.DataFrame(list(records), columns=columns)
    frame.to_json(path, orient="records", lines=True)
    return path
