# -*- coding: utf-8 -*-
"""
KSTPP Toolkit - Baseline models

PoissonModel: homogeneous rate per unit time and area, closed-form MLE.
SthpModel: λ₀ + c·Σ e^{−β(t−tₙ)}·e^{−dₙ²/(2σ²)}/(2πσ²) with every parameter
positive (fit in log space). Its time integral is closed-form; the Gaussian
mass over 𝒮 uses Gauss-Legendre, so no boundary mass is neglected.
"""

import math
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from core.config import OptimizerConfig, SthpConfig
from core.errors import DatasetFormatError, NonFiniteGradientError, TrainingAborted
from core.events import LOG_FLOOR, Domain, EventSequence, PointProcessModel, check_history
from core.quadrature import gauss_legendre
from core.simulate import ThinningTrace, thin
from core.tensor_kron import DTYPE
from core.train import AdamState, FitResult, ParamVector, adam_step, shuffle_order
from utils.logger import logger
from utils.parallel import pairwise_sum

STHP_BLOCKS = ("log_lambda0", "log_c", "log_beta", "log_sigma")


# ---------------------------------------------------------------------- Poisson


class PoissonModel(PointProcessModel):
    KIND = "poisson"

    def __init__(self, rate: float, domain: Domain):
        if not rate > 0:
            raise ValueError(f"Poisson rate must be positive, got {rate}")
        self.rate = float(rate)
        self.domain = domain

    def intensity_grid(self, ts, xs, ys, history: EventSequence) -> torch.Tensor:
        shape = tuple(torch.as_tensor(a).reshape(-1).shape[0] for a in (ts, xs, ys))
        return torch.full(shape, self.rate, dtype=DTYPE)

    def log_likelihood(self, seq: EventSequence) -> torch.Tensor:
        seq.validate(self.domain)
        value = len(seq) * math.log(self.rate) - self.rate * self.domain.t_max * self.domain.area
        return torch.tensor(value, dtype=DTYPE)

    def closed_form_prediction(self, history: EventSequence) -> Optional[Tuple[float, float, float]]:
        cx, cy = self.domain.centroid
        return history.last_time + 1.0 / (self.rate * self.domain.area), cx, cy

    def to_payload(self) -> dict:
        return {"rate": self.rate}

    @classmethod
    def from_payload(cls, payload: dict, domain: Domain) -> "PoissonModel":
        return cls(float(payload["rate"]), domain)


def poisson_fit(dataset: Sequence[EventSequence], domain: Domain) -> PoissonModel:
    """
    rate = total events / (sequences · T · area)

    Raises:
        DatasetFormatError: no sequences, or no events at all
    """
    if not dataset:
        raise DatasetFormatError("cannot fit a Poisson rate to an empty dataset")
    total = sum(len(seq.validate(domain)) for seq in dataset)
    if total == 0:
        raise DatasetFormatError("cannot fit a Poisson rate: the dataset holds no events")
    rate = total / (len(dataset) * domain.t_max * domain.area)
    logger.info(f"[MODEL] Poisson rate {rate:.6g} from {total} events in {len(dataset)} sequences")
    return PoissonModel(rate, domain)


# ---------------------------------------------------------------------- STHP


@dataclass(eq=False)
class SthpModel(PointProcessModel):
    """Excitation-only spatiotemporal Hawkes process; ``excitation=False`` pins c at 0"""

    KIND = "sthp"

    log_lambda0: torch.Tensor
    log_c: torch.Tensor
    log_beta: torch.Tensor
    log_sigma: torch.Tensor
    domain: Domain
    excitation: bool = True
    quad_orders: Tuple[int, int, int] = (12, 12, 12)

    @classmethod
    def create(
        cls,
        domain: Domain,
        lambda0: float,
        c: float,
        beta: float,
        sigma: float,
        excitation: bool = True,
        quad_orders: Sequence[int] = (12, 12, 12),
    ) -> "SthpModel":
        if min(lambda0, c, beta, sigma) <= 0:
            raise ValueError("STHP parameters must be strictly positive")
        return cls(
            log_lambda0=torch.tensor(math.log(lambda0), dtype=DTYPE),
            log_c=torch.tensor(math.log(c), dtype=DTYPE),
            log_beta=torch.tensor(math.log(beta), dtype=DTYPE),
            log_sigma=torch.tensor(math.log(sigma), dtype=DTYPE),
            domain=domain,
            excitation=excitation,
            quad_orders=tuple(int(q) for q in quad_orders),  # type: ignore[arg-type]
        )

    @property
    def lambda0(self) -> torch.Tensor:
        return torch.exp(self.log_lambda0)

    @property
    def c(self) -> torch.Tensor:
        if not self.excitation:
            return torch.zeros((), dtype=DTYPE)
        return torch.exp(self.log_c)

    @property
    def beta(self) -> torch.Tensor:
        return torch.exp(self.log_beta)

    @property
    def sigma(self) -> torch.Tensor:
        return torch.exp(self.log_sigma)

    @property
    def spatial_orders(self) -> Tuple[int, int]:
        return self.quad_orders[1], self.quad_orders[2]

    @property
    def time_order(self) -> int:
        return self.quad_orders[0]

    def _kernel(self, lag: torch.Tensor, d2: torch.Tensor) -> torch.Tensor:
        sigma2 = self.sigma**2
        decay = torch.where(lag > 0, torch.exp(-self.beta * lag.clamp(min=0.0)), torch.zeros_like(lag))
        return decay * torch.exp(-d2 / (2.0 * sigma2)) / (2.0 * math.pi * sigma2)

    def intensity_grid(self, ts, xs, ys, history: EventSequence) -> torch.Tensor:
        ts = torch.as_tensor(ts, dtype=DTYPE).reshape(-1)
        xs = torch.as_tensor(xs, dtype=DTYPE).reshape(-1)
        ys = torch.as_tensor(ys, dtype=DTYPE).reshape(-1)
        base = self.lambda0 * torch.ones((ts.shape[0], xs.shape[0], ys.shape[0]), dtype=DTYPE)
        if len(history) == 0:
            return base
        tn, xn, yn = history.as_tensors()
        lag = (ts[None, :] - tn[:, None])[:, :, None, None]
        d2 = ((xs[None, :] - xn[:, None]) ** 2)[:, :, None] + ((ys[None, :] - yn[:, None]) ** 2)[:, None, :]
        return base + self.c * self._kernel(lag, d2[:, None, :, :]).sum(dim=0)

    def event_intensities(self, seq: EventSequence) -> torch.Tensor:
        """λ at every event given its own past, shape (N,)"""
        t, x, y = seq.as_tensors()
        lag = t[:, None] - t[None, :]
        d2 = (x[:, None] - x[None, :]) ** 2 + (y[:, None] - y[None, :]) ** 2
        return self.lambda0 + self.c * self._kernel(lag, d2).sum(dim=1)

    def spatial_mass(self, seq: EventSequence) -> torch.Tensor:
        """∫_𝒮 e^{−d²/(2σ²)}/(2πσ²) for a bump at each event (separable Gauss-Legendre)"""
        q1, q2 = self.spatial_orders
        rule_x = gauss_legendre(q1, *self.domain.x_range)
        rule_y = gauss_legendre(q2, *self.domain.y_range)
        _, x, y = seq.as_tensors()
        sigma2 = self.sigma**2
        mx = (rule_x.weights[None, :] * torch.exp(-((rule_x.nodes[None, :] - x[:, None]) ** 2) / (2.0 * sigma2))).sum(1)
        my = (rule_y.weights[None, :] * torch.exp(-((rule_y.nodes[None, :] - y[:, None]) ** 2) / (2.0 * sigma2))).sum(1)
        return mx * my / (2.0 * math.pi * sigma2)

    def log_likelihood(self, seq: EventSequence) -> torch.Tensor:
        seq.validate(self.domain)
        T = self.domain.t_max
        compensator = self.lambda0 * T * self.domain.area
        if len(seq) == 0:
            return -compensator
        event_term = torch.log(torch.clamp(self.event_intensities(seq), min=LOG_FLOOR)).sum()
        t, _, _ = seq.as_tensors()
        temporal = -torch.expm1(-self.beta * (T - t)) / self.beta
        compensator = compensator + self.c * (temporal * self.spatial_mass(seq)).sum()
        return event_term - compensator

    def to_payload(self) -> dict:
        return {
            "log_lambda0": float(self.log_lambda0),
            "log_c": float(self.log_c),
            "log_beta": float(self.log_beta),
            "log_sigma": float(self.log_sigma),
            "excitation": self.excitation,
            "quad_orders": list(self.quad_orders),
        }

    @classmethod
    def from_payload(cls, payload: dict, domain: Domain) -> "SthpModel":
        return cls(
            log_lambda0=torch.tensor(float(payload["log_lambda0"]), dtype=DTYPE),
            log_c=torch.tensor(float(payload["log_c"]), dtype=DTYPE),
            log_beta=torch.tensor(float(payload["log_beta"]), dtype=DTYPE),
            log_sigma=torch.tensor(float(payload["log_sigma"]), dtype=DTYPE),
            domain=domain,
            excitation=bool(payload.get("excitation", True)),
            quad_orders=tuple(int(q) for q in payload.get("quad_orders", (12, 12, 12))),  # type: ignore[arg-type]
        )

    # flat-parameter plumbing shared with the Adam step
    def params(self) -> ParamVector:
        data = torch.stack([self.log_lambda0, self.log_c, self.log_beta, self.log_sigma]).detach().clone()
        return ParamVector(data=data, layout=tuple((name, ()) for name in STHP_BLOCKS))

    def with_params(self, params: ParamVector) -> "SthpModel":
        b = params.blocks()
        return SthpModel(
            log_lambda0=b["log_lambda0"],
            log_c=b["log_c"],
            log_beta=b["log_beta"],
            log_sigma=b["log_sigma"],
            domain=self.domain,
            excitation=self.excitation,
            quad_orders=self.quad_orders,
        )


def sthp_intensity(m: SthpModel, t: float, x: float, y: float, history: EventSequence) -> float:
    """λ(t, x, y | history) ≥ λ₀ > 0"""
    check_history(history, t)
    with torch.no_grad():
        return float(m.intensity(t, x, y, history))


def sthp_upper_bound(m: SthpModel, t: float, history: EventSequence) -> float:
    """λ₀ + c·Σ e^{−β(t−tₙ)}/(2πσ²): every bump at its peak, decreasing until the next event"""
    lambda0 = float(m.lambda0)
    if len(history) == 0:
        return lambda0
    c, beta, sigma = float(m.c), float(m.beta), float(m.sigma)
    lag = np.maximum(t - history.times, 0.0)
    return lambda0 + c * np.exp(-beta * lag).sum() / (2.0 * math.pi * sigma**2)


def sthp_simulate(m: SthpModel, seed) -> Tuple[EventSequence, ThinningTrace]:
    """One sequence from the STHP by thinning against its analytic bound"""
    return thin(
        lambda t, x, y, h: sthp_intensity(m, t, x, y, h),
        m.domain,
        lambda t, h: sthp_upper_bound(m, t, h),
        seed,
    )


def sthp_grad(m: SthpModel, batch: Sequence[EventSequence], scale: float = 1.0) -> Tuple[float, ParamVector]:
    """Value and gradient of scale·Σ log p(seq) in log-parameter space"""
    params = m.params()
    flat = params.data.clone().requires_grad_(True)
    live = m.with_params(params.with_data(flat))
    value = scale * pairwise_sum([live.log_likelihood(seq) for seq in batch])
    (grad,) = torch.autograd.grad(value, flat, allow_unused=True)
    if grad is None:
        grad = torch.zeros_like(flat)
    grad_vec = params.with_data(grad.detach())
    grad_vec.check_finite()
    return float(value.detach()), grad_vec


def sthp_fit(
    dataset: Sequence[EventSequence],
    domain: Domain,
    config: SthpConfig,
    optimizer: OptimizerConfig,
    validation: Optional[Sequence[EventSequence]] = None,
    quad_orders: Sequence[int] = (12, 12, 12),
) -> FitResult:
    """
    Adam ascent on the STHP log-likelihood in log-parameter space

    The initial λ₀ defaults to the Poisson MLE of the training data. With
    ``config.excitation`` off, c stays at 0 and the fit reduces to that MLE.
    """
    if not dataset:
        raise DatasetFormatError("training dataset is empty")
    lambda0 = config.lambda0
    if lambda0 is None:
        total = sum(len(s) for s in dataset)
        lambda0 = max(total, 1) / (len(dataset) * domain.t_max * domain.area)
    model = SthpModel.create(domain, lambda0, config.c, config.beta, config.sigma, config.excitation, quad_orders)
    params = model.params()
    frozen = () if config.excitation else ("log_c",)
    state = AdamState.zeros(len(params), lr=optimizer.lr)
    result = FitResult(model=model)
    validation = list(validation or [])
    size = len(dataset)
    best_params, best_score, bad_epochs, step = params, -float("inf"), 0, 0

    logger.info(f"[TRAIN] 🚀 STHP fit on {size} sequences, epochs={optimizer.epochs} lr={optimizer.lr}")
    for epoch in range(optimizer.epochs):
        order = shuffle_order(optimizer.seed, epoch, size)
        objectives: List[float] = []
        for start in range(0, size, optimizer.batch_size):
            batch = [dataset[i] for i in order[start : start + optimizer.batch_size]]
            tic = time.perf_counter()
            try:
                value, grad = sthp_grad(model, batch, scale=size / len(batch))
            except NonFiniteGradientError as e:
                raise TrainingAborted(
                    f"non-finite STHP gradient in '{e.block}' at step {step}", model.to_payload(), result.log
                ) from e
            if not np.isfinite(value):
                raise TrainingAborted(f"STHP objective became {value} at step {step}", model.to_payload(), result.log)
            if frozen:
                grad = grad.zero_blocks(frozen)
            state, params = adam_step(state, params, grad)
            model = model.with_params(params)
            result.log.append(
                {
                    "step": step,
                    "epoch": epoch,
                    "objective": value,
                    "grad_norm": grad.norm(),
                    "wall_ms": (time.perf_counter() - tic) * 1000.0,
                }
            )
            objectives.append(value)
            step += 1
            if optimizer.max_steps is not None and step >= optimizer.max_steps:
                break
        summary = {"epoch": epoch, "objective_mean": float(np.mean(objectives)), "validation_ll": None}
        if validation:
            with torch.no_grad():
                score = float(pairwise_sum([model.log_likelihood(s) for s in validation])) / len(validation)
            summary["validation_ll"] = score
            if score > best_score:
                best_score, best_params, bad_epochs, result.best_epoch = score, params, 0, epoch
            else:
                bad_epochs += 1
        else:
            best_params, result.best_epoch = params, epoch
        result.epochs.append(summary)
        logger.info(f"[TRAIN] STHP epoch {epoch}: mean objective {summary['objective_mean']:.6g}")
        if validation and bad_epochs >= optimizer.patience:
            result.stopped_early = True
            break
        if optimizer.max_steps is not None and step >= optimizer.max_steps:
            break

    result.model = model.with_params(best_params)
    result.best_validation = best_score if validation else None
    fitted = result.model
    logger.info(
        f"[TRAIN] ✅ STHP fit: λ₀={float(fitted.lambda0):.4g} c={float(fitted.c):.4g} "
        f"β={float(fitted.beta):.4g} σ={float(fitted.sigma):.4g}"
    )
    return result
