# -*- coding: utf-8 -*-
"""
KSTPP Toolkit - Next-event prediction

E[τ | ℋ] = ∫₀^∞ e^{−Λ(τ)} dτ with Λ(τ) = ∫₀^τ λ(t_N + u | ℋ) du, evaluated on
(0, 1) under τ = u/(1−u); the location is the conditional mean of
λ(t_pred, ·, · | ℋ) normalized over 𝒮. Works for any PointProcessModel.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from core.errors import PredictionError
from core.events import EventSequence, PointProcessModel, check_history
from core.quadrature import (
    DEFAULT_IMPROPER_ORDER,
    gauss_legendre,
    improper_order_check,
    inner_order,
    integrate_improper,
    spatial_weights,
)
from core.tensor_kron import DTYPE
from utils.logger import logger
from utils.parallel import parallel_map

TIME_CHUNK = 64


@dataclass
class Prediction:
    t_next: float
    x_next: float
    y_next: float
    diagnostics: Dict[str, object] = field(default_factory=dict)


def _spatial_rule(model: PointProcessModel):
    q1, q2 = model.spatial_orders
    rule_x = gauss_legendre(q1, *model.domain.x_range)
    rule_y = gauss_legendre(q2, *model.domain.y_range)
    return rule_x, rule_y, spatial_weights(rule_x, rule_y)


def marginal_on_times(model: PointProcessModel, ts: torch.Tensor, history: EventSequence) -> torch.Tensor:
    """λ(t | ℋ) = ∬ λ(t, x, y | ℋ) dx dy at every t in ``ts`` (spatial Gauss-Legendre)"""
    ts = torch.as_tensor(ts, dtype=DTYPE).reshape(-1)
    rule_x, rule_y, w = _spatial_rule(model)
    out = []
    with torch.no_grad():
        for start in range(0, ts.shape[0], TIME_CHUNK):
            chunk = ts[start : start + TIME_CHUNK]
            grid = model.intensity_grid(chunk, rule_x.nodes, rule_y.nodes, history.before(float(chunk.max())))
            out.append((grid * w[None, :, :]).sum(dim=(1, 2)))
    return torch.cat(out) if out else torch.zeros(0, dtype=DTYPE)


def marginal_temporal_intensity(model: PointProcessModel, t: float, history: EventSequence) -> float:
    """
    Spatially integrated intensity at time t

    Raises:
        HistoryOrderError: history holds an event at or after t
    """
    check_history(history, t)
    return float(marginal_on_times(model, torch.tensor([float(t)], dtype=DTYPE), history)[0])


def _compensator_nodes(model: PointProcessModel, history: EventSequence, tau: float) -> Tuple[torch.Tensor, torch.Tensor]:
    t_n = history.last_time
    rule = gauss_legendre(inner_order(model.time_order, tau), t_n, t_n + tau)
    return rule.nodes, rule.weights


def compensator(model: PointProcessModel, history: EventSequence, tau: float) -> float:
    """Λ(τ) = ∫₀^τ λ(t_N + u | ℋ) du; zero at τ = 0"""
    if tau < 0:
        raise PredictionError(f"compensator horizon must be >= 0, got {tau}")
    if tau == 0:
        return 0.0
    nodes, weights = _compensator_nodes(model, history, float(tau))
    return float((marginal_on_times(model, nodes, history) * weights).sum())


def compensators(model: PointProcessModel, history: EventSequence, taus: Sequence[float]) -> Tuple[torch.Tensor, int]:
    """Λ at several horizons in one batched evaluation; returns (values, evaluation count)"""
    node_sets = [_compensator_nodes(model, history, float(tau)) for tau in taus]
    all_nodes = torch.cat([n for n, _ in node_sets])
    marginal = marginal_on_times(model, all_nodes, history)
    values = []
    offset = 0
    for nodes, weights in node_sets:
        size = nodes.shape[0]
        values.append((marginal[offset : offset + size] * weights).sum())
        offset += size
    return torch.stack(values), int(all_nodes.shape[0])


def expected_waiting_time(model: PointProcessModel, history: EventSequence, n: Optional[int] = None) -> Tuple[float, dict]:
    """
    E[τ | ℋ] by the (0, 1) transform; returns (value, diagnostics)

    Raises:
        NonFiniteIntegrandError: the transformed integrand broke at some node u
    """
    n = improper_order_check(n)
    stats = {"outer_order": n, "inner_order_max": 0, "lambda_evaluations": 0}

    def survival(taus: torch.Tensor) -> torch.Tensor:
        values, count = compensators(model, history, taus.tolist())
        stats["lambda_evaluations"] += count
        stats["inner_order_max"] = max(inner_order(model.time_order, float(t)) for t in taus.tolist())
        return torch.exp(-values)

    value = float(integrate_improper(survival, n))
    return value, stats


def expected_next_time(model: PointProcessModel, history: EventSequence, n: Optional[int] = None) -> float:
    """t_N + E[τ | ℋ]"""
    value, _ = expected_waiting_time(model, history, n)
    return history.last_time + value


def expected_location(model: PointProcessModel, history: EventSequence, t_pred: float) -> Tuple[float, float]:
    """
    Conditional mean location at ``t_pred``

    Raises:
        HistoryOrderError: history holds an event at or after t_pred
        PredictionError: the spatial intensity integrates to zero
    """
    check_history(history, t_pred)
    rule_x, rule_y, w = _spatial_rule(model)
    with torch.no_grad():
        grid = model.intensity_grid(torch.tensor([float(t_pred)], dtype=DTYPE), rule_x.nodes, rule_y.nodes, history)[0]
    mass = w * grid
    total = float(mass.sum())
    if not np.isfinite(total) or total <= 0.0:
        raise PredictionError(f"spatial intensity at t={t_pred} integrates to {total}")
    x = float((mass * rule_x.nodes[:, None]).sum()) / total
    y = float((mass * rule_y.nodes[None, :]).sum()) / total
    return x, y


def spatial_density_mass(model: PointProcessModel, history: EventSequence, t_pred: float) -> float:
    """∬ p(x, y | t_pred) with the moment rule; 1 up to rounding"""
    rule_x, rule_y, w = _spatial_rule(model)
    with torch.no_grad():
        grid = model.intensity_grid(torch.tensor([float(t_pred)], dtype=DTYPE), rule_x.nodes, rule_y.nodes, history)[0]
    density = grid / float((w * grid).sum())
    return float((w * density).sum())


def predict_next(model: PointProcessModel, history: EventSequence, n: Optional[int] = None) -> Prediction:
    """Posterior-mean time and location of the next event"""
    closed = model.closed_form_prediction(history)
    if closed is not None:
        t_next, x_next, y_next = closed
        return Prediction(t_next, x_next, y_next, {"closed_form": True, "lambda_evaluations": 0})
    waiting, stats = expected_waiting_time(model, history, n)
    if not waiting > 0.0:
        raise PredictionError(f"expected waiting time is {waiting}, not positive")
    t_next = history.last_time + waiting
    x_next, y_next = expected_location(model, history, t_next)
    stats["spatial_orders"] = list(model.spatial_orders)
    stats["closed_form"] = False
    return Prediction(t_next, x_next, y_next, stats)


def predict_sequence(
    model: PointProcessModel,
    seq: EventSequence,
    sequence_id: int = 0,
    n: int = DEFAULT_IMPROPER_ORDER,
    workers: Optional[int] = None,
) -> List[dict]:
    """
    One-step-ahead predictions: event k from the true prefix of k events, k ≥ 1

    Returns:
        One record per predicted event with true and predicted t, x, y
    """
    return parallel_map(lambda k: _record(model, seq, sequence_id, k, n), range(1, len(seq)), workers=workers)


def _record(model: PointProcessModel, seq: EventSequence, sequence_id: int, k: int, n: int) -> dict:
    pred = predict_next(model, seq.prefix(k), n)
    return {
        "sequence_id": sequence_id,
        "event_index": k,
        "t_last": float(seq.times[k - 1]),
        "t_true": float(seq.times[k]),
        "t_pred": pred.t_next,
        "x_true": float(seq.xs[k]),
        "x_pred": pred.x_next,
        "y_true": float(seq.ys[k]),
        "y_pred": pred.y_next,
    }


def predict_dataset(
    model: PointProcessModel,
    sequences: Sequence[EventSequence],
    n: int = DEFAULT_IMPROPER_ORDER,
    workers: Optional[int] = None,
) -> List[dict]:
    """``predict_sequence`` over a collection, records in (sequence, event) order"""
    jobs = [(i, k) for i, seq in enumerate(sequences) for k in range(1, len(seq))]
    logger.info(f"[PREDICT] 🚀 {len(jobs)} one-step-ahead predictions over {len(sequences)} sequences")

    def _one(job: Tuple[int, int]) -> dict:
        i, k = job
        return _record(model, sequences[i], i, k, n)

    records = parallel_map(_one, jobs, workers=workers)
    logger.info("[PREDICT] ✅ Done")
    return records
