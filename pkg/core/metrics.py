# -*- coding: utf-8 -*-
"""
KSTPP Toolkit - Evaluation metrics

Relative L2 intensity errors against a ground-truth process, prediction
errors, and a few diagnostics of a fitted KSTPP model.
"""

import dataclasses
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch

from core.errors import MetricError
from core.events import EventSequence, PointProcessModel
from core.model import KstppModel, influence_slice, offset_grid
from core.predict import TIME_CHUNK, marginal_on_times
from core.quadrature import grid_cell_centers
from core.simulate import SynthConfig, SynthOracleModel
from core.tensor_kron import DTYPE
from utils.logger import logger
from utils.parallel import parallel_map

DEFAULT_INTERIOR = 3
DEFAULT_GRID = 16

Truth = Union[SynthConfig, PointProcessModel]


def relative_l2(estimate, truth) -> float:
    """‖estimate − truth‖₂ / ‖truth‖₂"""
    est = np.asarray(estimate, dtype=np.float64).reshape(-1)
    ref = np.asarray(truth, dtype=np.float64).reshape(-1)
    if est.shape != ref.shape:
        raise MetricError(f"estimate has {est.size} entries, truth has {ref.size}")
    denom = np.linalg.norm(ref)
    if denom == 0.0:
        raise MetricError("truth is identically zero")
    return float(np.linalg.norm(est - ref) / denom)


@dataclass(frozen=True)
class IntensityProbeSet:
    """Probe times per sequence, plus the side of the uniform spatial grid"""

    times: Tuple[np.ndarray, ...]
    grid_size: Optional[int] = DEFAULT_GRID

    def __len__(self) -> int:
        return len(self.times)


def probe_times(seq: EventSequence, t_max: float, interior: int = DEFAULT_INTERIOR) -> np.ndarray:
    """
    Every event time plus ``interior`` equally spaced points in each gap

    Gaps include (0, t₁) and (t_N, T). At an event time the intensity is the
    left limit: the event itself is not yet in the history.
    """
    bounds = np.concatenate([[0.0], seq.times, [t_max]])
    fractions = np.arange(1, interior + 1) / (interior + 1)
    gaps = [lo + (hi - lo) * fractions for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    points = np.concatenate([seq.times] + gaps) if gaps else seq.times
    return np.sort(points[(points > 0.0) & (points <= t_max)])


def build_probe_set(
    sequences: Sequence[EventSequence],
    t_max: float,
    interior: int = DEFAULT_INTERIOR,
    grid_size: Optional[int] = DEFAULT_GRID,
) -> IntensityProbeSet:
    return IntensityProbeSet(tuple(probe_times(s, t_max, interior) for s in sequences), grid_size)


def _truth_model(truth: Truth, like: PointProcessModel) -> PointProcessModel:
    if isinstance(truth, SynthConfig):
        return SynthOracleModel(truth, spatial_orders=like.spatial_orders, time_order=like.time_order)
    return truth


def grid_intensity(model: PointProcessModel, ts: torch.Tensor, xs, ys, history: EventSequence) -> torch.Tensor:
    parts = []
    with torch.no_grad():
        for start in range(0, ts.shape[0], TIME_CHUNK):
            chunk = ts[start : start + TIME_CHUNK]
            parts.append(model.intensity_grid(chunk, xs, ys, history.before(float(chunk.max()))))
    if not parts:
        return torch.zeros((0, len(xs), len(ys)), dtype=DTYPE)
    return torch.cat(parts)


def _summarize(errors: List[float], label: str) -> Tuple[float, float]:
    if not errors:
        raise MetricError(f"{label}: no sequences to evaluate")
    arr = np.asarray(errors)
    logger.info(f"[EVAL] {label}: mean {arr.mean():.4g}, std {arr.std():.4g} over {arr.size} sequences")
    return float(arr.mean()), float(arr.std())


def temporal_intensity_error(
    model: PointProcessModel,
    truth: Truth,
    sequences: Sequence[EventSequence],
    probes: Optional[IntensityProbeSet] = None,
    workers: Optional[int] = None,
) -> Tuple[float, float]:
    """
    Mean and std over sequences of the relative L2 error of λ(t | ℋ) at the probes

    The ground truth is integrated over 𝒮 with the same Gauss-Legendre rule as
    the model.
    """
    reference = _truth_model(truth, model)
    probes = probes or build_probe_set(sequences, model.domain.t_max)

    def _one(i: int) -> float:
        ts = torch.as_tensor(probes.times[i], dtype=DTYPE)
        est = marginal_on_times(model, ts, sequences[i])
        ref = marginal_on_times(reference, ts, sequences[i])
        return relative_l2(est.numpy(), ref.numpy())

    return _summarize(parallel_map(_one, range(len(sequences)), workers=workers), "temporal intensity error")


def spatiotemporal_intensity_error(
    model: PointProcessModel,
    truth: Truth,
    sequences: Sequence[EventSequence],
    probes: Optional[IntensityProbeSet] = None,
    workers: Optional[int] = None,
) -> Tuple[float, float]:
    """As ``temporal_intensity_error`` over probe times × a grid of cell centers of 𝒮"""
    reference = _truth_model(truth, model)
    probes = probes or build_probe_set(sequences, model.domain.t_max)
    size = probes.grid_size or DEFAULT_GRID
    xs = grid_cell_centers(*model.domain.x_range, size)
    ys = grid_cell_centers(*model.domain.y_range, size)

    def _one(i: int) -> float:
        ts = torch.as_tensor(probes.times[i], dtype=DTYPE)
        est = grid_intensity(model, ts, xs, ys, sequences[i])
        ref = grid_intensity(reference, ts, xs, ys, sequences[i])
        return relative_l2(est.numpy(), ref.numpy())

    return _summarize(parallel_map(_one, range(len(sequences)), workers=workers), "spatiotemporal intensity error")


def prediction_errors(predictions, truths=None) -> Tuple[float, float]:
    """
    (time RMSE over τ residuals, mean Euclidean location error)

    ``predictions`` is a sequence of prediction records (or a DataFrame) holding
    ``t_pred``, ``x_pred``, ``y_pred`` and, unless ``truths`` is given
    separately, ``t_true``, ``x_true``, ``y_true``.
    """
    pred = pd.DataFrame(predictions)
    if truths is not None:
        truth = pd.DataFrame(truths)
        if len(truth) != len(pred):
            raise MetricError(f"{len(pred)} predictions but {len(truth)} truths")
        pred = pred.assign(**{c: truth[c].to_numpy() for c in ("t_true", "x_true", "y_true")})
    if pred.empty:
        raise MetricError("no prediction records")
    missing = {"t_pred", "x_pred", "y_pred", "t_true", "x_true", "y_true"} - set(pred.columns)
    if missing:
        raise MetricError(f"prediction records lack columns {sorted(missing)}")
    # τ residuals equal time residuals: both share the conditioning time t_N
    dt = pred["t_pred"].to_numpy() - pred["t_true"].to_numpy()
    dist = np.hypot(pred["x_pred"].to_numpy() - pred["x_true"].to_numpy(), pred["y_pred"].to_numpy() - pred["y_true"].to_numpy())
    return float(np.sqrt(np.mean(dt**2))), float(np.mean(dist))


def influence_sign_summary(
    model: KstppModel,
    lag: float,
    distance_threshold: float,
    size: int = 32,
) -> Tuple[float, float]:
    """Mean of f(lag, ·, ·) over offsets nearer than / farther than the threshold"""
    dx, dy = offset_grid(model, size)
    values = influence_slice(model, lag, dx, dy)
    dist = torch.sqrt(dx[:, None] ** 2 + dy[None, :] ** 2)
    near = values[dist < distance_threshold]
    far = values[dist > distance_threshold]
    if near.numel() == 0 or far.numel() == 0:
        raise MetricError(f"distance threshold {distance_threshold} leaves one side of the offset grid empty")
    return float(near.mean()), float(far.mean())


def quadrature_ablation(
    model: KstppModel,
    sequences: Sequence[EventSequence],
    orders: Iterable[Sequence[int]],
) -> List[Dict[str, float]]:
    """Mean per-sequence log-likelihood of the same model under several quadrature orders"""
    rows = []
    with torch.no_grad():
        for q in orders:
            variant = dataclasses.replace(model, quad_orders=tuple(int(v) for v in q))
            ops = variant.operators()
            lls = [float(variant.log_likelihood(s, ops=ops)) for s in sequences]
            rows.append({"q0": int(q[0]), "q1": int(q[1]), "q2": int(q[2]), "mean_log_likelihood": float(np.mean(lls))})
            logger.info(f"[EVAL] quadrature {tuple(q)}: mean log-likelihood {rows[-1]['mean_log_likelihood']:.6g}")
    return rows


def aggregate_runs(rows: Sequence[Dict[str, float]]) -> Dict[str, Dict[str, float]]:
    """Mean and std of every numeric metric across repeated runs"""
    frame = pd.DataFrame(list(rows)).select_dtypes(include=[np.number])
    return {col: {"mean": float(frame[col].mean()), "std": float(frame[col].std(ddof=0))} for col in frame.columns}
