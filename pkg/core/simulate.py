# -*- coding: utf-8 -*-
"""
KSTPP Toolkit - Synthetic processes and thinning

The synthetic processes have intensity

    λ(t, x, y) = max(0, λ₀ + Σ_{tₙ<t} cₙ·e^{−β(t−tₙ)}·e^{−dₙ²/(2σ²)}/(2πσ²))

where cₙ comes from a switching rule on the lag or on the distance dₙ to the
event. Sequences are drawn by Ogata thinning with uniform spatial proposals.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, PositiveFloat

from core.errors import ConfigError, ThinningBoundError
from core.events import Domain, EventSequence, PointProcessModel, check_history, quadrature_log_likelihood
from core.tensor_kron import DTYPE
from utils.config_manager import ConfigurationManager
from utils.logger import logger
from utils.parallel import parallel_map

SPLITS = ("train", "validation", "test")
BOUND_RTOL = 1e-9
EVENT_CHUNK = 256

IntensityFn = Callable[[float, float, float, EventSequence], float]
BoundFn = Callable[[float, EventSequence], float]
SeedLike = Union[int, np.random.SeedSequence]


class TemporalSwitch(BaseModel):
    """c = c_before while the lag is below the threshold, c_after from then on"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["temporal_switch"] = "temporal_switch"
    threshold: PositiveFloat
    c_before: float
    c_after: float

    def coefficients(self, lag, distance):
        return np.where(np.asarray(lag) < self.threshold, self.c_before, self.c_after)

    @property
    def max_positive(self) -> float:
        return max(0.0, self.c_before, self.c_after)


class DistanceSwitch(BaseModel):
    """c = c_near within the threshold distance, c_far beyond it"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["distance_switch"] = "distance_switch"
    threshold: PositiveFloat
    c_near: float
    c_far: float

    def coefficients(self, lag, distance):
        return np.where(np.asarray(distance) > self.threshold, self.c_far, self.c_near)

    @property
    def max_positive(self) -> float:
        return max(0.0, self.c_near, self.c_far)


class SynthConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    lambda0: NonNegativeFloat
    beta: PositiveFloat
    sigma: PositiveFloat
    c_rule: Union[TemporalSwitch, DistanceSwitch] = Field(discriminator="kind")
    domain: Domain

    @property
    def peak(self) -> float:
        """Peak of one Gaussian bump, 1/(2πσ²)"""
        return 1.0 / (2.0 * math.pi * self.sigma**2)


@dataclass
class ThinningTrace:
    proposals: int = 0
    accepted: int = 0
    rejected_negative: int = 0

    def merge(self, other: "ThinningTrace") -> "ThinningTrace":
        return ThinningTrace(
            self.proposals + other.proposals,
            self.accepted + other.accepted,
            self.rejected_negative + other.rejected_negative,
        )


# ---------------------------------------------------------------------- intensity


def synth_raw(cfg: SynthConfig, t: float, x: float, y: float, history: EventSequence) -> float:
    """Unclamped sum; only events strictly before t contribute"""
    if len(history) == 0:
        return float(cfg.lambda0)
    mask = history.times < t
    lag = t - history.times[mask]
    dist = np.hypot(x - history.xs[mask], y - history.ys[mask])
    c = cfg.c_rule.coefficients(lag, dist)
    bumps = c * np.exp(-cfg.beta * lag) * np.exp(-(dist**2) / (2.0 * cfg.sigma**2)) * cfg.peak
    return float(cfg.lambda0 + bumps.sum())


def synth_intensity(cfg: SynthConfig, t: float, x: float, y: float, history: EventSequence) -> float:
    """
    Synthetic intensity clamped at 0

    Raises:
        HistoryOrderError: history holds an event at or after t
    """
    check_history(history, t)
    return max(0.0, synth_raw(cfg, t, x, y, history))


def synth_intensity_grid(
    cfg: SynthConfig,
    ts: torch.Tensor,
    xs: torch.Tensor,
    ys: torch.Tensor,
    history: EventSequence,
) -> torch.Tensor:
    """Clamped intensity on ts × xs × ys, shape (T, X, Y); each time sees events before it"""
    ts = torch.as_tensor(ts, dtype=DTYPE).reshape(-1)
    xs = torch.as_tensor(xs, dtype=DTYPE).reshape(-1)
    ys = torch.as_tensor(ys, dtype=DTYPE).reshape(-1)
    out = torch.full((ts.shape[0], xs.shape[0], ys.shape[0]), float(cfg.lambda0), dtype=DTYPE)
    tn_all, xn_all, yn_all = history.as_tensors()
    for start in range(0, len(history), EVENT_CHUNK):
        tn = tn_all[start : start + EVENT_CHUNK]
        xn = xn_all[start : start + EVENT_CHUNK]
        yn = yn_all[start : start + EVENT_CHUNK]
        lag = ts[None, :] - tn[:, None]  # (n, T)
        dx2 = (xs[None, :] - xn[:, None]) ** 2  # (n, X)
        dy2 = (ys[None, :] - yn[:, None]) ** 2  # (n, Y)
        d2 = dx2[:, :, None] + dy2[:, None, :]  # (n, X, Y)
        c = torch.as_tensor(
            cfg.c_rule.coefficients(lag.numpy()[:, :, None, None], np.sqrt(d2.numpy())[:, None, :, :]),
            dtype=DTYPE,
        )
        decay = torch.where(lag > 0, torch.exp(-cfg.beta * lag.clamp(min=0.0)), torch.zeros_like(lag))
        spatial = torch.exp(-d2 / (2.0 * cfg.sigma**2)) * cfg.peak
        out = out + (c * decay[:, :, None, None] * spatial[:, None, :, :]).sum(dim=0)
    return out.clamp(min=0.0)


def synth_upper_bound(cfg: SynthConfig, t: float, history: EventSequence) -> float:
    """
    Density bound valid from t until the next event

    λ₀ + Σ c⁺·e^{−β(t−tₙ)}/(2πσ²) with c⁺ the largest nonnegative coefficient
    of the rule. Clamping only lowers the intensity, and every positive term
    decays in time.
    """
    c_pos = cfg.c_rule.max_positive
    if len(history) == 0 or c_pos == 0.0:
        return float(cfg.lambda0)
    lag = np.maximum(t - history.times, 0.0)
    return float(cfg.lambda0 + c_pos * cfg.peak * np.exp(-cfg.beta * lag).sum())


class SynthOracleModel(PointProcessModel):
    """Ground truth of a SynthConfig behind the common model interface"""

    KIND = "synth_oracle"

    def __init__(self, cfg: SynthConfig, spatial_orders: Tuple[int, int] = (12, 12), time_order: int = 12):
        self.cfg = cfg
        self.domain = cfg.domain
        self._spatial_orders = tuple(spatial_orders)
        self._time_order = int(time_order)

    @property
    def spatial_orders(self) -> Tuple[int, int]:
        return self._spatial_orders  # type: ignore[return-value]

    @property
    def time_order(self) -> int:
        return self._time_order

    def intensity_grid(self, ts, xs, ys, history: EventSequence) -> torch.Tensor:
        return synth_intensity_grid(self.cfg, ts, xs, ys, history)

    def log_likelihood(self, seq: EventSequence) -> torch.Tensor:
        return quadrature_log_likelihood(self, seq)

    def to_payload(self) -> dict:
        return {"config": self.cfg.model_dump(mode="json")}

    @classmethod
    def from_payload(cls, payload: dict, domain: Domain) -> "SynthOracleModel":
        data = dict(payload["config"])
        data["domain"] = domain.model_dump(mode="json")
        return cls(SynthConfig.model_validate(data))


# ---------------------------------------------------------------------- thinning


def _generator(seed: SeedLike) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed if isinstance(seed, np.random.SeedSequence) else int(seed)))


def thin(
    intensity: IntensityFn,
    domain: Domain,
    upper_bound_fn: BoundFn,
    seed: SeedLike,
) -> Tuple[EventSequence, ThinningTrace]:
    """
    Ogata thinning over [0, T] × 𝒮

    Args:
        intensity: λ(t, x, y, history) ≥ 0
        domain: observation window
        upper_bound_fn: density bound M(t, history) with λ ≤ M on 𝒮 from t until
            the next accepted event; the proposal rate is M·area
        seed: integer or SeedSequence for the proposal stream

    Raises:
        ThinningBoundError: a proposal's intensity exceeded its bound
    """
    rng = _generator(seed)
    area = domain.area
    (ax, bx), (ay, by) = domain.x_range, domain.y_range
    times: List[float] = []
    xs: List[float] = []
    ys: List[float] = []
    history = EventSequence.empty()
    trace = ThinningTrace()
    t = 0.0
    while True:
        bound = float(upper_bound_fn(t, history))
        if bound <= 0.0:
            break
        t += rng.exponential(1.0 / (bound * area))
        if t > domain.t_max:
            break
        x = rng.uniform(ax, bx)
        y = rng.uniform(ay, by)
        u = rng.uniform()
        trace.proposals += 1
        lam = float(intensity(t, x, y, history))
        if lam > bound * (1.0 + BOUND_RTOL):
            raise ThinningBoundError(
                f"intensity {lam:.6g} exceeds the thinning bound {bound:.6g} at (t={t:.6g}, x={x:.6g}, y={y:.6g})"
            )
        if lam <= 0.0:
            trace.rejected_negative += 1
            continue
        if u * bound <= lam:
            times.append(t)
            xs.append(x)
            ys.append(y)
            history = EventSequence(np.asarray(times), np.asarray(xs), np.asarray(ys))
            trace.accepted += 1
    return history, trace


def simulate_sequence(cfg: SynthConfig, seed: SeedLike) -> Tuple[EventSequence, ThinningTrace]:
    return thin(
        lambda t, x, y, h: max(0.0, synth_raw(cfg, t, x, y, h)),
        cfg.domain,
        lambda t, h: synth_upper_bound(cfg, t, h),
        seed,
    )


def split_seeds(seed: int, split: str, count: int) -> List[np.random.SeedSequence]:
    """Counter-based streams: sequence i of a split never depends on other splits' sizes"""
    split_id = SPLITS.index(split)
    return [np.random.SeedSequence([int(seed), split_id, i]) for i in range(count)]


def make_dataset(
    cfg: SynthConfig,
    n_train: int,
    n_val: int,
    n_test: int,
    seed: int,
    output_dir: Optional[Union[str, Path]] = None,
    workers: Optional[int] = None,
) -> Dict[str, List[EventSequence]]:
    """
    Draw train/validation/test splits with disjoint seed streams

    When ``output_dir`` is given, each split is written with its manifest.
    """
    counts = {"train": n_train, "validation": n_val, "test": n_test}
    if any(n < 0 for n in counts.values()):
        raise ConfigError(f"split counts must be >= 0, got {counts}")
    splits: Dict[str, List[EventSequence]] = {}
    total = ThinningTrace()
    for split, count in counts.items():
        drawn = parallel_map(lambda s: simulate_sequence(cfg, s), split_seeds(seed, split, count), workers=workers)
        splits[split] = [seq for seq, _ in drawn]
        for _, trace in drawn:
            total = total.merge(trace)
        logger.info(f"[SIMULATE] {split}: {count} sequences, {sum(len(s) for s in splits[split])} events")
    logger.info(
        f"[SIMULATE] ✅ Thinning: {total.accepted}/{total.proposals} accepted, "
        f"{total.rejected_negative} at zero intensity"
    )
    if output_dir is not None:
        from core.dataset_io import DatasetManifest, save_dataset

        generator = cfg.model_dump(mode="json")
        for split, sequences in splits.items():
            manifest = DatasetManifest(
                domain=cfg.domain, generator=generator, split=split, count=len(sequences), seed=seed
            )
            save_dataset(output_dir, split, sequences, manifest)
    return splits


def load_synth_preset(name: str, overrides: Optional[dict] = None) -> SynthConfig:
    """``config/presets/<name>.json`` as a SynthConfig, optionally deep-merged with overrides"""
    data = ConfigurationManager.load_preset(name)
    if not data:
        raise ConfigError(f"unknown preset '{name}'")
    if overrides:
        data = ConfigurationManager.deep_merge(data, overrides)
    try:
        return SynthConfig.model_validate(data)
    except Exception as e:
        raise ConfigError(f"invalid preset '{name}': {e}") from e
