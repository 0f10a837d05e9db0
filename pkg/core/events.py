# -*- coding: utf-8 -*-
"""
KSTPP Toolkit - Event sequences, domains and the common model interface
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, PositiveFloat, model_validator

from core.errors import DomainError, HistoryOrderError
from core.quadrature import integrate_values, product_rule
from core.tensor_kron import DTYPE
from utils.parallel import pairwise_sum

LOG_FLOOR = 1e-300


class Domain(BaseModel):
    """[0, T] × [a_x, b_x] × [a_y, b_y]"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    t_max: PositiveFloat
    x_range: Tuple[float, float]
    y_range: Tuple[float, float]

    @model_validator(mode="after")
    def _check_ranges(self) -> "Domain":
        if not self.x_range[0] < self.x_range[1]:
            raise ValueError(f"x_range must satisfy a_x < b_x, got {self.x_range}")
        if not self.y_range[0] < self.y_range[1]:
            raise ValueError(f"y_range must satisfy a_y < b_y, got {self.y_range}")
        return self

    @property
    def area(self) -> float:
        return (self.x_range[1] - self.x_range[0]) * (self.y_range[1] - self.y_range[0])

    @property
    def centroid(self) -> Tuple[float, float]:
        return 0.5 * (self.x_range[0] + self.x_range[1]), 0.5 * (self.y_range[0] + self.y_range[1])

    @property
    def x_span(self) -> float:
        return self.x_range[1] - self.x_range[0]

    @property
    def y_span(self) -> float:
        return self.y_range[1] - self.y_range[0]

    def contains(self, t: float, x: float, y: float) -> bool:
        return (
            0.0 <= t <= self.t_max
            and self.x_range[0] <= x <= self.x_range[1]
            and self.y_range[0] <= y <= self.y_range[1]
        )


@dataclass(frozen=True)
class EventSequence:
    """Events (tₙ, xₙ, yₙ) ordered by strictly increasing time"""

    times: np.ndarray
    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self) -> None:
        for name in ("times", "xs", "ys"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(-1))
        if not (len(self.times) == len(self.xs) == len(self.ys)):
            raise DomainError(
                f"times, xs and ys must have equal length, got {len(self.times)}, {len(self.xs)}, {len(self.ys)}"
            )
        if len(self.times) and not np.all(np.isfinite(np.concatenate([self.times, self.xs, self.ys]))):
            raise DomainError("event coordinates must be finite")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise HistoryOrderError("event times must be strictly increasing")

    @classmethod
    def empty(cls) -> "EventSequence":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0))

    @classmethod
    def from_record(cls, record: Dict[str, Sequence[float]]) -> "EventSequence":
        return cls(np.asarray(record["t"]), np.asarray(record["x"]), np.asarray(record["y"]))

    def to_record(self) -> Dict[str, List[float]]:
        return {"t": self.times.tolist(), "x": self.xs.tolist(), "y": self.ys.tolist()}

    def __len__(self) -> int:
        return len(self.times)

    @property
    def last_time(self) -> float:
        return float(self.times[-1]) if len(self.times) else 0.0

    def prefix(self, n: int) -> "EventSequence":
        """First n events"""
        return EventSequence(self.times[:n], self.xs[:n], self.ys[:n])

    def before(self, t: float) -> "EventSequence":
        """History ℋ_t: events strictly before t"""
        n = int(np.searchsorted(self.times, t, side="left"))
        return self.prefix(n)

    def validate(self, domain: Domain) -> "EventSequence":
        """Check containment in ``domain``; returns self for chaining"""
        if len(self.times) == 0:
            return self
        if self.times[0] <= 0.0 or self.times[-1] > domain.t_max:
            raise DomainError(f"event times must lie in (0, {domain.t_max}]")
        ax, bx = domain.x_range
        ay, by = domain.y_range
        if np.any(self.xs < ax) or np.any(self.xs > bx) or np.any(self.ys < ay) or np.any(self.ys > by):
            raise DomainError("event locations must lie inside the spatial domain")
        return self

    def as_tensors(self) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return (
            torch.as_tensor(self.times, dtype=DTYPE),
            torch.as_tensor(self.xs, dtype=DTYPE),
            torch.as_tensor(self.ys, dtype=DTYPE),
        )


def check_history(history: EventSequence, t: float) -> None:
    """Reject histories holding an event at or after ``t``"""
    if len(history) and history.times[-1] >= t:
        raise HistoryOrderError(f"history contains an event at {history.times[-1]} which is not before t={t}")


class PointProcessModel(ABC):
    """
    Interface shared by KSTPP and the baselines

    Evaluation code (prediction, metrics, CLI) only talks to this interface.
    """

    KIND = "abstract"

    domain: Domain

    @property
    def spatial_orders(self) -> Tuple[int, int]:
        """Gauss-Legendre orders for spatial integrals"""
        return (12, 12)

    @property
    def time_order(self) -> int:
        """Base Gauss-Legendre order for temporal integrals"""
        return 12

    @abstractmethod
    def intensity_grid(self, ts: torch.Tensor, xs: torch.Tensor, ys: torch.Tensor, history: EventSequence) -> torch.Tensor:
        """
        λ on the product ts × xs × ys

        Only events strictly before each time contribute, so a history that extends
        past some of ``ts`` is allowed.
        """

    @abstractmethod
    def log_likelihood(self, seq: EventSequence) -> torch.Tensor:
        """log p(seq) over [0, T] × 𝒮"""

    @abstractmethod
    def to_payload(self) -> dict:
        """Kind-specific checkpoint payload"""

    def intensity(self, t: float, x: float, y: float, history: EventSequence) -> torch.Tensor:
        """λ(t, x, y | history); history must lie strictly before t"""
        check_history(history, t)
        grid = self.intensity_grid(
            torch.tensor([t], dtype=DTYPE), torch.tensor([x], dtype=DTYPE), torch.tensor([y], dtype=DTYPE), history
        )
        return grid.reshape(())

    def closed_form_prediction(self, history: EventSequence) -> Optional[Tuple[float, float, float]]:
        """(t_next, x_next, y_next) when the model has one; None means use quadrature"""
        return None


def event_intensities(model: PointProcessModel, seq: EventSequence) -> torch.Tensor:
    """λ at every event of ``seq``, each conditioned on its own prefix"""
    values = [
        model.intensity_grid(
            torch.tensor([seq.times[n]], dtype=DTYPE),
            torch.tensor([seq.xs[n]], dtype=DTYPE),
            torch.tensor([seq.ys[n]], dtype=DTYPE),
            seq.prefix(n),
        ).reshape(())
        for n in range(len(seq))
    ]
    return torch.stack(values) if values else torch.zeros(0, dtype=DTYPE)


def quadrature_log_likelihood(model: PointProcessModel, seq: EventSequence) -> torch.Tensor:
    """
    Log-likelihood of any model through its ``intensity_grid``

    The compensator is a sum of per-interval tensor-product Gauss-Legendre
    integrals over (tₙ, tₙ₊₁) × 𝒮; event intensities are floored at 1e-300.
    """
    seq.validate(model.domain)
    q1, q2 = model.spatial_orders
    event_term = torch.log(torch.clamp(event_intensities(model, seq), min=LOG_FLOOR)).sum()
    bounds = [0.0] + seq.times.tolist() + [model.domain.t_max]
    pieces = []
    for n in range(len(bounds) - 1):
        if bounds[n + 1] <= bounds[n]:
            continue
        rule = product_rule(
            (model.time_order, q1, q2), (bounds[n], bounds[n + 1]), model.domain.x_range, model.domain.y_range
        )
        t_nodes, x_nodes, y_nodes = (r.nodes for r in rule.rules)
        pieces.append(integrate_values(model.intensity_grid(t_nodes, x_nodes, y_nodes, seq.prefix(n)), rule))
    compensator = pairwise_sum(pieces) if pieces else torch.zeros((), dtype=DTYPE)
    return event_term - compensator
