# -*- coding: utf-8 -*-
"""
KSTPP Toolkit - KSTPP intensity model

λ(t, x, y | ℋ) = σ_β(g(x, y) + Σ_{tₙ<t} f(t−tₙ, x−xₙ, y−yₙ)) with g a 2-axis grid GP
over the spatial domain and f a 3-axis grid GP over (lag, Δx, Δy). The likelihood
compensator is integrated piecewise between events with tensor-product
Gauss-Legendre rules.
"""

import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from core.errors import DomainError, HistoryOrderError
from core.events import LOG_FLOOR, Domain, EventSequence, PointProcessModel
from core.grids import AxisGrid, GridGP, eval_batch, eval_on_product_grid, log_prior
from core.kernels import (
    DEFAULT_JITTER,
    KernelFamily,
    KernelOperator,
    KernelSpec,
    cross_weights,
    default_lengthscale,
)
from core.quadrature import ProductRule3, gauss_legendre, integrate_values, product_rule
from core.tensor_kron import DTYPE, Tensor3
from utils.logger import logger
from utils.parallel import pairwise_sum, parallel_map

POINT_CHUNK = 8192
ELEMENT_BUDGET = 1 << 22


def softplus(z: Union[float, torch.Tensor], beta: float = 1.0) -> torch.Tensor:
    """σ(z) = log(1 + e^{βz})/β = (max(βz, 0) + log1p(e^{−β|z|}))/β, with no linear cutoff"""
    z = torch.as_tensor(z, dtype=DTYPE)
    return torch.logaddexp(beta * z, torch.zeros_like(z)) / beta


class ModelOperators(NamedTuple):
    background: Tuple[KernelOperator, ...]
    influence: Tuple[KernelOperator, ...]


def _grid_from_payload(data: dict, name: str) -> GridGP:
    axes = tuple(
        AxisGrid(torch.as_tensor(a["points"], dtype=DTYPE), (float(a["range"][0]), float(a["range"][1])))
        for a in data["axes"]
    )
    kernels = tuple(KernelSpec.from_dict(k) for k in data["kernels"])
    values = torch.as_tensor(data["values"], dtype=DTYPE)
    return GridGP(axes=axes, kernels=kernels, values=values, jitter=float(data.get("jitter", DEFAULT_JITTER)), name=name)


def _grid_to_payload(gp: GridGP) -> dict:
    return {
        "axes": [{"points": a.points.tolist(), "range": list(a.axis_range)} for a in gp.axes],
        "kernels": [k.to_dict() for k in gp.kernels],
        "values": gp.values.detach().tolist(),
        "jitter": gp.jitter,
    }


@dataclass
class KstppModel(PointProcessModel):
    """Background GP g, influence GP f, SoftPlus link and quadrature orders"""

    KIND = "kstpp"

    domain: Domain
    background: GridGP
    influence: GridGP
    link_beta: float = 1.0
    quad_orders: Tuple[int, int, int] = (12, 12, 12)
    horizon: Optional[float] = None
    underflow_count: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        if self.link_beta <= 0:
            raise ValueError(f"link beta must be positive, got {self.link_beta}")
        if self.background.ndim != 2 or self.influence.ndim != 3:
            raise ValueError("background must be a 2-axis GP and influence a 3-axis GP")
        if self.horizon is not None and self.horizon <= 0:
            raise ValueError(f"influence horizon must be positive, got {self.horizon}")
        self.quad_orders = tuple(int(q) for q in self.quad_orders)  # type: ignore[assignment]

    # ------------------------------------------------------------------ construction

    @classmethod
    def create(
        cls,
        domain: Domain,
        influence_sizes: Sequence[int] = (16, 16, 16),
        background_sizes: Sequence[int] = (20, 20),
        influence_families: Sequence[Union[str, KernelFamily]] = ("SquaredExponential",) * 3,
        background_families: Sequence[Union[str, KernelFamily]] = ("SquaredExponential",) * 2,
        influence_lengthscales: Optional[Sequence[Optional[float]]] = None,
        background_lengthscales: Optional[Sequence[Optional[float]]] = None,
        influence_variances: Optional[Sequence[float]] = None,
        background_variances: Optional[Sequence[float]] = None,
        link_beta: float = 1.0,
        quad_orders: Sequence[int] = (12, 12, 12),
        horizon: Optional[float] = None,
        jitter: float = DEFAULT_JITTER,
        init_std: float = 0.01,
        generator: Optional[torch.Generator] = None,
    ) -> "KstppModel":
        """
        Fresh model on uniform grids

        The lag axis spans [0, T] (or [0, horizon]); the offset axes span the
        symmetric difference ranges [−(b−a), b−a]. Values start at N(0, init_std²).
        """
        lag_hi = float(horizon) if horizon is not None else float(domain.t_max)
        f_ranges = [(0.0, lag_hi), (-domain.x_span, domain.x_span), (-domain.y_span, domain.y_span)]
        g_ranges = [tuple(domain.x_range), tuple(domain.y_range)]

        def _axes(ranges, sizes):
            return tuple(AxisGrid.uniform(lo, hi, m) for (lo, hi), m in zip(ranges, sizes))

        def _kernels(ranges, families, lengthscales, variances):
            specs = []
            for i, (lo, hi) in enumerate(ranges):
                ell = lengthscales[i] if lengthscales and lengthscales[i] else default_lengthscale(lo, hi)
                var = variances[i] if variances else 1.0
                specs.append(KernelSpec.create(families[i], ell, var))
            return tuple(specs)

        f_axes = _axes(f_ranges, influence_sizes)
        g_axes = _axes(g_ranges, background_sizes)
        f_shape = tuple(int(m) for m in influence_sizes)
        g_shape = (1,) + tuple(int(m) for m in background_sizes)
        f_values = init_std * torch.randn(f_shape, dtype=DTYPE, generator=generator)
        g_values = init_std * torch.randn(g_shape, dtype=DTYPE, generator=generator)

        influence = GridGP(
            axes=f_axes,
            kernels=_kernels(f_ranges, list(influence_families), influence_lengthscales, influence_variances),
            values=f_values,
            jitter=jitter,
            name="influence",
        )
        background = GridGP(
            axes=g_axes,
            kernels=_kernels(g_ranges, list(background_families), background_lengthscales, background_variances),
            values=g_values,
            jitter=jitter,
            name="background",
        )
        return cls(
            domain=domain,
            background=background,
            influence=influence,
            link_beta=link_beta,
            quad_orders=tuple(quad_orders),  # type: ignore[arg-type]
            horizon=horizon,
        )

    def operators(self, detach_factor: bool = False) -> ModelOperators:
        return ModelOperators(
            background=self.background.build_operators(detach_factor=detach_factor),
            influence=self.influence.build_operators(detach_factor=detach_factor),
        )

    @property
    def spatial_orders(self) -> Tuple[int, int]:
        return self.quad_orders[1], self.quad_orders[2]

    @property
    def time_order(self) -> int:
        return self.quad_orders[0]

    # ------------------------------------------------------------------ pre-link pieces

    def _lag_mask(self, lag: torch.Tensor) -> torch.Tensor:
        mask = lag > 0
        if self.horizon is not None:
            mask = mask & (lag <= self.horizon)
        return mask.to(DTYPE)

    def background_on_grid(self, xs: torch.Tensor, ys: torch.Tensor, ops: ModelOperators) -> torch.Tensor:
        """g on xs × ys, shape (X, Y)"""
        return eval_on_product_grid(self.background, [xs, ys], ops=ops.background)[0]

    def influence_on_grid(
        self,
        ts: torch.Tensor,
        xs: torch.Tensor,
        ys: torch.Tensor,
        history: EventSequence,
        ops: ModelOperators,
    ) -> torch.Tensor:
        """
        Σₙ f(t−tₙ, x−xₙ, y−yₙ) on ts × xs × ys, shape (T, X, Y)

        Each event's offset grid goes through the per-axis η matrices; events at or
        after a time node (or beyond the horizon) get zero weight there.
        """
        out = torch.zeros((ts.shape[0], xs.shape[0], ys.shape[0]), dtype=DTYPE)
        if ts.shape[0]:
            history = self.relevant_history(history, float(ts.min()), float(ts.max()))
        if len(history) == 0 or ts.shape[0] == 0:
            return out
        op0, op1, op2 = ops.influence
        tn, xn, yn = history.as_tensors()
        n = tn.shape[0]
        lag = ts[None, :] - tn[:, None]
        w0 = cross_weights(op0, lag.reshape(-1)).reshape(n, ts.shape[0], -1)
        w0 = w0 * self._lag_mask(lag)[..., None]
        w1 = cross_weights(op1, (xs[None, :] - xn[:, None]).reshape(-1)).reshape(n, xs.shape[0], -1)
        w2 = cross_weights(op2, (ys[None, :] - yn[:, None]).reshape(-1)).reshape(n, ys.shape[0], -1)
        values = self.influence.values
        # spatial modes first: intermediates are (n, X, Y, m0) whatever the number of time nodes
        partial = torch.einsum("nxb,abc->nxac", w1, values)
        partial = torch.einsum("nxac,nyc->nxya", partial, w2)
        return torch.einsum("nta,nxya->txy", w0, partial)

    def relevant_history(self, history: EventSequence, t_lo: float, t_hi: float) -> EventSequence:
        """Events that can act on some time in [t_lo, t_hi]: before t_hi and within the horizon of t_lo"""
        end = int(np.searchsorted(history.times, t_hi, side="left"))
        start = 0
        if self.horizon is not None:
            start = int(np.searchsorted(history.times, t_lo - self.horizon, side="left"))
        return EventSequence(history.times[start:end], history.xs[start:end], history.ys[start:end])

    def pre_link_points(
        self,
        ts: torch.Tensor,
        xs: torch.Tensor,
        ys: torch.Tensor,
        history: EventSequence,
        ops: ModelOperators,
    ) -> torch.Tensor:
        """g(x, y) + Σ_{tₙ<t} f(...) at individual points; each point sees only its own past"""
        if ts.shape[0] == 0:
            return torch.zeros(0, dtype=DTYPE)
        m0, m1, _ = self.influence.value_shape
        step = max(1, min(POINT_CHUNK, ELEMENT_BUDGET // max(1, (len(history) + 1) * m0 * m1)))
        chunks = []
        for start in range(0, ts.shape[0], step):
            sl = slice(start, start + step)
            chunk_ts = ts[sl]
            window = self.relevant_history(history, float(chunk_ts.min()), float(chunk_ts.max()))
            chunks.append(self._pre_link_chunk(chunk_ts, xs[sl], ys[sl], window, ops))
        return torch.cat(chunks)

    def _pre_link_chunk(self, ts, xs, ys, history, ops) -> torch.Tensor:
        g = eval_batch(self.background, torch.stack([xs, ys], dim=1), ops=ops.background)
        if len(history) == 0:
            return g
        op0, op1, op2 = ops.influence
        tn, xn, yn = history.as_tensors()
        n, p = tn.shape[0], ts.shape[0]
        lag = ts[None, :] - tn[:, None]
        w0 = cross_weights(op0, lag.reshape(-1)).reshape(n, p, -1) * self._lag_mask(lag)[..., None]
        w1 = cross_weights(op1, (xs[None, :] - xn[:, None]).reshape(-1)).reshape(n, p, -1)
        w2 = cross_weights(op2, (ys[None, :] - yn[:, None]).reshape(-1)).reshape(n, p, -1)
        partial = torch.einsum("npa,abc->npbc", w0, self.influence.values)
        f_sum = torch.einsum("npbc,npb,npc->p", partial, w1, w2)
        return g + f_sum

    # ------------------------------------------------------------------ intensity

    def intensity_grid(
        self,
        ts: torch.Tensor,
        xs: torch.Tensor,
        ys: torch.Tensor,
        history: EventSequence,
        ops: Optional[ModelOperators] = None,
    ) -> torch.Tensor:
        ops = ops if ops is not None else self.operators()
        ts = torch.as_tensor(ts, dtype=DTYPE).reshape(-1)
        xs = torch.as_tensor(xs, dtype=DTYPE).reshape(-1)
        ys = torch.as_tensor(ys, dtype=DTYPE).reshape(-1)
        g = self.background_on_grid(xs, ys, ops)
        pre = g[None, :, :] + self.influence_on_grid(ts, xs, ys, history, ops)
        return softplus(pre, self.link_beta)

    def intensity_points(
        self,
        ts: torch.Tensor,
        xs: torch.Tensor,
        ys: torch.Tensor,
        history: EventSequence,
        ops: Optional[ModelOperators] = None,
    ) -> torch.Tensor:
        """λ at arbitrary points, each conditioned on the events strictly before its own time"""
        ops = ops if ops is not None else self.operators()
        ts = torch.as_tensor(ts, dtype=DTYPE).reshape(-1)
        xs = torch.as_tensor(xs, dtype=DTYPE).reshape(-1)
        ys = torch.as_tensor(ys, dtype=DTYPE).reshape(-1)
        return softplus(self.pre_link_points(ts, xs, ys, history, ops), self.link_beta)

    def log_likelihood(self, seq: EventSequence, ops: Optional[ModelOperators] = None) -> torch.Tensor:
        return log_likelihood(self, seq, ops=ops)

    # ------------------------------------------------------------------ persistence

    def to_payload(self) -> dict:
        return {
            "background": _grid_to_payload(self.background),
            "influence": _grid_to_payload(self.influence),
            "link_beta": self.link_beta,
            "quad_orders": list(self.quad_orders),
            "horizon": self.horizon,
        }

    @classmethod
    def from_payload(cls, payload: dict, domain: Domain) -> "KstppModel":
        return cls(
            domain=domain,
            background=_grid_from_payload(payload["background"], "background"),
            influence=_grid_from_payload(payload["influence"], "influence"),
            link_beta=float(payload["link_beta"]),
            quad_orders=tuple(int(q) for q in payload["quad_orders"]),  # type: ignore[arg-type]
            horizon=payload.get("horizon"),
        )


def intensity(model: KstppModel, t: float, x: float, y: float, history: EventSequence) -> torch.Tensor:
    """λ(t, x, y | history) for a history strictly before t"""
    return model.intensity(t, x, y, history)


def intensity_on_quad_grid(
    model: KstppModel,
    interval: Tuple[float, float],
    history: EventSequence,
    ops: Optional[ModelOperators] = None,
    g_grid: Optional[torch.Tensor] = None,
) -> Tuple[Tensor3, ProductRule3]:
    """
    λ on the (t̂, x̂, ŷ) Gauss-Legendre grid of ``interval`` × 𝒮

    Args:
        model: the model
        interval: (t_lo, t_hi) with 0 ≤ t_lo ≤ t_hi ≤ T
        history: events with times ≤ t_lo
        ops: prebuilt operators (rebuilt when omitted)
        g_grid: g already evaluated on the spatial nodes

    Returns:
        (λ tensor of the rule's shape, rule); a degenerate interval gives zero time nodes
    """
    t_lo, t_hi = float(interval[0]), float(interval[1])
    if not (0.0 <= t_lo <= t_hi <= model.domain.t_max):
        raise DomainError(f"interval [{t_lo}, {t_hi}] must lie inside [0, {model.domain.t_max}]")
    if len(history) and history.times[-1] > t_lo:
        raise HistoryOrderError(f"history extends to {history.times[-1]}, past the interval start {t_lo}")
    rule = product_rule(model.quad_orders, (t_lo, t_hi), model.domain.x_range, model.domain.y_range)
    ops = ops if ops is not None else model.operators()
    t_nodes, x_nodes, y_nodes = (r.nodes for r in rule.rules)
    if g_grid is None:
        g_grid = model.background_on_grid(x_nodes, y_nodes, ops)
    pre = g_grid[None, :, :] + model.influence_on_grid(t_nodes, x_nodes, y_nodes, history, ops)
    return softplus(pre, model.link_beta), rule


def log_likelihood(model: KstppModel, seq: EventSequence, ops: Optional[ModelOperators] = None) -> torch.Tensor:
    """
    Σₙ log λ(tₙ, xₙ, yₙ | ℋ_{tₙ}) − Σₙ ∫_{tₙ}^{tₙ₊₁}∫_𝒮 λ

    Intervals run over t₀ = 0 … t_{N+1} = T; the interval after tₙ sees events up to
    and including tₙ. Intensities that underflow at an event are clamped at 1e-300
    and counted on ``model.underflow_count``.
    """
    seq.validate(model.domain)
    ops = ops if ops is not None else model.operators()

    event_term = torch.zeros((), dtype=DTYPE)
    if len(seq):
        ts, xs, ys = seq.as_tensors()
        lam = softplus(model.pre_link_points(ts, xs, ys, seq, ops), model.link_beta)
        floored = lam <= LOG_FLOOR
        if bool(floored.any()):
            model.underflow_count += int(floored.sum())
            logger.warning(
                f"[MODEL] ⚠️ Intensity underflow at {int(floored.sum())} events, clamped "
                f"(running count {model.underflow_count})"
            )
        event_term = torch.log(torch.clamp(lam, min=LOG_FLOOR)).sum()

    x_nodes = gauss_legendre(model.quad_orders[1], *model.domain.x_range).nodes
    y_nodes = gauss_legendre(model.quad_orders[2], *model.domain.y_range).nodes
    g_grid = model.background_on_grid(x_nodes, y_nodes, ops)

    bounds = [0.0] + seq.times.tolist() + [model.domain.t_max]
    pieces: List[torch.Tensor] = []
    for n in range(len(bounds) - 1):
        t_lo, t_hi = bounds[n], bounds[n + 1]
        if t_hi <= t_lo:
            continue
        lam_grid, rule = intensity_on_quad_grid(model, (t_lo, t_hi), seq.prefix(n), ops=ops, g_grid=g_grid)
        pieces.append(integrate_values(lam_grid, rule))
    compensator = pairwise_sum(pieces) if pieces else torch.zeros((), dtype=DTYPE)
    return event_term - compensator


def log_joint(
    model: KstppModel,
    batch: Sequence[EventSequence],
    dataset_size: Optional[int] = None,
    ops: Optional[ModelOperators] = None,
    parallel: bool = False,
) -> torch.Tensor:
    """
    log p(ℱ) + log p(𝒢) + s·Σ_Γ log p(Γ | ℱ, 𝒢)

    With ``dataset_size`` = |𝒟| the likelihood sum is rescaled by s = |𝒟|/B so a
    mini-batch objective is unbiased for the full joint; otherwise s = 1.
    """
    ops = ops if ops is not None else model.operators()
    prior = log_prior(model.background, ops=ops.background) + log_prior(model.influence, ops=ops.influence)
    if not batch:
        return prior
    if parallel:
        lls = parallel_map(lambda s: log_likelihood(model, s, ops=ops), batch)
    else:
        lls = [log_likelihood(model, s, ops=ops) for s in batch]
    scale = 1.0 if dataset_size is None else float(dataset_size) / len(batch)
    return prior + scale * pairwise_sum(lls)


def influence_slice(model: KstppModel, lag: float, xs, ys) -> torch.Tensor:
    """f(lag, Δx, Δy) on the offset grid xs × ys, shape (X, Y)"""
    xs = torch.as_tensor(xs, dtype=DTYPE).reshape(-1)
    ys = torch.as_tensor(ys, dtype=DTYPE).reshape(-1)
    lag_t = torch.tensor([float(lag)], dtype=DTYPE)
    with torch.no_grad():
        return eval_on_product_grid(model.influence, [lag_t, xs, ys])[0]


def offset_grid(model: KstppModel, size: int = 32) -> Tuple[torch.Tensor, torch.Tensor]:
    """Uniform Δx, Δy grids over the influence GP's offset axes"""
    (x_lo, x_hi), (y_lo, y_hi) = model.influence.axes[1].axis_range, model.influence.axes[2].axis_range
    return (
        torch.as_tensor(np.linspace(x_lo, x_hi, size), dtype=DTYPE),
        torch.as_tensor(np.linspace(y_lo, y_hi, size), dtype=DTYPE),
    )


def homogeneous_background_value(rate: float, beta: float = 1.0) -> float:
    """Pre-link constant c with σ_β(c) = rate"""
    if rate <= 0:
        raise ValueError(f"rate must be positive, got {rate}")
    # inverse softplus: log(e^{βr} − 1)/β, written to stay finite for large βr
    br = beta * rate
    return (br + math.log(-math.expm1(-br))) / beta
