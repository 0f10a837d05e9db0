"""
KSTPP model kind: GP background + GP influence kernel on Kronecker grids, MAP-fitted by Adam
"""

from typing import Optional, Sequence

import torch

from core.config import RunConfig
from core.events import Domain, EventSequence
from core.model import KstppModel
from core.plugin_base import ModelPlugin
from core.train import FitResult, fit


def build_model(run_config: RunConfig, domain: Domain, seed: Optional[int] = None) -> KstppModel:
    """Fresh KSTPP model from a run config; grid values drawn from a generator seeded by the optimizer seed"""
    generator = torch.Generator().manual_seed(int(run_config.optimizer.seed if seed is None else seed))
    grids = run_config.grids
    return KstppModel.create(
        domain,
        influence_sizes=grids.influence_sizes,
        background_sizes=grids.background_sizes,
        influence_families=run_config.influence_kernel.families,
        background_families=run_config.background_kernel.families,
        influence_lengthscales=run_config.influence_kernel.lengthscales,
        background_lengthscales=run_config.background_kernel.lengthscales,
        influence_variances=run_config.influence_kernel.variances,
        background_variances=run_config.background_kernel.variances,
        link_beta=run_config.link_beta,
        quad_orders=run_config.quad_orders,
        horizon=grids.horizon,
        jitter=grids.jitter,
        init_std=run_config.optimizer.init_std,
        generator=generator,
    )


class Plugin(ModelPlugin):
    NAME = "kstpp"
    DISPLAY_NAME = "KSTPP"
    DESCRIPTION = "Kronecker-structured nonparametric spatiotemporal point process"
    VERSION = "1.0.0"
    AUTHOR = "KSTPP Toolkit"

    def fit(
        self,
        train: Sequence[EventSequence],
        validation: Optional[Sequence[EventSequence]],
        run_config: RunConfig,
        domain: Domain,
    ) -> FitResult:
        model = build_model(run_config, domain)
        self.log_info(
            f"influence grid {tuple(run_config.grids.influence_sizes)}, "
            f"background grid {tuple(run_config.grids.background_sizes)}, quad orders {tuple(run_config.quad_orders)}"
        )
        return fit(train, run_config.optimizer, model, validation=validation)

    def load(self, payload: dict, domain: Domain) -> KstppModel:
        return KstppModel.from_payload(payload, domain)
