"""
Parametric spatiotemporal Hawkes baseline (exponential-in-time, Gaussian-in-space triggering)
"""

from typing import Optional, Sequence

from core.baselines import SthpModel, sthp_fit
from core.config import RunConfig
from core.events import Domain, EventSequence
from core.plugin_base import ModelPlugin
from core.train import FitResult


class Plugin(ModelPlugin):
    NAME = "sthp"
    DISPLAY_NAME = "Spatiotemporal Hawkes"
    DESCRIPTION = "Parametric STHP baseline fitted by Adam in log-parameter space"
    VERSION = "1.0.0"
    AUTHOR = "KSTPP Toolkit"

    def fit(
        self,
        train: Sequence[EventSequence],
        validation: Optional[Sequence[EventSequence]],
        run_config: RunConfig,
        domain: Domain,
    ) -> FitResult:
        if not run_config.sthp.excitation:
            self.log_info("excitation disabled: fitting the background rate only")
        return sthp_fit(
            train,
            domain,
            run_config.sthp,
            run_config.optimizer,
            validation=validation,
            quad_orders=run_config.quad_orders,
        )

    def load(self, payload: dict, domain: Domain) -> SthpModel:
        return SthpModel.from_payload(payload, domain)
