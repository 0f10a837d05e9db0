"""
Homogeneous Poisson baseline: constant rate, closed-form MLE
"""

from typing import Optional, Sequence

from core.baselines import PoissonModel, poisson_fit
from core.config import RunConfig
from core.events import Domain, EventSequence
from core.plugin_base import ModelPlugin
from core.train import FitResult, mean_log_likelihood


class Plugin(ModelPlugin):
    NAME = "poisson"
    DISPLAY_NAME = "Homogeneous Poisson"
    DESCRIPTION = "Constant-rate baseline fitted by maximum likelihood"
    VERSION = "1.0.0"
    AUTHOR = "KSTPP Toolkit"

    def fit(
        self,
        train: Sequence[EventSequence],
        validation: Optional[Sequence[EventSequence]],
        run_config: RunConfig,
        domain: Domain,
    ) -> FitResult:
        model = poisson_fit(train, domain)
        self.log_info(f"rate {model.rate:.6g} per unit time and area")
        result = FitResult(model=model)
        if validation:
            result.best_validation = mean_log_likelihood(model, validation)
        return result

    def load(self, payload: dict, domain: Domain) -> PoissonModel:
        return PoissonModel.from_payload(payload, domain)
