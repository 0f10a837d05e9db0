"""
Shared fixtures: small domains, small KSTPP models and short event sequences
"""

import dataclasses
import os
import sys
import tempfile
from pathlib import Path

# logs of the test session go to a scratch directory, set before the logger is imported
os.environ.setdefault("KSTPP_LOG_DIR", tempfile.mkdtemp(prefix="kstpp-test-logs-"))
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

import numpy as np
import pytest
import torch

from core.events import Domain, EventSequence
from core.model import KstppModel


@pytest.fixture
def domain() -> Domain:
    return Domain(t_max=5.0, x_range=(0.0, 2.0), y_range=(0.0, 2.0))


@pytest.fixture
def toy_sequence() -> EventSequence:
    return EventSequence(
        np.array([0.7, 1.6, 3.1]),
        np.array([0.5, 1.2, 1.5]),
        np.array([0.4, 0.9, 1.6]),
    )


def small_model(
    domain: Domain,
    sizes=(3, 3, 3),
    background_sizes=(3, 3),
    quad_orders=(6, 6, 6),
    init_std: float = 0.3,
    seed: int = 0,
    horizon=None,
    families=("SquaredExponential",) * 3,
) -> KstppModel:
    return KstppModel.create(
        domain,
        influence_sizes=sizes,
        background_sizes=background_sizes,
        influence_families=families,
        quad_orders=quad_orders,
        horizon=horizon,
        init_std=init_std,
        generator=torch.Generator().manual_seed(seed),
    )


def constant_model(domain: Domain, c: float, **kwargs) -> KstppModel:
    """Background values ≡ c and influence values ≡ 0"""
    model = small_model(domain, **kwargs)
    background = dataclasses.replace(model.background, values=torch.full_like(model.background.values, c))
    influence = dataclasses.replace(model.influence, values=torch.zeros_like(model.influence.values))
    return dataclasses.replace(model, background=background, influence=influence)


@pytest.fixture
def model(domain) -> KstppModel:
    return small_model(domain)
