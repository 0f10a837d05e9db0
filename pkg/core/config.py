# -*- coding: utf-8 -*-
"""
KSTPP Toolkit - Run configuration schema

A run config is the model-kind plugin's ``available_config`` defaults with the
user's JSON file deep-merged over them, validated against a fixed schema.
Environment variables may override paths only (KSTPP_TRAIN_PATH,
KSTPP_VAL_PATH, KSTPP_OUTPUT_DIR).
"""

from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError, field_validator

from core.errors import ConfigError
from utils.config_manager import ConfigurationManager
from utils.logger import logger
from utils.path_manager import PathManager

MODEL_KINDS = ("kstpp", "poisson", "sthp")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class KernelConfig(_Strict):
    families: List[str] = Field(default_factory=lambda: ["SquaredExponential"] * 3)
    lengthscales: Optional[List[Optional[PositiveFloat]]] = None
    variances: Optional[List[PositiveFloat]] = None


class GridConfig(_Strict):
    influence_sizes: Tuple[PositiveInt, PositiveInt, PositiveInt] = (16, 16, 16)
    background_sizes: Tuple[PositiveInt, PositiveInt] = (20, 20)
    horizon: Optional[PositiveFloat] = None
    jitter: PositiveFloat = 1e-6

    @field_validator("influence_sizes", "background_sizes")
    @classmethod
    def _at_least_two(cls, sizes):
        if any(m < 2 for m in sizes):
            raise ValueError("every grid axis needs at least 2 points")
        return sizes


class OptimizerConfig(_Strict):
    lr: PositiveFloat = 1e-3
    epochs: PositiveInt = 100
    batch_size: PositiveInt = 1
    patience: PositiveInt = 10
    seed: int = 0
    freeze_hyperparams: bool = False
    freeze_influence: bool = False
    stop_kinv_grad: bool = False
    init_std: PositiveFloat = 0.01
    max_steps: Optional[PositiveInt] = None


class SthpConfig(_Strict):
    lambda0: Optional[PositiveFloat] = None
    c: PositiveFloat = 0.5
    beta: PositiveFloat = 1.0
    sigma: PositiveFloat = 0.3
    excitation: bool = True


class PathsConfig(_Strict):
    train: Optional[str] = None
    validation: Optional[str] = None
    output_dir: str = "runs"


class RunConfig(_Strict):
    model_kind: Literal["kstpp", "poisson", "sthp"] = "kstpp"
    grids: GridConfig = Field(default_factory=GridConfig)
    influence_kernel: KernelConfig = Field(default_factory=KernelConfig)
    background_kernel: KernelConfig = Field(
        default_factory=lambda: KernelConfig(families=["SquaredExponential"] * 2)
    )
    quad_orders: Tuple[PositiveInt, PositiveInt, PositiveInt] = (12, 12, 12)
    link_beta: PositiveFloat = 1.0
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    sthp: SthpConfig = Field(default_factory=SthpConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    @field_validator("quad_orders")
    @classmethod
    def _orders_at_least_two(cls, orders):
        if any(q < 2 for q in orders):
            raise ValueError("quadrature orders must be >= 2")
        return orders

    @field_validator("influence_kernel")
    @classmethod
    def _three_influence_axes(cls, kernel: KernelConfig):
        if len(kernel.families) != 3:
            raise ValueError("influence_kernel needs 3 families (lag, dx, dy)")
        return kernel

    @field_validator("background_kernel")
    @classmethod
    def _two_background_axes(cls, kernel: KernelConfig):
        if len(kernel.families) != 2:
            raise ValueError("background_kernel needs 2 families (x, y)")
        return kernel


def _format_validation_error(err: ValidationError) -> str:
    first = err.errors()[0]
    field = ".".join(str(p) for p in first.get("loc", ())) or "<root>"
    return f"invalid config field '{field}': {first.get('msg')}"


def plugin_defaults(kind: str) -> Dict[str, Any]:
    """The ``available_config`` block of a model-kind plugin, minus plugin bookkeeping"""
    config = ConfigurationManager.load_plugin_config(kind)
    defaults = dict(config.get("available_config", {}))
    defaults.pop("enabled", None)
    return defaults


def build_run_config(data: Dict[str, Any], kind: Optional[str] = None) -> RunConfig:
    """
    Validate ``data`` over the plugin defaults of its model kind

    Raises:
        ConfigError: naming the first offending field
    """
    kind = kind or data.get("model_kind") or ConfigurationManager.load_run_defaults().get("model_kind", "kstpp")
    if kind not in MODEL_KINDS:
        raise ConfigError(f"invalid config field 'model_kind': unknown model kind '{kind}'")
    merged = ConfigurationManager.deep_merge(plugin_defaults(kind), data)
    merged["model_kind"] = kind
    try:
        config = RunConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(_format_validation_error(e)) from e
    return apply_env_overrides(config)


def load_run_config(path: Optional[Union[str, Path]] = None, kind: Optional[str] = None) -> RunConfig:
    """Read a run-config JSON file (or none, for pure defaults) and validate it"""
    data: Dict[str, Any] = {}
    if path is not None:
        data = ConfigurationManager.load_required_json(path)
        logger.info(f"[CONFIG] Loaded run config from {path}")
    return build_run_config(data, kind=kind)


def apply_env_overrides(config: RunConfig) -> RunConfig:
    paths = config.paths.model_copy(
        update={
            "train": _env_str("KSTPP_TRAIN_PATH", config.paths.train),
            "validation": _env_str("KSTPP_VAL_PATH", config.paths.validation),
            "output_dir": _env_str("KSTPP_OUTPUT_DIR", config.paths.output_dir),
        }
    )
    return config.model_copy(update={"paths": paths})


def _env_str(var: str, fallback: Optional[str]) -> Optional[str]:
    resolved = PathManager.resolve_env_path(var, fallback)
    return None if resolved is None else str(resolved)
