# -*- coding: utf-8 -*-
"""
KSTPP Toolkit - Checkpoints

One JSON document per model: {"format": "kstpp-v1", "model_kind", "domain",
"payload", "metadata"}. Floats are written with repr precision, so a
save/load cycle restores parameters exactly.
"""

import json
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from pydantic import ValidationError

from core.errors import CheckpointError, PluginError
from core.events import Domain, PointProcessModel
from core.plugin_manager import get_plugin_manager
from core.simulate import SynthOracleModel
from utils.logger import logger

CHECKPOINT_FORMAT = "kstpp-v1"


def checkpoint_document(model: PointProcessModel, metadata: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    return {
        "format": CHECKPOINT_FORMAT,
        "model_kind": model.KIND,
        "domain": model.domain.model_dump(mode="json"),
        "payload": model.to_payload(),
        "metadata": metadata or {},
    }


def model_from_document(document: Dict[str, Any]) -> PointProcessModel:
    """
    Rebuild a model from a checkpoint document

    Raises:
        CheckpointError: wrong format tag, unknown kind or malformed payload
    """
    if document.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {document.get('format')!r}, expected {CHECKPOINT_FORMAT}")
    kind = document.get("model_kind")
    try:
        domain = Domain.model_validate(document["domain"])
        # ground-truth processes have no plugin
        if kind == SynthOracleModel.KIND:
            return SynthOracleModel.from_payload(document["payload"], domain)
        plugin = get_plugin_manager().get_plugin(str(kind))
        return plugin.load(document["payload"], domain)
    except PluginError as e:
        raise CheckpointError(f"unknown model kind {kind!r}: {e}") from e
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        raise CheckpointError(f"malformed {kind} checkpoint: {e}") from e


def save_checkpoint(
    model: PointProcessModel,
    path: Union[str, Path],
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(checkpoint_document(model, metadata), f)
    logger.info(f"[CHECKPOINT] Saved {model.KIND} checkpoint to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[PointProcessModel, Dict[str, Any]]:
    """Returns (model, metadata)"""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {e}") from e
    model = model_from_document(document)
    logger.info(f"[CHECKPOINT] Loaded {model.KIND} checkpoint from {path}")
    return model, document.get("metadata", {})
