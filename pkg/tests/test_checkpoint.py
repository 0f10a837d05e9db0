import json

import numpy as np
import pytest
import torch

from core.baselines import PoissonModel, SthpModel
from core.checkpoint import CHECKPOINT_FORMAT, checkpoint_document, load_checkpoint, model_from_document, save_checkpoint
from core.errors import CheckpointError
from core.model import KstppModel
from core.plugin_manager import get_plugin_manager
from core.simulate import SynthOracleModel, load_synth_preset
from core.train import ParamVector


def test_kstpp_restores_parameters_exactly(tmp_path, model, toy_sequence):
    path = save_checkpoint(model, tmp_path / "ckpt" / "checkpoint.json", {"seed": 3})
    restored, metadata = load_checkpoint(path)
    assert isinstance(restored, KstppModel)
    assert metadata == {"seed": 3}
    assert torch.equal(ParamVector.from_model(restored).data, ParamVector.from_model(model).data)
    assert float(restored.log_likelihood(toy_sequence)) == float(model.log_likelihood(toy_sequence))


def test_document_layout(model):
    document = checkpoint_document(model)
    assert document["format"] == CHECKPOINT_FORMAT
    assert document["model_kind"] == "kstpp"
    assert document["metadata"] == {}
    assert document["domain"]["t_max"] == 5.0


@pytest.mark.parametrize(
    "build",
    [
        lambda d: PoissonModel(0.3, d),
        lambda d: SthpModel.create(d, 0.4, 0.6, 1.3, 0.3, excitation=False),
    ],
)
def test_baselines_round_trip(tmp_path, domain, toy_sequence, build):
    original = build(domain)
    restored, _ = load_checkpoint(save_checkpoint(original, tmp_path / "c.json"))
    assert type(restored) is type(original)
    assert float(restored.log_likelihood(toy_sequence)) == float(original.log_likelihood(toy_sequence))


def test_oracle_round_trip(tmp_path):
    cfg = load_synth_preset("syn1")
    restored, _ = load_checkpoint(save_checkpoint(SynthOracleModel(cfg), tmp_path / "c.json"))
    assert restored.cfg == cfg


def test_wrong_format(model):
    document = checkpoint_document(model)
    document["format"] = "other-v9"
    with pytest.raises(CheckpointError):
        model_from_document(document)


def test_unknown_kind(model):
    document = checkpoint_document(model)
    document["model_kind"] = "neural"
    with pytest.raises(CheckpointError):
        model_from_document(document)


def test_malformed_payload(model):
    document = checkpoint_document(model)
    del document["payload"]["influence"]
    with pytest.raises(CheckpointError):
        model_from_document(document)


def test_missing_and_invalid_files(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{", encoding="utf-8")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)


def test_loading_goes_through_the_kind_plugin(tmp_path, domain, monkeypatch):
    plugin = get_plugin_manager().get_plugin("poisson")
    seen = []
    original_load = plugin.load

    def recording_load(payload, d):
        seen.append(payload)
        return original_load(payload, d)

    monkeypatch.setattr(plugin, "load", recording_load)
    restored, _ = load_checkpoint(save_checkpoint(PoissonModel(0.3, domain), tmp_path / "c.json"))
    assert len(seen) == 1
    assert restored.rate == pytest.approx(0.3)


def test_disabled_plugin_cannot_load(model, monkeypatch):
    plugin = get_plugin_manager().get_plugin("kstpp")
    monkeypatch.setitem(plugin.config["available_config"], "enabled", False)
    with pytest.raises(CheckpointError, match="disabled"):
        model_from_document(checkpoint_document(model))
