# -*- coding: utf-8 -*-
"""
KSTPP Toolkit - Dataset files

A split lives in ``<dir>/<split>.jsonl`` (one {"t": [...], "x": [...], "y": [...]}
record per line) next to ``<dir>/<split>.manifest.json``. External benchmark
files (a JSON or pickle list of sequences of [t, x, y] events) are mapped into
this layout by ``import_external``.
"""

import json
import pickle
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, NonNegativeInt, ValidationError

from core.errors import DatasetFormatError, DomainError, HistoryOrderError
from core.events import Domain, EventSequence
from utils.logger import logger
from utils.path_manager import PathManager

FORMAT_VERSION = "kstpp-data-v1"
PathLike = Union[str, Path]


class DatasetManifest(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    format_version: Literal["kstpp-data-v1"] = FORMAT_VERSION
    domain: Domain
    generator: Optional[Dict[str, Any]] = None
    split: str
    count: NonNegativeInt
    seed: Optional[int] = None


def split_paths(directory: PathLike, split: str) -> Tuple[Path, Path]:
    directory = Path(directory)
    return directory / f"{split}.jsonl", directory / f"{split}.manifest.json"


def resolve_split(path: PathLike, split: Optional[str] = None) -> Tuple[Path, Path]:
    """
    Accept a split file, its manifest, or a directory plus split name

    Raises:
        DatasetFormatError: naming the path that does not exist
    """
    path = Path(path)
    if path.is_dir():
        records, manifest = split_paths(path, split or "train")
    elif path.name.endswith(".manifest.json"):
        records, manifest = path.with_name(path.name[: -len(".manifest.json")] + ".jsonl"), path
    else:
        records, manifest = path, path.with_name(path.stem + ".manifest.json")
    for p in (records, manifest):
        if not p.exists():
            raise DatasetFormatError(f"dataset file not found: {p}", path=str(p))
    return records, manifest


def save_dataset(
    directory: PathLike,
    split: str,
    sequences: Sequence[EventSequence],
    manifest: DatasetManifest,
) -> Path:
    """Write one split and its manifest; returns the record file path"""
    if manifest.count != len(sequences):
        raise DatasetFormatError(f"manifest count {manifest.count} does not match {len(sequences)} sequences")
    PathManager.ensure_directory_exists(directory)
    records_path, manifest_path = split_paths(directory, split)
    with open(records_path, "w", encoding="utf-8") as f:
        for seq in sequences:
            f.write(json.dumps(seq.to_record()) + "\n")
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest.model_dump(mode="json"), f, indent=2)
    logger.info(f"[DATASET] Saved {len(sequences)} sequences to {records_path}")
    return records_path


def _parse_record(line: str, lineno: int, path: Path, domain: Domain) -> EventSequence:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"invalid JSON: {e.msg}", line=lineno, path=str(path)) from e
    if not isinstance(record, dict) or not {"t", "x", "y"} <= set(record):
        raise DatasetFormatError('record must hold "t", "x" and "y" arrays', line=lineno, path=str(path))
    try:
        return EventSequence.from_record(record).validate(domain)
    except HistoryOrderError as e:
        raise DatasetFormatError(f"event times are not strictly increasing ({e})", line=lineno, path=str(path)) from e
    except (DomainError, ValueError, TypeError) as e:
        raise DatasetFormatError(str(e), line=lineno, path=str(path)) from e


def load_dataset(path: PathLike, split: Optional[str] = None) -> Tuple[List[EventSequence], DatasetManifest]:
    """
    Read a split and its manifest

    Raises:
        DatasetFormatError: missing files, a malformed manifest, or a bad record
            (the error names the 1-based line)
    """
    records_path, manifest_path = resolve_split(path, split)
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = DatasetManifest.model_validate(json.load(f))
    except (json.JSONDecodeError, ValidationError) as e:
        raise DatasetFormatError(f"invalid manifest: {e}", path=str(manifest_path)) from e

    sequences: List[EventSequence] = []
    with open(records_path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            sequences.append(_parse_record(line, lineno, records_path, manifest.domain))
    if len(sequences) != manifest.count:
        raise DatasetFormatError(
            f"manifest declares {manifest.count} sequences, file holds {len(sequences)}", path=str(records_path)
        )
    logger.info(f"[DATASET] Loaded {len(sequences)} sequences from {records_path}")
    return sequences, manifest


# ---------------------------------------------------------------------- external import


def _read_external(path: Path) -> List[Any]:
    if not path.exists():
        raise DatasetFormatError(f"external dataset not found: {path}", path=str(path))
    try:
        if path.suffix in (".pkl", ".pickle"):
            with open(path, "rb") as f:
                data = pickle.load(f)
        else:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
    except (json.JSONDecodeError, pickle.UnpicklingError, EOFError) as e:
        raise DatasetFormatError(f"cannot parse external dataset: {e}", path=str(path)) from e
    if isinstance(data, dict) and "sequences" in data:
        data = data["sequences"]
    if not isinstance(data, (list, tuple)):
        raise DatasetFormatError("external dataset must be a list of sequences", path=str(path))
    return list(data)


def _clean_sequence(raw, columns: Tuple[int, int, int], index: int, path: Path) -> Tuple[np.ndarray, int]:
    arr = np.asarray(raw, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, 3)), 0
    if arr.ndim != 2 or arr.shape[1] <= max(columns):
        raise DatasetFormatError(f"sequence {index} is not a list of [t, x, y] events", path=str(path))
    events = arr[:, list(columns)]
    keep: List[int] = []
    last = 0.0
    for i, t in enumerate(events[:, 0]):
        if np.isfinite(events[i]).all() and t > last:
            keep.append(i)
            last = t
    return events[keep], len(events) - len(keep)


def infer_domain(event_arrays: Sequence[np.ndarray], t_max: Optional[float] = None, pad: float = 1e-6) -> Domain:
    """Bounding box of all events (T = latest time unless given)"""
    stacked = np.concatenate([a for a in event_arrays if len(a)] or [np.zeros((0, 3))])
    if len(stacked) == 0:
        raise DatasetFormatError("cannot infer a domain from a dataset without events")
    lo, hi = stacked.min(axis=0), stacked.max(axis=0)
    return Domain(
        t_max=float(t_max if t_max is not None else hi[0]),
        x_range=(float(lo[1] - pad), float(hi[1] + pad)),
        y_range=(float(lo[2] - pad), float(hi[2] + pad)),
    )


def _load_clean(path: Path, columns: Tuple[int, int, int]) -> Tuple[List[np.ndarray], int]:
    cleaned = []
    dropped = 0
    for i, seq in enumerate(_read_external(path)):
        events, n_dropped = _clean_sequence(seq, columns, i, path)
        cleaned.append(events)
        dropped += n_dropped
    return cleaned, dropped


def _to_sequences(cleaned: Sequence[np.ndarray], domain: Domain) -> Tuple[List[EventSequence], int]:
    sequences = []
    dropped = 0
    for events in cleaned:
        inside = np.array([domain.contains(float(t), float(x), float(y)) for t, x, y in events], dtype=bool)
        dropped += int((~inside).sum())
        kept = events[inside] if len(events) else np.zeros((0, 3))
        sequences.append(EventSequence(kept[:, 0], kept[:, 1], kept[:, 2]))
    return sequences, dropped


def import_external(
    path: PathLike,
    domain: Optional[Domain] = None,
    columns: Tuple[int, int, int] = (0, 1, 2),
) -> Tuple[List[EventSequence], Domain]:
    """
    Map an external benchmark file into EventSequences

    Events with t ≤ 0, non-increasing times or non-finite coordinates are
    dropped with a warning, as are events outside ``domain`` when one is given.
    """
    imported, domain = import_splits({"data": path}, domain=domain, columns=columns)
    return imported["data"], domain


def import_splits(
    files: Dict[str, PathLike],
    domain: Optional[Domain] = None,
    columns: Tuple[int, int, int] = (0, 1, 2),
    t_max: Optional[float] = None,
) -> Tuple[Dict[str, List[EventSequence]], Domain]:
    """Import several split files under one domain (inferred from all of them when not given)"""
    cleaned: Dict[str, List[np.ndarray]] = {}
    dropped = 0
    for split, path in files.items():
        cleaned[split], n_dropped = _load_clean(Path(path), columns)
        dropped += n_dropped
    if domain is None:
        domain = infer_domain([a for arrays in cleaned.values() for a in arrays], t_max=t_max)
    out: Dict[str, List[EventSequence]] = {}
    for split, arrays in cleaned.items():
        out[split], n_dropped = _to_sequences(arrays, domain)
        dropped += n_dropped
        logger.info(f"[DATASET] Imported {len(out[split])} {split} sequences from {files[split]}")
    if dropped:
        logger.warning(f"[DATASET] ⚠️ Dropped {dropped} events (non-positive, unordered or outside the domain)")
    return out, domain
