"""
@file data.py
@brief Utterance records, JSONL manifests, splits and padded batches
"""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ConfigError, ContractViolation, FormatError
from numerics.rng import make_rng
from text_frontend import PAD_ID


@dataclass
class UtteranceRecord:
    """
    @brief One labelled utterance
    @details Exactly one of ``text`` / ``embedding_ref`` is set, and the audio
    comes either from a WAV ``audio`` path (relative to the manifest) or from
    an inline ``synth`` description. ``speaker`` is stored but never used.
    """
    id: str
    label: str
    text: Optional[str] = None
    embedding_ref: Optional[str] = None
    audio: Optional[str] = None
    synth: Optional[Dict] = None
    speaker: str = ""

    def __post_init__(self):
        if (self.text is None) == (self.embedding_ref is None):
            raise FormatError(f"record '{self.id}': exactly one of text / embedding_ref must be present")
        if (self.audio is None) == (self.synth is None):
            raise FormatError(f"record '{self.id}': exactly one of audio / synth must be present")

    def to_json(self) -> str:
        payload = {key: value for key, value in asdict(self).items() if value is not None}
        return json.dumps(payload, sort_keys=True, ensure_ascii=False)


_RECORD_FIELDS = {"id", "label", "text", "embedding_ref", "audio", "synth", "speaker"}


def read_manifest(path: Union[str, Path], classes: Optional[Sequence[str]] = None) -> List[UtteranceRecord]:
    """
    Parse a UTF-8 JSONL manifest.

    :param classes: configured label set; a record outside it is a ConfigError
    :raises FormatError: malformed line, unknown field or duplicate id (with line number)
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found at {path}")
    records: List[UtteranceRecord] = []
    seen = set()
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{line_no}: invalid JSON ({exc.msg})") from exc
            if not isinstance(payload, dict):
                raise FormatError(f"{path}:{line_no}: expected a JSON object")
            unknown = sorted(set(payload) - _RECORD_FIELDS)
            if unknown:
                raise FormatError(f"{path}:{line_no}: unknown fields {unknown}")
            try:
                record = UtteranceRecord(**payload)
            except TypeError as exc:
                raise FormatError(f"{path}:{line_no}: {exc}") from exc
            except FormatError as exc:
                raise FormatError(f"{path}:{line_no}: {exc}") from exc
            if record.id in seen:
                raise FormatError(f"{path}:{line_no}: duplicate utterance id '{record.id}'")
            if classes is not None and record.label not in classes:
                raise ConfigError(f"{path}:{line_no}: label '{record.label}' is not one of {list(classes)}")
            seen.add(record.id)
            records.append(record)
    logging.debug(f"Read {len(records)} records from {path}")
    return records


def write_manifest(path: Union[str, Path], records: Sequence[UtteranceRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(record.to_json() + "\n")
    return path


def split_records(records: Sequence[UtteranceRecord], fractions: Sequence[float] = (0.8, 0.1, 0.1),
                  seed: int = 0) -> Tuple[List[UtteranceRecord], List[UtteranceRecord], List[UtteranceRecord]]:
    """
    @brief Stratified, seeded train/val/test split
    @details Each class is shuffled by its own stream and cut at
    ``round(n_c * cumulative fraction)``; the splits keep manifest order.
    """
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three non-negative values summing to 1, got {fractions}")
    by_class: Dict[str, List[int]] = {}
    for index, record in enumerate(records):
        by_class.setdefault(record.label, []).append(index)
    assignment = np.zeros(len(records), dtype=np.int64)
    for label in sorted(by_class):
        members = np.asarray(by_class[label])
        order = make_rng(seed, "split", label).permutation(members.size)
        cut_train = int(round(members.size * fractions[0]))
        cut_val = int(round(members.size * (fractions[0] + fractions[1])))
        assignment[members[order[cut_train:cut_val]]] = 1
        assignment[members[order[cut_val:]]] = 2
    parts: Tuple[List[UtteranceRecord], ...] = ([], [], [])
    for index, record in enumerate(records):
        parts[assignment[index]].append(record)
    return parts


@dataclass
class UtteranceFeatures:
    """Model-ready inputs of one utterance (frontends already applied)."""
    id: str
    label: int
    patches: np.ndarray                       # [P, patch_time * patch_freq]
    token_ids: Optional[np.ndarray] = None    # [S]
    text_embedding: Optional[np.ndarray] = None  # [S, source_dim]

    @property
    def text_length(self) -> int:
        return len(self.token_ids) if self.token_ids is not None else self.text_embedding.shape[0]


@dataclass
class EmotionBatch:
    """K padded samples; masks are True on real positions."""
    ids: List[str]
    labels: np.ndarray                 # [K]
    patches: np.ndarray                # [K, P_max, patch_dim]
    audio_mask: np.ndarray             # [K, P_max]
    text_mask: np.ndarray              # [K, S_max]
    token_ids: Optional[np.ndarray] = None       # [K, S_max]
    text_embedding: Optional[np.ndarray] = None  # [K, S_max, source_dim]

    @property
    def size(self) -> int:
        return len(self.ids)

    def as_arrays(self) -> Dict[str, np.ndarray]:
        """Inputs keyed by name, for divergence dumps."""
        dump = {"labels": self.labels, "patches": self.patches, "audio_mask": self.audio_mask,
                "text_mask": self.text_mask}
        if self.token_ids is not None:
            dump["token_ids"] = self.token_ids
        if self.text_embedding is not None:
            dump["text_embedding"] = self.text_embedding
        return dump


def collate(features: Sequence[UtteranceFeatures]) -> EmotionBatch:
    """Pad a list of utterances to common text / patch lengths."""
    if not features:
        raise ContractViolation("collate: empty batch")
    count = len(features)
    max_patches = max(f.patches.shape[0] for f in features)
    patch_dim = features[0].patches.shape[1]
    max_text = max(f.text_length for f in features)

    patches = np.zeros((count, max_patches, patch_dim))
    audio_mask = np.zeros((count, max_patches), dtype=bool)
    text_mask = np.zeros((count, max_text), dtype=bool)
    uses_ids = features[0].token_ids is not None
    token_ids = np.full((count, max_text), PAD_ID, dtype=np.int64) if uses_ids else None
    text_embedding = None if uses_ids else np.zeros((count, max_text, features[0].text_embedding.shape[1]))

    for row, item in enumerate(features):
        if item.patches.shape[1] != patch_dim:
            raise ContractViolation(f"collate: patch width {item.patches.shape[1]} != {patch_dim} for '{item.id}'")
        patches[row, :item.patches.shape[0]] = item.patches
        audio_mask[row, :item.patches.shape[0]] = True
        text_mask[row, :item.text_length] = True
        if uses_ids:
            token_ids[row, :item.text_length] = item.token_ids
        else:
            text_embedding[row, :item.text_length] = item.text_embedding
    return EmotionBatch(ids=[f.id for f in features], labels=np.asarray([f.label for f in features]),
                        patches=patches, audio_mask=audio_mask, text_mask=text_mask, token_ids=token_ids,
                        text_embedding=text_embedding)


def iterate_batches(features: Sequence[UtteranceFeatures], batch_size: int,
                    order: Optional[np.ndarray] = None):
    """Yield (batch_index, EmotionBatch) in ``order`` (default: as given)."""
    order = np.arange(len(features)) if order is None else order
    for batch_index, start in enumerate(range(0, len(order), batch_size)):
        yield batch_index, collate([features[i] for i in order[start:start + batch_size]])
