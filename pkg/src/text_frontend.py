"""
@file text_frontend.py
@brief Text embeddings F_t: tokenizer, embedding table and the 2-layer extractor
@details Two input routes feed the same transformer feature extractor:
trainable token embeddings plus sinusoidal positions, or externally
precomputed per-token embeddings (any source width) passed through a linear
adapter. Row 0 of every output is the CLS position.
"""

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np

from errors import ConfigError, ContractViolation, FormatError
from numerics import functional as F
from numerics.checkpoint import load_checkpoint, save_checkpoint
from numerics.rng import gaussian, make_rng
from numerics.tensor import Tensor, as_tensor, parameter
from numerics.transformer import (DEFAULT_INIT_STD, EncoderLayerParams, sinusoidal_positions,
                                  transformer_encoder_layer)

PAD_TOKEN, UNK_TOKEN, CLS_TOKEN = "<pad>", "<unk>", "<cls>"
PAD_ID, UNK_ID, CLS_ID = 0, 1, 2
DEFAULT_MAX_TOKENS = 64
EXTRACTOR_LAYERS = 2
EXTRACTOR_HEADS = 8
PRECOMPUTED_SOURCE_DIM = 768

_WORD_PATTERN = re.compile(r"\w+|[^\w\s]")


@dataclass
class Vocab:
    """Dense token <-> id map with PAD=0, UNK=1, CLS=2."""
    token_to_id: Dict[str, int] = field(default_factory=lambda: {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID,
                                                                 CLS_TOKEN: CLS_ID})

    def __post_init__(self):
        ids = sorted(self.token_to_id.values())
        if ids != list(range(len(ids))):
            raise FormatError("vocab ids must be dense and unique starting at 0")
        for token, expected in ((PAD_TOKEN, PAD_ID), (UNK_TOKEN, UNK_ID), (CLS_TOKEN, CLS_ID)):
            if self.token_to_id.get(token) != expected:
                raise FormatError(f"vocab must map {token} to id {expected}")
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}

    def __len__(self) -> int:
        return len(self.token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)


def split_words(text: str) -> List[str]:
    """Lowercase, then split on whitespace and punctuation boundaries."""
    return _WORD_PATTERN.findall(text.lower())


def build_vocab(texts: Iterable[str], min_count: int = 1) -> Vocab:
    """Vocabulary ordered by descending frequency, ties broken alphabetically."""
    counts = Counter(word for text in texts for word in split_words(text))
    mapping = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID, CLS_TOKEN: CLS_ID}
    for word, count in sorted(counts.items(), key=lambda item: (-item[1], item[0])):
        if count >= min_count and word not in mapping:
            mapping[word] = len(mapping)
    return Vocab(mapping)


def save_vocab(vocab: Vocab, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{token}\t{index}\n" for token, index in sorted(vocab.token_to_id.items(), key=lambda kv: kv[1])]
    path.write_text("".join(lines), encoding="utf-8")
    return path


def load_vocab(path: Union[str, Path]) -> Vocab:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"vocab file not found at {path}")
    mapping: Dict[str, int] = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line:
            continue
        token, sep, raw_id = line.rpartition("\t")
        if not sep or not raw_id.isdigit():
            raise FormatError(f"{path}:{line_no}: expected 'token<TAB>id', got {line!r}")
        if token in mapping:
            raise FormatError(f"{path}:{line_no}: duplicate token {token!r}")
        mapping[token] = int(raw_id)
    return Vocab(mapping)


def tokenize(text: str, vocab: Vocab, max_tokens: int = DEFAULT_MAX_TOKENS) -> np.ndarray:
    """
    @brief Map text to ids with CLS prepended; OOV words become UNK
    @details Sequences longer than ``max_tokens`` (CLS included) are truncated
    with a warning. The empty string yields ``[CLS]``.
    """
    ids = [CLS_ID] + [vocab.lookup(word) for word in split_words(text)]
    if len(ids) > max_tokens:
        logging.warning(f"text truncated from {len(ids)} to {max_tokens} tokens: {text[:40]!r}...")
        ids = ids[:max_tokens]
    return np.asarray(ids, dtype=np.int64)


def embed_and_extract(ids: np.ndarray, embedding_table: Tensor, positions: np.ndarray,
                      extractor: Sequence[EncoderLayerParams], key_mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Token lookup, positional add, then the extractor layers.

    :param ids: int array [S] or [B, S]
    :param embedding_table: Tensor [V, d]
    :param positions: array of at least [S, d]
    :param extractor: encoder layers applied in order
    :param key_mask: optional bool [B, S] (False = padding)
    :return: Tensor [S, d] or [B, S, d]
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape[-1] < 1:
        raise ContractViolation("embed_and_extract: id sequence is empty")
    if ids.size and ids.max() >= embedding_table.shape[0]:
        raise ContractViolation(f"embed_and_extract: id {int(ids.max())} >= vocab size {embedding_table.shape[0]}")
    if positions.shape[0] < ids.shape[-1]:
        raise ContractViolation(f"embed_and_extract: {ids.shape[-1]} tokens exceed {positions.shape[0]} positions")
    hidden = F.add(F.embedding(embedding_table, ids), positions[:ids.shape[-1]])
    return _extract(hidden, extractor, key_mask)


def _extract(hidden: Tensor, extractor: Sequence[EncoderLayerParams], key_mask: Optional[np.ndarray]) -> Tensor:
    single = hidden.ndim == 2
    if single and key_mask is not None:
        raise ContractViolation("key_mask needs batched [B, S, d] input")
    for layer in extractor:
        hidden = transformer_encoder_layer(hidden, layer, key_mask=key_mask)
    return hidden


@dataclass
class TextEncoder:
    """Embedding table, optional precomputed-input adapter and the feature extractor."""
    embedding: Tensor
    extractor: List[EncoderLayerParams]
    positions: np.ndarray
    adapter_weight: Optional[Tensor] = None
    adapter_bias: Optional[Tensor] = None

    @classmethod
    def init(cls, vocab_size: int, model_dim: int, seed: int, layers: int = EXTRACTOR_LAYERS,
             heads: int = EXTRACTOR_HEADS, max_tokens: int = DEFAULT_MAX_TOKENS,
             source_dim: Optional[int] = None, init_std: float = DEFAULT_INIT_STD) -> "TextEncoder":
        """
        :param source_dim: width of precomputed embeddings; None builds no adapter
        """
        if layers < 1:
            raise ContractViolation(f"text extractor needs at least one layer, got {layers}")
        embedding = parameter(gaussian(make_rng(seed, "init", "text", "embedding"), (vocab_size, model_dim),
                                       init_std))
        extractor = [EncoderLayerParams.init(model_dim, heads, make_rng(seed, "init", "text", "extractor", i),
                                             init_std=init_std) for i in range(layers)]
        adapter_weight = adapter_bias = None
        if source_dim is not None:
            adapter_weight = parameter(gaussian(make_rng(seed, "init", "text", "adapter"), (source_dim, model_dim),
                                                init_std))
            adapter_bias = parameter(np.zeros(model_dim))
        return cls(embedding=embedding, extractor=extractor, positions=sinusoidal_positions(max_tokens, model_dim),
                   adapter_weight=adapter_weight, adapter_bias=adapter_bias)

    @property
    def model_dim(self) -> int:
        return self.embedding.shape[1]

    def named_parameters(self, prefix: str = "text") -> Dict[str, Tensor]:
        params = {f"{prefix}.embedding": self.embedding}
        for i, layer in enumerate(self.extractor):
            params.update(layer.named_parameters(f"{prefix}.extractor.{i}"))
        if self.adapter_weight is not None:
            params[f"{prefix}.adapter.weight"] = self.adapter_weight
            params[f"{prefix}.adapter.bias"] = self.adapter_bias
        return params

    def encode_ids(self, ids: np.ndarray, key_mask: Optional[np.ndarray] = None) -> Tensor:
        return embed_and_extract(ids, self.embedding, self.positions, self.extractor, key_mask)

    def encode_precomputed(self, embeddings, key_mask: Optional[np.ndarray] = None) -> Tensor:
        """
        @brief Adapter then extractor over precomputed token embeddings
        @param embeddings array/Tensor [S, source_dim] or [B, S, source_dim]
        """
        embeddings = as_tensor(embeddings)
        found = embeddings.shape[-1]
        if self.adapter_weight is None:
            if found != self.model_dim:
                raise ConfigError(f"precomputed embeddings have dim {found}; expected {self.model_dim} "
                                  f"(set text.source_dim to add an adapter)")
            hidden = embeddings
        else:
            expected = self.adapter_weight.shape[0]
            if found != expected:
                raise ConfigError(f"precomputed embeddings have dim {found}; adapter expects {expected}")
            hidden = F.linear(embeddings, self.adapter_weight, self.adapter_bias)
        return _extract(hidden, self.extractor, key_mask)


def save_precomputed_embeddings(path: Union[str, Path], embeddings: Mapping[str, np.ndarray]) -> Path:
    """One [S, source_dim] tensor per utterance id; row 0 is the CLS position."""
    for utterance_id, matrix in embeddings.items():
        if np.ndim(matrix) != 2 or np.shape(matrix)[0] < 1:
            raise ContractViolation(f"embedding for '{utterance_id}' must be [S>=1, dim], got {np.shape(matrix)}")
    return save_checkpoint(path, embeddings)


def load_precomputed_embeddings(path: Union[str, Path], source_dim: Optional[int] = None) -> Dict[str, np.ndarray]:
    """
    Read an embedding container written by ``save_precomputed_embeddings``.

    :param source_dim: when given, every matrix must have this width
    :raises FormatError: bad container or a tensor that is not [S>=1, dim]
    :raises ConfigError: width differs from ``source_dim``
    """
    embeddings = load_checkpoint(path)
    for utterance_id, matrix in embeddings.items():
        if matrix.ndim != 2 or matrix.shape[0] < 1:
            raise FormatError(f"{path}: embedding '{utterance_id}' has shape {matrix.shape}, expected [S>=1, dim]")
        if source_dim is not None and matrix.shape[1] != source_dim:
            raise ConfigError(f"{path}: embedding '{utterance_id}' has dim {matrix.shape[1]}, "
                              f"expected {source_dim}")
    return embeddings
