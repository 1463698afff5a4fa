"""
@file model.py
@brief Full emotion model: frontends, fusion path and objectives wired per RunConfig
@details Three fusion paths share the same frontends:

- ``jfm``: JF blocks, dual-classifier head (optionally one modality only);
- ``late`` (ablation.no_jfm): masked-mean text features and a separately
  encoded mel stream, concatenated into one classifier;
- ``concat`` (ablation.fusion_mode=concat): text CLS concatenated with the
  mean patch embedding, one classifier.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from audio_frontend import PatchProjection, Waveform, load_wav, mel_from_config, patchify
from config.settings import RunConfig
from errors import ConfigError, FormatError
from fusion import audio_stream, extract_cls, init_blocks, init_fusion_state, run_blocks, unimodal_forward
from harness.data import EmotionBatch, UtteranceFeatures, UtteranceRecord
from harness.synth import render_audio
from numerics import functional as F
from numerics.rng import gaussian, make_rng
from numerics.tensor import Tensor, parameter
from numerics.transformer import EncoderLayerParams, sinusoidal_positions, transformer_encoder_layer
from objectives import EmotionHead, LossDiagnostics, classify, concat_fused, erc_loss, icl_loss, total_loss
from text_frontend import TextEncoder, Vocab, tokenize


def fusion_path(cfg: RunConfig) -> str:
    if cfg.ablation.no_jfm:
        return "late"
    return "concat" if cfg.ablation.fusion_mode == "concat" else "jfm"


def build_features(records: Sequence[UtteranceRecord], cfg: RunConfig, class_index: Mapping[str, int],
                   manifest_dir: Path, vocab: Optional[Vocab] = None,
                   embeddings: Optional[Mapping[str, np.ndarray]] = None) -> List[UtteranceFeatures]:
    """
    @brief Run both frontends' fixed (non-trainable) stages once per record
    @details Audio: waveform -> log-mel -> flattened patches. Text: token ids,
    or the referenced precomputed embedding matrix.
    """
    features = []
    for record in records:
        if record.label not in class_index:
            raise ConfigError(f"utterance '{record.id}' has unseen label '{record.label}'")
        if record.audio is not None:
            waveform = load_wav(manifest_dir / record.audio, expected_sample_rate=cfg.audio.sample_rate)
        else:
            waveform = Waveform(render_audio(record.synth, cfg.audio.sample_rate), cfg.audio.sample_rate)
        patches = patchify(mel_from_config(waveform, cfg.audio).frames, cfg.audio.patch_time, cfg.audio.patch_freq)
        if record.text is not None:
            if vocab is None:
                raise ConfigError(f"utterance '{record.id}' has text but no vocabulary was built")
            features.append(UtteranceFeatures(id=record.id, label=class_index[record.label], patches=patches,
                                              token_ids=tokenize(record.text, vocab, cfg.text.max_tokens)))
        else:
            if embeddings is None or record.embedding_ref not in embeddings:
                raise FormatError(f"utterance '{record.id}': embedding '{record.embedding_ref}' not found "
                                  f"in {cfg.text.embeddings}")
            matrix = embeddings[record.embedding_ref][:cfg.text.max_tokens]
            features.append(UtteranceFeatures(id=record.id, label=class_index[record.label], patches=patches,
                                              text_embedding=matrix))
    kinds = {f.token_ids is None for f in features}
    if len(kinds) > 1:
        raise FormatError("manifest mixes text and embedding_ref records")
    return features


@dataclass
class ModelOutput:
    logits: Tensor          # [K, C]
    probabilities: Tensor   # [K, C]
    features: Tensor        # [K, D] contrastive features

    def predictions(self) -> np.ndarray:
        return np.argmax(self.logits.data, axis=-1)


class EmotionModel:
    """
    @brief Trainable parameters plus the forward/loss pass for one RunConfig
    @details Parameters are created from per-component RNG streams so a
    component's initial values do not depend on which others exist.
    """

    def __init__(self, cfg: RunConfig, num_classes: int, vocab_size: Optional[int] = None,
                 precomputed: bool = False):
        self.cfg = cfg
        self.path = fusion_path(cfg)
        self.num_classes = num_classes
        model, seed = cfg.model, cfg.train.seed
        d, std = model.model_dim, model.init_std
        ff_dim = model.ff_multiplier * d

        source_dim = cfg.text.source_dim if precomputed and cfg.text.use_adapter else None
        self.text = TextEncoder.init(vocab_size or 3, d, seed, layers=cfg.text.extractor_layers,
                                     heads=cfg.text.extractor_heads, max_tokens=cfg.text.max_tokens,
                                     source_dim=source_dim, init_std=std)
        self.precomputed = precomputed
        self.patch = PatchProjection.init(cfg.audio.patch_time, cfg.audio.patch_freq, d,
                                          make_rng(seed, "init", "audio", "patch"), std)
        self.audio_positions = cfg.audio.positions == "sinusoidal"

        self.cls_audio: Optional[Tensor] = None
        self.blocks = []
        self.head: Optional[EmotionHead] = None
        self.late_audio: List[EncoderLayerParams] = []
        self.classifier_weight: Optional[Tensor] = None
        self.classifier_bias: Optional[Tensor] = None

        if self.path == "jfm":
            self.cls_audio = parameter(gaussian(make_rng(seed, "init", "audio", "cls"), (d,), std))
            self.blocks = init_blocks(cfg.fusion.blocks, d, model.heads, cfg.effective_joint_length, seed,
                                      ff_dim=ff_dim, init_std=std)
            self.head = EmotionHead.init(d, num_classes, make_rng(seed, "init", "head"), std)
        else:
            if self.path == "late":
                self.late_audio = [EncoderLayerParams.init(d, model.heads, make_rng(seed, "init", "late", i),
                                                           ff_dim=ff_dim, init_std=std)
                                   for i in range(cfg.text.extractor_layers)]
            rng = make_rng(seed, "init", "classifier")
            self.classifier_weight = parameter(gaussian(rng, (2 * d, num_classes), std))
            self.classifier_bias = parameter(np.zeros(num_classes))

    def named_parameters(self) -> Dict[str, Tensor]:
        """Deterministically ordered name -> trainable tensor."""
        params = dict(self.text.named_parameters("text"))
        params.update(self.patch.named_parameters("audio.patch"))
        if self.cls_audio is not None:
            params["audio.cls"] = self.cls_audio
        for layer, block in enumerate(self.blocks):
            params.update(block.named_parameters(f"jf.{layer}"))
        if self.head is not None:
            params.update(self.head.named_parameters("head"))
        for i, layer in enumerate(self.late_audio):
            params.update(layer.named_parameters(f"late.audio.{i}"))
        if self.classifier_weight is not None:
            params["classifier.weight"] = self.classifier_weight
            params["classifier.bias"] = self.classifier_bias
        return params

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data for name, tensor in self.named_parameters().items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise FormatError(f"checkpoint does not match the model: missing {missing[:5]}, "
                              f"unexpected {unexpected[:5]}")
        for name, tensor in params.items():
            if state[name].shape != tensor.shape:
                raise FormatError(f"checkpoint tensor '{name}' has shape {state[name].shape}, "
                                  f"model expects {tensor.shape}")
            tensor.data[...] = state[name]

    def encode_text(self, batch: EmotionBatch) -> Tensor:
        if self.precomputed:
            return self.text.encode_precomputed(batch.text_embedding, key_mask=batch.text_mask)
        return self.text.encode_ids(batch.token_ids, key_mask=batch.text_mask)

    def encode_patches(self, batch: EmotionBatch) -> Tensor:
        tokens = self.patch(Tensor(batch.patches))
        if self.audio_positions:
            tokens = F.add(tokens, sinusoidal_positions(tokens.shape[1], tokens.shape[2]))
        return tokens

    def _jfm_cls(self, batch: EmotionBatch) -> Tuple[Optional[Tensor], Optional[Tensor]]:
        modality = self.cfg.ablation.modality
        if modality == "text":
            stream = unimodal_forward(self.encode_text(batch), self.blocks, "text", key_mask=batch.text_mask)
            return stream[:, 0, :], None
        if modality == "audio":
            audio, mask = audio_stream(self.encode_patches(batch), self.cls_audio, batch.audio_mask)
            return None, unimodal_forward(audio, self.blocks, "audio", key_mask=mask)[:, 0, :]
        state = init_fusion_state(self.encode_text(batch), self.encode_patches(batch), self.cls_audio,
                                  batch.text_mask, batch.audio_mask, routing=self.cfg.fusion.routing)
        state = run_blocks(state, self.blocks)
        return extract_cls(state.f_mt, state.f_tm)

    def forward(self, batch: EmotionBatch) -> ModelOutput:
        normalize = self.cfg.icl.use_normalization
        if self.path == "jfm":
            cls_mt, cls_tm = self._jfm_cls(batch)
            if cls_tm is None:
                logits = F.linear(cls_mt, self.head.w_mt, self.head.b_mt)
                features = F.l2_normalize(cls_mt) if normalize else cls_mt
            elif cls_mt is None:
                logits = F.linear(cls_tm, self.head.w_tm, self.head.b_tm)
                features = F.l2_normalize(cls_tm) if normalize else cls_tm
            else:
                probabilities, logits = classify(cls_mt, cls_tm, self.head)
                return ModelOutput(logits, probabilities, concat_fused(cls_mt, cls_tm, normalize))
            return ModelOutput(logits, F.softmax(logits, axis=-1), features)

        text = self.encode_text(batch)
        patches = self.encode_patches(batch)
        if self.path == "late":
            text_pooled = F.masked_mean(text, batch.text_mask)
            audio = patches
            for layer in self.late_audio:
                audio = transformer_encoder_layer(audio, layer, key_mask=batch.audio_mask)
            audio_pooled = F.masked_mean(audio, batch.audio_mask)
        else:
            text_pooled = text[:, 0, :]
            audio_pooled = F.masked_mean(patches, batch.audio_mask)
        logits = F.linear(F.concat([text_pooled, audio_pooled], axis=-1), self.classifier_weight,
                          self.classifier_bias)
        return ModelOutput(logits, F.softmax(logits, axis=-1), concat_fused(text_pooled, audio_pooled, normalize))

    def loss(self, batch: EmotionBatch, diagnostics: Optional[LossDiagnostics] = None) -> Tuple[Tensor, ModelOutput]:
        """total = erc + lambda * icl, with the contrastive term skipped when inactive."""
        output = self.forward(batch)
        erc = erc_loss(output.probabilities, batch.labels, diagnostics)
        icl = None
        if self.cfg.icl_active and batch.size >= 2:
            icl = icl_loss(output.features, batch.labels, self.cfg.icl, diagnostics)
        return total_loss(erc, icl, self.cfg.icl), output

    def fusion_inputs(self, batch: EmotionBatch) -> Tuple[Tensor, Tensor]:
        """Detached (text embeddings, patch tokens) as fed to the JF blocks."""
        return self.encode_text(batch).detach(), self.encode_patches(batch).detach()


def describe(model: EmotionModel) -> str:
    total = sum(t.data.size for t in model.named_parameters().values())
    return f"{model.path} model with {len(model.named_parameters())} tensors / {total} parameters"
