"""
@file fusion.py
@brief Joint-based fusion module: N stacked JF blocks
@details Each block runs two one-sided passes that read the same layer-l
streams. A source encoder processes ``[source ; joints]``; its updated joint
rows go through an MLP and are appended to the target stream before the
target encoder runs. Only the target's own rows are kept, so the trailing
joint rows are computed and dropped. With joint length 0 the streams never
exchange information.

Under ``fixed`` routing (default) the text stream always flows through the
language encoders and the audio stream through the visual encoders:

    text'  = LTrans ([T ; MLP (VTrans ([A ; v_j ])[joints])])[:S_t]
    audio' = VTrans'([A ; MLP'(LTrans'([T ; v_j'])[joints])])[:S_a]

``literal`` routing applies the block equations symbol by symbol, which
swaps the streams between encoder families every layer.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError, ContractViolation
from numerics import functional as F
from numerics.rng import gaussian, make_rng
from numerics.tensor import Tensor, as_tensor, parameter
from numerics.transformer import DEFAULT_INIT_STD, EncoderLayerParams, transformer_encoder_layer

DEFAULT_BLOCKS = 2
DEFAULT_JOINT_LENGTH = 4
ROUTINGS = ("fixed", "literal")


@dataclass
class JointVectors:
    v_j: Tensor        # [J, d]
    v_j_prime: Tensor  # [J, d]

    @classmethod
    def init(cls, length: int, model_dim: int, rng: np.random.Generator,
             init_std: float = DEFAULT_INIT_STD) -> "JointVectors":
        if length < 0:
            raise ConfigError(f"joint length must be >= 0, got {length}")
        return cls(v_j=parameter(gaussian(rng, (length, model_dim), init_std)),
                   v_j_prime=parameter(gaussian(rng, (length, model_dim), init_std)))

    @property
    def length(self) -> int:
        return self.v_j.shape[0]


@dataclass
class JointMLP:
    """d -> d, GELU, d -> d."""
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, model_dim: int, rng: np.random.Generator, init_std: float = DEFAULT_INIT_STD) -> "JointMLP":
        return cls(w1=parameter(gaussian(rng, (model_dim, model_dim), init_std)), b1=parameter(np.zeros(model_dim)),
                   w2=parameter(gaussian(rng, (model_dim, model_dim), init_std)), b2=parameter(np.zeros(model_dim)))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.w1.shape[0]:
            raise ContractViolation(f"joint MLP expects width {self.w1.shape[0]}, got joints of shape {x.shape}")
        return F.linear(F.gelu(F.linear(x, self.w1, self.b1)), self.w2, self.b2)

    def named_parameters(self, prefix: str) -> Dict[str, Tensor]:
        return {f"{prefix}.w1": self.w1, f"{prefix}.b1": self.b1, f"{prefix}.w2": self.w2, f"{prefix}.b2": self.b2}


@dataclass
class JFBlock:
    """
    @brief One joint-based fusion layer
    @details The primed encoders start as exact copies of the unprimed ones and
    are trained independently afterwards.
    """
    vtrans: EncoderLayerParams
    ltrans: EncoderLayerParams
    vtrans_prime: EncoderLayerParams
    ltrans_prime: EncoderLayerParams
    mlp: JointMLP
    mlp_prime: JointMLP
    joints: JointVectors

    @classmethod
    def init(cls, model_dim: int, heads: int, joint_length: int, seed: int, layer: int,
             ff_dim: Optional[int] = None, init_std: float = DEFAULT_INIT_STD) -> "JFBlock":
        def stream(name):
            return make_rng(seed, "init", "jf", layer, name)

        vtrans = EncoderLayerParams.init(model_dim, heads, stream("vtrans"), ff_dim=ff_dim, init_std=init_std)
        ltrans = EncoderLayerParams.init(model_dim, heads, stream("ltrans"), ff_dim=ff_dim, init_std=init_std)
        return cls(vtrans=vtrans, ltrans=ltrans, vtrans_prime=vtrans.clone(), ltrans_prime=ltrans.clone(),
                   mlp=JointMLP.init(model_dim, stream("mlp"), init_std),
                   mlp_prime=JointMLP.init(model_dim, stream("mlp_prime"), init_std),
                   joints=JointVectors.init(joint_length, model_dim, stream("joints"), init_std))

    @property
    def model_dim(self) -> int:
        return self.vtrans.model_dim

    def named_parameters(self, prefix: str) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for name in ("vtrans", "ltrans", "vtrans_prime", "ltrans_prime"):
            params.update(getattr(self, name).named_parameters(f"{prefix}.{name}"))
        params.update(self.mlp.named_parameters(f"{prefix}.mlp"))
        params.update(self.mlp_prime.named_parameters(f"{prefix}.mlp_prime"))
        if self.joints.length > 0:
            params[f"{prefix}.joints.v_j"] = self.joints.v_j
            params[f"{prefix}.joints.v_j_prime"] = self.joints.v_j_prime
        return params


def init_blocks(count: int, model_dim: int, heads: int, joint_length: int, seed: int,
                ff_dim: Optional[int] = None, init_std: float = DEFAULT_INIT_STD) -> List[JFBlock]:
    return [JFBlock.init(model_dim, heads, joint_length, seed, layer, ff_dim, init_std) for layer in range(count)]


@dataclass
class FusionState:
    """
    Per-layer stream pair. Under fixed routing ``f_mt`` is the text-shaped
    stream and ``f_tm`` the audio-shaped one; row 0 of each is its CLS.
    """
    f_mt: Tensor              # [B, S_mt, d]
    f_tm: Tensor              # [B, S_tm, d]
    mt_mask: np.ndarray       # [B, S_mt] bool
    tm_mask: np.ndarray       # [B, S_tm] bool
    layer: int = 0
    routing: str = "fixed"
    batched: bool = True


def _as_batch(x) -> Tuple[Tensor, bool]:
    x = as_tensor(x)
    if x.ndim == 2:
        return F.reshape(x, (1,) + x.shape), False
    if x.ndim != 3:
        raise ContractViolation(f"fusion expects [S, d] or [B, S, d] features, got shape {x.shape}")
    return x, True


def _mask_or_ones(mask: Optional[np.ndarray], x: Tensor) -> np.ndarray:
    if mask is None:
        return np.ones(x.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 1:
        mask = mask[None, :]
    if mask.shape != x.shape[:2]:
        raise ContractViolation(f"mask shape {mask.shape} does not match features {x.shape}")
    return mask


def audio_stream(f_m, cls_audio: Tensor, audio_mask: Optional[np.ndarray] = None) -> Tuple[Tensor, np.ndarray]:
    """Prepend the learned audio CLS to patch tokens: A^0 = [CLS_a ; F_m]."""
    f_m, _ = _as_batch(f_m)
    batch, _, dim = f_m.shape
    if cls_audio.shape != (dim,):
        raise ContractViolation(f"audio CLS has shape {cls_audio.shape}, patch tokens have width {dim}")
    mask = _mask_or_ones(audio_mask, f_m)
    cls_rows = F.broadcast_to(F.reshape(cls_audio, (1, 1, dim)), (batch, 1, dim))
    return F.concat([cls_rows, f_m], axis=1), np.concatenate([np.ones((batch, 1), dtype=bool), mask], axis=1)


def init_fusion_state(f_t, f_m, cls_audio: Tensor, text_mask: Optional[np.ndarray] = None,
                      audio_mask: Optional[np.ndarray] = None, routing: str = "fixed") -> FusionState:
    """
    @brief Build layer-0 streams from text embeddings and patch embeddings
    @param f_t Tensor [S, d] or [B, S, d], CLS already at row 0
    @param f_m Tensor [P, d] or [B, P, d] patch tokens (no CLS)
    @return FusionState with |A^0| = P + 1 and |T^0| = S
    """
    if routing not in ROUTINGS:
        raise ConfigError(f"fusion routing must be one of {ROUTINGS}, got '{routing}'")
    text, batched = _as_batch(f_t)
    patches, _ = _as_batch(f_m)
    if text.shape[-1] != patches.shape[-1]:
        raise ContractViolation(f"text width {text.shape[-1]} != audio width {patches.shape[-1]}")
    if text.shape[0] != patches.shape[0]:
        raise ContractViolation(f"text batch {text.shape[0]} != audio batch {patches.shape[0]}")
    text_mask = _mask_or_ones(text_mask, text)
    audio, audio_mask = audio_stream(patches, cls_audio, audio_mask)
    if routing == "literal":
        return FusionState(f_mt=audio, f_tm=text, mt_mask=audio_mask, tm_mask=text_mask, routing=routing,
                           batched=batched)
    return FusionState(f_mt=text, f_tm=audio, mt_mask=text_mask, tm_mask=audio_mask, routing=routing,
                       batched=batched)


def _one_sided(source: Tensor, source_mask: np.ndarray, target: Tensor, target_mask: np.ndarray,
               source_encoder: EncoderLayerParams, target_encoder: EncoderLayerParams,
               joint: Tensor, mlp: JointMLP) -> Tensor:
    """Target stream enriched through joints that first attended over the source."""
    if joint.shape[0] == 0:
        return transformer_encoder_layer(target, target_encoder, key_mask=target_mask)
    batch, source_len, dim = source.shape
    target_len = target.shape[1]
    length = joint.shape[0]
    if joint.shape[1] != dim:
        raise ContractViolation(f"joint vectors have width {joint.shape[1]}, streams have width {dim}")
    joint_rows = F.broadcast_to(F.reshape(joint, (1, length, dim)), (batch, length, dim))
    joint_mask = np.ones((batch, length), dtype=bool)

    source_out = transformer_encoder_layer(F.concat([source, joint_rows], axis=1), source_encoder,
                                           key_mask=np.concatenate([source_mask, joint_mask], axis=1))
    mapped = mlp(source_out[:, source_len:, :])
    target_out = transformer_encoder_layer(F.concat([target, mapped], axis=1), target_encoder,
                                           key_mask=np.concatenate([target_mask, joint_mask], axis=1))
    return target_out[:, :target_len, :]


def jf_block_forward(state: FusionState, block: JFBlock) -> FusionState:
    """Advance both streams by one JF block; both directions read the layer-l state."""
    if state.f_mt.shape[-1] != block.model_dim:
        raise ContractViolation(f"stream width {state.f_mt.shape[-1]} != block model_dim {block.model_dim}")
    joints = block.joints
    if state.routing == "literal":
        f_mt = _one_sided(state.f_mt, state.mt_mask, state.f_tm, state.tm_mask,
                          block.vtrans, block.ltrans, joints.v_j, block.mlp)
        f_tm = _one_sided(state.f_tm, state.tm_mask, state.f_mt, state.mt_mask,
                          block.ltrans_prime, block.vtrans_prime, joints.v_j_prime, block.mlp_prime)
        return FusionState(f_mt=f_mt, f_tm=f_tm, mt_mask=state.tm_mask, tm_mask=state.mt_mask,
                           layer=state.layer + 1, routing=state.routing, batched=state.batched)

    text, audio = state.f_mt, state.f_tm
    new_text = _one_sided(audio, state.tm_mask, text, state.mt_mask,
                          block.vtrans, block.ltrans, joints.v_j, block.mlp)
    new_audio = _one_sided(text, state.mt_mask, audio, state.tm_mask,
                           block.ltrans_prime, block.vtrans_prime, joints.v_j_prime, block.mlp_prime)
    return FusionState(f_mt=new_text, f_tm=new_audio, mt_mask=state.mt_mask, tm_mask=state.tm_mask,
                       layer=state.layer + 1, routing=state.routing, batched=state.batched)


def run_blocks(state: FusionState, blocks: Sequence[JFBlock]) -> FusionState:
    if len(blocks) == 0:
        raise ConfigError("fusion needs at least one JF block (use ablation.no_jfm for late fusion)")
    for block in blocks:
        state = jf_block_forward(state, block)
    return state


def fusion_forward(f_t, f_m, blocks: Sequence[JFBlock], cls_audio: Tensor, text_mask: Optional[np.ndarray] = None,
                   audio_mask: Optional[np.ndarray] = None, routing: str = "fixed") -> Tuple[Tensor, Tensor]:
    """
    @brief Apply N JF blocks and return the final (F_mt, F_tm) streams
    @details Outputs keep the batch axis only when the inputs had one.
    """
    if len(blocks) == 0:
        raise ConfigError("fusion needs at least one JF block (use ablation.no_jfm for late fusion)")
    state = run_blocks(init_fusion_state(f_t, f_m, cls_audio, text_mask, audio_mask, routing), blocks)
    if state.batched:
        return state.f_mt, state.f_tm
    return state.f_mt[0], state.f_tm[0]


def extract_cls(f_mt: Tensor, f_tm: Tensor) -> Tuple[Tensor, Tensor]:
    """Row 0 of each stream: [S, d] -> [d] or [B, S, d] -> [B, d]."""
    if f_mt.shape[-2] < 1 or f_tm.shape[-2] < 1:
        raise ContractViolation("extract_cls: streams must be non-empty")
    return f_mt[..., 0, :], f_tm[..., 0, :]


def unimodal_forward(stream, blocks: Sequence[JFBlock], side: str, key_mask: Optional[np.ndarray] = None) -> Tensor:
    """
    @brief Run one modality through its own encoder of every block
    @details ``side="text"`` uses each block's LTrans and ``side="audio"`` its
    VTrans', i.e. exactly the per-stream path fusion takes at joint length 0.
    The audio stream must already carry its CLS row.
    """
    if side not in ("text", "audio"):
        raise ContractViolation(f"unimodal side must be 'text' or 'audio', got '{side}'")
    if len(blocks) == 0:
        raise ConfigError("unimodal path needs at least one JF block")
    hidden, batched = _as_batch(stream)
    mask = _mask_or_ones(key_mask, hidden)
    for block in blocks:
        encoder = block.ltrans if side == "text" else block.vtrans_prime
        hidden = transformer_encoder_layer(hidden, encoder, key_mask=mask)
    return hidden if batched else hidden[0]


@dataclass
class CrossModalSensitivity:
    text_from_audio: float   # ||Δ cls_mt|| when only the audio input changes
    audio_from_text: float   # ||Δ cls_tm|| when only the text input changes

    def firewall_holds(self, tolerance: float = 1e-12) -> bool:
        return self.text_from_audio <= tolerance and self.audio_from_text <= tolerance


def cross_modal_sensitivity(f_t, f_m, blocks: Sequence[JFBlock], cls_audio: Tensor, seed: int = 0,
                            scale: float = 1.0, text_mask: Optional[np.ndarray] = None,
                            audio_mask: Optional[np.ndarray] = None, routing: str = "fixed") -> CrossModalSensitivity:
    """
    Finite-difference measurement of cross-modal information flow.

    Each modality's input is perturbed by Gaussian noise of size ``scale``
    while the other is held fixed; the reported numbers are the largest
    per-sample L2 changes of the opposite stream's CLS output.
    """
    f_t, f_m = as_tensor(f_t).detach(), as_tensor(f_m).detach()
    rng = make_rng(seed, "sensitivity")

    def cls_pair(text, audio):
        out_mt, out_tm = fusion_forward(text, audio, blocks, cls_audio, text_mask, audio_mask, routing)
        return extract_cls(out_mt, out_tm)

    base_mt, base_tm = cls_pair(f_t, f_m)
    moved_audio = Tensor(f_m.data + scale * rng.standard_normal(f_m.shape))
    moved_text = Tensor(f_t.data + scale * rng.standard_normal(f_t.shape))
    shifted_mt, _ = cls_pair(f_t, moved_audio)
    _, shifted_tm = cls_pair(moved_text, f_m)

    def change(a: Tensor, b: Tensor) -> float:
        return float(np.max(np.linalg.norm(np.atleast_2d(a.data - b.data), axis=-1)))

    return CrossModalSensitivity(text_from_audio=change(base_mt, shifted_mt),
                                 audio_from_text=change(base_tm, shifted_tm))
