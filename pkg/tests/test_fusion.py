import numpy as np
import pytest

from errors import ConfigError, ContractViolation
from fusion import (audio_stream, cross_modal_sensitivity, extract_cls, fusion_forward, init_blocks,
                    unimodal_forward)
from numerics.tensor import Tensor, parameter

DIM = 8


def make_inputs(rng, batch=2, tokens=4, patches=5):
    return Tensor(rng.standard_normal((batch, tokens, DIM))), Tensor(rng.standard_normal((batch, patches, DIM)))


def make_blocks(joint_length, count=2, seed=0):
    return init_blocks(count, DIM, 2, joint_length, seed, init_std=0.3)


@pytest.fixture
def cls_audio(rng):
    return parameter(rng.standard_normal(DIM) * 0.3)


def test_fusion_output_shapes_follow_their_streams(rng, cls_audio):
    f_t, f_m = make_inputs(rng)
    f_mt, f_tm = fusion_forward(f_t, f_m, make_blocks(4), cls_audio)
    assert f_mt.shape == (2, 4, DIM) and f_tm.shape == (2, 6, DIM)


def test_unbatched_inputs_give_unbatched_outputs(rng, cls_audio):
    f_mt, f_tm = fusion_forward(rng.standard_normal((3, DIM)), rng.standard_normal((7, DIM)), make_blocks(2),
                                cls_audio)
    assert f_mt.shape == (3, DIM) and f_tm.shape == (8, DIM)


def test_extract_cls_takes_row_zero(rng, cls_audio):
    f_t, f_m = make_inputs(rng)
    f_mt, f_tm = fusion_forward(f_t, f_m, make_blocks(2), cls_audio)
    cls_mt, cls_tm = extract_cls(f_mt, f_tm)
    assert np.array_equal(cls_mt.data, f_mt.data[:, 0]) and np.array_equal(cls_tm.data, f_tm.data[:, 0])


def test_zero_blocks_is_config_error(rng, cls_audio):
    f_t, f_m = make_inputs(rng)
    with pytest.raises(ConfigError, match="no_jfm"):
        fusion_forward(f_t, f_m, [], cls_audio)


def test_unknown_routing_is_config_error(rng, cls_audio):
    f_t, f_m = make_inputs(rng)
    with pytest.raises(ConfigError):
        fusion_forward(f_t, f_m, make_blocks(2), cls_audio, routing="diagonal")


def test_width_mismatch_is_contract_violation(rng, cls_audio):
    with pytest.raises(ContractViolation):
        fusion_forward(rng.standard_normal((2, 3, DIM)), rng.standard_normal((2, 3, DIM + 1)), make_blocks(2),
                       cls_audio)


def test_zero_joint_length_blocks_all_cross_modal_flow(rng, cls_audio):
    f_t, f_m = make_inputs(rng)
    sensitivity = cross_modal_sensitivity(f_t, f_m, make_blocks(0), cls_audio, seed=3)
    assert sensitivity.text_from_audio == 0.0 and sensitivity.audio_from_text == 0.0


def test_zero_joint_length_firewall_holds_under_literal_routing(rng, cls_audio):
    f_t, f_m = make_inputs(rng)
    assert cross_modal_sensitivity(f_t, f_m, make_blocks(0), cls_audio, routing="literal").firewall_holds()


@pytest.mark.parametrize("seed", range(5))
def test_joints_carry_information_across_modalities(rng, cls_audio, seed):
    f_t, f_m = make_inputs(rng)
    sensitivity = cross_modal_sensitivity(f_t, f_m, make_blocks(4, seed=seed), cls_audio, seed=seed)
    assert sensitivity.text_from_audio > 1e-8 and sensitivity.audio_from_text > 1e-8


def test_zero_joint_length_matches_unimodal_paths(rng, cls_audio):
    f_t, f_m = make_inputs(rng)
    blocks = make_blocks(0)
    f_mt, f_tm = fusion_forward(f_t, f_m, blocks, cls_audio)
    audio, audio_mask = audio_stream(f_m, cls_audio)
    assert np.allclose(unimodal_forward(f_t, blocks, "text").data, f_mt.data, atol=1e-12)
    assert np.allclose(unimodal_forward(audio, blocks, "audio", key_mask=audio_mask).data, f_tm.data, atol=1e-12)


def test_unimodal_rejects_unknown_side(rng):
    with pytest.raises(ContractViolation):
        unimodal_forward(rng.standard_normal((3, DIM)), make_blocks(0), "video")


def test_literal_routing_swaps_stream_shapes_each_block(rng, cls_audio):
    f_t, f_m = make_inputs(rng)
    one_mt, one_tm = fusion_forward(f_t, f_m, make_blocks(2, count=1), cls_audio, routing="literal")
    two_mt, two_tm = fusion_forward(f_t, f_m, make_blocks(2, count=2), cls_audio, routing="literal")
    assert one_mt.shape == (2, 4, DIM) and one_tm.shape == (2, 6, DIM)
    assert two_mt.shape == (2, 6, DIM) and two_tm.shape == (2, 4, DIM)


def test_padded_tokens_do_not_change_real_outputs(rng, cls_audio):
    blocks = make_blocks(4)
    text, patches = rng.standard_normal((1, 3, DIM)), rng.standard_normal((1, 5, DIM))
    padded_text = np.concatenate([text, rng.standard_normal((1, 2, DIM)) * 50], axis=1)
    padded_patches = np.concatenate([patches, rng.standard_normal((1, 3, DIM)) * 50], axis=1)
    text_mask = np.array([[True] * 3 + [False] * 2])
    audio_mask = np.array([[True] * 5 + [False] * 3])
    alone = extract_cls(*fusion_forward(text, patches, blocks, cls_audio))
    padded = extract_cls(*fusion_forward(padded_text, padded_patches, blocks, cls_audio, text_mask=text_mask,
                                         audio_mask=audio_mask))
    assert np.allclose(alone[0].data, padded[0].data, atol=1e-10)
    assert np.allclose(alone[1].data, padded[1].data, atol=1e-10)


def test_primed_encoders_start_equal_but_independent():
    block = make_blocks(2, count=1)[0]
    original, primed = block.vtrans.w_query, block.vtrans_prime.w_query
    assert np.array_equal(original.data, primed.data)
    original.data += 1.0
    assert not np.array_equal(original.data, primed.data)


def test_zero_joint_length_registers_no_joint_parameters():
    names = make_blocks(0, count=1)[0].named_parameters("jf.0")
    assert not any("joints" in name for name in names)


def test_negative_joint_length_is_config_error():
    with pytest.raises(ConfigError):
        make_blocks(-1)


def test_audio_cls_width_must_match(rng):
    with pytest.raises(ContractViolation, match="audio CLS"):
        audio_stream(rng.standard_normal((4, DIM)), parameter(np.zeros(DIM + 2)))


def test_audio_cls_ignores_patch_order_without_joints(rng, cls_audio):
    f_t, f_m = make_inputs(rng, patches=6)
    perm = np.array([4, 0, 5, 2, 1, 3])
    blocks = make_blocks(0)
    _, cls_tm = extract_cls(*fusion_forward(f_t, f_m, blocks, cls_audio))
    _, shuffled_tm = extract_cls(*fusion_forward(f_t, Tensor(f_m.data[:, perm]), blocks, cls_audio))
    assert np.allclose(cls_tm.data, shuffled_tm.data, atol=1e-10)


def test_same_seed_gives_bit_identical_fusion(rng, cls_audio):
    f_t, f_m = make_inputs(rng)
    first = fusion_forward(f_t, f_m, make_blocks(4, seed=9), cls_audio)
    second = fusion_forward(f_t, f_m, make_blocks(4, seed=9), cls_audio)
    assert all(np.array_equal(a.data, b.data) for a, b in zip(first, second))
