import numpy as np
import pytest
from scipy.special import erf

from errors import ContractViolation, FormatError, NonFiniteError
from numerics import functional as F
from numerics.adam import AdamState, adam_step
from numerics.checkpoint import MAGIC, decode_tensors, encode_tensors, load_checkpoint, save_checkpoint
from numerics.gradcheck import check_gradients, finite_difference_gradients, relative_error
from numerics.rng import make_rng
from numerics.tensor import Tensor, parameter
from numerics.transformer import (EncoderLayerParams, multi_head_self_attention, sinusoidal_positions,
                                  transformer_encoder_layer)


def loop_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_matmul_matches_loop_oracle(rng):
    a, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 5))
    assert np.allclose(F.matmul(Tensor(a), Tensor(b)).data, loop_matmul(a, b), atol=1e-12)


def test_matmul_rejects_misaligned_shapes():
    with pytest.raises(ContractViolation, match=r"\(2, 3\).*\(2, 3\)"):
        F.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_gelu_uses_exact_erf(rng):
    x = rng.standard_normal(10)
    assert np.allclose(F.gelu(Tensor(x)).data, 0.5 * x * (1 + erf(x / np.sqrt(2))), atol=1e-15)


def test_softmax_rows_sum_to_one_for_large_inputs():
    out = F.softmax(Tensor([[1000.0, 1001.0, 999.0], [-5.0, 0.0, 5.0]]), axis=-1)
    assert np.allclose(out.data.sum(axis=-1), 1.0)


def test_layer_norm_output_has_zero_mean_unit_variance(rng):
    x = Tensor(rng.standard_normal((3, 8)) * 5 + 2)
    out = F.layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8))).data
    assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-12) and np.allclose(out.var(axis=-1), 1.0, atol=1e-8)


def test_non_finite_leaf_is_rejected():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])


def test_non_finite_op_output_names_the_op():
    with pytest.raises(NonFiniteError, match="log"):
        F.log(Tensor([0.0, 1.0]))


def test_backward_requires_scalar():
    with pytest.raises(ContractViolation):
        F.mul(parameter(np.ones(3)), 2.0).backward()


def test_composite_expression_gradients_match_finite_differences(rng):
    a = parameter(rng.standard_normal((3, 4)))
    w = parameter(rng.standard_normal((4, 2)))
    b = parameter(rng.standard_normal(2))

    def loss():
        hidden = F.gelu(F.linear(a, w, b))
        return F.sum(F.mul(F.softmax(hidden, axis=-1), F.exp(F.mul(hidden, 0.3))))

    report = check_gradients(loss, {"a": a, "w": w, "b": b})
    assert report.passed(1e-6)


def test_layer_norm_and_division_gradients(rng):
    x = parameter(rng.standard_normal((2, 5)))
    gain = parameter(rng.standard_normal(5))
    bias = parameter(rng.standard_normal(5))

    def loss():
        normed = F.layer_norm(x, gain, bias)
        return F.sum(F.div(normed, F.add(F.sqrt(F.sum(F.mul(x, x), axis=-1, keepdims=True)), 1.0)))

    assert check_gradients(loss, {"x": x, "gain": gain, "bias": bias}).passed(1e-6)


def test_index_and_embedding_gradients_scatter_back(rng):
    table = parameter(rng.standard_normal((5, 3)))
    ids = np.array([[0, 2, 2], [4, 1, 0]])

    def loss():
        rows = F.embedding(table, ids)
        return F.sum(F.mul(rows[:, 1, :], rows[np.arange(2), np.array([0, 2]), :]))

    assert check_gradients(loss, {"table": table}).passed(1e-6)


def test_gradcheck_catches_a_wrong_backward(rng):
    x = parameter(rng.standard_normal(4))

    def wrong_square(t):
        def backward(grad):
            t.accumulate(grad * t.data)  # should be 2 * t
        return Tensor.from_op(t.data ** 2, (t,), backward, "wrong_square")

    report = check_gradients(lambda: F.sum(wrong_square(x)), {"x": x})
    assert not report.passed(1e-4)


def test_finite_difference_of_quadratic_is_exact():
    x = parameter(np.array([1.0, -2.0, 3.0]))
    grads = finite_difference_gradients(lambda: F.sum(F.mul(x, x)), {"x": x})
    assert np.allclose(grads["x"], 2 * x.data, atol=1e-8)


def test_relative_error_uses_floor_for_tiny_values():
    assert relative_error(1e-12, 0.0) == pytest.approx(1e-4)


def test_gradcheck_sampling_still_visits_every_tensor(rng):
    params = {"a": parameter(rng.standard_normal((6, 6))), "b": parameter(rng.standard_normal(3))}
    report = check_gradients(lambda: F.sum(F.mul(params["a"], params["a"])) + F.sum(params["b"]), params,
                             max_coords_per_tensor=4)
    assert set(report.per_parameter) == {"a", "b"} and report.coordinates_checked == 7


def test_adam_first_step_moves_by_learning_rate():
    param = parameter(np.array([1.0, -1.0, 0.5]))
    param.grad = np.array([0.2, -3.0, 1e-3])
    adam_step({"p": param}, AdamState(lr=0.1))
    # bias-corrected first step is lr * g / (|g| + eps)
    assert np.allclose(param.data, [0.9, -0.9, 0.4], atol=1e-6)


def test_adam_rejects_nan_gradient_without_touching_parameters():
    good, bad = parameter(np.ones(2)), parameter(np.ones(2))
    good.grad = np.ones(2)
    bad.grad = np.array([np.nan, 0.0])
    state = AdamState()
    with pytest.raises(NonFiniteError):
        adam_step({"good": good, "bad": bad}, state)
    assert np.array_equal(good.data, np.ones(2)) and state.step == 0


def test_adam_matches_reference_over_several_steps(rng):
    param = parameter(rng.standard_normal(4))
    start = param.data.copy()
    grads = [rng.standard_normal(4) for _ in range(3)]
    state = AdamState(lr=0.01)
    for grad in grads:
        param.grad = grad
        adam_step({"p": param}, state)

    expected, m, v = start.copy(), np.zeros(4), np.zeros(4)
    for t, grad in enumerate(grads, start=1):
        m = 0.9 * m + 0.1 * grad
        v = 0.999 * v + 0.001 * grad ** 2
        expected -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(param.data, expected, atol=1e-12)


def test_checkpoint_preserves_order_shapes_and_values(tmp_path, rng):
    tensors = {"b.second": rng.standard_normal((2, 3)), "a.first": rng.standard_normal(4), "scalar": np.array(1.5)}
    loaded = load_checkpoint(save_checkpoint(tmp_path / "c.jferc", tensors))
    assert list(loaded) == list(tensors)
    assert all(np.array_equal(loaded[k], tensors[k]) for k in tensors)


def test_checkpoint_layout_is_little_endian():
    payload = encode_tensors({"w": np.array([1.0])})
    assert payload[:6] == MAGIC
    assert payload[6:14] == (1).to_bytes(8, "little")


def test_checkpoint_rejects_bad_magic():
    with pytest.raises(FormatError, match="magic"):
        decode_tensors(b"NOTJF1" + b"\x00" * 8)


def test_checkpoint_rejects_truncation():
    payload = encode_tensors({"w": np.arange(4.0)})
    with pytest.raises(FormatError, match="truncated"):
        decode_tensors(payload[:-3])


def test_rng_streams_are_reproducible_and_independent():
    first = make_rng(3, "init", "text").standard_normal(4)
    again = make_rng(3, "init", "text").standard_normal(4)
    other = make_rng(3, "init", "audio").standard_normal(4)
    assert np.array_equal(first, again) and not np.allclose(first, other)


def test_attention_ignores_padded_keys(rng):
    layer = EncoderLayerParams.init(8, 2, make_rng(0, "layer"), init_std=0.3)
    real = rng.standard_normal((1, 3, 8))
    padded = np.concatenate([real, rng.standard_normal((1, 2, 8)) * 100], axis=1)
    mask = np.array([[True, True, True, False, False]])
    alone = transformer_encoder_layer(Tensor(real), layer).data
    with_padding = transformer_encoder_layer(Tensor(padded), layer, key_mask=mask).data
    assert np.allclose(with_padding[:, :3], alone, atol=1e-12)


def test_attention_is_permutation_equivariant_without_positions(rng):
    layer = EncoderLayerParams.init(8, 4, make_rng(1, "layer"), init_std=0.3)
    x = rng.standard_normal((5, 8))
    perm = np.array([3, 0, 4, 1, 2])
    out = multi_head_self_attention(Tensor(x), layer).data
    assert np.allclose(multi_head_self_attention(Tensor(x[perm]), layer).data, out[perm], atol=1e-12)


def test_encoder_layer_rejects_indivisible_heads():
    with pytest.raises(ContractViolation, match="divisible"):
        EncoderLayerParams.init(10, 3, make_rng(0))


def test_encoder_layer_gradients_match_finite_differences(rng):
    layer = EncoderLayerParams.init(4, 2, make_rng(2, "layer"), ff_dim=6, init_std=0.5)
    x = Tensor(rng.standard_normal((2, 3, 4)))
    mask = np.array([[True, True, False], [True, True, True]])
    params = layer.named_parameters("layer")
    report = check_gradients(lambda: F.sum(F.mul(transformer_encoder_layer(x, layer, key_mask=mask), 0.7)),
                             params)
    assert report.passed(1e-4)


def test_sinusoidal_positions_start_with_sin_cos_pattern():
    table = sinusoidal_positions(3, 4)
    assert np.allclose(table[0], [0.0, 1.0, 0.0, 1.0])


def test_softmax_of_equal_logits_is_uniform():
    assert np.allclose(F.softmax(Tensor([2.5, 2.5, 2.5, 2.5])).data, 0.25, atol=1e-15)


def test_softmax_is_shift_invariant(rng):
    x = rng.standard_normal((3, 5))
    assert np.allclose(F.softmax(Tensor(x)).data, F.softmax(Tensor(x + 37.5)).data, atol=1e-12)


def test_softmax_of_zero_and_log_two():
    assert np.allclose(F.softmax(Tensor([0.0, np.log(2.0)])).data, [1 / 3, 2 / 3], atol=1e-15)


def test_linear_with_identity_weight_and_bias():
    eye, no_bias = Tensor(np.eye(2)), Tensor(np.zeros(2))
    assert np.array_equal(F.linear(Tensor([1.0, 2.0]), eye, no_bias).data, [1.0, 2.0])
    assert np.array_equal(F.linear(Tensor([0.0, 0.0]), eye, Tensor([3.0, -1.0])).data, [3.0, -1.0])


def test_sqrt_at_zero_passes_no_gradient():
    x = parameter(np.array([0.0, 4.0]))
    F.sum(F.sqrt(x)).backward()
    assert np.array_equal(x.grad, [0.0, 0.25])


def test_l2_normalize_of_zero_vector_has_finite_gradient():
    x = parameter(np.zeros(4))
    out = F.l2_normalize(x)
    F.sum(out).backward()
    assert np.array_equal(out.data, np.zeros(4))
    assert np.isfinite(x.grad).all() and np.allclose(x.grad, 1e12, rtol=1e-12)


def test_item_of_a_vector_is_contract_violation():
    with pytest.raises(ContractViolation, match="single-element"):
        Tensor(np.ones(3)).item()


def test_item_of_single_element_tensors():
    assert Tensor(1.5).item() == 1.5 and Tensor([[2.0]]).item() == 2.0


def test_finite_difference_of_constant_is_zero(rng):
    x = parameter(rng.standard_normal((2, 3)))
    grads = finite_difference_gradients(lambda: 2.5, {"x": x})
    assert np.allclose(grads["x"], 0.0, atol=1e-9)


def test_adam_leaves_parameters_alone_on_zero_gradients(rng):
    param = parameter(rng.standard_normal(5))
    start = param.data.copy()
    state = AdamState(lr=0.1)
    for _ in range(3):
        param.grad = np.zeros(5)
        adam_step({"p": param}, state)
    assert np.array_equal(param.data, start) and state.step == 3


def test_adam_converges_on_a_quadratic():
    w = parameter(np.array([0.0]))
    state = AdamState(lr=0.1)
    for _ in range(200):
        w.grad = 2.0 * (w.data - 3.0)
        adam_step({"w": w}, state)
    assert abs(w.item() - 3.0) < 0.05


def set_weights(layer, rng, scale=0.5):
    for tensor in layer.tensors().values():
        tensor.data = rng.standard_normal(tensor.shape) * scale


def test_attention_over_one_token_is_value_then_output_projection(rng):
    layer = EncoderLayerParams.init(4, 2, make_rng(3, "layer"))
    set_weights(layer, rng)
    x = rng.standard_normal((1, 4))
    expected = (x @ layer.w_value.data + layer.b_value.data) @ layer.w_out.data + layer.b_out.data
    assert np.allclose(multi_head_self_attention(Tensor(x), layer).data, expected, atol=1e-12)


def test_two_token_single_head_attention_matches_hand_computation():
    layer = EncoderLayerParams.init(2, 1, make_rng(0, "layer"))
    layer.w_query.data = np.array([[1.0, 0.0], [0.5, -1.0]])
    layer.w_key.data = np.array([[0.0, 2.0], [1.0, 0.0]])
    layer.w_value.data = np.array([[1.0, 1.0], [0.0, 3.0]])
    layer.w_out.data = np.array([[2.0, 0.0], [-1.0, 1.0]])
    layer.b_query.data = np.array([0.1, 0.0])
    layer.b_key.data = np.array([0.0, -0.2])
    layer.b_value.data = np.array([0.5, 0.0])
    layer.b_out.data = np.array([0.0, 1.0])
    x = np.array([[1.0, 2.0], [-1.0, 0.5]])

    def project(row, w, b):
        return [sum(row[k] * w[k][j] for k in range(2)) + b[j] for j in range(2)]

    q = [project(row, layer.w_query.data, layer.b_query.data) for row in x]
    k = [project(row, layer.w_key.data, layer.b_key.data) for row in x]
    v = [project(row, layer.w_value.data, layer.b_value.data) for row in x]
    expected = []
    for i in range(2):
        scores = [(q[i][0] * k[j][0] + q[i][1] * k[j][1]) / np.sqrt(2.0) for j in range(2)]
        weights = [np.exp(s) / sum(np.exp(t) for t in scores) for s in scores]
        context = [weights[0] * v[0][c] + weights[1] * v[1][c] for c in range(2)]
        expected.append(project(context, layer.w_out.data, layer.b_out.data))
    assert np.allclose(multi_head_self_attention(Tensor(x), layer).data, expected, atol=1e-12)


def reference_encoder_layer(x, layer):
    p = {name: t.data for name, t in layer.tensors().items()}
    heads, dim = layer.head_count, layer.model_dim
    head_dim = dim // heads

    def norm(h, gain, bias):
        centered = h - h.mean(axis=-1, keepdims=True)
        return centered / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + 1e-10) * gain + bias

    normed = norm(x, p["ln1_gain"], p["ln1_bias"])
    q, k, v = (normed @ p[f"w_{n}"] + p[f"b_{n}"] for n in ("query", "key", "value"))
    merged = np.zeros_like(x)
    for h in range(heads):
        cols = slice(h * head_dim, (h + 1) * head_dim)
        scores = q[:, cols] @ k[:, cols].T / np.sqrt(head_dim)
        weights = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights /= weights.sum(axis=1, keepdims=True)
        merged[:, cols] = weights @ v[:, cols]
    hidden = x + merged @ p["w_out"] + p["b_out"]
    inner = norm(hidden, p["ln2_gain"], p["ln2_bias"]) @ p["w_ff1"] + p["b_ff1"]
    activated = 0.5 * inner * (1 + erf(inner / np.sqrt(2.0)))
    return hidden + activated @ p["w_ff2"] + p["b_ff2"]


def test_encoder_layer_matches_straight_line_reference(rng):
    layer = EncoderLayerParams.init(4, 2, make_rng(4, "layer"), ff_dim=8)
    set_weights(layer, rng)
    x = np.arange(12, dtype=np.float64).reshape(3, 4) / 6.0 - 1.0
    assert np.allclose(transformer_encoder_layer(Tensor(x), layer).data, reference_encoder_layer(x, layer),
                       atol=1e-10)
