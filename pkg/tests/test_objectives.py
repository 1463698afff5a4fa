import math

import numpy as np
import pytest

from config.settings import ICLConfig
from errors import ConfigError, ContractViolation
from numerics import functional as F
from numerics.gradcheck import check_gradients
from numerics.rng import make_rng
from numerics.tensor import Tensor, parameter
from objectives import EmotionHead, LossDiagnostics, classify, concat_fused, erc_loss, icl_loss, total_loss


def brute_force_icl(features, labels, tau):
    total = 0.0
    for i in range(len(labels)):
        others = [j for j in range(len(labels)) if j != i]
        positives = [j for j in others if labels[j] == labels[i]]
        if not positives:
            continue
        denominator = sum(math.exp(features[i] @ features[j] / tau) for j in others)
        total -= sum(math.log(math.exp(features[i] @ features[p] / tau) / denominator)
                     for p in positives) / len(positives)
    return total


@pytest.mark.parametrize("seed", range(20))
def test_icl_matches_brute_force_on_random_batches(seed):
    rng = make_rng(seed, "icl-oracle")
    cfg = ICLConfig(tau=0.3)
    for _ in range(5):
        count, classes = int(rng.integers(2, 17)), int(rng.integers(2, 6))
        features = rng.standard_normal((count, 6))
        features /= np.linalg.norm(features, axis=1, keepdims=True)
        labels = rng.integers(0, classes, size=count)
        loss = icl_loss(Tensor(features), labels, cfg)
        assert loss.item() == pytest.approx(brute_force_icl(features, labels, cfg.tau), abs=1e-9)


def test_icl_of_identical_same_class_features_is_k_log_k_minus_one():
    features = Tensor(np.tile([0.6, 0.8], (4, 1)))
    assert icl_loss(features, [1, 1, 1, 1], ICLConfig()).item() == pytest.approx(4 * math.log(3), abs=1e-10)


def test_icl_of_a_same_class_pair_is_zero():
    features = Tensor([[1.0, 0.0], [0.0, 1.0]])
    assert icl_loss(features, [2, 2], ICLConfig()).item() == pytest.approx(0.0, abs=1e-12)


def test_icl_without_positives_is_zero_and_counted(rng):
    diagnostics = LossDiagnostics()
    loss = icl_loss(Tensor(rng.standard_normal((3, 4))), [0, 1, 2], ICLConfig(), diagnostics)
    assert loss.item() == 0.0 and diagnostics.batches_without_positives == 1


def test_icl_needs_two_samples():
    with pytest.raises(ContractViolation):
        icl_loss(Tensor([[1.0, 0.0]]), [0], ICLConfig())


def test_icl_gradients_match_finite_differences(rng):
    raw = parameter(rng.standard_normal((5, 4)))
    labels = np.array([0, 1, 0, 1, 1])
    report = check_gradients(lambda: icl_loss(F.l2_normalize(raw), labels, ICLConfig(tau=0.5)), {"raw": raw})
    assert report.passed(1e-6)


def test_concat_fused_is_unit_length(rng):
    fused = concat_fused(Tensor(rng.standard_normal((3, 4))), Tensor(rng.standard_normal((3, 4))))
    assert fused.shape == (3, 8) and np.allclose(np.linalg.norm(fused.data, axis=1), 1.0, atol=1e-10)


def test_concat_fused_can_skip_normalization(rng):
    a, b = rng.standard_normal(4), rng.standard_normal(4)
    assert np.array_equal(concat_fused(Tensor(a), Tensor(b), normalize=False).data, np.concatenate([a, b]))


def test_classify_averages_branch_logits(rng):
    head = EmotionHead.init(4, 3, make_rng(0, "head"))
    cls_mt, cls_tm = rng.standard_normal((2, 4)), rng.standard_normal((2, 4))
    probabilities, logits = classify(Tensor(cls_mt), Tensor(cls_tm), head)
    expected = 0.5 * (cls_mt @ head.w_mt.data + head.b_mt.data + cls_tm @ head.w_tm.data + head.b_tm.data)
    assert np.allclose(logits.data, expected, atol=1e-12)
    assert np.allclose(probabilities.data.sum(axis=1), 1.0)


def test_erc_loss_is_mean_negative_log_likelihood():
    probabilities = Tensor([[0.5, 0.25, 0.25], [0.1, 0.8, 0.1]])
    expected = -(math.log(0.5) + math.log(0.8)) / 2
    assert erc_loss(probabilities, [0, 1]).item() == pytest.approx(expected, abs=1e-12)


def test_erc_loss_clamps_vanishing_probabilities():
    diagnostics = LossDiagnostics()
    loss = erc_loss(Tensor([[1.0, 0.0]]), [1], diagnostics)
    assert loss.item() == pytest.approx(-math.log(1e-12)) and diagnostics.clamped_probabilities == 1


def test_erc_loss_rejects_out_of_range_labels():
    with pytest.raises(ContractViolation):
        erc_loss(Tensor([[0.5, 0.5]]), [2])


def test_total_loss_without_contrastive_term_is_the_classification_loss():
    erc, icl = parameter(1.25), parameter(3.0)
    assert total_loss(erc, icl, ICLConfig(lambda_icl=0.0)) is erc
    assert total_loss(erc, None, ICLConfig()) is erc


def test_total_loss_weights_the_contrastive_term():
    assert total_loss(Tensor(1.0), Tensor(2.0), ICLConfig(lambda_icl=0.5)).item() == pytest.approx(2.0)


def test_head_needs_two_classes():
    with pytest.raises(ConfigError):
        EmotionHead.init(4, 1, make_rng(0))


def test_icl_is_invariant_to_reordering_the_batch(rng):
    features = rng.standard_normal((10, 5))
    features /= np.linalg.norm(features, axis=1, keepdims=True)
    labels = rng.integers(0, 3, size=10)
    perm = rng.permutation(10)
    cfg = ICLConfig(tau=0.2)
    assert icl_loss(Tensor(features[perm]), labels[perm], cfg).item() == pytest.approx(
        icl_loss(Tensor(features), labels, cfg).item(), abs=1e-10)


def test_sharper_temperature_punishes_a_close_negative_more():
    # anchor, its positive, and a negative closer to both than they are to each other
    features = Tensor([[1.0, 0.0], [0.0, 1.0], [math.cos(math.pi / 6), math.sin(math.pi / 6)]])
    labels = [0, 0, 1]
    sharp = icl_loss(features, labels, ICLConfig(tau=0.05)).item()
    soft = icl_loss(features, labels, ICLConfig(tau=0.5)).item()
    assert sharp > soft


def test_erc_loss_of_uniform_predictions_is_log_class_count():
    probabilities = Tensor(np.full((3, 4), 0.25))
    assert erc_loss(probabilities, [0, 1, 3]).item() == pytest.approx(math.log(4), abs=1e-12)


def test_classify_argmax_ignores_a_shared_logit_offset(rng):
    head = EmotionHead.init(4, 5, make_rng(1, "head"), init_std=0.5)
    cls_mt, cls_tm = Tensor(rng.standard_normal((6, 4))), Tensor(rng.standard_normal((6, 4)))
    probabilities, logits = classify(cls_mt, cls_tm, head)
    head.b_mt.data = head.b_mt.data + 7.0
    head.b_tm.data = head.b_tm.data + 7.0
    shifted_probabilities, shifted_logits = classify(cls_mt, cls_tm, head)
    assert np.allclose(shifted_logits.data, logits.data + 7.0, atol=1e-12)
    assert np.array_equal(shifted_probabilities.data.argmax(axis=1), probabilities.data.argmax(axis=1))
    assert np.allclose(shifted_probabilities.data, probabilities.data, atol=1e-12)


def test_total_loss_gradient_is_sum_of_component_gradients(rng):
    raw = parameter(rng.standard_normal((4, 3)))
    labels = np.array([0, 1, 0, 2])
    cfg = ICLConfig(tau=0.5, lambda_icl=0.8)

    def components():
        return erc_loss(F.softmax(raw), labels), icl_loss(F.l2_normalize(raw), labels, cfg)

    erc, _ = components()
    erc.backward()
    erc_grad = raw.grad.copy()
    raw.zero_grad()
    _, icl = components()
    icl.backward()
    icl_grad = raw.grad.copy()
    raw.zero_grad()
    total_loss(*components(), cfg).backward()
    assert np.allclose(raw.grad, erc_grad + 0.8 * icl_grad, atol=1e-12)
