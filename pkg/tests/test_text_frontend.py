import numpy as np
import pytest

from errors import ConfigError, ContractViolation, FormatError
from numerics import functional as F
from numerics.gradcheck import check_gradients
from text_frontend import (CLS_ID, PAD_ID, UNK_ID, TextEncoder, Vocab, build_vocab, load_precomputed_embeddings,
                           load_vocab, save_precomputed_embeddings, save_vocab, split_words, tokenize)


@pytest.fixture
def vocab():
    return build_vocab(["I am so happy", "so sad today", "happy happy day"])


def test_vocab_reserves_special_ids(vocab):
    assert (vocab.lookup("<pad>"), vocab.lookup("<unk>"), vocab.lookup("<cls>")) == (PAD_ID, UNK_ID, CLS_ID)


def test_vocab_orders_by_frequency_then_alphabet(vocab):
    assert vocab.lookup("happy") == 3 and vocab.lookup("so") == 4 and vocab.lookup("am") == 5


def test_split_words_lowercases_and_splits_punctuation():
    assert split_words("Oh, NO!") == ["oh", ",", "no", "!"]


def test_tokenize_prepends_cls_and_maps_oov_to_unk(vocab):
    assert tokenize("so furious", vocab).tolist() == [CLS_ID, vocab.lookup("so"), UNK_ID]


def test_tokenize_empty_text_is_just_cls(vocab):
    assert tokenize("", vocab).tolist() == [CLS_ID]


def test_tokenize_truncates_with_warning(vocab, caplog):
    ids = tokenize("happy " * 10, vocab, max_tokens=4)
    assert ids.shape == (4,) and "truncated" in caplog.text


def test_vocab_file_round_trip(tmp_path, vocab):
    assert load_vocab(save_vocab(vocab, tmp_path / "vocab.tsv")).token_to_id == vocab.token_to_id


def test_vocab_file_with_gap_is_rejected(tmp_path):
    (tmp_path / "v.tsv").write_text("<pad>\t0\n<unk>\t1\n<cls>\t2\nhello\t5\n", encoding="utf-8")
    with pytest.raises(FormatError, match="dense"):
        load_vocab(tmp_path / "v.tsv")


def test_vocab_file_with_malformed_line_is_rejected(tmp_path):
    (tmp_path / "v.tsv").write_text("<pad>\t0\nbroken line\n", encoding="utf-8")
    with pytest.raises(FormatError, match=":2:"):
        load_vocab(tmp_path / "v.tsv")


def test_vocab_must_keep_special_tokens():
    with pytest.raises(FormatError):
        Vocab({"<unk>": 0, "<pad>": 1, "<cls>": 2})


def test_encoder_output_shapes(vocab):
    encoder = TextEncoder.init(len(vocab), 8, seed=0, heads=2, max_tokens=16)
    ids = np.stack([tokenize("so happy", vocab, 16), tokenize("sad", vocab, 16).tolist() + [PAD_ID]])
    mask = ids != PAD_ID
    assert encoder.encode_ids(ids, key_mask=mask).shape == (2, 3, 8)


def test_encoder_rejects_sequences_longer_than_positions(vocab):
    encoder = TextEncoder.init(len(vocab), 8, seed=0, heads=2, max_tokens=2)
    with pytest.raises(ContractViolation, match="positions"):
        encoder.encode_ids(np.array([CLS_ID, 3, 4]))


def test_precomputed_adapter_maps_source_width(rng):
    encoder = TextEncoder.init(10, 8, seed=0, heads=2, source_dim=12)
    assert encoder.encode_precomputed(rng.standard_normal((5, 12))).shape == (5, 8)


def test_precomputed_width_mismatch_is_config_error(rng):
    encoder = TextEncoder.init(10, 8, seed=0, heads=2, source_dim=12)
    with pytest.raises(ConfigError, match="adapter expects 12"):
        encoder.encode_precomputed(rng.standard_normal((5, 10)))


def test_precomputed_without_adapter_needs_model_width(rng):
    encoder = TextEncoder.init(10, 8, seed=0, heads=2)
    with pytest.raises(ConfigError, match="source_dim"):
        encoder.encode_precomputed(rng.standard_normal((5, 12)))


def test_precomputed_embedding_file_checks_width(tmp_path, rng):
    path = save_precomputed_embeddings(tmp_path / "emb.jferc", {"u1": rng.standard_normal((3, 6))})
    assert load_precomputed_embeddings(path, source_dim=6)["u1"].shape == (3, 6)
    with pytest.raises(ConfigError):
        load_precomputed_embeddings(path, source_dim=7)


def test_encoder_is_deterministic_per_seed():
    first = TextEncoder.init(10, 8, seed=5, heads=2).embedding.data
    second = TextEncoder.init(10, 8, seed=5, heads=2).embedding.data
    assert np.array_equal(first, second)


def test_swapping_two_tokens_changes_the_encoding():
    encoder = TextEncoder.init(8, 8, seed=0, layers=1, heads=2, init_std=0.3)
    forward = encoder.encode_ids(np.array([CLS_ID, 3, 4, 5])).data
    swapped = encoder.encode_ids(np.array([CLS_ID, 5, 4, 3])).data
    assert np.max(np.abs(forward - swapped)) > 1e-6
    assert np.max(np.abs(forward[0] - swapped[0])) > 1e-6


def test_embedding_table_gradients_match_finite_differences():
    encoder = TextEncoder.init(8, 4, seed=1, layers=1, heads=2, init_std=0.5)
    ids = np.array([CLS_ID, 3, 5])
    report = check_gradients(lambda: F.sum(F.mul(encoder.encode_ids(ids), 0.7)),
                             {"embedding": encoder.embedding})
    assert report.passed(1e-4)


def test_embedding_file_with_corrupted_magic_is_format_error(tmp_path, rng):
    path = save_precomputed_embeddings(tmp_path / "emb.jferc", {"u1": rng.standard_normal((2, 4))})
    raw = path.read_bytes()
    path.write_bytes(b"X" + raw[1:])
    with pytest.raises(FormatError, match="magic"):
        load_precomputed_embeddings(path)
