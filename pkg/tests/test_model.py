import numpy as np
import pytest

from gradcheck import check_gradients
from wean.data import build_vocab
from wean.model import (
    CandidateSet,
    CheckpointError,
    ModelConfig,
    Seq2SeqModel,
    count_output_params,
    load_checkpoint,
    make_query,
    relevance,
    save_checkpoint,
    select_word,
    word_distribution,
)
from wean.tensor import Tensor, backward, tensor_sum


def tiny_vocab(n=8):
    text = " ".join(f"t{i}" for i in range(n) for _ in range(n - i))
    return build_vocab([text], n=n)


def tiny_model(generator="wean", score_kind="general", hidden=6, emb=6,
               layers=1, seed=0, vocab_words=8, candidate_size=None):
    config = ModelConfig(hidden_size=hidden, embedding_size=emb,
                         encoder_layers=layers, decoder_layers=layers,
                         generator=generator, score_kind=score_kind,
                         candidate_size=candidate_size)
    return Seq2SeqModel(tiny_vocab(vocab_words), config, seed=seed)


def test_encode_output_shape():
    model = tiny_model()
    for n in (1, 3, 7):
        out = model.encode(list(range(4, 4 + n)))
        assert out.shape == (n, 6)


def test_encode_all_zero_parameters_gives_zero_states():
    model = tiny_model()
    for p in model.parameters().values():
        p.data[:] = 0.0
    out = model.encode([4, 5, 6])
    assert np.allclose(out.data, 0.0, atol=1e-15)


def test_encode_prefix_causality():
    model = tiny_model(layers=2, seed=1)
    seq = [4, 5, 6, 7, 4]
    full = model.encode(seq)
    prefix = model.encode(seq[:3])
    assert np.allclose(full.data[:3], prefix.data, atol=1e-14)


def test_encode_rejects_empty_and_bad_ids():
    model = tiny_model()
    with pytest.raises(ValueError):
        model.encode([])
    with pytest.raises(IndexError):
        model.encode([999])


def test_decode_step_single_source_context_equals_h1():
    model = tiny_model(seed=2)
    enc, states = model.start_states([5])
    prev = model.embed_target([1])
    _, c_t, _ = model.decode_step(prev, states, enc)
    assert np.allclose(c_t.data, enc.data[0], atol=1e-12)


def test_decode_step_deterministic():
    model = tiny_model(seed=3)
    enc, states = model.start_states([4, 5, 6])
    prev = model.embed_target([1])
    a = model.decode_step(prev, states, enc)
    b = model.decode_step(prev, states, enc)
    assert np.array_equal(a[0].data, b[0].data)
    assert np.array_equal(a[1].data, b[1].data)


def test_decode_step_context_in_convex_hull():
    model = tiny_model(seed=4)
    enc, states = model.start_states([4, 5, 6, 7])
    prev = model.embed_target([1])
    _, c_t, _ = model.decode_step(prev, states, enc)
    eps = 1e-12
    assert np.all(c_t.data >= enc.data.min(axis=0) - eps)
    assert np.all(c_t.data <= enc.data.max(axis=0) + eps)


def test_make_query_zero_inputs():
    model = tiny_model()
    zero = Tensor(np.zeros(6))
    q = make_query(model.head, zero, zero)
    assert np.allclose(q.data, 0.0, atol=1e-15)


def test_make_query_range_and_baseline_rejection():
    model = tiny_model(seed=5)
    rng = np.random.default_rng(6)
    q = make_query(model.head, Tensor(rng.normal(size=6) * 10), Tensor(rng.normal(size=6) * 10))
    assert np.all(np.abs(q.data) < 1.0)
    baseline = tiny_model(generator="softmax_linear")
    with pytest.raises(ValueError):
        make_query(baseline.head, Tensor(np.zeros(6)), Tensor(np.zeros(6)))


def test_make_query_gradient_wrt_projection():
    model = tiny_model(seed=7)
    rng = np.random.default_rng(8)
    s = Tensor(rng.normal(size=6))
    c = Tensor(rng.normal(size=6))

    def loss():
        return tensor_sum(make_query(model.head, s, c))

    assert check_gradients(loss, {"w": model.head.query_proj}) < 1e-6


def test_relevance_dot_orthonormal():
    model = tiny_model(score_kind="dot", seed=9)
    e = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    q = Tensor(np.array([1.0, 0.0]))
    scores = relevance(model.head, q, e)
    assert np.allclose(scores.data, [1.0, 0.0], atol=1e-15)


def test_relevance_rejects_baseline_and_empty():
    baseline = tiny_model(generator="softmax_linear")
    with pytest.raises(ValueError):
        relevance(baseline.head, Tensor(np.zeros(6)), Tensor(np.zeros((2, 6))))
    model = tiny_model()
    with pytest.raises(ValueError):
        relevance(model.head, Tensor(np.zeros(6)), Tensor(np.zeros((0, 6))))


def test_word_distribution_uniform_when_embeddings_equal():
    model = tiny_model(seed=10)
    model.embedding.table.data[:] = 0.37
    n = len(model.candidates)
    dist = word_distribution(model.head, Tensor(np.ones(6)), Tensor(np.ones(6)),
                             model.candidates)
    assert np.allclose(dist.data, 1.0 / n, atol=1e-12)


def test_word_distribution_sums_to_one_both_heads():
    rng = np.random.default_rng(11)
    for generator in ("wean", "softmax_linear"):
        model = tiny_model(generator=generator, seed=12)
        s = Tensor(rng.normal(size=6))
        c = Tensor(rng.normal(size=6))
        dist = word_distribution(model.head, s, c, model.candidates)
        expected = len(model.candidates) if generator == "wean" else len(model.vocab)
        assert dist.shape == (expected,)
        assert abs(dist.data.sum() - 1.0) < 1e-12


def test_word_distribution_shift_invariance_of_scores():
    # adding a constant to every relevance score leaves the distribution alone
    model = tiny_model(seed=13)
    rng = np.random.default_rng(14)
    q = Tensor(rng.normal(size=6))
    values = model.candidates.values()
    from wean.tensor import softmax
    base = softmax(relevance(model.head, q, values)).data
    shifted = softmax(relevance(model.head, q, values) + 7.5).data
    assert np.allclose(base, shifted, atol=1e-12)


def test_select_word_one_hot_and_tie_break():
    model = tiny_model()
    n = len(model.candidates)
    one_hot = np.zeros(n)
    one_hot[5] = 1.0
    word, value = select_word(Tensor(one_hot), model.candidates)
    assert word == int(model.candidates.word_ids[5])
    tie = np.full(n, 1.0 / n)
    word, _ = select_word(Tensor(tie), model.candidates)
    assert word == int(model.candidates.word_ids[0])


def test_select_word_value_aliases_shared_table():
    model = tiny_model()
    n = len(model.candidates)
    probs = np.zeros(n)
    probs[2] = 1.0
    word, value = select_word(Tensor(probs), model.candidates)
    assert np.shares_memory(value, model.embedding.table.data)
    assert np.array_equal(value, model.embedding.table.data[word])


def test_argmax_of_dot_against_orthonormal_candidates():
    # query equal to one candidate's embedding wins under dot scoring
    model = tiny_model(score_kind="dot", hidden=8, emb=8, seed=15)
    model.embedding.table.data[:] = np.eye(len(model.vocab), 8)
    values = model.candidates.values()
    q = Tensor(model.embedding.table.data[6].copy())
    from wean.tensor import softmax
    dist = softmax(relevance(model.head, q, values))
    word, _ = select_word(dist, model.candidates)
    assert word == 6


def test_count_output_params_reported_values():
    assert count_output_params("softmax_linear", 50000, 256) == 12_800_000
    assert count_output_params("softmax_linear", 4000, 512) == 2_048_000
    assert count_output_params("wean", 50000, 256, "concat") == 131_328
    assert count_output_params("wean", 4000, 512, "concat") == 524_800
    assert count_output_params("wean", 123, 256, "general") == 256 * 256
    assert count_output_params("wean", 99999, 64, "dot") == 0


def test_count_output_params_scaling_invariants():
    k = 128
    wean_counts = {count_output_params("wean", v, k, "concat") for v in (10, 1000, 50000)}
    assert len(wean_counts) == 1  # independent of vocabulary size
    base = [count_output_params("softmax_linear", v, k) for v in (10, 1000, 50000)]
    assert base == [10 * k, 1000 * k, 50000 * k]  # linear in vocabulary size


def test_wean_head_param_count_matches_formula():
    for kind in ("dot", "general", "concat"):
        model = tiny_model(score_kind=kind, hidden=6, emb=6, seed=16)
        actual = sum(p.size for name, p in model.head.params().items()
                     if name != "query_proj")
        assert actual == count_output_params("wean", len(model.vocab), 6, kind)


def test_embedding_tying_single_storage():
    model = tiny_model(seed=17)
    row = 5
    model.embedding.table.data[row, :] = 1.25
    enc = model.embed_source([row])
    dec = model.embed_target([row])
    values = model.candidates.values()
    assert np.allclose(enc.data[0], 1.25)
    assert np.allclose(dec.data[0], 1.25)
    assert np.allclose(values.data[row], 1.25)


def test_frozen_paths_block_gradient():
    model = tiny_model(seed=18)
    model.frozen_embedding_paths = frozenset({"encoder"})
    backward(tensor_sum(model.embed_source([4, 5])))
    assert model.embedding.table.grad is None
    model.frozen_embedding_paths = frozenset()
    backward(tensor_sum(model.embed_source([4, 5])))
    assert model.embedding.table.grad is not None


def test_candidate_set_restriction_and_gold_mapping():
    model = tiny_model(vocab_words=8, candidate_size=3)
    cands = model.candidates
    assert len(cands) == 7  # 4 specials + 3 words
    assert cands.word_ids.tolist() == [0, 1, 2, 3, 4, 5, 6]
    golds = cands.gold_indices(np.array([5, 11, 2]))
    assert golds.tolist() == [5, 3, 2]  # out-of-set word 11 maps to unk


def test_shared_components_identical_across_heads():
    a = tiny_model(generator="wean", seed=42)
    b = tiny_model(generator="softmax_linear", seed=42)
    pa, pb = a.parameters(), b.parameters()
    shared = [k for k in pa if k in pb and not k.startswith("head.score")
              and k != "head.output_weights"]
    assert "embedding.table" in shared
    for key in shared:
        assert np.array_equal(pa[key].data, pb[key].data), key


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    model = tiny_model(generator="wean", score_kind="concat", seed=19)
    path = tmp_path / "model.npz"
    save_checkpoint(model, path, extra={"tokenize_mode": "word"})
    loaded, extra = load_checkpoint(path)
    assert extra == {"tokenize_mode": "word"}
    assert loaded.config == model.config
    assert loaded.vocab.id_to_token == model.vocab.id_to_token
    for name, p in model.parameters().items():
        assert np.array_equal(p.data, loaded.parameters()[name].data), name


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.npz"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(generator="pointer").validate()
    with pytest.raises(ValueError):
        ModelConfig(generator="wean", score_kind="dot",
                    hidden_size=8, embedding_size=4).validate()
    with pytest.raises(ValueError):
        ModelConfig(dropout=1.0).validate()
