import itertools
import math

import numpy as np
import pytest

from wean.data import EOS, SOS, build_vocab
from wean.decoding import Hypothesis, beam_decode, greedy_decode, sequence_score
from wean.model import ModelConfig, Seq2SeqModel
from wean.tensor import Tensor


class ScriptedModel:
    """Decoder-protocol stub whose step distribution depends only on the
    previously emitted token (encoded through the fed value)."""

    def __init__(self, dist_for_prev, ids):
        self.dist_for_prev = dist_for_prev
        self.ids = np.asarray(ids, dtype=np.int64)

    def start_states(self, src_ids):
        return None, None

    def decode_step(self, prev, states, enc):
        marker = Tensor(prev.data.reshape(-1)[:1].copy())
        return marker, marker, None

    def step_distribution(self, s_t, c_t):
        return np.asarray(self.dist_for_prev(int(s_t.data[0])), dtype=np.float64), self.ids

    def value_embedding(self, word_id):
        return np.array([float(word_id)])


def test_greedy_immediate_eos_gives_empty_sequence():
    model = ScriptedModel(lambda prev: [1.0, 0.0], ids=[EOS, 7])
    assert greedy_decode(model, [5, 5], max_len=10) == []


def test_greedy_two_step_construction():
    a = 7

    def dist(prev):
        return [0.0, 1.0] if prev == SOS else [1.0, 0.0]

    model = ScriptedModel(dist, ids=[EOS, a])
    assert greedy_decode(model, [5], max_len=10) == [a]


def test_greedy_respects_max_len():
    a = 7
    model = ScriptedModel(lambda prev: [0.0, 1.0], ids=[EOS, a])  # never eos
    for max_len in (1, 3, 6):
        assert greedy_decode(model, [5], max_len=max_len) == [a] * max_len


def test_beam_width_validation():
    model = ScriptedModel(lambda prev: [1.0], ids=[EOS])
    with pytest.raises(ValueError):
        beam_decode(model, [5], beam=0)


def scripted_two_token_model():
    # start: p(a)=0.6, p(b)=0.3, p(eos)=0.1; after any token p(eos)=0.9
    a, b = 4, 5

    def dist(prev):
        if prev == SOS:
            return [0.1, 0.6, 0.3]
        return [0.9, 0.06, 0.04]

    return ScriptedModel(dist, ids=[EOS, a, b]), a, b


def enumerate_best(model, max_len):
    """Brute force: every output over the non-eos tokens up to max_len."""
    ids = [int(i) for i in model.ids if i != EOS]

    def scripted_score(tokens):
        total = 0.0
        prev = SOS
        forced = list(tokens) + ([EOS] if len(tokens) < max_len else [])
        for tok in forced:
            probs = np.asarray(model.dist_for_prev(prev), dtype=np.float64)
            p = probs[list(model.ids).index(tok)]
            if p == 0:
                return None
            total += math.log(p)
            prev = tok
        return total / max(len(forced), 1)

    best, best_score = None, -math.inf
    for length in range(max_len + 1):
        for combo in itertools.product(ids, repeat=length):
            score = scripted_score(list(combo))
            if score is not None and score > best_score:
                best, best_score = list(combo), score
    return best, best_score


def test_beam_two_returns_a_in_constructed_example():
    model, a, b = scripted_two_token_model()
    assert beam_decode(model, [9], beam=2, max_len=4) == [a]
    best, _ = enumerate_best(model, max_len=4)
    assert best == [a]


def test_wide_beam_matches_exhaustive_enumeration_on_stub():
    model, a, b = scripted_two_token_model()
    max_len = 4
    best, best_score = enumerate_best(model, max_len)
    wide = beam_decode(model, [9], beam=3 ** max_len, max_len=max_len)
    assert wide == best


def random_tiny_model(seed):
    rng = np.random.default_rng(seed)
    words = int(rng.integers(3, 6))
    text = " ".join(f"t{i}" for i in range(words) for _ in range(words - i))
    vocab = build_vocab([text], n=words)
    generator = "wean" if rng.random() < 0.5 else "softmax_linear"
    kind = ["dot", "general", "concat"][int(rng.integers(3))]
    config = ModelConfig(hidden_size=5, embedding_size=5, encoder_layers=1,
                         decoder_layers=1, generator=generator, score_kind=kind)
    model = Seq2SeqModel(vocab, config, seed=int(rng.integers(10_000)))
    # vary peakedness so the models are not all near-uniform
    scale = float(rng.uniform(1.0, 12.0))
    for p in model.parameters().values():
        p.data *= scale
    src = [int(i) for i in rng.integers(4, len(vocab), size=int(rng.integers(1, 5)))]
    return model, src


def test_beam_one_equals_greedy_on_random_models():
    for seed in range(50):
        model, src = random_tiny_model(seed)
        greedy = greedy_decode(model, src, max_len=6)
        beam1 = beam_decode(model, src, beam=1, max_len=6)
        assert beam1 == greedy, f"seed {seed}"


def test_normalized_score_non_decreasing_in_beam_width():
    for seed in range(50):
        model, src = random_tiny_model(seed + 1000)
        previous = -math.inf
        for beam in (1, 2, 3, 5):
            tokens = beam_decode(model, src, beam=beam, max_len=5)
            score = sequence_score(model, src, tokens, max_len=5)
            assert score >= previous - 1e-12, f"seed {seed}, beam {beam}"
            previous = score


def test_wide_beam_is_globally_optimal_on_real_model():
    model, src = random_tiny_model(7)
    vocab_ids = model.output_token_ids()
    non_eos = [int(i) for i in vocab_ids if i != EOS]
    max_len = 2
    best_score = -math.inf
    for length in range(max_len + 1):
        for combo in itertools.product(non_eos, repeat=length):
            score = sequence_score(model, src, list(combo), max_len=max_len)
            best_score = max(best_score, score)
    wide = beam_decode(model, src, beam=len(vocab_ids) ** max_len, max_len=max_len)
    wide_score = sequence_score(model, src, wide, max_len=max_len)
    assert abs(wide_score - best_score) < 1e-12


def test_hypothesis_normalized_score_and_output():
    hyp = Hypothesis(tokens=[4, 5, EOS], log_prob=-3.0, finished=True)
    assert hyp.normalized_score() == pytest.approx(-1.0)
    assert hyp.output() == [4, 5]
    live = Hypothesis(tokens=[4], log_prob=-2.0)
    assert live.output() == [4]
    assert live.normalized_score() == pytest.approx(-2.0)


def test_greedy_on_real_model_is_deterministic():
    model, src = random_tiny_model(11)
    assert greedy_decode(model, src) == greedy_decode(model, src)
    assert len(greedy_decode(model, src, max_len=4)) <= 4
