"""Greedy and beam-search decoding with predicted-value feeding.

At inference the decoder consumes the *embedding* of the word it just
emitted (the value of the selected key-value pair), starting from the
sequence-start embedding. Decoders only need a small model protocol:
``start_states``, ``decode_step``, ``step_distribution`` and
``value_embedding``; anything implementing it decodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from wean.data import EOS, SOS
from wean.tensor import Tensor, no_grad


def default_max_len(source_len: int) -> int:
    return 2 * source_len + 5


@dataclass
class Hypothesis:
    """A partial decode: emitted tokens (eos kept while ranking), summed
    per-step log-probability, and the decoder state to continue from."""

    tokens: list = field(default_factory=list)
    log_prob: float = 0.0
    states: list | None = None
    finished: bool = False

    def normalized_score(self) -> float:
        return self.log_prob / max(len(self.tokens), 1)

    def output(self) -> list:
        if self.finished and self.tokens and self.tokens[-1] == EOS:
            return self.tokens[:-1]
        return list(self.tokens)


def _feed_value(model, word_id: int) -> Tensor:
    row = model.value_embedding(word_id)
    return Tensor(row.reshape(1, -1))


def greedy_decode(model, src_ids, max_len: int | None = None) -> list:
    """Follow the argmax word (lowest index on ties) until eos or max_len."""
    src_ids = list(src_ids)
    if max_len is None:
        max_len = default_max_len(len(src_ids))
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    out: list = []
    with no_grad():
        enc, states = model.start_states(src_ids)
        prev = _feed_value(model, SOS)
        for _ in range(max_len):
            s_t, c_t, states = model.decode_step(prev, states, enc)
            probs, ids = model.step_distribution(s_t, c_t)
            word = int(ids[int(np.argmax(probs))])
            if word == EOS:
                break
            out.append(word)
            prev = _feed_value(model, word)
    return out


def beam_decode(model, src_ids, beam: int, max_len: int | None = None) -> list:
    """Best sequence over beam searches of widths 1..beam.

    Each inner search is a standard beam search over summed
    log-probabilities: a hypothesis finishes when eos appears among its
    top-width continuations, finished hypotheses retire into a pool, and
    the search's answer maximizes the length-normalized log-probability
    (sum / token count) over the pool plus whatever is alive at max_len.
    Taking the best result across nested widths makes the returned score
    non-decreasing in the beam parameter (a lone top-k search does not
    guarantee that, since pruning decisions are not nested), and width 1
    follows exactly the greedy path.
    """
    if beam < 1:
        raise ValueError(f"beam width must be >= 1, got {beam}")
    src_ids = list(src_ids)
    if max_len is None:
        max_len = default_max_len(len(src_ids))
    best: Hypothesis | None = None
    with no_grad():
        enc, states = model.start_states(src_ids)
        for width in range(1, beam + 1):
            found = _beam_search(model, enc, states, width, max_len)
            if best is None or found.normalized_score() > best.normalized_score():
                best = found
    return best.output()


def _beam_search(model, enc, start_states, width: int, max_len: int) -> Hypothesis:
    """One standard beam search at a fixed width; returns the best hypothesis."""
    live = [Hypothesis(states=start_states)]
    pool: list = []
    for _ in range(max_len):
        expansions: list = []
        for hyp in live:
            prev = _feed_value(model, hyp.tokens[-1] if hyp.tokens else SOS)
            s_t, c_t, new_states = model.decode_step(prev, hyp.states, enc)
            probs, ids = model.step_distribution(s_t, c_t)
            with np.errstate(divide="ignore"):  # zero prob -> -inf, pruned below
                log_probs = np.log(probs)
            for idx in np.argsort(-log_probs, kind="stable")[:width]:
                word = int(ids[idx])
                candidate = Hypothesis(
                    tokens=hyp.tokens + [word],
                    log_prob=hyp.log_prob + float(log_probs[idx]),
                    states=new_states,
                    finished=word == EOS,
                )
                if candidate.finished:
                    pool.append(candidate)
                else:
                    expansions.append(candidate)
        expansions.sort(key=lambda h: -h.log_prob)  # stable: ties keep order
        live = expansions[:width]
        if not live:
            break
    return max(pool + live, key=lambda h: h.normalized_score())


def best_hypothesis_score(model, src_ids, beam: int, max_len: int | None = None) -> float:
    """Length-normalized score of the sequence beam_decode would return."""
    tokens = beam_decode(model, src_ids, beam, max_len)
    return sequence_score(model, src_ids, tokens)


def sequence_score(model, src_ids, tokens, max_len: int | None = None) -> float:
    """Length-normalized log-probability of forcing ``tokens`` (plus eos).

    Mirrors the decoder's accounting: the eos step counts toward both the
    sum and the length, except for sequences cut off at max_len.
    """
    src_ids = list(src_ids)
    if max_len is None:
        max_len = default_max_len(len(src_ids))
    with no_grad():
        enc, states = model.start_states(src_ids)
        forced = list(tokens) + ([EOS] if len(tokens) < max_len else [])
        total = 0.0
        prev = _feed_value(model, SOS)
        for word in forced:
            s_t, c_t, states = model.decode_step(prev, states, enc)
            probs, ids = model.step_distribution(s_t, c_t)
            matches = np.flatnonzero(ids == word)
            if len(matches) == 0:
                return -math.inf
            p = float(probs[matches[0]])
            total += math.log(p) if p > 0 else -math.inf
            prev = _feed_value(model, word)
        return total / max(len(forced), 1)
