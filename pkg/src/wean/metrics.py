"""Corpus BLEU and ROUGE-1/2/L evaluators over tokenized sentences.

Values live in [0, 1]; reports print them scaled by 100. BLEU is the
corpus-level geometric mean of clipped modified n-gram precisions times a
brevity penalty (closest reference length, ties to the shorter). ROUGE is
the mean of per-sentence F1 scores.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass


@dataclass
class ScoreReport:
    metric: str
    corpus_value: float
    per_sentence: list

    def summary_line(self) -> str:
        return f"{self.metric} corpus={self.corpus_value * 100:.2f}"


def ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _as_reference_sets(candidates, references):
    """Normalize references: each candidate gets a list of reference token lists."""
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} reference sets")
    sets = []
    for refs in references:
        if refs and isinstance(refs[0], (list, tuple)):
            sets.append([list(r) for r in refs])
        else:
            sets.append([list(refs)])
    return sets


def bleu(candidates, references, max_ngram: int = 4) -> ScoreReport:
    """Corpus BLEU with multi-reference clipping.

    ``references`` holds, per candidate, either one token list or a list
    of alternatives. Orders longer than every candidate are dropped from
    the geometric mean (so a corpus identical to its references scores 1
    even when sentences are short); zero overlap at any remaining order
    gives 0. Per-sentence values are add-one smoothed diagnostics.
    """
    if not candidates:
        raise ValueError("bleu needs at least one candidate")
    ref_sets = _as_reference_sets(candidates, references)

    clipped = [0] * (max_ngram + 1)
    totals = [0] * (max_ngram + 1)
    cand_len = 0
    ref_len = 0
    for cand, refs in zip(candidates, ref_sets):
        cand_len += len(cand)
        ref_len += min((len(r) for r in refs),
                       key=lambda L: (abs(L - len(cand)), L))
        for n in range(1, max_ngram + 1):
            counts = ngram_counts(cand, n)
            if not counts:
                continue
            max_ref: Counter = Counter()
            for ref in refs:
                for gram, count in ngram_counts(ref, n).items():
                    max_ref[gram] = max(max_ref[gram], count)
            clipped[n] += sum(min(c, max_ref[g]) for g, c in counts.items())
            totals[n] += sum(counts.values())

    log_sum = 0.0
    orders = [n for n in range(1, max_ngram + 1) if totals[n] > 0]
    score = 0.0
    if orders and all(clipped[n] > 0 for n in orders):
        log_sum = sum(math.log(clipped[n] / totals[n]) for n in orders) / len(orders)
        score = brevity_penalty(cand_len, ref_len) * math.exp(log_sum)

    per_sentence = [
        _sentence_bleu_smoothed(cand, refs, max_ngram)
        for cand, refs in zip(candidates, ref_sets)
    ]
    return ScoreReport("BLEU", score, per_sentence)


def brevity_penalty(candidate_len: int, reference_len: int) -> float:
    if candidate_len >= reference_len:
        return 1.0
    if candidate_len == 0:
        return 0.0
    return math.exp(1.0 - reference_len / candidate_len)


def _sentence_bleu_smoothed(cand, refs, max_ngram: int) -> float:
    """Add-one smoothed BLEU for one sentence (diagnostic only)."""
    log_sum = 0.0
    orders = 0
    for n in range(1, max_ngram + 1):
        counts = ngram_counts(cand, n)
        total = sum(counts.values())
        if total == 0:
            continue
        max_ref: Counter = Counter()
        for ref in refs:
            for gram, count in ngram_counts(ref, n).items():
                max_ref[gram] = max(max_ref[gram], count)
        hit = sum(min(c, max_ref[g]) for g, c in counts.items())
        if hit == 0:
            log_sum += math.log(1.0 / (total + 1.0))
        else:
            log_sum += math.log(hit / total)
        orders += 1
    if orders == 0:
        return 0.0
    closest = min((len(r) for r in refs), key=lambda L: (abs(L - len(cand)), L))
    return brevity_penalty(len(cand), closest) * math.exp(log_sum / orders)


ROUGE_VARIANTS = ("R1", "R2", "RL")


def rouge(candidates, references, variant: str) -> ScoreReport:
    """Mean per-sentence ROUGE F1: unigram (R1), bigram (R2), or LCS (RL).

    One reference per candidate. A sentence where neither side has any
    unit of the order (e.g. bigrams of one-word sentences) counts as a
    perfect, vacuous match so identical corpora always score 1.
    """
    if variant not in ROUGE_VARIANTS:
        raise ValueError(f"rouge variant must be one of {ROUGE_VARIANTS}, got {variant!r}")
    if not candidates:
        raise ValueError("rouge needs at least one candidate")
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    per_sentence = []
    for cand, ref in zip(candidates, references):
        if variant == "RL":
            overlap = lcs_length(cand, ref)
            cand_total, ref_total = len(cand), len(ref)
        else:
            n = 1 if variant == "R1" else 2
            c_counts = ngram_counts(cand, n)
            r_counts = ngram_counts(ref, n)
            overlap = sum(min(c, r_counts[g]) for g, c in c_counts.items())
            cand_total = sum(c_counts.values())
            ref_total = sum(r_counts.values())
        per_sentence.append(_f1(overlap, cand_total, ref_total))
    name = {"R1": "ROUGE-1", "R2": "ROUGE-2", "RL": "ROUGE-L"}[variant]
    return ScoreReport(name, sum(per_sentence) / len(per_sentence), per_sentence)


def _f1(overlap: int, cand_total: int, ref_total: int) -> float:
    if cand_total == 0 and ref_total == 0:
        return 1.0
    if overlap == 0 or cand_total == 0 or ref_total == 0:
        return 0.0
    precision = overlap / cand_total
    recall = overlap / ref_total
    return 2.0 * precision * recall / (precision + recall)


def lcs_length(a, b) -> int:
    """Longest common subsequence length, O(len(a) * len(b))."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        row = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                row.append(prev[j - 1] + 1)
            else:
                row.append(max(prev[j], row[-1]))
        prev = row
    return prev[-1]
