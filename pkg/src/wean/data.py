"""Vocabulary, tokenization, corpus ingestion, batching, synthetic tasks.

Raw corpora are lists of (source tokens, target tokens) string pairs; a
:class:`ParallelCorpus` is the numericalized form over one shared
:class:`Vocabulary`. Source and target share the vocabulary, which is
extracted from the source side only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

PAD, SOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<s>", "</s>", "<unk>")

MAX_SOURCE_LEN = 100
MAX_TARGET_LEN = 100


class CorpusFormatError(ValueError):
    """A corpus file violates the one-pair-per-line TSV format."""


class Vocabulary:
    """Bidirectional token/id map with reserved specials at ids 0..3.

    Non-special tokens are ordered by descending corpus frequency, ties
    broken by first occurrence, so `ids 4..4+n` are the n most frequent
    words.
    """

    def __init__(self, tokens, counts=None):
        self.id_to_token = list(SPECIAL_TOKENS) + list(tokens)
        if len(set(self.id_to_token)) != len(self.id_to_token):
            raise ValueError("vocabulary tokens must be unique")
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        self.counts = dict(counts) if counts else {}

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, tokens) -> list:
        unk = UNK
        get = self.token_to_id.get
        return [get(t, unk) for t in tokens]

    def decode(self, ids) -> list:
        return [self.id_to_token[i] for i in ids]

    def save(self, path) -> None:
        """One token per line in id order (specials first)."""
        with open(path, "w", encoding="utf-8") as f:
            for token in self.id_to_token:
                f.write(token + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f]
        if tokens[:4] != list(SPECIAL_TOKENS):
            raise CorpusFormatError(f"{path}: missing the four special tokens")
        return cls(tokens[4:])


def tokenize(text: str, mode: str = "word") -> list:
    """word: whitespace split; char: one token per non-whitespace character."""
    if mode == "word":
        return text.split()
    if mode == "char":
        return [ch for ch in text if not ch.isspace()]
    raise ValueError(f"unknown tokenize mode {mode!r}")


def detokenize(tokens, mode: str = "word") -> str:
    if mode == "word":
        return " ".join(tokens)
    if mode == "char":
        return "".join(tokens)
    raise ValueError(f"unknown tokenize mode {mode!r}")


def build_vocab(source_texts, n: int, mode: str = "word") -> Vocabulary:
    """Vocabulary of the ``n`` most frequent source-side tokens plus specials.

    ``source_texts`` is an iterable of raw strings or of token lists.
    """
    if n < 1:
        raise ValueError(f"vocabulary size must be >= 1, got {n}")
    counts: dict = {}
    first_seen: dict = {}
    empty = True
    for text in source_texts:
        tokens = tokenize(text, mode) if isinstance(text, str) else text
        for tok in tokens:
            empty = False
            counts[tok] = counts.get(tok, 0) + 1
            if tok not in first_seen:
                first_seen[tok] = len(first_seen)
    if empty:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))
    kept = ranked[:n]
    return Vocabulary(kept, counts={t: counts[t] for t in kept})


def load_tsv(path, mode: str = "word") -> list:
    """Read an aligned corpus: one pair per line, one tab between sides.

    Returns (source tokens, target tokens) pairs in file order. Empty lines
    are skipped; a line with the wrong number of tabs or an empty side is a
    :class:`CorpusFormatError` naming the line.
    """
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.count("\t") != 1:
                raise CorpusFormatError(
                    f"{path}:{lineno}: expected exactly one tab, got {line.count(chr(9))}")
            src_text, tgt_text = line.split("\t")
            src = tokenize(src_text, mode)
            tgt = tokenize(tgt_text, mode)
            if not src or not tgt:
                raise CorpusFormatError(f"{path}:{lineno}: empty side after tokenization")
            pairs.append((src, tgt))
    if not pairs:
        log.warning("no pairs found in %s", path)
    return pairs


def save_tsv(pairs, path, mode: str = "word") -> None:
    with open(path, "w", encoding="utf-8") as f:
        for src, tgt in pairs:
            f.write(detokenize(src, mode) + "\t" + detokenize(tgt, mode) + "\n")


SYNONYM_CLASS_SIZE = 4


def synonym_classes(vocab_size: int, seed: int) -> list:
    """Deterministic partition of token indices into classes of up to 4."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC1A55]))
    order = rng.permutation(vocab_size)
    return [sorted(order[i:i + SYNONYM_CLASS_SIZE].tolist())
            for i in range(0, vocab_size, SYNONYM_CLASS_SIZE)]


def make_synthetic(task: str, size: int, vocab_size: int, max_len: int, seed: int) -> list:
    """Generate a token-pair corpus for a toy task, reproducible from seed.

    copy: target == source. reverse: target is the source reversed.
    synonym: the vocabulary is partitioned into small synonym classes and
    each token type is mapped, once, to a fixed member of its class; the
    target substitutes every source token through that map.
    """
    if task not in ("copy", "reverse", "synonym"):
        raise ValueError(f"unknown synthetic task {task!r}")
    if vocab_size < 1 or max_len < 1 or size < 0:
        raise ValueError("size, vocab_size and max_len must be positive")
    tokens = [f"w{i}" for i in range(vocab_size)]
    rng = np.random.default_rng(seed)
    mapping = None
    if task == "synonym":
        class_of = {}
        for cls in synonym_classes(vocab_size, seed):
            for idx in cls:
                class_of[idx] = cls
        map_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A9]))
        mapping = [class_of[i][map_rng.integers(len(class_of[i]))] for i in range(vocab_size)]
    pairs = []
    for _ in range(size):
        length = int(rng.integers(1, max_len + 1))
        src_idx = rng.integers(0, vocab_size, size=length)
        src = [tokens[i] for i in src_idx]
        if task == "copy":
            tgt = list(src)
        elif task == "reverse":
            tgt = src[::-1]
        else:
            tgt = [tokens[mapping[i]] for i in src_idx]
        pairs.append((src, tgt))
    return pairs


class ParallelCorpus:
    """Numericalized (source ids, target ids) pairs over one vocabulary."""

    def __init__(self, pairs, vocab: Vocabulary):
        self.vocab = vocab
        self.pairs = []
        for src, tgt in pairs:
            if not src or not tgt:
                raise ValueError("corpus pairs must be non-empty on both sides")
            src_ids = vocab.encode(src[:MAX_SOURCE_LEN])
            tgt_ids = vocab.encode(tgt[:MAX_TARGET_LEN])
            self.pairs.append((src_ids, tgt_ids))

    def __len__(self) -> int:
        return len(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]


@dataclass
class Batch:
    """Padded id matrices plus the loss mask over real target positions.

    ``target`` rows are wrapped as [sos, tokens..., eos, pad...]; the mask
    covers the shifted gold positions (tokens and eos, not padding), so
    ``mask.sum()`` counts exactly the predicted tokens.
    """

    source: np.ndarray        # [batch, max_src]
    target: np.ndarray        # [batch, max_tgt+2]
    source_lengths: np.ndarray
    mask: np.ndarray          # [batch, target.shape[1]-1]

    @property
    def decoder_inputs(self) -> np.ndarray:
        return self.target[:, :-1]

    @property
    def gold(self) -> np.ndarray:
        return self.target[:, 1:]

    @property
    def size(self) -> int:
        return self.source.shape[0]


def make_batch(pairs) -> Batch:
    """Pad a list of (src ids, tgt ids) into one Batch."""
    src_len = max(len(s) for s, _ in pairs)
    tgt_len = max(len(t) for _, t in pairs) + 2  # sos + eos
    source = np.full((len(pairs), src_len), PAD, dtype=np.int64)
    target = np.full((len(pairs), tgt_len), PAD, dtype=np.int64)
    lengths = np.zeros(len(pairs), dtype=np.int64)
    for i, (s, t) in enumerate(pairs):
        source[i, :len(s)] = s
        target[i, 0] = SOS
        target[i, 1:1 + len(t)] = t
        target[i, 1 + len(t)] = EOS
        lengths[i] = len(s)
    mask = (target[:, 1:] != PAD).astype(np.float64)
    return Batch(source, target, lengths, mask)


def batchify(corpus: ParallelCorpus, batch_size: int,
             rng: np.random.Generator | None = None) -> list:
    """Shuffle (when an rng is given), chunk, and pad into Batches."""
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    order = np.arange(len(corpus))
    if rng is not None:
        order = rng.permutation(len(corpus))
    batches = []
    for start in range(0, len(corpus), batch_size):
        chunk = [corpus[i] for i in order[start:start + batch_size]]
        batches.append(make_batch(chunk))
    return batches
