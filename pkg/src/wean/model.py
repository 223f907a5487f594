"""Encoder-decoder model with two interchangeable word generators.

Both generators consume the same attentional vector tanh(Wc·[s_t; c_t]),
so they differ only in the final scoring step:

* ``softmax_linear`` scores every vocabulary word with a V x k matrix;
* ``wean`` scores a candidate set by matching the vector (as a query)
  against the candidates' word embeddings, so its parameter count does
  not grow with the vocabulary.

One embedding table is shared by the encoder input, the decoder input,
and the wean generator's values; a training step therefore updates each
word vector from up to three gradient paths.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from wean.data import UNK, Vocabulary
from wean.layers import (
    AttentionLayer,
    AttentionScore,
    LstmStack,
    LstmState,
    dropout,
    uniform_init,
)
from wean.tensor import (
    Tensor,
    concat,
    concat_many,
    gather_rows,
    matmul,
    matmul_nt,
    reshape,
    softmax,
    tanh,
)

GENERATOR_VARIANTS = ("softmax_linear", "wean")

ATTENTION_PAD_BIAS = -1e9  # added to scores at padded source positions


class CheckpointError(RuntimeError):
    """A checkpoint file is missing, malformed, or inconsistent."""


@dataclass
class ModelConfig:
    hidden_size: int = 256
    embedding_size: int = 256
    encoder_layers: int = 2
    decoder_layers: int = 2
    generator: str = "wean"
    score_kind: str = "general"
    dropout: float = 0.0
    candidate_size: int | None = None  # None: all non-special words

    def validate(self) -> None:
        if self.generator not in GENERATOR_VARIANTS:
            raise ValueError(f"generator must be one of {GENERATOR_VARIANTS}, "
                             f"got {self.generator!r}")
        if self.generator == "wean" and self.score_kind == "dot" \
                and self.embedding_size != self.hidden_size:
            raise ValueError("dot scoring requires embedding_size == hidden_size")
        for name in ("hidden_size", "embedding_size", "encoder_layers", "decoder_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


class SharedEmbedding:
    """The single word-embedding table shared by all lookup paths."""

    def __init__(self, vocab: Vocabulary, dim: int, rng: np.random.Generator):
        self.vocab = vocab
        self.dim = dim
        self.table = uniform_init(rng, (len(vocab), dim))

    def lookup(self, ids, frozen: bool = False) -> Tensor:
        source = self.table.detach() if frozen else self.table
        return gather_rows(source, ids)

    def row_view(self, word_id: int) -> np.ndarray:
        """Raw storage view of one embedding row (shared, not a copy)."""
        return self.table.data[word_id]


class CandidateSet:
    """The generator's retrievable words: specials plus the most frequent.

    Candidate order follows vocabulary ids, so with no size limit the
    candidate indices coincide with vocabulary ids. Gold words outside the
    set fall back to the unknown-word candidate during training.
    """

    def __init__(self, vocab: Vocabulary, embedding: SharedEmbedding,
                 size: int | None = None):
        n_specials = 4
        n_words = len(vocab) - n_specials
        if size is None:
            size = n_words
        size = min(size, n_words)
        if size < 0:
            raise ValueError("candidate size must be >= 0")
        self.word_ids = np.arange(n_specials + size, dtype=np.int64)
        self.embedding = embedding
        lut = np.full(len(vocab), -1, dtype=np.int64)
        lut[self.word_ids] = np.arange(len(self.word_ids))
        lut[lut < 0] = UNK  # unk candidate index == UNK id (specials lead)
        self._gold_lut = lut

    def __len__(self) -> int:
        return len(self.word_ids)

    def values(self, frozen: bool = False) -> Tensor:
        return self.embedding.lookup(self.word_ids, frozen=frozen)

    def gold_indices(self, vocab_ids: np.ndarray) -> np.ndarray:
        return self._gold_lut[vocab_ids]


class GeneratorHead:
    """Final word-scoring layer, either linear-softmax or embedding-query."""

    def __init__(self, config: ModelConfig, vocab_size: int, rng: np.random.Generator):
        self.variant = config.generator
        k, e = config.hidden_size, config.embedding_size
        # shared attentional projection [s_t; c_t] -> k, no bias
        self.query_proj = uniform_init(rng, (2 * k, k))
        if self.variant == "softmax_linear":
            self.output_weights = uniform_init(rng, (vocab_size, k))
            self.score = None
        else:
            self.output_weights = None
            self.score = AttentionScore(k, e, config.score_kind, rng)

    def params(self) -> dict:
        out = {"query_proj": self.query_proj}
        if self.output_weights is not None:
            out["output_weights"] = self.output_weights
        if self.score is not None:
            out.update({f"score.{k}": v for k, v in self.score.params().items()})
        return out

    def attentional(self, s_t: Tensor, c_t: Tensor) -> Tensor:
        """tanh(Wc·[s_t; c_t]): generator input for both variants."""
        return tanh(matmul(concat(s_t, c_t, axis=1), self.query_proj))

    def logits(self, s_t: Tensor, c_t: Tensor, values: Tensor | None) -> Tensor:
        q = self.attentional(s_t, c_t)
        if self.variant == "softmax_linear":
            return matmul_nt(q, self.output_weights)
        return self.score.against_all(q, values)


def make_query(head: GeneratorHead, s_t: Tensor, c_t: Tensor) -> Tensor:
    """The wean head's query vector tanh(Wc·[s_t; c_t])."""
    if head.variant != "wean":
        raise ValueError("make_query is only defined for the wean generator")
    one_d = s_t.ndim == 1
    if one_d:
        s_t = reshape(s_t, (1, s_t.shape[0]))
        c_t = reshape(c_t, (1, c_t.shape[0]))
    q = head.attentional(s_t, c_t)
    return reshape(q, (q.shape[1],)) if one_d else q


def relevance(head: GeneratorHead, q_t: Tensor, values: Tensor) -> Tensor:
    """Scores of the query against each candidate embedding row."""
    if head.variant != "wean":
        raise ValueError("relevance is only defined for the wean generator")
    if values.ndim != 2 or values.shape[0] < 1:
        raise ValueError(f"need a non-empty candidate matrix, got shape {values.shape}")
    one_d = q_t.ndim == 1
    if one_d:
        q_t = reshape(q_t, (1, q_t.shape[0]))
    scores = head.score.against_all(q_t, values)
    return reshape(scores, (scores.shape[1],)) if one_d else scores


def word_distribution(head: GeneratorHead, s_t: Tensor, c_t: Tensor,
                      candidates: CandidateSet) -> Tensor:
    """Normalized next-word distribution for one decoder step.

    wean: softmax over the candidate scores; softmax_linear: softmax over
    the whole vocabulary.
    """
    one_d = s_t.ndim == 1
    if one_d:
        s_t = reshape(s_t, (1, s_t.shape[0]))
        c_t = reshape(c_t, (1, c_t.shape[0]))
    values = candidates.values() if head.variant == "wean" else None
    probs = softmax(head.logits(s_t, c_t, values), axis=1)
    return reshape(probs, (probs.shape[1],)) if one_d else probs


def select_word(distribution: Tensor, candidates: CandidateSet):
    """Argmax word of a step distribution: (vocab id, embedding row view).

    Ties break toward the lowest index. The returned row aliases the
    shared table (it is the value fed to the decoder at the next step).
    """
    probs = distribution.data.reshape(-1)
    idx = int(np.argmax(probs))
    if len(probs) == len(candidates.word_ids):
        word_id = int(candidates.word_ids[idx])
    else:  # full-vocabulary distribution from the linear head
        word_id = idx
    return word_id, candidates.embedding.row_view(word_id)


def count_output_params(variant: str, vocab_size: int, hidden_size: int,
                        score_kind: str = "concat") -> int:
    """Output-layer parameter count (the shared projection is excluded)."""
    if variant == "softmax_linear":
        return vocab_size * hidden_size
    if variant == "wean":
        k = hidden_size
        return {"dot": 0, "general": k * k, "concat": 2 * k * k + k}[score_kind]
    raise ValueError(f"unknown generator variant {variant!r}")


class Seq2SeqModel:
    """LSTM encoder-decoder with attention and a pluggable generator head.

    Construction draws the shared components (embedding, encoder, decoder,
    attention, projection) before any head-specific parameters, so two
    heads built from the same seed agree on everything they share. A model
    instance belongs to one thread.
    """

    def __init__(self, vocab: Vocabulary, config: ModelConfig, seed: int = 0):
        config.validate()
        self.vocab = vocab
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x11717]))
        self.embedding = SharedEmbedding(vocab, config.embedding_size, rng)
        self.encoder = LstmStack(config.embedding_size, config.hidden_size,
                                 config.encoder_layers, rng)
        self.decoder = LstmStack(config.embedding_size, config.hidden_size,
                                 config.decoder_layers, rng)
        self.attention = AttentionLayer(config.hidden_size, config.score_kind, rng)
        self.head = GeneratorHead(config, len(vocab), rng)
        self.candidates = CandidateSet(vocab, self.embedding, config.candidate_size)
        # gradient-flow analysis switch: any of {"encoder", "decoder", "generator"}
        self.frozen_embedding_paths: frozenset = frozenset()

    def parameters(self) -> dict:
        out = {"embedding.table": self.embedding.table}
        out.update({f"encoder.{k}": v for k, v in self.encoder.params().items()})
        out.update({f"decoder.{k}": v for k, v in self.decoder.params().items()})
        out.update({f"attention.{k}": v for k, v in self.attention.params().items()})
        out.update({f"head.{k}": v for k, v in self.head.params().items()})
        return out

    # --- embedding paths (the three gradient sources) ---

    def embed_source(self, ids) -> Tensor:
        return self.embedding.lookup(ids, frozen="encoder" in self.frozen_embedding_paths)

    def embed_target(self, ids) -> Tensor:
        return self.embedding.lookup(ids, frozen="decoder" in self.frozen_embedding_paths)

    def candidate_values(self) -> Tensor | None:
        if self.head.variant != "wean":
            return None
        return self.candidates.values(frozen="generator" in self.frozen_embedding_paths)

    # --- encoding ---

    def encode_batch(self, source: np.ndarray, lengths: np.ndarray,
                     rng: np.random.Generator | None = None):
        """Run the encoder over a padded id matrix.

        Returns (encoder states flattened to [batch*positions, hidden],
        final per-layer states, additive attention pad bias [batch, positions]).
        Padded steps do not advance the state (masked update), so the final
        states are each sequence's true finals.
        """
        batch, n_pos = source.shape
        if n_pos < 1:
            raise ValueError("cannot encode an empty source batch")
        states = self.encoder.zero_states(batch)
        tops = []
        for t in range(n_pos):
            x_t = self.embed_source(source[:, t])
            top, new_states = self.encoder.step(x_t, states,
                                                dropout_rate=self.config.dropout, rng=rng)
            alive = (t < lengths).astype(np.float64).reshape(batch, 1)
            if alive.all():
                states = new_states
            else:
                keep = Tensor(alive)
                drop = Tensor(1.0 - alive)
                states = [LstmState(keep * ns.h + drop * os.h, keep * ns.c + drop * os.c)
                          for ns, os in zip(new_states, states)]
                top = keep * top  # padded rows carry no signal
            tops.append(top)
        flat = reshape(concat_many(tops, axis=1),
                       (batch * n_pos, self.config.hidden_size))
        pad_bias = np.where(np.arange(n_pos)[None, :] < lengths[:, None],
                            0.0, ATTENTION_PAD_BIAS)
        return flat, states, pad_bias

    def encode(self, src_ids) -> Tensor:
        """Encoder states [positions x hidden] for one id sequence."""
        src_ids = list(src_ids)
        if not src_ids:
            raise ValueError("cannot encode an empty source sequence")
        source = np.asarray([src_ids], dtype=np.int64)
        lengths = np.array([len(src_ids)])
        flat, _, _ = self.encode_batch(source, lengths)
        return flat  # batch 1: already [positions x hidden]

    def initial_decoder_states(self, encoder_finals: list, batch: int) -> list:
        """Decoder start states from the encoder's final states.

        The decoder's top layers align with the encoder's top layers; any
        extra decoder layers start at zero.
        """
        wanted = len(self.decoder)
        states = list(encoder_finals[-wanted:])
        while len(states) < wanted:
            states.insert(0, LstmState.zeros(batch, self.config.hidden_size))
        return states

    # --- decoding (one step) ---

    def decode_step_batch(self, prev_values: Tensor, states: list, enc_flat: Tensor,
                          n_positions: int, pad_bias: np.ndarray | None = None,
                          rng: np.random.Generator | None = None):
        """One decoder step for a batch: (s_t, c_t, new states, weights)."""
        top, new_states = self.decoder.step(prev_values, states,
                                            dropout_rate=self.config.dropout, rng=rng)
        if rng is not None:
            top = dropout(top, self.config.dropout, "train", rng)
        c_t, alpha = self.attention.apply_flat(top, enc_flat, n_positions, pad_bias)
        return top, c_t, new_states, alpha

    def decode_step(self, prev_value: Tensor, states: list, encoder_states: Tensor):
        """Single-sequence decoder step: (s_t, c_t, new states).

        ``prev_value`` is the embedding fed forward (gold during training,
        the selected value during inference); ``encoder_states`` is the
        [positions x hidden] matrix from :meth:`encode`.
        """
        if prev_value.ndim == 1:
            prev_value = reshape(prev_value, (1, prev_value.shape[0]))
        n = encoder_states.shape[0]
        s_t, c_t, new_states, _ = self.decode_step_batch(prev_value, states,
                                                         encoder_states, n)
        k = self.config.hidden_size
        return reshape(s_t, (k,)), reshape(c_t, (k,)), new_states

    def start_states(self, src_ids):
        """(encoder states, initial decoder states) for one sequence."""
        src_ids = list(src_ids)
        if not src_ids:
            raise ValueError("cannot encode an empty source sequence")
        flat, finals, _ = self.encode_batch(np.asarray([src_ids], dtype=np.int64),
                                            np.array([len(src_ids)]))
        return flat, self.initial_decoder_states(finals, 1)

    # --- step scoring ---

    def step_logits(self, s_t: Tensor, c_t: Tensor, values: Tensor | None) -> Tensor:
        return self.head.logits(s_t, c_t, values)

    def gold_targets(self, vocab_ids: np.ndarray) -> np.ndarray:
        """Gold label indices in the head's output space."""
        if self.head.variant == "wean":
            return self.candidates.gold_indices(vocab_ids)
        return vocab_ids

    def output_token_ids(self) -> np.ndarray:
        """Vocabulary id of each output-distribution index."""
        if self.head.variant == "wean":
            return self.candidates.word_ids
        return np.arange(len(self.vocab), dtype=np.int64)

    def step_distribution(self, s_t: Tensor, c_t: Tensor):
        """Next-word probabilities and their vocabulary ids for one step."""
        dist = word_distribution(self.head, s_t, c_t, self.candidates)
        return dist.data.reshape(-1), self.output_token_ids()

    def value_embedding(self, word_id: int) -> np.ndarray:
        """The embedding row fed back to the decoder after emitting a word."""
        return self.embedding.row_view(word_id)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_FORMAT = "wean-checkpoint-v1"


def save_checkpoint(model: Seq2SeqModel, path, extra: dict | None = None) -> None:
    """Write config, vocabulary, and all named parameters to one npz file."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.config),
        "vocab": model.vocab.id_to_token[4:],
        "extra": extra or {},
    }
    arrays = {name: p.data for name, p in model.parameters().items()}
    with open(path, "wb") as f:
        np.savez(f, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> tuple[Seq2SeqModel, dict]:
    """Rebuild a model from :func:`save_checkpoint` output, bit-exactly."""
    try:
        with np.load(path, allow_pickle=False) as npz:
            if "__meta__" not in npz:
                raise CheckpointError(f"{path}: not a model checkpoint")
            meta = json.loads(str(npz["__meta__"]))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise CheckpointError(f"{path}: unsupported format {meta.get('format')!r}")
            arrays = {k: npz[k] for k in npz.files if k != "__meta__"}
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint: {exc}") from exc
    config = ModelConfig(**meta["config"])
    vocab = Vocabulary(meta["vocab"])
    model = Seq2SeqModel(vocab, config, seed=0)
    params = model.parameters()
    if set(params) != set(arrays):
        raise CheckpointError(f"{path}: parameter names do not match the configuration")
    for name, p in params.items():
        if p.data.shape != arrays[name].shape:
            raise CheckpointError(f"{path}: shape mismatch for {name}")
        p.data[:] = arrays[name]
    return model, meta["extra"]
