"""Neural building blocks: LSTM cells/stacks, attention scoring, dropout.

Everything is batch-first: states and step inputs are [batch x dim]
matrices, and the single-vector entry points promote to batch size 1.
"""

from __future__ import annotations

import numpy as np

from wean.tensor import (
    Tensor,
    gather_rows,
    matmul,
    matmul_nt,
    narrow,
    reshape,
    sigmoid,
    softmax,
    tanh,
    tensor_sum,
)

INIT_SCALE = 0.08  # all weights start uniform(-0.08, 0.08)
FORGET_BIAS = 1.0

SCORE_KINDS = ("dot", "general", "concat")


def uniform_init(rng: np.random.Generator, shape) -> Tensor:
    return Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape), requires_grad=True)


class LstmState:
    """Hidden and cell state of one LSTM layer, shaped [batch x hidden]."""

    __slots__ = ("h", "c")

    def __init__(self, h: Tensor, c: Tensor):
        if h.ndim == 1:
            h = reshape(h, (1, h.shape[0]))
        if c.ndim == 1:
            c = reshape(c, (1, c.shape[0]))
        self.h = h
        self.c = c

    @classmethod
    def zeros(cls, batch: int, hidden: int) -> "LstmState":
        return cls(Tensor(np.zeros((batch, hidden))), Tensor(np.zeros((batch, hidden))))


class LstmCell:
    """Standard LSTM cell (forget gate, no peepholes).

    The stacked weight matrices hold the four gate blocks in the order
    [input, forget, cell-candidate, output] along their first axis.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.input_size = input_size
        self.hidden_size = hidden_size
        d = hidden_size
        self.input_weights = uniform_init(rng, (4 * d, input_size))
        self.recurrent_weights = uniform_init(rng, (4 * d, d))
        bias = np.zeros(4 * d)
        bias[d:2 * d] = FORGET_BIAS  # keep early cell states alive
        self.biases = Tensor(bias, requires_grad=True)

    def params(self) -> dict:
        return {
            "input_weights": self.input_weights,
            "recurrent_weights": self.recurrent_weights,
            "biases": self.biases,
        }

    def step(self, x: Tensor, state: LstmState) -> LstmState:
        if x.ndim != 2 or x.shape[1] != self.input_size:
            raise ValueError(
                f"lstm input shape {x.shape} incompatible with input size {self.input_size}")
        if state.h.shape != (x.shape[0], self.hidden_size):
            raise ValueError(
                f"lstm state shape {state.h.shape} incompatible with batch {x.shape[0]} "
                f"and hidden size {self.hidden_size}")
        d = self.hidden_size
        z = matmul_nt(x, self.input_weights) \
            + matmul_nt(state.h, self.recurrent_weights) + self.biases
        i = sigmoid(narrow(z, 1, 0, d))
        f = sigmoid(narrow(z, 1, d, d))
        g = tanh(narrow(z, 1, 2 * d, d))
        o = sigmoid(narrow(z, 1, 3 * d, d))
        c = f * state.c + i * g
        h = o * tanh(c)
        return LstmState(h, c)


def lstm_step(cell: LstmCell, x: Tensor, state: LstmState) -> LstmState:
    """One LSTM update; ``x`` may be a single input vector or a batch."""
    if x.ndim == 1:
        x = reshape(x, (1, x.shape[0]))
    return cell.step(x, state)


class LstmStack:
    """Stacked LSTM layers with dropout between layers (not on recurrence)."""

    def __init__(self, input_size: int, hidden_size: int, layers: int,
                 rng: np.random.Generator):
        if layers < 1:
            raise ValueError(f"need at least one layer, got {layers}")
        self.hidden_size = hidden_size
        self.cells = [
            LstmCell(input_size if i == 0 else hidden_size, hidden_size, rng)
            for i in range(layers)
        ]

    def __len__(self) -> int:
        return len(self.cells)

    def params(self) -> dict:
        out = {}
        for i, cell in enumerate(self.cells):
            for name, p in cell.params().items():
                out[f"layer{i}.{name}"] = p
        return out

    def zero_states(self, batch: int) -> list:
        return [LstmState.zeros(batch, self.hidden_size) for _ in self.cells]

    def step(self, x: Tensor, states: list, dropout_rate: float = 0.0,
             rng: np.random.Generator | None = None) -> tuple[Tensor, list]:
        """Advance all layers one step; returns (top hidden, new states)."""
        new_states = []
        inp = x
        for i, (cell, state) in enumerate(zip(self.cells, states)):
            if i > 0:
                inp = dropout(inp, dropout_rate, "train" if rng is not None else "eval", rng)
            new = cell.step(inp, state)
            new_states.append(new)
            inp = new.h
        return inp, new_states


class AttentionScore:
    """The three attention energy forms over (query, key) pairs.

    dot:      qᵀk                  (no parameters; needs matching sizes)
    general:  qᵀ W k               (W: query_size x key_size)
    concat:   vᵀ tanh(Wq q + Wk k) (two matrices and a vector)
    """

    def __init__(self, query_size: int, key_size: int, kind: str,
                 rng: np.random.Generator):
        if kind not in SCORE_KINDS:
            raise ValueError(f"unknown score kind {kind!r}, expected one of {SCORE_KINDS}")
        if kind == "dot" and query_size != key_size:
            raise ValueError(
                f"dot scoring needs matching sizes, got query {query_size} vs key {key_size}")
        self.kind = kind
        self.query_size = query_size
        self.key_size = key_size
        if kind == "general":
            self.w = uniform_init(rng, (query_size, key_size))
        elif kind == "concat":
            self.w_query = uniform_init(rng, (query_size, query_size))
            self.w_key = uniform_init(rng, (key_size, query_size))
            self.v = uniform_init(rng, (query_size, 1))

    def params(self) -> dict:
        if self.kind == "general":
            return {"w": self.w}
        if self.kind == "concat":
            return {"w_query": self.w_query, "w_key": self.w_key, "v": self.v}
        return {}

    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())

    def paired(self, queries: Tensor, keys: Tensor) -> Tensor:
        """Score row i of ``queries`` against row i of ``keys`` -> [rows]."""
        if self.kind == "dot":
            return tensor_sum(queries * keys, axis=1)
        if self.kind == "general":
            return tensor_sum(matmul(queries, self.w) * keys, axis=1)
        mixed = tanh(matmul(queries, self.w_query) + matmul(keys, self.w_key))
        return reshape(matmul(mixed, self.v), (queries.shape[0],))

    def against_all(self, queries: Tensor, keys: Tensor) -> Tensor:
        """Score every query row against every key row -> [queries x keys]."""
        if self.kind == "dot":
            return matmul_nt(queries, keys)
        if self.kind == "general":
            return matmul_nt(matmul(queries, self.w), keys)
        b, n = queries.shape[0], keys.shape[0]
        p = self.query_size
        left = reshape(matmul(queries, self.w_query), (b, 1, p))
        right = reshape(matmul(keys, self.w_key), (1, n, p))
        mixed = tanh(left + right)
        return tensor_sum(mixed * reshape(self.v, (p,)), axis=2)


class AttentionLayer:
    """Encoder-decoder attention: softmax-normalized scores, weighted sum."""

    def __init__(self, hidden_size: int, score_kind: str, rng: np.random.Generator):
        self.hidden_size = hidden_size
        self.score_kind = score_kind
        self.score = AttentionScore(hidden_size, hidden_size, score_kind, rng)

    def params(self) -> dict:
        return {f"score.{k}": v for k, v in self.score.params().items()}

    def apply_flat(self, s_t: Tensor, enc_flat: Tensor, n_positions: int,
                   pad_bias: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        """Attend a batch of decoder states over flattened encoder states.

        ``enc_flat`` holds [batch * n_positions, hidden] rows grouped by
        batch element; ``pad_bias`` is an additive [batch, n_positions]
        mask (large negative on padding). Returns context [batch, hidden]
        and weights [batch, n_positions].
        """
        if n_positions < 1:
            raise ValueError("cannot attend over an empty source")
        batch = s_t.shape[0]
        rep = np.repeat(np.arange(batch), n_positions)
        scores = reshape(self.score.paired(gather_rows(s_t, rep), enc_flat),
                         (batch, n_positions))
        if pad_bias is not None:
            scores = scores + Tensor(pad_bias)
        alpha = softmax(scores, axis=1)
        weighted = enc_flat * reshape(alpha, (batch * n_positions, 1))
        context = tensor_sum(reshape(weighted, (batch, n_positions, self.hidden_size)), axis=1)
        return context, alpha


def attend(layer: AttentionLayer, s_t: Tensor, encoder_states: Tensor):
    """Attention for one decoder state over one source: (context, weights).

    ``s_t`` is a hidden vector, ``encoder_states`` is [positions x hidden].
    """
    if encoder_states.ndim != 2 or encoder_states.shape[0] < 1:
        raise ValueError(f"need a non-empty [positions x hidden] matrix, "
                         f"got shape {encoder_states.shape}")
    s2 = reshape(s_t, (1, s_t.shape[0])) if s_t.ndim == 1 else s_t
    n = encoder_states.shape[0]
    context, alpha = layer.apply_flat(s2, encoder_states, n)
    return reshape(context, (layer.hidden_size,)), reshape(alpha, (n,))


def dropout(x: Tensor, rate: float, mode: str, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors.

    Eval mode (or rate 0) is the identity, so expectations match between
    training and evaluation.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ValueError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(mask)
