"""Training loop: teacher-forced cross-entropy, Adam, clipping, logging.

Losses are averaged per predicted token so magnitudes are comparable
across batch compositions. Data order depends only on (corpus, seed), so
two runs with different generator heads but the same seed consume exactly
the same batch sequence.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from wean.data import ParallelCorpus, batchify
from wean.model import Seq2SeqModel, save_checkpoint
from wean.tensor import Tensor, backward, clip_global_norm, cross_entropy, no_grad, tensor_sum


class TrainingDiverged(RuntimeError):
    """The loss stopped being finite."""


# ---------------------------------------------------------------------------
# optimizer

class AdamState:
    """Adam moment buffers with the standard defaults (lr 0.001, betas
    0.9/0.999, epsilon 1e-8)."""

    def __init__(self, params, learning_rate: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        params = list(params)
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(state: AdamState, params, grads) -> None:
    """One bias-corrected Adam update; a None grad counts as zero."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = 0.0
        state.m[i] *= b1
        state.m[i] += (1.0 - b1) * g
        state.v[i] *= b2
        state.v[i] += (1.0 - b2) * np.square(g)
        m_hat = state.m[i] / bias1
        v_hat = state.v[i] / bias2
        p.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


# ---------------------------------------------------------------------------
# loss and evaluation

def _teacher_forced_steps(model: Seq2SeqModel, batch, rng):
    """Yield (logits, gold head-space indices, mask) per decoder step."""
    enc_flat, finals, pad_bias = model.encode_batch(batch.source, batch.source_lengths, rng)
    states = model.initial_decoder_states(finals, batch.size)
    values = model.candidate_values()
    n_pos = batch.source.shape[1]
    for t in range(batch.target.shape[1] - 1):
        prev = model.embed_target(batch.decoder_inputs[:, t])
        s_t, c_t, states, _ = model.decode_step_batch(prev, states, enc_flat,
                                                      n_pos, pad_bias, rng)
        logits = model.step_logits(s_t, c_t, values)
        yield logits, model.gold_targets(batch.gold[:, t]), batch.mask[:, t]


def sequence_loss(model: Seq2SeqModel, batch,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Per-token cross-entropy of a batch under teacher forcing.

    Pass an rng to enable train-mode dropout; with None the forward pass
    is deterministic.
    """
    total = None
    for logits, golds, mask in _teacher_forced_steps(model, batch, rng):
        step = tensor_sum(cross_entropy(logits, golds) * Tensor(mask))
        total = step if total is None else total + step
    return total * (1.0 / batch.mask.sum())


def evaluate(model: Seq2SeqModel, corpus: ParallelCorpus,
             batch_size: int = 64) -> tuple[float, float]:
    """(per-token loss, teacher-forced token accuracy), eval mode."""
    total_loss = 0.0
    total_tokens = 0.0
    correct = 0.0
    output_ids = model.output_token_ids()
    with no_grad():
        for batch in batchify(corpus, batch_size):
            for t, (logits, golds, mask) in enumerate(
                    _teacher_forced_steps(model, batch, None)):
                losses = cross_entropy(logits, golds)
                total_loss += float((losses.data * mask).sum())
                predicted = output_ids[np.argmax(logits.data, axis=1)]
                correct += float(((predicted == batch.gold[:, t]) * mask).sum())
            total_tokens += float(batch.mask.sum())
    return total_loss / total_tokens, correct / total_tokens


# ---------------------------------------------------------------------------
# training loop

@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    valid_loss: float
    valid_acc: float
    seconds: float


class TrainLog:
    """Per-epoch training curve, serialized as CSV with a header row."""

    HEADER = "epoch,train_loss,valid_loss,valid_acc,seconds"

    def __init__(self, rows=None):
        self.rows = list(rows) if rows else []

    def append(self, stats: EpochStats) -> None:
        if self.rows and stats.epoch <= self.rows[-1].epoch:
            raise ValueError("epoch indices must increase")
        for value in (stats.train_loss, stats.valid_loss, stats.valid_acc, stats.seconds):
            if not math.isfinite(value):
                raise ValueError("train log entries must be finite")
        self.rows.append(stats)

    def column(self, metric: str) -> list:
        return [getattr(r, metric) for r in self.rows]

    def to_csv(self) -> str:
        lines = [self.HEADER]
        for r in self.rows:
            lines.append(f"{r.epoch},{r.train_loss!r},{r.valid_loss!r},"
                         f"{r.valid_acc!r},{r.seconds!r}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_csv())

    @classmethod
    def load(cls, path) -> "TrainLog":
        log = cls()
        with open(path, encoding="utf-8") as f:
            header = f.readline().strip()
            if header != cls.HEADER:
                raise ValueError(f"{path}: unexpected train log header {header!r}")
            for line in f:
                e, tl, vl, va, s = line.strip().split(",")
                log.append(EpochStats(int(e), float(tl), float(vl), float(va), float(s)))
        return log


def epochs_to_threshold(log: TrainLog, metric: str = "valid_acc",
                        threshold: float = 0.9):
    """First epoch index whose metric reaches the threshold, else None."""
    for row in log.rows:
        if getattr(row, metric) >= threshold:
            return row.epoch
    return None


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    clip_norm: float = 5.0
    learning_rate: float = 0.001
    seed: int = 0
    checkpoint_dir: str | None = None
    checkpoint_extra: dict = field(default_factory=dict)
    target_accuracy: float | None = None  # stop once validation reaches this
    log_path: str | None = None
    clock: object = time.monotonic  # injectable for reproducible logs
    on_epoch: object = None  # optional callback(EpochStats)


def train(model: Seq2SeqModel, train_corpus: ParallelCorpus,
          valid_corpus: ParallelCorpus, config: TrainConfig) -> TrainLog:
    """Run the full loop: shuffle, batch, backprop, clip, Adam, log, checkpoint.

    Writes ``last.npz`` after every epoch and ``best.npz`` whenever the
    validation loss improves (when a checkpoint directory is set).
    Deterministic given the seed; aborts on a non-finite loss.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    data_rng = np.random.default_rng(seeds[0])
    dropout_rng = np.random.default_rng(seeds[1])
    use_dropout = model.config.dropout > 0.0
    params = model.parameters()
    param_list = list(params.values())
    opt = AdamState(param_list, learning_rate=config.learning_rate)
    log = TrainLog()
    best_valid = math.inf
    start = config.clock()
    for epoch in range(config.epochs):
        epoch_loss = 0.0
        epoch_tokens = 0.0
        for index, batch in enumerate(batchify(train_corpus, config.batch_size, data_rng)):
            for p in param_list:
                p.zero_grad()
            loss = sequence_loss(model, batch, dropout_rng if use_dropout else None)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {index}")
            backward(loss)
            clip_global_norm(param_list, config.clip_norm)
            adam_step(opt, param_list, [p.grad for p in param_list])
            tokens = float(batch.mask.sum())
            epoch_loss += value * tokens
            epoch_tokens += tokens
        valid_loss, valid_acc = evaluate(model, valid_corpus, config.batch_size)
        stats = EpochStats(epoch, epoch_loss / epoch_tokens,
                           valid_loss, valid_acc, config.clock() - start)
        log.append(stats)
        if config.on_epoch is not None:
            config.on_epoch(stats)
        if config.checkpoint_dir is not None:
            save_checkpoint(model, f"{config.checkpoint_dir}/last.npz",
                            extra=config.checkpoint_extra)
            if valid_loss < best_valid:
                best_valid = valid_loss
                save_checkpoint(model, f"{config.checkpoint_dir}/best.npz",
                                extra=config.checkpoint_extra)
        if config.target_accuracy is not None and valid_acc >= config.target_accuracy:
            break
    if config.log_path is not None:
        log.save(config.log_path)
    return log
