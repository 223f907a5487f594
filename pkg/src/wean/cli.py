"""Command line for the toolkit: train, generate, evaluate, params, synth,
compare.

Configuration comes from a JSON file (see README for the schema) with
command-line flags taking precedence. Exit codes are fixed for scripting:
0 success, 2 configuration problem, 3 data/I-O problem, 4 checkpoint
problem, 5 candidate/reference misalignment.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields

from wean.data import (
    CorpusFormatError,
    ParallelCorpus,
    build_vocab,
    detokenize,
    load_tsv,
    make_synthetic,
    save_tsv,
    tokenize,
)
from wean.decoding import beam_decode, greedy_decode
from wean.metrics import bleu, rouge
from wean.model import (
    CheckpointError,
    ModelConfig,
    Seq2SeqModel,
    count_output_params,
    load_checkpoint,
)
from wean.training import TrainConfig, epochs_to_threshold, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECKPOINT = 4
EXIT_ALIGNMENT = 5


class ConfigError(ValueError):
    """Invalid or missing experiment configuration; names the field."""


class AlignmentError(ValueError):
    """Candidate and reference files disagree on line counts."""


@dataclass
class ExperimentConfig:
    """One experiment: model shape, training setup, and data locations.

    The defaults are the word-level preset (hidden/embedding 256, 2
    layers, batch 64, dropout 0.4, clip 5); ``char_defaults`` switches to
    the character-level preset (hidden/embedding 512, 2+1 layers,
    vocabulary 4000, no dropout, beam 5).
    """

    generator: str = "wean"
    score_kind: str = "general"
    layers: int = 2
    decoder_layers: int | None = None
    hidden_size: int = 256
    embedding_size: int = 256
    vocab_size: int = 50000
    candidate_size: int | None = None
    batch_size: int = 64
    epochs: int = 10
    dropout: float = 0.4
    clip_norm: float = 5.0
    learning_rate: float = 0.001
    beam_size: int = 5
    tokenize_mode: str = "word"
    seed: int = 0
    target_accuracy: float | None = None
    train_path: str | None = None
    valid_path: str | None = None
    output_dir: str = "runs"

    @classmethod
    def char_defaults(cls) -> "ExperimentConfig":
        return cls(hidden_size=512, embedding_size=512, layers=2, decoder_layers=1,
                   vocab_size=4000, dropout=0.0, beam_size=5, tokenize_mode="char")

    @classmethod
    def from_file(cls, path: str | None, overrides: dict) -> "ExperimentConfig":
        values: dict = {}
        if path is not None:
            try:
                with open(path, encoding="utf-8") as f:
                    values = json.load(f)
            except OSError as exc:
                raise ConfigError(f"cannot read config file: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file is not valid JSON: {exc}") from exc
            if not isinstance(values, dict):
                raise ConfigError("config file must hold a JSON object")
        values.update({k: v for k, v in overrides.items() if v is not None})
        preset = values.pop("preset", "word")
        if preset not in ("word", "char"):
            raise ConfigError(f"preset must be 'word' or 'char', got {preset!r}")
        config = cls.char_defaults() if preset == "char" else cls()
        known = {f.name for f in fields(cls)}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"unknown config field {key!r}")
            setattr(config, key, value)
        return config

    def validate(self, need_data: bool = False) -> None:
        if need_data:
            for name in ("train_path", "valid_path"):
                if getattr(self, name) is None:
                    raise ConfigError(f"missing required field {name!r}")
        if self.tokenize_mode not in ("word", "char"):
            raise ConfigError(f"tokenize_mode must be 'word' or 'char', "
                              f"got {self.tokenize_mode!r}")
        for name in ("vocab_size", "batch_size", "epochs", "beam_size"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        try:
            self.model_config().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            hidden_size=self.hidden_size,
            embedding_size=self.embedding_size,
            encoder_layers=self.layers,
            decoder_layers=self.layers if self.decoder_layers is None else self.decoder_layers,
            generator=self.generator,
            score_kind=self.score_kind,
            dropout=self.dropout,
            candidate_size=self.candidate_size,
        )

    def train_config(self, out_dir: str, log_name: str = "train_log.csv") -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            clip_norm=self.clip_norm,
            learning_rate=self.learning_rate,
            seed=self.seed,
            checkpoint_dir=out_dir,
            checkpoint_extra={"tokenize_mode": self.tokenize_mode},
            target_accuracy=self.target_accuracy,
            log_path=os.path.join(out_dir, log_name),
            on_epoch=lambda s: print(
                f"epoch {s.epoch}: train_loss={s.train_loss:.4f} "
                f"valid_loss={s.valid_loss:.4f} valid_acc={s.valid_acc:.4f} "
                f"({s.seconds:.1f}s)"),
        )


def _load_corpora(config: ExperimentConfig):
    train_pairs = load_tsv(config.train_path, config.tokenize_mode)
    valid_pairs = load_tsv(config.valid_path, config.tokenize_mode)
    if not train_pairs:
        raise CorpusFormatError(f"{config.train_path}: training corpus is empty")
    vocab = build_vocab((src for src, _ in train_pairs), config.vocab_size)
    return ParallelCorpus(train_pairs, vocab), ParallelCorpus(valid_pairs, vocab), vocab


def cmd_train(config: ExperimentConfig) -> int:
    config.validate(need_data=True)
    train_corpus, valid_corpus, vocab = _load_corpora(config)
    os.makedirs(config.output_dir, exist_ok=True)
    model = Seq2SeqModel(vocab, config.model_config(), seed=config.seed)
    log = train(model, train_corpus, valid_corpus,
                config.train_config(config.output_dir))
    print(f"trained {config.generator} for {len(log.rows)} epochs; "
          f"checkpoints and train_log.csv in {config.output_dir}")
    return EXIT_OK


def cmd_generate(checkpoint: str, input_path: str, output_path: str,
                 beam: int | None, max_len: int | None) -> int:
    model, extra = load_checkpoint(checkpoint)
    mode = extra.get("tokenize_mode", "word")
    with open(input_path, encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f]
    outputs = []
    for line in lines:
        tokens = tokenize(line, mode)
        if not tokens:
            outputs.append("")
            continue
        ids = model.vocab.encode(tokens)
        if beam is None or beam == 1:
            out_ids = greedy_decode(model, ids, max_len)
        else:
            out_ids = beam_decode(model, ids, beam, max_len)
        outputs.append(detokenize(model.vocab.decode(out_ids), mode))
    with open(output_path, "w", encoding="utf-8") as f:
        for line in outputs:
            f.write(line + "\n")
    print(f"decoded {len(outputs)} lines -> {output_path}")
    return EXIT_OK


METRIC_CHOICES = ("bleu", "rouge1", "rouge2", "rougel")


def cmd_evaluate(candidate_path: str, reference_paths: list, metrics: list,
                 mode: str, per_sentence_path: str | None = None) -> int:
    def read_lines(path):
        with open(path, encoding="utf-8") as f:
            return [tokenize(line.rstrip("\n"), mode) for line in f]

    candidates = read_lines(candidate_path)
    reference_files = [read_lines(p) for p in reference_paths]
    for path, refs in zip(reference_paths, reference_files):
        if len(refs) != len(candidates):
            raise AlignmentError(
                f"{candidate_path} has {len(candidates)} lines but {path} has {len(refs)}")
    reports = []
    for metric in metrics:
        if metric == "bleu":
            ref_sets = [[refs[i] for refs in reference_files]
                        for i in range(len(candidates))]
            reports.append(bleu(candidates, ref_sets))
        else:
            if len(reference_files) != 1:
                raise ConfigError("rouge metrics take exactly one reference file")
            variant = {"rouge1": "R1", "rouge2": "R2", "rougel": "RL"}[metric]
            reports.append(rouge(candidates, reference_files[0], variant))
    for report in reports:
        print(report.summary_line())
    if per_sentence_path is not None:
        with open(per_sentence_path, "w", encoding="utf-8") as f:
            names = [r.metric + ("(smoothed)" if r.metric == "BLEU" else "")
                     for r in reports]
            f.write("line\t" + "\t".join(names) + "\n")
            for i in range(len(candidates)):
                row = "\t".join(f"{r.per_sentence[i]:.6f}" for r in reports)
                f.write(f"{i}\t{row}\n")
    return EXIT_OK


def cmd_params(config: ExperimentConfig) -> int:
    v, k = config.vocab_size, config.hidden_size
    linear = count_output_params("softmax_linear", v, k)
    print(f"output-layer parameters at vocabulary {v}, hidden size {k}:")
    print(f"  softmax_linear : {linear:,}")
    for kind in ("dot", "general", "concat"):
        print(f"  wean[{kind:7}] : {count_output_params('wean', v, k, kind):,}")
    concat = count_output_params("wean", v, k, "concat")
    if concat:
        print(f"  reduction (softmax_linear / wean[concat]): {linear / concat:.1f}x")
    return EXIT_OK


def cmd_synth(task: str, size: int, vocab_size: int, max_len: int, seed: int,
              out_path: str) -> int:
    pairs = make_synthetic(task, size, vocab_size, max_len, seed)
    save_tsv(pairs, out_path)
    print(f"wrote {len(pairs)} {task} pairs -> {out_path}")
    return EXIT_OK


def cmd_compare(config: ExperimentConfig, threshold: float) -> int:
    """Train both generator heads on the same data order and compare their
    validation-accuracy convergence."""
    config.validate(need_data=True)
    train_corpus, valid_corpus, vocab = _load_corpora(config)
    os.makedirs(config.output_dir, exist_ok=True)
    results = {}
    for head in ("wean", "softmax_linear"):
        head_config = ExperimentConfig(**{f.name: getattr(config, f.name)
                                          for f in fields(ExperimentConfig)})
        head_config.generator = head
        head_config.target_accuracy = max(threshold,
                                          config.target_accuracy or threshold)
        print(f"--- training {head} ---")
        model = Seq2SeqModel(vocab, head_config.model_config(), seed=config.seed)
        out_dir = os.path.join(config.output_dir, head)
        os.makedirs(out_dir, exist_ok=True)
        log = train(model, train_corpus, valid_corpus,
                    head_config.train_config(out_dir, log_name=f"{head}.csv"))
        results[head] = epochs_to_threshold(log, "valid_acc", threshold)
    for head, epoch in results.items():
        reached = "never reached" if epoch is None else f"epoch {epoch}"
        print(f"{head}: valid_acc >= {threshold} at {reached}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wean",
                                     description="seq2seq generation with a "
                                                 "retrieval-style word generator")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--preset", choices=("word", "char"))
        p.add_argument("--train", dest="train_path")
        p.add_argument("--valid", dest="valid_path")
        p.add_argument("--out", dest="output_dir")
        p.add_argument("--generator", choices=("wean", "softmax_linear"))
        p.add_argument("--score-kind", dest="score_kind",
                       choices=("dot", "general", "concat"))
        p.add_argument("--hidden-size", dest="hidden_size", type=int)
        p.add_argument("--embedding-size", dest="embedding_size", type=int)
        p.add_argument("--layers", type=int)
        p.add_argument("--vocab-size", dest="vocab_size", type=int)
        p.add_argument("--candidate-size", dest="candidate_size", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--dropout", type=float)
        p.add_argument("--learning-rate", dest="learning_rate", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--target-accuracy", dest="target_accuracy", type=float)
        p.add_argument("--tokenize-mode", dest="tokenize_mode",
                       choices=("word", "char"))

    p = sub.add_parser("train", help="train a model from a TSV corpus")
    add_config_args(p)

    p = sub.add_parser("generate", help="decode a file with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--beam", type=int, default=None,
                   help="beam width (omit for greedy)")
    p.add_argument("--max-len", dest="max_len", type=int, default=None)

    p = sub.add_parser("evaluate", help="score candidates against references")
    p.add_argument("--candidates", required=True)
    p.add_argument("--references", required=True, nargs="+",
                   help="one or more reference files (multi-reference BLEU)")
    p.add_argument("--metrics", default="bleu",
                   help="comma-separated subset of " + ",".join(METRIC_CHOICES))
    p.add_argument("--mode", choices=("word", "char"), default="word")
    p.add_argument("--per-sentence", dest="per_sentence", default=None,
                   help="optional TSV of per-sentence scores")

    p = sub.add_parser("params", help="output-layer parameter counts")
    add_config_args(p)

    p = sub.add_parser("synth", help="generate a synthetic parallel corpus")
    p.add_argument("--task", required=True, choices=("copy", "reverse", "synonym"))
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--vocab-size", dest="vocab_size", type=int, default=50)
    p.add_argument("--max-len", dest="max_len", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("compare", help="train both heads with a shared data order")
    add_config_args(p)
    p.add_argument("--threshold", type=float, default=0.9,
                   help="validation accuracy for epochs-to-threshold")
    return parser


CONFIG_COMMANDS = ("train", "params", "compare")


def _experiment_config(args) -> ExperimentConfig:
    overrides = {name: getattr(args, name, None)
                 for name in (f.name for f in fields(ExperimentConfig))}
    if getattr(args, "preset", None) is not None:
        overrides["preset"] = args.preset
    return ExperimentConfig.from_file(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(_experiment_config(args))
        if args.command == "generate":
            return cmd_generate(args.checkpoint, args.input, args.output,
                                args.beam, args.max_len)
        if args.command == "evaluate":
            metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
            for metric in metrics:
                if metric not in METRIC_CHOICES:
                    raise ConfigError(f"unknown metric {metric!r}")
            return cmd_evaluate(args.candidates, args.references, metrics,
                                args.mode, args.per_sentence)
        if args.command == "params":
            config = _experiment_config(args)
            return cmd_params(config)
        if args.command == "synth":
            return cmd_synth(args.task, args.size, args.vocab_size,
                             args.max_len, args.seed, args.out)
        if args.command == "compare":
            config = _experiment_config(args)
            return cmd_compare(config, args.threshold)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AlignmentError as exc:
        print(f"alignment error: {exc}", file=sys.stderr)
        return EXIT_ALIGNMENT
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (CorpusFormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
