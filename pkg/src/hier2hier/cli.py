"""Command-line pipeline: synth -> train -> finetune -> summarize -> eval, plus
the two-step baseline.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric error.  Every output file is written to a temporary name first and
renamed into place, so a failed command leaves no partial output.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .baseline2step import DEFAULT_TAU, two_step_summarize
from .corpusforge import (
    PRESETS,
    SynthConfig,
    atomic_write_text,
    corpus_stats,
    disentangle_gold,
    interleave,
    load_corpus,
    read_dataset,
    save_corpus,
    split_dataset,
    write_dataset,
)
from .errors import ConfigError, ContractError, DataError, NumericError
from .hiernet import ModelConfig, init_parameters, load_checkpoint, save_checkpoint, summarize_batch
from .rougemetrics import evaluate_summaries, format_table, limit_sentences, report_json
from .textproc import build_codec
from .toycorpus import make_documents
from .trainer import TrainConfig, finetune, resolve_freeze_spec, train

log = logging.getLogger("hier2hier")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# ---------------------------------------------------------------------------
# flat key = value run configuration
# ---------------------------------------------------------------------------

MODEL_KEYS = {f.name: f.default for f in fields(ModelConfig) if f.name != "vocab_size"}
TRAIN_KEYS = {f.name: f.default for f in fields(TrainConfig)}
DATA_KEYS = {"vocab_max_size": 8000, "vocab_mode": "word", "bpe_merges": 2000, "init_seed": 0, "disentangle": False}
TRAIN_RUN_KEYS = {**MODEL_KEYS, **TRAIN_KEYS, **DATA_KEYS}
FINETUNE_RUN_KEYS = {**TRAIN_KEYS, "disentangle": False}


def _coerce(key: str, raw: str, default: Any) -> Any:
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if default is None:  # optional integer
            return None if text.lower() in ("none", "") else int(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from exc


def parse_config_text(text: str, allowed: dict[str, Any], source: str = "<config>") -> dict[str, Any]:
    """``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in allowed:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, value, allowed[key])
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return out


def resolve_run_config(config_path: str | None, overrides: Sequence[str], allowed: dict[str, Any]) -> dict[str, Any]:
    """Defaults, then the config file, then ``--set KEY=VALUE`` flags."""
    cfg = dict(allowed)
    if config_path:
        try:
            text = Path(config_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read config {config_path}: {exc.strerror}") from exc
        cfg.update(parse_config_text(text, allowed, config_path))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.update(parse_config_text(item, allowed, "--set"))
    return cfg


def _split(cfg: dict[str, Any], keys: dict[str, Any]) -> dict[str, Any]:
    return {k: cfg[k] for k in keys if k in cfg}


def _config_help(keys: dict[str, Any]) -> str:
    return "config keys (defaults):\n" + "\n".join(f"  {k} = {v}" for k, v in keys.items())


# ---------------------------------------------------------------------------
# file helpers
# ---------------------------------------------------------------------------


def load_examples(path: str, split: str = "train"):
    """A dataset JSONL file, or a directory written by ``synth`` (uses
    ``<split>.jsonl``)."""
    p = Path(path)
    if p.is_dir():
        p = p / f"{split}.jsonl"
    if not p.exists():
        raise DataError(f"{p}: no such dataset")
    return read_dataset(p)


def read_summaries(path: str) -> list[list[str]]:
    """The ``summary`` field of every line (summary files and datasets both have one)."""
    out = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
        summary = obj.get("summary") if isinstance(obj, dict) else None
        if not isinstance(summary, list) or not all(isinstance(s, str) for s in summary):
            raise DataError(f"{path}:{lineno}: missing or invalid 'summary' list")
        out.append(summary)
    return out


def write_summaries(path: str, summaries: Sequence[Sequence[str]]) -> None:
    text = "".join(json.dumps({"index": i, "summary": list(s)}) + "\n" for i, s in enumerate(summaries))
    atomic_write_text(path, text)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_toy_corpus(args) -> int:
    docs = make_documents(args.docs, seed=args.seed)
    save_corpus(docs, args.out)
    print(f"wrote {len(docs)} documents to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    overrides = {k: getattr(args, k) for k in ("a", "b", "m", "n", "w", "t") if getattr(args, k) is not None}
    cfg = SynthConfig.preset(args.preset, seed=args.seed, **overrides)
    docs = load_corpus(args.corpus)
    examples = interleave(docs, cfg)
    if not examples:
        raise DataError("no examples produced; is the corpus smaller than one window?")
    if args.limit is not None:
        examples = examples[: args.limit]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    parts = dict(zip(("train", "valid", "test"), split_dataset(examples))) if args.split else {"all": examples}
    for name, part in parts.items():
        write_dataset(part, out / f"{name}.jsonl")
    stats = corpus_stats(examples).to_dict()
    atomic_write_text(out / "stats.json", json.dumps({"config": cfg.__dict__, "stats": stats}, indent=1, sort_keys=True) + "\n")
    sizes = ", ".join(f"{k} {len(v)}" for k, v in parts.items())
    print(f"wrote {len(examples)} examples to {out} ({sizes})")
    return EXIT_OK


def _maybe_disentangle(examples, flag: bool):
    return [disentangle_gold(ex) for ex in examples] if flag else list(examples)


def cmd_train(args) -> int:
    cfg = resolve_run_config(args.config, args.set, TRAIN_RUN_KEYS)
    train_cfg = TrainConfig(**_split(cfg, TRAIN_KEYS))
    examples = _maybe_disentangle(load_examples(args.data, "train"), cfg["disentangle"])
    eval_set = None
    if Path(args.data).is_dir() and (Path(args.data) / "valid.jsonl").exists():
        eval_set = _maybe_disentangle(load_examples(args.data, "valid"), cfg["disentangle"])
    texts = [p for ex in examples for p in ex.posts] + [s for ex in examples for s in ex.summary]
    codec = build_codec(texts, max_size=cfg["vocab_max_size"], mode=cfg["vocab_mode"], bpe_merges=cfg["bpe_merges"])
    model_cfg = ModelConfig(vocab_size=len(codec.vocab), **_split(cfg, MODEL_KEYS))
    params = init_parameters(model_cfg, seed=cfg["init_seed"])
    log_path = args.log or str(args.out) + ".log.jsonl"
    result = train(examples, params, codec, train_cfg, eval_set=eval_set, log_path=log_path)
    save_checkpoint(args.out, params, codec, {"steps": result.steps, "disentangle": cfg["disentangle"], "run_config": cfg})
    first, last = result.losses[0] if result.losses else float("nan"), result.losses[-1] if result.losses else float("nan")
    print(f"trained {result.steps} steps, loss {first:.4f} -> {last:.4f}; checkpoint {args.out}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = resolve_run_config(args.config, args.set, FINETUNE_RUN_KEYS)
    train_cfg = TrainConfig(**_split(cfg, TRAIN_KEYS))
    frozen = resolve_freeze_spec(args.freeze)
    params, codec, manifest = load_checkpoint(args.ckpt)
    examples = _maybe_disentangle(load_examples(args.data, "train"), cfg["disentangle"])
    log_path = args.log or str(args.out) + ".log.jsonl"
    result = finetune((params, codec), examples, train_cfg, frozen, log_path=log_path)
    extra = {"steps": result.steps, "disentangle": cfg["disentangle"], "finetuned_from": str(args.ckpt), "frozen": list(frozen)}
    save_checkpoint(args.out, params, codec, extra)
    print(f"fine-tuned {result.steps} steps with frozen groups {list(frozen)}; checkpoint {args.out}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    params, codec, manifest = load_checkpoint(args.ckpt)
    examples = load_examples(args.input, "test")
    disentangled = manifest.get("extra", {}).get("disentangle", False) if args.disentangle is None else args.disentangle
    examples = _maybe_disentangle(examples, disentangled)
    summaries = []
    for start in range(0, len(examples), args.batch_size):
        chunk = examples[start : start + args.batch_size]
        for trace in summarize_batch([ex.posts for ex in chunk], params, codec):
            summaries.append(limit_sentences(trace.sentences, args.word_limit))
    write_summaries(args.out, summaries)
    print(f"wrote {len(summaries)} summaries to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    generated = read_summaries(args.generated)
    reference = read_summaries(args.reference)
    report = evaluate_summaries(generated, reference, args.word_limit)
    if args.out:
        atomic_write_text(args.out, report_json(report))
    sys.stdout.write(format_table(report))
    return EXIT_OK


def cmd_baseline(args) -> int:
    examples = load_examples(args.input, "test")
    summaries = [two_step_summarize(ex.posts, args.max_clusters, args.word_limit, args.tau) for ex in examples]
    write_summaries(args.out, summaries)
    print(f"wrote {len(summaries)} baseline summaries to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hier2hier", description="Summarize interleaved texts.", formatter_class=_Formatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text, epilog=None):
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=epilog, formatter_class=_Formatter)
        p.set_defaults(func=func)
        return p

    p = add("toy-corpus", cmd_toy_corpus, "generate a seeded toy source corpus (JSONL documents)")
    p.add_argument("--docs", type=int, default=1000, help="number of documents")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", required=True, help="output corpus JSONL")

    p = add("synth", cmd_synth, "interleave a source corpus into a text-summary dataset")
    p.add_argument("--corpus", required=True, help="source corpus JSONL (id, summary, sentences)")
    p.add_argument("--preset", choices=sorted(PRESETS), default="hard", help="difficulty preset")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", required=True, help="output directory")
    for key, text in (("a", "min threads"), ("b", "max threads"), ("m", "min posts per thread"), ("n", "max posts per thread"), ("w", "window size (default 2b)"), ("t", "window stride (default b)")):
        p.add_argument(f"--{key}", type=int, default=None, help=f"{text}; overrides the preset")
    p.add_argument("--limit", type=int, default=None, help="keep only the first LIMIT examples")
    p.add_argument("--no-split", dest="split", action="store_false", help="write all.jsonl instead of a 170:4:4 train/valid/test split")

    p = add("train", cmd_train, "train a model from scratch", _config_help(TRAIN_RUN_KEYS))
    p.add_argument("--data", required=True, help="dataset JSONL or synth output directory")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--log", default=None, help="training log JSONL (default: <out>.log.jsonl)")

    p = add("finetune", cmd_finetune, "continue training a checkpoint with frozen groups", _config_help(FINETUNE_RUN_KEYS))
    p.add_argument("--ckpt", required=True, help="pretrained checkpoint")
    p.add_argument("--data", required=True, help="dataset JSONL or synth output directory")
    p.add_argument("--freeze", default="default", help="'default', 'none', or comma-separated parameter groups")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--log", default=None, help="training log JSONL (default: <out>.log.jsonl)")

    p = add("summarize", cmd_summarize, "generate summaries with a trained checkpoint")
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.add_argument("--input", required=True, help="dataset JSONL or synth output directory (uses test.jsonl)")
    p.add_argument("--out", required=True, help="output summaries JSONL")
    p.add_argument("--word-limit", type=int, default=300, help="keep whole sentences up to this many words")
    p.add_argument("--batch-size", type=int, default=64, help="examples decoded together")
    p.add_argument("--disentangle", action=argparse.BooleanOptionalAction, default=None, help="sort posts by gold thread first; unset follows the checkpoint")

    p = add("eval", cmd_eval, "score generated summaries against references")
    p.add_argument("--generated", required=True, help="summaries JSONL")
    p.add_argument("--reference", required=True, help="summaries or dataset JSONL")
    p.add_argument("--word-limit", type=int, default=300, help="truncate each summary to this many words")
    p.add_argument("--out", default=None, help="also write the JSON report here")

    p = add("baseline", cmd_baseline, "two-step baseline: cluster posts, extract one post per cluster")
    p.add_argument("--input", required=True, help="dataset JSONL or synth output directory (uses test.jsonl)")
    p.add_argument("--out", required=True, help="output summaries JSONL")
    p.add_argument("--max-clusters", type=int, default=5, help="cluster cap")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU, help="cosine threshold for joining a cluster")
    p.add_argument("--word-limit", type=int, default=300, help="keep whole sentences up to this many words")
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits on --help and on usage errors
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"hier2hier: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"hier2hier: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ContractError) as exc:
        print(f"hier2hier: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"hier2hier: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())
