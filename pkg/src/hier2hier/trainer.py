"""Teacher-forced training of the hierarchical summarizer.

The objective per example is the mean token negative log-likelihood of the
gold summary plus ``stop_weight`` times the mean binary cross-entropy of the
stop head over the gold thread steps; a batch loss is the mean over its
examples, so it does not depend on how examples are grouped into batches.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .corpusforge import InterleavedExample
from .errors import ConfigError, ContractError, DataError, NumericError
from .hiernet import (
    DEFAULT_FREEZE,
    GROUPS,
    Parameters,
    decode_sentence,
    encode_channel,
    initial_thread_state,
    load_checkpoint,
    save_checkpoint,
    thread_step,
)
from .hiernet.params import ModelConfig
from .ndgrad import Tape, Tensor, bce_with_logits, cross_entropy
from .textproc import EOS, PAD, UNK, TextCodec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    stop_weight: float = 1.0
    max_steps: int = 1000
    clip_norm: float = 5.0
    seed: int = 0
    eval_every: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.stop_weight >= 0:
            raise ConfigError(f"stop_weight must be >= 0, got {self.stop_weight}")
        if self.max_steps < 0 or self.eval_every < 1:
            raise ConfigError("max_steps must be >= 0 and eval_every >= 1")
        if not self.clip_norm > 0:
            raise ConfigError(f"clip_norm must be > 0, got {self.clip_norm}")

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys {sorted(unknown)}")
        return cls(**obj)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class EncodedExample:
    posts: list[list[int]]
    targets: list[list[int]]  # one per gold thread, each ending in EOS


@dataclass
class Batch:
    ids: np.ndarray  # (B, n, p)
    word_mask: np.ndarray  # (B, n, p) bool
    post_mask: np.ndarray  # (B, n) bool
    targets: np.ndarray  # (B, K, L) gold ids ending in EOS, PAD after
    stop_labels: np.ndarray  # (B, K) 1 at the last gold thread step
    thread_mask: np.ndarray  # (B, K) bool
    index: np.ndarray  # positions of the examples in the dataset

    @property
    def size(self) -> int:
        return self.ids.shape[0]

    @property
    def thread_counts(self) -> np.ndarray:
        return self.thread_mask.sum(axis=1)


def encode_example(ex: InterleavedExample, codec: TextCodec, cfg: ModelConfig) -> EncodedExample:
    posts = ex.posts
    if not posts:
        raise DataError("example has no posts")
    if not ex.summary:
        raise DataError("example has no summary sentences")
    if len(posts) > cfg.n_max:
        log.warning("dropping %d posts beyond n_max=%d", len(posts) - cfg.n_max, cfg.n_max)
        posts = posts[: cfg.n_max]
    summary = ex.summary
    if len(summary) > cfg.k_max:
        log.warning("truncating %d summary sentences to k_max=%d", len(summary), cfg.k_max)
        summary = summary[: cfg.k_max]
    return EncodedExample(
        posts=[codec.ids(p, limit=cfg.p_max) or [UNK] for p in posts],
        targets=[codec.ids(s, limit=cfg.q_max - 1) + [EOS] for s in summary],
    )


def collate(encoded: Sequence[EncodedExample], index: Sequence[int] | None = None) -> Batch:
    B = len(encoded)
    n = max(len(e.posts) for e in encoded)
    p = max(len(x) for e in encoded for x in e.posts)
    K = max(len(e.targets) for e in encoded)
    L = max(len(t) for e in encoded for t in e.targets)
    ids = np.zeros((B, n, p), dtype=np.int64)
    post_mask = np.zeros((B, n), dtype=bool)
    targets = np.zeros((B, K, L), dtype=np.int64)
    stop = np.zeros((B, K))
    thread_mask = np.zeros((B, K), dtype=bool)
    for b, e in enumerate(encoded):
        post_mask[b, : len(e.posts)] = True
        for i, row in enumerate(e.posts):
            ids[b, i, : len(row)] = row
        for k, t in enumerate(e.targets):
            targets[b, k, : len(t)] = t
        thread_mask[b, : len(e.targets)] = True
        stop[b, len(e.targets) - 1] = 1.0
    return Batch(
        ids=ids,
        word_mask=ids != PAD,
        post_mask=post_mask,
        targets=targets,
        stop_labels=stop,
        thread_mask=thread_mask,
        index=np.arange(B) if index is None else np.asarray(index),
    )


def batch_order(n: int, batch_size: int, rng: np.random.Generator | None) -> list[np.ndarray]:
    order = np.arange(n) if rng is None else rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def make_batches(
    dataset: Sequence[InterleavedExample],
    codec: TextCodec,
    model_cfg: ModelConfig,
    batch_size: int,
    seed: int | None = 0,
) -> Iterator[Batch]:
    """One pass over ``dataset``; shuffled under ``seed`` (``None`` keeps order)."""
    encoded = [encode_example(ex, codec, model_cfg) for ex in dataset]
    rng = None if seed is None else np.random.default_rng(seed)
    for idx in batch_order(len(encoded), batch_size, rng):
        yield collate([encoded[i] for i in idx], idx)


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------


@dataclass
class LossBreakdown:
    loss: Tensor
    word_nll: float  # mean over examples of the per-token NLL
    stop_loss: float  # mean over examples of the per-step stop BCE
    per_example: np.ndarray  # (B,) total loss of each example

    @property
    def value(self) -> float:
        return float(self.loss.data)


def compute_loss(
    batch: Batch,
    params: Parameters,
    stop_weight: float = 1.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> LossBreakdown:
    B, K, _ = batch.targets.shape
    tok_mask = batch.targets != PAD
    n_tok = tok_mask.sum(axis=(1, 2))
    n_steps = batch.thread_mask.sum(axis=1)
    if np.any(n_tok == 0) or np.any(n_steps == 0):
        raise ContractError("every example in a batch needs at least one real summary token")
    dtype = params.dtype

    enc = encode_channel(batch.ids, batch.word_mask, batch.post_mask, params)
    state, prev_word = initial_thread_state(enc, params)
    nll = stop = None
    for k in range(K):
        out = thread_step(state, prev_word, enc, params, train=train, rng=rng)
        dec = decode_sentence(out.thread_rep, out.attention, enc, params, targets=batch.targets[:, k])
        ce = cross_entropy(dec.logits, batch.targets[:, k], tok_mask[:, k]).sum(axis=1)
        bce = bce_with_logits(out.stop_logit, batch.stop_labels[:, k], batch.thread_mask[:, k])
        nll = ce if nll is None else nll + ce
        stop = bce if stop is None else stop + bce
        state, prev_word = out.state, dec.final_h

    nll = nll * Tensor((1.0 / n_tok).astype(dtype))
    stop = stop * Tensor((1.0 / n_steps).astype(dtype))
    per_example = nll + stop * stop_weight if stop_weight else nll
    loss = per_example.sum() * (1.0 / B)
    return LossBreakdown(
        loss=loss,
        word_nll=float(nll.data.mean()),
        stop_loss=float(stop.data.mean()),
        per_example=per_example.data.copy(),
    )


def evaluate(dataset, params: Parameters, codec: TextCodec, cfg: TrainConfig, encoded=None) -> float:
    """Mean per-example loss in eval mode (no dropout, nothing recorded)."""
    encoded = encoded if encoded is not None else [encode_example(ex, codec, params.config) for ex in dataset]
    total = 0.0
    for idx in batch_order(len(encoded), cfg.batch_size, None):
        res = compute_loss(collate([encoded[i] for i in idx]), params, cfg.stop_weight)
        total += float(res.per_example.sum())
    return total / len(encoded)


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


class Adam:
    """Adam with bias correction, applied in place to ``Tensor.data``."""

    def __init__(self, params: dict[str, Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1 - b1**self.t
        corr2 = 1 - b2**self.t
        for name, p in self.params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            update = (m / corr1) / (np.sqrt(v / corr2) + self.eps)
            p.data -= (self.lr * update).astype(p.data.dtype)


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``;
    returns the norm before clipping."""
    norm = global_norm(grads.values())
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


@dataclass
class TrainResult:
    params: Parameters
    losses: list[float] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.losses)


def _append_jsonl(path: Path, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record) + "\n")


def train(
    dataset: Sequence[InterleavedExample],
    params: Parameters,
    codec: TextCodec,
    cfg: TrainConfig,
    eval_set: Sequence[InterleavedExample] | None = None,
    log_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
    on_step: Callable[[int, LossBreakdown], None] | None = None,
) -> TrainResult:
    """Mini-batch Adam on the non-frozen parameter groups for ``cfg.max_steps`` steps.

    Shuffling and dropout derive from ``cfg.seed`` only, so a rerun with the
    same inputs reproduces the loss trajectory exactly.
    """
    if not dataset:
        raise DataError("training set is empty")
    if len(codec.vocab) != params.config.vocab_size:
        raise ContractError(f"codec has {len(codec.vocab)} ids but the model expects {params.config.vocab_size}")
    encoded = [encode_example(ex, codec, params.config) for ex in dataset]
    eval_encoded = [encode_example(ex, codec, params.config) for ex in eval_set] if eval_set else None
    trainable = params.trainable()
    opt = Adam(trainable, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    dropout_rng = np.random.default_rng([cfg.seed, 1])
    log_path = Path(log_path) if log_path else None
    if log_path:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_path.write_text("")
    result = TrainResult(params)

    step, epoch = 0, 0
    while step < cfg.max_steps:
        for idx in batch_order(len(encoded), cfg.batch_size, np.random.default_rng([cfg.seed, 0, epoch])):
            if step >= cfg.max_steps:
                break
            batch = collate([encoded[i] for i in idx], idx)
            try:
                with Tape() as tape:
                    res = compute_loss(batch, params, cfg.stop_weight, train=True, rng=dropout_rng)
                if not math.isfinite(res.value):
                    raise NumericError("loss is not finite")
                if trainable:
                    tape.backward(res.loss, list(trainable.values()))
            except NumericError as exc:
                raise NumericError(f"training diverged at step {step}: {exc}") from exc
            if trainable:
                grads = {n: t.grad for n, t in trainable.items()}
                clip_by_global_norm(grads, cfg.clip_norm)
                opt.step(grads)
            step += 1
            result.losses.append(res.value)
            if on_step:
                on_step(step, res)
            if step % cfg.eval_every == 0 or step == cfg.max_steps:
                record = {"step": step, "train_loss": res.value, "word_nll": res.word_nll, "stop_loss": res.stop_loss}
                record["eval_loss"] = evaluate(None, params, codec, cfg, eval_encoded) if eval_encoded else None
                result.history.append(record)
                log.info("step %d loss %.4f", step, res.value)
                if log_path:
                    _append_jsonl(log_path, record)
        epoch += 1
    if checkpoint_path:
        save_checkpoint(checkpoint_path, params, codec, {"steps": step, "train_config": asdict(cfg)})
    return result


def resolve_freeze_spec(spec: str | Iterable[str] | None) -> tuple[str, ...]:
    """``"default"`` (or None), ``"none"``, a comma-separated string, or group names."""
    if spec is None or spec == "default":
        return DEFAULT_FREEZE
    if spec == "none":
        return ()
    groups = [g.strip() for g in spec.split(",")] if isinstance(spec, str) else list(spec)
    groups = [g for g in groups if g]
    unknown = sorted(set(groups) - set(GROUPS))
    if unknown:
        raise ConfigError(f"unknown parameter groups {unknown}; known: {list(GROUPS)}")
    return tuple(groups)


def finetune(
    checkpoint: str | Path | tuple[Parameters, TextCodec],
    dataset: Sequence[InterleavedExample],
    cfg: TrainConfig,
    freeze_spec: str | Iterable[str] | None = "default",
    **train_kwargs,
) -> TrainResult:
    """Continue training from a checkpoint with some groups frozen.

    The default freezes everything but the word decoder and the three
    attention networks.
    """
    frozen = resolve_freeze_spec(freeze_spec)
    if isinstance(checkpoint, tuple):
        params, codec = checkpoint
    else:
        params, codec, _ = load_checkpoint(checkpoint)
    params.set_frozen(frozen)
    return train(dataset, params, codec, cfg, **train_kwargs)
