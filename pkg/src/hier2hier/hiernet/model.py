"""Forward computations of the hierarchical summarizer.

Everything is batched: a channel encoding holds ``B`` examples padded to a
common post count ``n`` and post length ``p``.  Word positions are also used
in flattened form, ``N = n * p``, which is what the word-level attentions
range over.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ContractError, DataError
from ..ndgrad import (
    Tensor,
    additive_score,
    concat,
    dropout,
    embedding,
    linear,
    log_sigmoid,
    lstm_cell,
    masked_mean,
    masked_softmax,
    sigmoid,
    stack,
    tanh,
    unstack,
    weighted_sum,
)
from ..textproc import BOS, EOS, PAD, UNK, TextCodec
from .params import Parameters

log = logging.getLogger(__name__)


@dataclass
class ChannelEncoding:
    W: Tensor  # (B, n, p, 2d), zero at masked words
    P: Tensor  # (B, n, 2d), zero at masked posts
    word_mask: np.ndarray  # (B, n, p) bool
    post_mask: np.ndarray  # (B, n) bool
    W_flat: Tensor  # (B, N, 2d)
    keys_gamma: Tensor  # (B, n, A)
    keys_beta: Tensor  # (B, N, A)
    keys_alpha: Tensor  # (B, N, A)

    @property
    def batch_size(self) -> int:
        return self.word_mask.shape[0]

    @property
    def n_posts(self) -> int:
        return self.word_mask.shape[1]

    @property
    def post_len(self) -> int:
        return self.word_mask.shape[2]

    @property
    def flat_mask(self) -> np.ndarray:
        return self.word_mask.reshape(self.batch_size, -1)


@dataclass
class AttentionState:
    gamma: Tensor  # (B, n)
    beta: Tensor  # (B, n, p)
    beta_hat: Tensor  # (B, n, p)
    context: Tensor  # (B, 2d)
    log_beta_hat: Tensor  # (B, N), used to rescale the word decoder's attention

    @property
    def word_attention_mask(self) -> np.ndarray:
        bh = self.beta_hat.data
        return (bh > 0).reshape(bh.shape[0], -1)


@dataclass
class ThreadState:
    h: Tensor
    c: Tensor


@dataclass
class ThreadStepOutput:
    state: ThreadState
    attention: AttentionState
    stop_logit: Tensor  # (B,)
    thread_rep: Tensor  # (B, d)

    @property
    def stop_prob(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.stop_logit.data.astype(np.float64)))


@dataclass
class SentenceDecoding:
    final_h: Tensor  # (B, d) word-decoder state after the last real token
    logits: Tensor | None = None  # (B, L, V), teacher-forced mode
    tokens: np.ndarray | None = None  # (B, L) greedy ids, PAD after EOS
    alpha_hat: list[np.ndarray] = field(default_factory=list)  # per step (B, N), if recorded


def _const(arr, dtype) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype))


def _bilstm(x: Tensor, mask: np.ndarray, params: Parameters, group: str) -> Tensor:
    """Bidirectional LSTM over axis 1 of ``x`` (S, L, in) -> (S, L, 2d).

    Masked steps carry the state through, and their outputs are zeroed.
    """
    S, L = mask.shape
    d = params.config.d
    dtype = params.dtype
    outputs = []
    for side, order in (("fwd", range(L)), ("bwd", range(L - 1, -1, -1))):
        xin = unstack(linear(x, params[f"{group}.{side}.w_ih"], params[f"{group}.{side}.b"]), axis=1)
        w_hh = params[f"{group}.{side}.w_hh"]
        h = c = _const(np.zeros((S, d)), dtype)
        hs: list[Tensor] = [h] * L
        for t in order:
            col = mask[:, t]
            if col.any():
                h, c = lstm_cell(xin[t] + h @ w_hh, c, h, mask=col)
            hs[t] = h
        outputs.append(stack(hs, axis=1))
    return concat(outputs, axis=-1) * _const(mask[..., None], dtype)


def check_masks(ids: np.ndarray, word_mask: np.ndarray, post_mask: np.ndarray) -> None:
    if ids.ndim != 3 or word_mask.shape != ids.shape or post_mask.shape != ids.shape[:2]:
        raise ContractError(f"ids {ids.shape}, word_mask {word_mask.shape}, post_mask {post_mask.shape} are inconsistent")
    has_words = word_mask.any(axis=2)
    if np.any(post_mask & ~has_words):
        b, i = np.argwhere(post_mask & ~has_words)[0]
        raise ContractError(f"post {i} of example {b} is unmasked but has no real words")
    if np.any(~post_mask & has_words):
        b, i = np.argwhere(~post_mask & has_words)[0]
        raise ContractError(f"post {i} of example {b} is masked but has unmasked words")
    if not post_mask.any(axis=1).all():
        raise ContractError("every example needs at least one post")


def encode_channel(ids, word_mask, post_mask, params: Parameters) -> ChannelEncoding:
    """Word BiLSTM per post, masked mean pooling, post BiLSTM across posts.

    Accepts a single example (n, p) or a batch (B, n, p); the result is always
    batched.
    """
    ids = np.asarray(ids, dtype=np.int64)
    word_mask = np.asarray(word_mask).astype(bool)
    post_mask = np.asarray(post_mask).astype(bool)
    if ids.ndim == 2:
        ids, word_mask, post_mask = ids[None], word_mask[None], post_mask[None]
    check_masks(ids, word_mask, post_mask)
    B, n, p = ids.shape
    d, dtype = params.config.d, params.dtype

    # run the word encoder only over real posts, then scatter back
    rows = np.flatnonzero(post_mask.ravel())
    flat_ids = np.where(word_mask, ids, PAD).reshape(B * n, p)[rows]
    flat_mask = word_mask.reshape(B * n, p)[rows]
    x = embedding(params["embeddings.weight"], flat_ids)
    w_real = _bilstm(x, flat_mask, params, "E_w2w")
    scatter = np.full(B * n, len(rows))
    scatter[rows] = np.arange(len(rows))
    padded = concat([w_real, _const(np.zeros((1, p, 2 * d)), dtype)], axis=0)
    W = padded[scatter].reshape(B, n, p, 2 * d)

    pooled = masked_mean(W, word_mask[..., None], axis=2)
    P = _bilstm(pooled, post_mask, params, "E_p2p")

    N = n * p
    W_flat = W.reshape(B, N, 2 * d)
    a = (W + P.reshape(B, n, 1, 2 * d)).reshape(B, N, 2 * d)
    return ChannelEncoding(
        W=W,
        P=P,
        word_mask=word_mask,
        post_mask=post_mask,
        W_flat=W_flat,
        keys_gamma=P @ params["attn_gamma.w_key"],
        keys_beta=a @ params["attn_beta.w_key"],
        keys_alpha=W_flat @ params["attn_alpha.w_key"],
    )


def initial_thread_state(enc: ChannelEncoding, params: Parameters) -> tuple[ThreadState, Tensor]:
    """Learned initial thread-decoder state and the stand-in for the
    (not yet existing) previous word-decoder state."""
    zeros = _const(np.zeros((enc.batch_size, params.config.d)), params.dtype)
    state = ThreadState(h=zeros + params["D_t2t.h0"], c=zeros + params["D_t2t.c0"])
    return state, zeros + params["D_t2t.prev_word0"]


def thread_step(
    state: ThreadState,
    prev_word: Tensor,
    enc: ChannelEncoding,
    params: Parameters,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> ThreadStepOutput:
    B, n, p = enc.word_mask.shape
    if state.h.shape != (B, params.config.d) or prev_word.shape != state.h.shape:
        raise ContractError(f"thread state {state.h.shape} / previous word state {prev_word.shape} do not fit batch {B}")
    dtype = params.dtype
    h_prev = state.h

    q_g = linear(h_prev, params["attn_gamma.w_query"], params["attn_gamma.b_query"])
    z_g = additive_score(enc.keys_gamma, q_g, params["attn_gamma.v"])  # (B, n)
    gamma = sigmoid(z_g) * _const(enc.post_mask, dtype)

    q_b = linear(h_prev, params["attn_beta.w_query"], params["attn_beta.b_query"])
    z_b = additive_score(enc.keys_beta, q_b, params["attn_beta.v"])  # (B, N)
    beta = (sigmoid(z_b) * _const(enc.flat_mask, dtype)).reshape(B, n, p)

    beta_hat = beta * gamma.reshape(B, n, 1)
    context = weighted_sum(beta_hat.reshape(B, n * p), enc.W_flat)
    log_beta_hat = (log_sigmoid(z_b).reshape(B, n, p) + log_sigmoid(z_g).reshape(B, n, 1)).reshape(B, n * p)

    x = concat([context, prev_word], axis=-1)
    z = linear(x, params["D_t2t.w_ih"], params["D_t2t.b"]) + h_prev @ params["D_t2t.w_hh"]
    h, c = lstm_cell(z, state.c, h_prev)

    stop_logit = linear(h, params["stop.w"], params["stop.b"]).reshape(B)
    hidden = tanh(linear(concat([h, x], axis=-1), params["thread_rep.w1"], params["thread_rep.b1"]))
    s = tanh(linear(hidden, params["thread_rep.w2"], params["thread_rep.b2"]))
    s = dropout(s, params.config.dropout_rate, rng, train)
    return ThreadStepOutput(
        state=ThreadState(h, c),
        attention=AttentionState(gamma, beta, beta_hat, context, log_beta_hat),
        stop_logit=stop_logit,
        thread_rep=s,
    )


def decode_sentence(
    thread_rep: Tensor,
    attention: AttentionState,
    enc: ChannelEncoding,
    params: Parameters,
    targets=None,
    max_len: int | None = None,
    record_attention: bool = False,
) -> SentenceDecoding:
    """Word decoder for one summary sentence per example.

    With ``targets`` (B, L), gold ids ending in EOS and padded with PAD, the
    decoder is teacher-forced and returns logits for every position.
    Without, it decodes greedily for at most ``max_len`` (default q_max)
    steps, stopping a row at EOS.
    """
    cfg, dtype = params.config, params.dtype
    B = enc.batch_size
    amask = enc.flat_mask & attention.word_attention_mask
    if not enc.flat_mask.any(axis=1).all():
        raise ContractError("cannot decode from an empty encoding")

    h = tanh(linear(thread_rep, params["D_w2w.init_h.w"], params["D_w2w.init_h.b"]))
    c = linear(thread_rep, params["D_w2w.init_c.w"], params["D_w2w.init_c.b"])
    emb_w = params["embeddings.weight"]
    w_ih, w_hh, b = params["D_w2w.w_ih"], params["D_w2w.w_hh"], params["D_w2w.b"]

    def step(h, c, emb_t, keep):
        q = linear(h, params["attn_alpha.w_query"], params["attn_alpha.b_query"])
        e = additive_score(enc.keys_alpha, q, params["attn_alpha.v"])
        alpha_hat = masked_softmax(e + attention.log_beta_hat, amask, axis=-1)
        ctx = weighted_sum(alpha_hat, enc.W_flat)
        z = linear(concat([emb_t, ctx], axis=-1), w_ih, b) + h @ w_hh
        h, c = lstm_cell(z, c, h, mask=keep)
        return h, c, concat([h, ctx], axis=-1), alpha_hat

    alphas: list[np.ndarray] = []
    if targets is not None:
        targets = np.asarray(targets, dtype=np.int64)
        if targets.ndim != 2 or targets.shape[0] != B:
            raise ContractError(f"targets {targets.shape} do not fit batch {B}")
        tok_mask = targets != PAD
        inputs = np.concatenate([np.full((B, 1), BOS), targets[:, :-1]], axis=1)
        embs = unstack(embedding(emb_w, np.where(tok_mask, inputs, PAD)), axis=1)
        feats = []
        for t in range(targets.shape[1]):
            h, c, feat, alpha_hat = step(h, c, embs[t], tok_mask[:, t])
            feats.append(feat)
            if record_attention:
                alphas.append(alpha_hat.data)
        logits = linear(stack(feats, axis=1), params["D_w2w.out.w"], params["D_w2w.out.b"])
        return SentenceDecoding(final_h=h, logits=logits, alpha_hat=alphas)

    max_len = cfg.q_max if max_len is None else max_len
    y = np.full(B, BOS)
    done = np.zeros(B, dtype=bool)
    out = []
    for _ in range(max_len):
        h, c, feat, alpha_hat = step(h, c, embedding(emb_w, y), ~done)
        if record_attention:
            alphas.append(alpha_hat.data)
        logits = linear(feat, params["D_w2w.out.w"], params["D_w2w.out.b"]).data.copy()
        logits[:, [PAD, BOS]] = -np.inf  # never generated
        nxt = np.where(done, PAD, logits.argmax(axis=-1))
        out.append(nxt)
        done |= nxt == EOS
        y = np.where(done, PAD, nxt)
        if done.all():
            break
    return SentenceDecoding(final_h=h, tokens=np.stack(out, axis=1), alpha_hat=alphas)


def strip_eos(tokens: Sequence[int]) -> list[int]:
    out = []
    for t in tokens:
        if t == EOS:
            break
        if t != PAD:
            out.append(int(t))
    return out


def encode_posts(channels: Sequence[Sequence[str]], codec: TextCodec, n_max: int, p_max: int):
    """Tokenize, truncate and pad posts: ``(ids, word_mask, post_mask)``.

    Posts past ``n_max`` are dropped with a warning, words past ``p_max`` are
    cut.  A post with no tokens is kept as a single UNK so post positions line
    up with the input.
    """
    if not channels:
        raise DataError("no examples to encode")
    encoded = []
    for posts in channels:
        if not posts:
            raise DataError("empty post list")
        if len(posts) > n_max:
            log.warning("dropping %d posts beyond n_max=%d", len(posts) - n_max, n_max)
            posts = posts[:n_max]
        encoded.append([codec.ids(text, limit=p_max) or [UNK] for text in posts])
    n = max(len(e) for e in encoded)
    p = max(len(ids) for e in encoded for ids in e)
    B = len(encoded)
    ids = np.zeros((B, n, p), dtype=np.int64)
    post_mask = np.zeros((B, n), dtype=bool)
    for b, posts in enumerate(encoded):
        post_mask[b, : len(posts)] = True
        for i, row in enumerate(posts):
            ids[b, i, : len(row)] = row
    return ids, ids != PAD, post_mask


@dataclass
class SummaryTrace:
    sentences: list[str]
    token_ids: list[list[int]]
    stop_probs: list[float]


def summarize_batch(channels: Sequence[Sequence[str]], params: Parameters, codec: TextCodec) -> list[SummaryTrace]:
    """Greedy summaries for several channels at once.

    Sentence k is always emitted; an example halts after the first thread step
    whose stop probability exceeds 0.5, or after k_max steps.
    """
    cfg = params.config
    if len(codec.vocab) != cfg.vocab_size:
        raise ContractError(f"codec has {len(codec.vocab)} ids but the model expects {cfg.vocab_size}")
    ids, word_mask, post_mask = encode_posts(channels, codec, cfg.n_max, cfg.p_max)
    enc = encode_channel(ids, word_mask, post_mask, params)
    state, prev_word = initial_thread_state(enc, params)
    B = enc.batch_size
    traces = [SummaryTrace([], [], []) for _ in range(B)]
    active = np.ones(B, dtype=bool)
    for _ in range(cfg.k_max):
        out = thread_step(state, prev_word, enc, params)
        dec = decode_sentence(out.thread_rep, out.attention, enc, params)
        probs = out.stop_prob
        for b in np.flatnonzero(active):
            toks = strip_eos(dec.tokens[b])
            traces[b].token_ids.append(toks)
            traces[b].sentences.append(codec.text(toks))
            traces[b].stop_probs.append(float(probs[b]))
        active &= ~(probs > 0.5)
        if not active.any():
            break
        state, prev_word = out.state, dec.final_h
    return traces


def summarize(posts: Sequence[str], params: Parameters, codec: TextCodec) -> list[str]:
    if not posts:
        raise DataError("empty post list")
    return summarize_batch([list(posts)], params, codec)[0].sentences
