"""Hierarchical encoder-decoder for summarizing interleaved texts.

A word BiLSTM and a post BiLSTM encode the channel; a thread-level LSTM
steps once per summary sentence, choosing what to read through gated post
and word attentions, and a word-level LSTM writes each sentence.
"""

from .checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint, vocab_digest
from .model import (
    AttentionState,
    ChannelEncoding,
    SentenceDecoding,
    SummaryTrace,
    ThreadState,
    ThreadStepOutput,
    decode_sentence,
    encode_channel,
    encode_posts,
    initial_thread_state,
    strip_eos,
    summarize,
    summarize_batch,
    thread_step,
)
from .params import DEFAULT_FREEZE, GROUPS, ModelConfig, Parameters, init_parameters, parameter_shapes

__all__ = [
    "AttentionState",
    "ChannelEncoding",
    "DEFAULT_FREEZE",
    "FORMAT_VERSION",
    "GROUPS",
    "ModelConfig",
    "Parameters",
    "SentenceDecoding",
    "SummaryTrace",
    "ThreadState",
    "ThreadStepOutput",
    "decode_sentence",
    "encode_channel",
    "encode_posts",
    "init_parameters",
    "initial_thread_state",
    "load_checkpoint",
    "parameter_shapes",
    "save_checkpoint",
    "strip_eos",
    "summarize",
    "summarize_batch",
    "thread_step",
    "vocab_digest",
]
