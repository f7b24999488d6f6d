"""Where does the thread decoder look?

Trains a small model, then prints, for every thread step on one example, the
post-level gate gamma and the summed phrase-level weight beta_hat per post.
A well-trained model puts its weight on the posts of one thread per step,
which is the implicit disentanglement the attention hierarchy is meant to do.

    python demos/attention_map.py
"""

import numpy as np

from hier2hier.corpusforge import SynthConfig, interleave
from hier2hier.hiernet import (
    ModelConfig,
    encode_channel,
    encode_posts,
    init_parameters,
    initial_thread_state,
    thread_step,
)
from hier2hier.textproc import build_codec
from hier2hier.toycorpus import make_documents
from hier2hier.trainer import TrainConfig, train

docs = make_documents(200, seed=4)
examples = interleave(docs, SynthConfig(a=2, b=3, m=2, n=2, seed=4))[:32]
codec = build_codec([p for e in examples for p in e.posts] + [s for e in examples for s in e.summary])
cfg = ModelConfig(d=16, vocab_size=len(codec.vocab), n_max=6, k_max=3)
params = train(examples, init_parameters(cfg, seed=0), codec, TrainConfig(learning_rate=3e-3, batch_size=32, max_steps=1000)).params

ex = next(e for e in examples if e.n_threads == 3)
ids, word_mask, post_mask = encode_posts([ex.posts], codec, cfg.n_max, cfg.p_max)
enc = encode_channel(ids, word_mask, post_mask, params)
state, prev = initial_thread_state(enc, params)

print("post  thread  " + "  ".join(f"step{k}: gamma  beta_hat" for k in range(ex.n_threads)))
rows = [[] for _ in ex.posts]
for k in range(ex.n_threads):
    out = thread_step(state, prev, enc, params)
    gamma = out.attention.gamma.data[0]
    mass = out.attention.beta_hat.data[0].sum(axis=1)
    for i in range(len(ex.posts)):
        rows[i].append(f"{gamma[i]:11.3f} {mass[i]:9.3f}")
    print(f"  step {k}: stop prob {float(np.asarray(out.stop_prob).ravel()[0]):.3f}")
    state = out.state
for i, tid in enumerate(ex.thread_ids):
    print(f"{i:4d}  {tid:6d}  " + "  ".join(rows[i]))
print("gold titles:", ex.summary)
