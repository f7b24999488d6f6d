"""From a toy source corpus to scored summaries in about a minute.

Builds interleaved training examples, overfits a small hierarchical model,
then compares its summaries with the two-step extractive baseline.

    python demos/quickstart.py
"""

import numpy as np

from hier2hier.baseline2step import two_step_summarize
from hier2hier.corpusforge import SynthConfig, interleave
from hier2hier.hiernet import ModelConfig, init_parameters, summarize_batch
from hier2hier.rougemetrics import evaluate_summaries, format_table
from hier2hier.textproc import build_codec
from hier2hier.toycorpus import make_documents
from hier2hier.trainer import TrainConfig, train

docs = make_documents(200, seed=4)
examples = interleave(docs, SynthConfig(a=2, b=3, m=2, n=2, seed=4))[:32]

ex = examples[0]
print("an interleaved channel:")
for post, tid in zip(ex.posts, ex.thread_ids):
    print(f"  [thread {tid}] {post}")
print("gold summary:", ex.summary)

codec = build_codec([p for e in examples for p in e.posts] + [s for e in examples for s in e.summary])
model_cfg = ModelConfig(d=16, vocab_size=len(codec.vocab), n_max=6, k_max=3)
train_cfg = TrainConfig(learning_rate=3e-3, batch_size=32, max_steps=800, eval_every=10**6)


def progress(step, loss):
    if step % 200 == 0:
        print(f"step {step:4d}  loss {loss.value:.3f}")


result = train(examples, init_parameters(model_cfg, seed=0), codec, train_cfg, on_step=progress)

traces = summarize_batch([e.posts for e in examples], result.params, codec)
print("\ngenerated:", traces[0].sentences)
print("stop probabilities:", np.round(traces[0].stop_probs, 3).tolist())

gold = [e.summary for e in examples]
print("\nhierarchical model (training set)")
print(format_table(evaluate_summaries([t.sentences for t in traces], gold)))
print("two-step extractive baseline")
print(format_table(evaluate_summaries([two_step_summarize(e.posts) for e in examples], gold)))
