"""Does sorting posts by thread make the task easier?

Trains the same model twice on a hard-preset corpus, once on interleaved
channels and once on thread-sorted copies of the same channels, and reports
held-out ROUGE.  Pass a step count to trade time for quality (default 600).

    python demos/disentangled_vs_entangled.py [steps]
"""

import sys

from hier2hier.corpusforge import SynthConfig, disentangle_gold, interleave, split_dataset
from hier2hier.hiernet import ModelConfig, init_parameters, summarize_batch
from hier2hier.rougemetrics import corpus_rouge
from hier2hier.textproc import build_codec
from hier2hier.toycorpus import make_documents
from hier2hier.trainer import TrainConfig, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 600

docs = make_documents(10_005, seed=11)
examples = interleave(docs, SynthConfig.preset("hard", seed=11))
train_set, _, test_set = split_dataset(examples, (8, 1, 1))
codec = build_codec([p for e in train_set for p in e.posts] + [s for e in train_set for s in e.summary], max_size=2000)
model_cfg = ModelConfig(d=32, vocab_size=len(codec.vocab), n_max=25, k_max=5)
train_cfg = TrainConfig(learning_rate=3e-3, batch_size=32, max_steps=steps)

for name, prep in (("entangled", list), ("disentangled", lambda xs: [disentangle_gold(e) for e in xs])):
    params = train(prep(train_set), init_parameters(model_cfg, seed=0), codec, train_cfg).params
    held_out = prep(test_set)
    generated = []
    for i in range(0, len(held_out), 64):
        generated += [t.sentences for t in summarize_batch([e.posts for e in held_out[i : i + 64]], params, codec)]
    scores = corpus_rouge(list(zip(generated, [e.summary for e in held_out])))
    print(f"{name:>12}: ROUGE-1 {100 * scores.rouge1.f1:.2f}  ROUGE-2 {100 * scores.rouge2.f1:.2f}  ROUGE-L {100 * scores.rougeL.f1:.2f}")
