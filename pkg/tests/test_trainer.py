import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hier2hier.corpusforge import InterleavedExample, SynthConfig, interleave
from hier2hier.errors import ConfigError, ContractError, NumericError
from hier2hier.hiernet import DEFAULT_FREEZE, ModelConfig, init_parameters, save_checkpoint
from hier2hier.ndgrad import Tape, grad_check
from hier2hier.textproc import EOS, PAD, build_codec
from hier2hier.toycorpus import make_documents
from hier2hier.trainer import (
    Adam,
    TrainConfig,
    clip_by_global_norm,
    collate,
    compute_loss,
    encode_example,
    finetune,
    make_batches,
    resolve_freeze_spec,
    train,
)


@pytest.fixture(scope="module")
def corpus():
    docs = make_documents(60, seed=2)
    exs = interleave(docs, SynthConfig(a=2, b=3, m=2, n=3, w=3, t=3, seed=0))[:12]
    codec = build_codec([p for e in exs for p in e.posts] + [s for e in exs for s in e.summary], max_size=150)
    cfg = ModelConfig(d=6, vocab_size=len(codec.vocab), n_max=9, k_max=3)
    return exs, codec, cfg


def test_stop_labels_mark_last_gold_thread(corpus):
    exs, codec, cfg = corpus
    three = next(e for e in exs if e.n_threads == 3)
    two = next(e for e in exs if e.n_threads == 2)
    batch = collate([encode_example(two, codec, cfg), encode_example(three, codec, cfg)])
    assert batch.stop_labels.tolist() == [[0, 1, 0], [0, 0, 1]]
    assert batch.thread_mask.tolist() == [[True, True, False], [True, True, True]]
    assert np.all(batch.stop_labels.sum(axis=1) == 1)


def test_targets_end_in_eos_and_respect_q_max(corpus):
    exs, codec, _ = corpus
    cfg = ModelConfig(d=4, vocab_size=len(codec.vocab), q_max=4, n_max=9, k_max=3)
    enc = encode_example(exs[0], codec, cfg)
    assert all(t[-1] == EOS and len(t) <= 4 for t in enc.targets)


def test_batch_size_one(corpus):
    exs, codec, cfg = corpus
    batches = list(make_batches(exs, codec, cfg, batch_size=1, seed=0))
    assert len(batches) == len(exs) and all(b.size == 1 for b in batches)
    assert sorted(int(b.index[0]) for b in batches) == list(range(len(exs)))


def test_too_many_threads_are_truncated(corpus, caplog):
    exs, codec, _ = corpus
    cfg = ModelConfig(d=4, vocab_size=len(codec.vocab), n_max=9, k_max=1)
    three = next(e for e in exs if e.n_threads == 3)
    assert len(encode_example(three, codec, cfg).targets) == 1
    assert "k_max" in caplog.text


def test_uniform_logits_give_log_vocab():
    cfg = ModelConfig(d=3, vocab_size=4, k_max=2)
    params = init_parameters(cfg, seed=0)
    params["D_w2w.out.w"].data[:] = 0
    params["D_w2w.out.b"].data[:] = 0
    batch = collate([_raw_example([[1, 1], [1]], [[1, 3], [3]])])
    res = compute_loss(batch, params, stop_weight=0.0)
    assert math.isclose(res.word_nll, math.log(4), rel_tol=1e-6)
    assert math.isclose(res.value, 1.3862944, rel_tol=1e-6)


def _raw_example(posts, targets):
    from hier2hier.trainer import EncodedExample

    return EncodedExample(posts=posts, targets=targets)


def test_zero_stop_weight_leaves_only_word_term(corpus):
    exs, codec, cfg = corpus
    params = init_parameters(cfg, seed=1)
    batch = next(make_batches(exs, codec, cfg, batch_size=4, seed=0))
    res = compute_loss(batch, params, stop_weight=0.0)
    assert res.value == pytest.approx(res.word_nll, rel=1e-6)
    with_stop = compute_loss(batch, params, stop_weight=2.0)
    assert with_stop.value == pytest.approx(res.word_nll + 2.0 * with_stop.stop_loss, rel=1e-6)
    assert with_stop.value >= 0


def test_batch_loss_is_mean_of_example_losses(corpus):
    exs, codec, cfg = corpus
    params = init_parameters(cfg, seed=2)
    encoded = [encode_example(e, codec, cfg) for e in exs[:6]]
    together = compute_loss(collate(encoded), params).value
    alone = [compute_loss(collate([e]), params).value for e in encoded]
    assert abs(together - float(np.mean(alone))) < 1e-5


def test_empty_target_rows_are_rejected():
    cfg = ModelConfig(d=3, vocab_size=8)
    batch = collate([_raw_example([[5]], [[4, 3]])])
    batch.targets[:] = PAD
    with pytest.raises(ContractError):
        compute_loss(batch, init_parameters(cfg))


def test_full_loss_gradients_match_finite_differences(corpus):
    exs, codec, cfg = corpus
    # long double: some gradients are ~1e-10, below float64 difference noise
    params = init_parameters(cfg, seed=3, dtype=np.longdouble)
    batch = next(make_batches(exs, codec, cfg, batch_size=2, seed=1))
    loss = lambda: compute_loss(batch, params).loss  # noqa: E731
    report = grad_check(loss, dict(params.items()), h=1e-6, max_per_param=3, tol=1e-3)
    assert report.passed, report.worst_parameter
    assert set(report.by_group()) >= {"embeddings", "E_w2w", "D_w2w", "attn_alpha", "stop", "thread_rep"}


def test_zero_learning_rate_keeps_parameters_bit_identical(corpus):
    exs, codec, cfg = corpus
    params = init_parameters(cfg, seed=4)
    before = params.snapshot()
    train(exs, params, codec, TrainConfig(learning_rate=0.0, batch_size=4, max_steps=3))
    for name, arr in before.items():
        assert np.array_equal(params[name].data, arr)


def test_same_seed_same_trajectory(corpus):
    exs, codec, cfg = corpus
    runs = []
    for _ in range(2):
        params = init_parameters(cfg, seed=5)
        runs.append(train(exs, params, codec, TrainConfig(learning_rate=1e-2, batch_size=5, max_steps=4, seed=7)).losses)
    assert runs[0] == runs[1]
    other = train(exs, init_parameters(cfg, seed=5), codec, TrainConfig(learning_rate=1e-2, batch_size=5, max_steps=4, seed=8))
    assert other.losses != runs[0]


def test_training_log_records(tmp_path, corpus):
    exs, codec, cfg = corpus
    log_path = tmp_path / "log.jsonl"
    res = train(
        exs[:8],
        init_parameters(cfg),
        codec,
        TrainConfig(learning_rate=1e-3, batch_size=4, max_steps=4, eval_every=2),
        eval_set=exs[8:],
        log_path=log_path,
    )
    records = [json.loads(line) for line in log_path.read_text().splitlines()]
    assert [r["step"] for r in records] == [2, 4]
    assert set(records[0]) == {"step", "train_loss", "word_nll", "stop_loss", "eval_loss"}
    assert records == res.history


def test_non_finite_loss_names_the_step(corpus):
    exs, codec, cfg = corpus
    params = init_parameters(cfg)
    params["D_w2w.out.b"].data[5] = np.inf
    with pytest.raises(NumericError, match="step 0"):
        train(exs, params, codec, TrainConfig(batch_size=4, max_steps=2))


def test_adam_with_zero_gradient_is_a_no_op():
    from hier2hier.ndgrad import Tensor

    p = {"w": Tensor(np.array([1.0, -2.0, 3.0]))}
    opt = Adam(p, lr=0.1)
    for _ in range(3):
        opt.step({"w": np.zeros(3)})
    assert p["w"].data.tolist() == [1.0, -2.0, 3.0]


def test_adam_first_step_moves_by_lr():
    from hier2hier.ndgrad import Tensor

    p = {"w": Tensor(np.array([0.0, 0.0]))}
    Adam(p, lr=0.01).step({"w": np.array([3.0, -0.5])})
    np.testing.assert_allclose(p["w"].data, [-0.01, 0.01], rtol=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12), st.floats(0.01, 10))
def test_clipping_bounds_global_norm(values, max_norm):
    arr = np.array(values)
    grads = {"a": arr[: len(arr) // 2].copy(), "b": arr[len(arr) // 2 :].copy()}
    before = clip_by_global_norm(grads, max_norm)
    after = math.sqrt(sum(float(g @ g) for g in grads.values()))
    assert after <= max_norm + 1e-6
    if before <= max_norm:
        np.testing.assert_array_equal(np.concatenate(list(grads.values())), arr)


def test_finetune_default_freeze_contract(tmp_path, corpus):
    exs, codec, cfg = corpus
    params = init_parameters(cfg, seed=6)
    ckpt = tmp_path / "pre.ckpt"
    save_checkpoint(ckpt, params, codec)
    res = finetune(ckpt, exs, TrainConfig(learning_rate=1e-3, batch_size=4, max_steps=1))
    tuned = res.params
    assert tuned.frozen == set(DEFAULT_FREEZE)
    for name, t in tuned.items():
        group = name.split(".")[0]
        same = np.array_equal(t.data, params[name].data)
        assert same == (group in DEFAULT_FREEZE), name


def test_freeze_spec_resolution():
    assert resolve_freeze_spec("default") == DEFAULT_FREEZE
    assert resolve_freeze_spec("none") == ()
    assert resolve_freeze_spec("embeddings, stop") == ("embeddings", "stop")
    with pytest.raises(ConfigError):
        resolve_freeze_spec(["encoder"])


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(stop_weight=-1)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"lr": 1})
    assert TrainConfig().learning_rate == 1e-4 and TrainConfig().batch_size == 64


def test_frozen_tensors_record_nothing(corpus):
    exs, codec, cfg = corpus
    params = init_parameters(cfg)
    params.set_frozen(["embeddings"])
    batch = next(make_batches(exs, codec, cfg, batch_size=2))
    with Tape() as tape:
        compute_loss(batch, params)
    assert all(params["embeddings.weight"] is not t for r in tape.records for t in r.inputs if t.requires_grad)
    assert "embedding" not in {r.op for r in tape.records}


def test_single_thread_example_round_trip(corpus):
    _, codec, cfg = corpus
    ex = InterleavedExample(["a post ."], [0], ["a title ."])
    batch = collate([encode_example(ex, codec, cfg)])
    assert batch.stop_labels.tolist() == [[1.0]]
