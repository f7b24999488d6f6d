import json
import zipfile

import numpy as np
import pytest

from hier2hier.errors import ConfigError, ContractError, DataError
from hier2hier.hiernet import (
    DEFAULT_FREEZE,
    GROUPS,
    AttentionState,
    ModelConfig,
    decode_sentence,
    encode_channel,
    init_parameters,
    initial_thread_state,
    load_checkpoint,
    save_checkpoint,
    summarize,
    summarize_batch,
    thread_step,
)
from hier2hier.ndgrad import Tensor
from hier2hier.textproc import PAD, build_codec

VOCAB = 30


def random_channel(rng, B=2, n=4, p=5, vocab=VOCAB):
    ids = rng.integers(4, vocab, size=(B, n, p))
    lengths = rng.integers(1, p + 1, size=(B, n))
    word_mask = np.arange(p) < lengths[..., None]
    post_mask = np.ones((B, n), dtype=bool)
    post_mask[0, n - 1] = False
    word_mask &= post_mask[..., None]
    ids = np.where(word_mask, ids, PAD)
    return ids, word_mask, post_mask


@pytest.fixture
def small():
    cfg = ModelConfig(d=6, vocab_size=VOCAB, n_max=4, k_max=3, q_max=6)
    return init_parameters(cfg, seed=1, dtype=np.float64)


def run_step(params, ids, wm, pm):
    enc = encode_channel(ids, wm, pm, params)
    state, prev = initial_thread_state(enc, params)
    return enc, thread_step(state, prev, enc, params)


def test_encoding_shapes_at_full_size():
    cfg = ModelConfig(d=100, vocab_size=50)
    params = init_parameters(cfg)
    ids = np.random.default_rng(0).integers(4, 50, size=(25, 20))
    enc = encode_channel(ids, np.ones((25, 20)), np.ones(25), params)
    assert enc.W.shape == (1, 25, 20, 200)
    assert enc.P.shape == (1, 25, 200)


def test_masked_entries_are_exactly_zero(small):
    ids, wm, pm = random_channel(np.random.default_rng(2))
    enc = encode_channel(ids, wm, pm, small)
    assert np.all(enc.W.data[~wm] == 0)
    assert np.all(enc.P.data[~pm] == 0)
    assert np.all(np.abs(enc.W.data[wm]).sum(axis=-1) > 0)


def test_duplicate_posts_get_identical_word_states(small):
    ids, wm, pm = random_channel(np.random.default_rng(3))
    ids[1, 2], wm[1, 2] = ids[1, 0], wm[1, 0]
    enc = encode_channel(ids, wm, pm, small)
    np.testing.assert_array_equal(enc.W.data[1, 0], enc.W.data[1, 2])


def test_pad_ids_do_not_change_any_output(small):
    rng = np.random.default_rng(4)
    ids, wm, pm = random_channel(rng)
    other = np.where(wm, ids, rng.integers(0, VOCAB, size=ids.shape))
    a_enc, a = run_step(small, ids, wm, pm)
    b_enc, b = run_step(small, other, wm, pm)
    np.testing.assert_array_equal(a_enc.W.data, b_enc.W.data)
    np.testing.assert_array_equal(a_enc.P.data, b_enc.P.data)
    np.testing.assert_array_equal(a.stop_logit.data, b.stop_logit.data)
    da = decode_sentence(a.thread_rep, a.attention, a_enc, small)
    db = decode_sentence(b.thread_rep, b.attention, b_enc, small)
    np.testing.assert_array_equal(da.tokens, db.tokens)


def test_unmasked_empty_post_is_a_contract_error(small):
    ids, wm, pm = random_channel(np.random.default_rng(5))
    wm[0, 1] = False
    with pytest.raises(ContractError, match="post 1 of example 0"):
        encode_channel(ids, wm, pm, small)


def test_masked_post_with_words_is_rejected(small):
    ids, wm, pm = random_channel(np.random.default_rng(5))
    pm[1, 0] = False
    with pytest.raises(ContractError):
        encode_channel(ids, wm, pm, small)


def test_beta_hat_is_beta_times_gamma(small):
    ids, wm, pm = random_channel(np.random.default_rng(6))
    enc, out = run_step(small, ids, wm, pm)
    att = out.attention
    oracle = att.beta.data * att.gamma.data[..., None]
    assert np.array_equal(att.beta_hat.data, oracle)
    assert np.all(att.beta_hat.data[~wm] == 0)
    assert np.all(att.gamma.data[~pm] == 0)
    gamma_real = att.gamma.data[pm]
    assert np.all((gamma_real > 0) & (gamma_real < 1))


def test_context_is_beta_hat_weighted_word_states(small):
    ids, wm, pm = random_channel(np.random.default_rng(7))
    enc, out = run_step(small, ids, wm, pm)
    expected = np.einsum("bij,bijd->bd", out.attention.beta_hat.data, enc.W.data)
    np.testing.assert_allclose(out.attention.context.data, expected, atol=1e-12)


def test_saturated_post_gate_leaves_beta_unchanged(small):
    small["attn_gamma.w_key"].data[:] = 0
    small["attn_gamma.b_query"].data[:] = 100
    small["attn_gamma.v"].data[:] = 100
    ids, wm, pm = random_channel(np.random.default_rng(8))
    _, out = run_step(small, ids, wm, pm)
    assert np.all(out.attention.gamma.data[pm] == 1.0)
    np.testing.assert_array_equal(out.attention.beta_hat.data, out.attention.beta.data)


def test_stop_prob_in_open_interval(small):
    ids, wm, pm = random_channel(np.random.default_rng(9))
    _, out = run_step(small, ids, wm, pm)
    assert np.all((out.stop_prob > 0) & (out.stop_prob < 1))
    assert np.all(np.isfinite(out.thread_rep.data))
    assert out.thread_rep.shape == (2, small.config.d)


def test_alpha_hat_is_a_distribution_at_every_step(small):
    ids, wm, pm = random_channel(np.random.default_rng(10))
    enc, out = run_step(small, ids, wm, pm)
    dec = decode_sentence(out.thread_rep, out.attention, enc, small, record_attention=True)
    assert 1 <= len(dec.alpha_hat) <= small.config.q_max
    flat = wm.reshape(2, -1)
    for a in dec.alpha_hat:
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(a[~flat] == 0)


def test_one_hot_beta_hat_puts_all_word_attention_on_that_post(small):
    ids, wm, pm = random_channel(np.random.default_rng(11))
    enc, out = run_step(small, ids, wm, pm)
    B, n, p = wm.shape
    one_hot = np.zeros((B, n, p))
    one_hot[:, 2, 0] = 0.7
    att = AttentionState(
        gamma=out.attention.gamma,
        beta=out.attention.beta,
        beta_hat=Tensor(one_hot),
        context=out.attention.context,
        log_beta_hat=Tensor(np.zeros((B, n * p))),
    )
    dec = decode_sentence(out.thread_rep, att, enc, small, record_attention=True)
    for a in dec.alpha_hat:
        per_post = a.reshape(B, n, p).sum(axis=2)
        np.testing.assert_allclose(per_post[:, 2], 1.0, atol=1e-12)


def test_teacher_forced_logits_shape(small):
    ids, wm, pm = random_channel(np.random.default_rng(12))
    enc, out = run_step(small, ids, wm, pm)
    targets = np.array([[5, 6, 3, 0], [7, 3, 0, 0]])
    dec = decode_sentence(out.thread_rep, out.attention, enc, small, targets=targets)
    assert dec.logits.shape == (2, 4, VOCAB)


def toy_codec():
    return build_codec(["alpha beta gamma delta .", "epsilon zeta eta theta ."], max_size=VOCAB - 4)


def test_greedy_output_never_exceeds_caps():
    codec = toy_codec()
    cfg = ModelConfig(d=5, vocab_size=len(codec.vocab), q_max=15, k_max=4)
    for seed in range(5):
        params = init_parameters(cfg, seed=seed)
        params["D_w2w.out.b"].data[3] = -50.0  # EOS never wins: length cap binds
        (trace,) = summarize_batch([["alpha beta", "gamma delta ."]], params, codec)
        assert len(trace.sentences) <= cfg.k_max
        assert all(len(t) <= 15 for t in trace.token_ids)
        assert max(len(t) for t in trace.token_ids) == 15


def test_stop_fires_at_first_step_gives_one_sentence():
    codec = toy_codec()
    params = init_parameters(ModelConfig(d=5, vocab_size=len(codec.vocab), k_max=4))
    params["stop.b"].data[:] = 10.0
    assert len(summarize(["alpha beta", "zeta eta"], params, codec)) == 1


def test_stop_at_exactly_half_continues_to_cap():
    codec = toy_codec()
    params = init_parameters(ModelConfig(d=5, vocab_size=len(codec.vocab), k_max=4))
    params["stop.w"].data[:] = 0.0
    params["stop.b"].data[:] = 0.0
    trace = summarize_batch([["alpha beta", "zeta eta"]], params, codec)[0]
    assert trace.stop_probs == [0.5] * 4
    assert len(trace.sentences) == 4


def test_empty_post_list_is_rejected():
    codec = toy_codec()
    params = init_parameters(ModelConfig(d=5, vocab_size=len(codec.vocab)))
    with pytest.raises(DataError):
        summarize([], params, codec)


def test_batched_summaries_match_single_runs():
    codec = toy_codec()
    params = init_parameters(ModelConfig(d=5, vocab_size=len(codec.vocab), k_max=3), seed=3)
    channels = [["alpha beta", "gamma"], ["eta theta zeta .", "alpha", "delta delta"]]
    batched = summarize_batch(channels, params, codec)
    for posts, trace in zip(channels, batched):
        assert summarize(posts, params, codec) == trace.sentences


def test_init_statistics():
    cfg = ModelConfig(d=40, vocab_size=400)
    params = init_parameters(cfg, seed=0)
    emb = params["embeddings.weight"].data
    assert abs(emb.std() - 0.1) < 0.005 and abs(emb.mean()) < 0.005
    b = params["D_w2w.b"].data
    assert np.all(b[40:80] == 1.0) and np.all(b[:40] == 0) and np.all(b[80:] == 0)
    assert np.all(params["D_t2t.prev_word0"].data == 0)


def test_parameter_groups_cover_everything():
    params = init_parameters(ModelConfig(d=3, vocab_size=10))
    assert sum(len(params.group(g)) for g in GROUPS) == len(params)
    params.set_frozen(DEFAULT_FREEZE)
    assert {n.split(".")[0] for n in params.trainable()} == {"D_w2w", "attn_gamma", "attn_beta", "attn_alpha"}
    assert not params["embeddings.weight"].requires_grad
    with pytest.raises(ConfigError):
        params.set_frozen(["decoder"])


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(d=0)
    with pytest.raises(ConfigError):
        ModelConfig(dropout_rate=1.0)
    cfg = ModelConfig()
    assert (cfg.p_max, cfg.q_max, cfg.n_max, cfg.k_max) == (20, 15, 25, 5)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_checkpoint_round_trip(tmp_path):
    codec = toy_codec()
    params = init_parameters(ModelConfig(d=4, vocab_size=len(codec.vocab)), seed=5)
    params.set_frozen(["embeddings", "stop"])
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, params, codec)
    assert [p.name for p in tmp_path.iterdir()] == ["m.ckpt"]
    loaded, codec2, manifest = load_checkpoint(path)
    assert codec2.vocab.tokens == codec.vocab.tokens and codec2.bpe is None
    assert loaded.frozen == {"embeddings", "stop"}
    for name, t in params.items():
        np.testing.assert_array_equal(loaded[name].data, t.data)
    entry = next(e for e in manifest["tensors"] if e["name"] == "D_w2w.out.w")
    assert entry["shape"] == [12, len(codec.vocab)] and entry["group"] == "D_w2w"


def test_checkpoint_shape_mismatch_is_rejected(tmp_path):
    codec = toy_codec()
    params = init_parameters(ModelConfig(d=4, vocab_size=len(codec.vocab)))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, params, codec)
    with zipfile.ZipFile(path) as zf:
        items = {n: zf.read(n) for n in zf.namelist()}
    manifest = json.loads(items["manifest.json"])
    manifest["model_config"]["d"] = 5
    items["manifest.json"] = json.dumps(manifest).encode()
    with zipfile.ZipFile(path, "w") as zf:
        for n, data in items.items():
            zf.writestr(n, data)
    with pytest.raises(DataError, match="shape"):
        load_checkpoint(path)


def test_checkpoint_garbage_file(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"not a zip")
    with pytest.raises(DataError):
        load_checkpoint(path)
