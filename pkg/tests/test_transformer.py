import dataclasses
import numpy as np
import pytest
from scipy.special import log_softmax
from helpers.errors import ShapeMismatch
from model import autodiff as ad
from model import transformer
from model.transformer import AttentionBiasBundle, ModelConfig, ModelParams, Transformer
from preprocess.priors import IntraBiasMode
from preprocess.vocab import BOS_ID, EOS_ID, PAD_ID
from train import batches
from corpora import tiny_config


def toy_batch(toy_records, toy_vocab, model, n=2):
    examples = batches.examples_from_records(toy_records[:n], toy_vocab, model.config.intra_config())
    return batches.collate(examples)


def random_inputs(rng, vocab_size, batch_size=2, max_len=10):
    """
    Random padded ids with random intra and cross biases; targets hold at least one token.

    :return: (src_ids, tgt_in, tgt_out, AttentionBiasBundle)
    """
    bodies = [rng.integers(4, vocab_size, size=rng.integers(1, max_len)) for _ in range(batch_size)]
    src_ids, src_pad = transformer.pad_ids([rng.integers(4, vocab_size, size=rng.integers(1, max_len + 1))
                                            for _ in range(batch_size)])
    tgt_in, tgt_pad = transformer.pad_ids([np.concatenate([[BOS_ID], body]) for body in bodies])
    tgt_out, _ = transformer.pad_ids([np.concatenate([body, [EOS_ID]]) for body in bodies], tgt_in.shape[1])
    n_src, n_tgt = src_ids.shape[1], tgt_in.shape[1]
    bundle = AttentionBiasBundle(src_pad=src_pad, tgt_pad=tgt_pad, intra=rng.normal(size=(batch_size, n_src, n_src)),
                                 cross=rng.random((batch_size, n_tgt, n_src)))
    return src_ids, tgt_in, tgt_out, bundle


def sequence_loss(model, inputs):
    src_ids, tgt_in, tgt_out, bundle = inputs
    logits = model.decode(model.encode(src_ids, bundle), tgt_in, bundle)
    flat = ad.reshape(logits, (logits.shape[0] * logits.shape[1], logits.shape[2]))
    return ad.cross_entropy(flat, tgt_out.reshape(-1), PAD_ID)


# CONFIG AND PARAMETERS #

def test_config_validation():
    with pytest.raises(ShapeMismatch):
        ModelConfig(d_model=10, heads=3).validate()
    with pytest.raises(ValueError):
        ModelConfig(max_relative_distance=0).validate()
    assert ModelConfig().d_k == 32


def test_parameter_shapes():
    cfg = tiny_config(20)
    shapes = ModelParams.shapes(cfg)
    assert list(shapes)[0] == 'embedding'
    assert shapes['embedding'] == (20, 8)
    assert shapes['enc.0.self.rel_k'] == (5, 4)
    assert shapes['dec.0.self.rel_k'] == (5, 4)
    assert 'dec.0.cross.rel_k' not in shapes
    assert shapes['dec.0.ff.w1'] == (8, 16)
    # output projection is tied to the embedding
    assert not [name for name in shapes if 'out' in name or 'generator' in name]


def test_initialisation_is_seeded():
    cfg = tiny_config(12)
    first, second = ModelParams.initialise(cfg, 3), ModelParams.initialise(cfg, 3)
    other = ModelParams.initialise(cfg, 4)
    for (name, a), (_, b), (_, c) in zip(first, second, other):
        np.testing.assert_array_equal(a.data, b.data)
        if name.endswith('gain'):
            assert np.all(a.data == 1.0)
        elif name.endswith('bias') or name.endswith('b1') or name.endswith('b2'):
            assert np.all(a.data == 0.0)
        else:
            assert not np.array_equal(a.data, c.data)
    assert first.count() == sum(int(np.prod(s)) for s in ModelParams.shapes(cfg).values())


# ATTENTION #

def test_relative_index_clips():
    np.testing.assert_array_equal(transformer.relative_index(3, 3, 1), [[1, 2, 2], [0, 1, 2], [0, 0, 1]])
    np.testing.assert_array_equal(transformer.relative_index(1, 4, 2), [[2, 3, 4, 4]])


def test_offsets_past_the_clip_share_an_embedding():
    rng = np.random.default_rng(2)
    q, rel = ad.tensor(rng.normal(size=(1, 8, 3))), ad.tensor(rng.normal(size=(9, 3)))
    out = transformer.relative_position_logits(q, rel, 4).data
    # query 7: key 3 sits at offset -4, key 0 at offset -7, key 4 at offset -3
    assert out[0, 7, 3] == out[0, 7, 0]
    assert out[0, 7, 3] != out[0, 7, 4]


def test_zero_relative_embeddings_leave_attention_unchanged():
    rng = np.random.default_rng(3)
    q, k, v = (ad.tensor(rng.normal(size=(2, 4, 3))) for _ in range(3))
    rel = transformer.relative_position_logits(q, ad.tensor(np.zeros((5, 3))), 2)
    np.testing.assert_array_equal(rel.data, np.zeros((2, 4, 4)))
    np.testing.assert_array_equal(transformer.attention(q, k, v, rel_logits=rel).data,
                                  transformer.attention(q, k, v).data)


def test_relative_logits_by_hand():
    q = ad.tensor(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
    # rows for offsets -1, 0 and +1
    rel = ad.tensor(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]))
    np.testing.assert_array_equal(transformer.relative_position_logits(q, rel, 1).data,
                                  [[3.0, 5.0, 5.0], [2.0, 4.0, 6.0], [3.0, 3.0, 7.0]])


@pytest.mark.parametrize('bias', [0.0, 10.0, -50.0])
def test_single_key_returns_its_value(bias):
    rng = np.random.default_rng(4)
    q, k, v = (ad.tensor(rng.normal(size=(1, 1, 4))) for _ in range(3))
    out = transformer.attention(q, k, v, bias=np.full((1, 1, 1), bias)).data
    np.testing.assert_array_equal(out, v.data)


def test_bias_on_one_key_closed_form():
    rng = np.random.default_rng(5)
    q, k = rng.normal(size=(1, 1, 4)), rng.normal(size=(1, 2, 4))
    # identity values read the attention weights out directly
    weights = transformer.attention(ad.tensor(q), ad.tensor(k), ad.tensor(np.eye(2)[None]),
                                    bias=np.array([[[0.0, 10.0]]])).data[0, 0]
    scores = (q[0] @ k[0].T)[0] / 2.0
    expected = np.exp(scores + [0.0, 10.0]) / np.exp(scores + [0.0, 10.0]).sum()
    np.testing.assert_allclose(weights, expected, rtol=1e-12)
    assert weights[1] / weights[0] == pytest.approx(np.exp(10.0 + scores[1] - scores[0]), rel=1e-12)


def test_zero_bias_leaves_attention_unchanged():
    rng = np.random.default_rng(0)
    q, k, v = (ad.tensor(rng.normal(size=(2, 3, 4))) for _ in range(3))
    plain = transformer.attention(q, k, v).data
    zeroed = transformer.attention(q, k, v, bias=np.zeros((2, 3, 3))).data
    np.testing.assert_array_equal(plain, zeroed)
    biased = transformer.attention(q, k, v, bias=np.eye(3)[None]).data
    assert not np.allclose(plain, biased)


def test_masked_keys_do_not_matter():
    rng = np.random.default_rng(1)
    q, k = ad.tensor(rng.normal(size=(1, 2, 4))), ad.tensor(rng.normal(size=(1, 3, 4)))
    values = rng.normal(size=(1, 3, 4))
    mask = np.array([[False, False, True]])
    first = transformer.attention(q, k, ad.tensor(values), mask=mask).data
    values[0, 2] = 100.0
    second = transformer.attention(q, k, ad.tensor(values), mask=mask).data
    np.testing.assert_allclose(first, second, atol=1e-12)


def test_attention_shape_errors():
    with pytest.raises(ShapeMismatch):
        transformer.attention(ad.tensor(np.ones((2, 3))), ad.tensor(np.ones((2, 4))), ad.tensor(np.ones((2, 4))))
    with pytest.raises(ShapeMismatch):
        transformer.attention(ad.tensor(np.ones((2, 3))), ad.tensor(np.ones((2, 3))), ad.tensor(np.ones((2, 3))),
                              bias=np.ones((3, 3)))


def test_causal_mask():
    np.testing.assert_array_equal(AttentionBiasBundle.causal_mask(3),
                                  [[False, True, True], [False, False, True], [False, False, False]])


# ENCODER AND DECODER #

def test_forward_shapes(tiny_model, toy_records, toy_vocab):
    batch = toy_batch(toy_records, toy_vocab, tiny_model)
    memory = tiny_model.encode(batch.src_ids, batch.bundle)
    assert memory.shape == batch.src_ids.shape + (8,)
    logits = tiny_model.decode(memory, batch.tgt_in, batch.bundle)
    assert logits.shape == batch.tgt_in.shape + (len(toy_vocab),)


def test_empty_input(tiny_model):
    bundle = AttentionBiasBundle(src_pad=np.zeros((1, 0), dtype=bool))
    with pytest.raises(transformer.EmptyInput):
        tiny_model.encode(np.zeros((1, 0), dtype=np.int64), bundle)


def test_decoder_is_causal():
    rng = np.random.default_rng(6)
    model = Transformer(tiny_config(20, layers_enc=2, layers_dec=2))
    for _ in range(100):
        src_ids, tgt_in, _, bundle = random_inputs(rng, 20, batch_size=1)
        memory = model.encode(src_ids, bundle)
        before = model.decode(memory, tgt_in, bundle).data
        length = tgt_in.shape[1]
        t = int(rng.integers(0, length - 1))
        changed = tgt_in.copy()
        changed[0, t + 1:] = rng.integers(4, 20, size=length - t - 1)
        after = model.decode(memory, changed, bundle).data
        np.testing.assert_array_equal(before[:, :t + 1], after[:, :t + 1])


def test_teacher_forced_likelihood_matches_step_by_step():
    rng = np.random.default_rng(8)
    model = Transformer(tiny_config(20, layers_enc=2, layers_dec=2))
    src_ids, tgt_in, tgt_out, bundle = random_inputs(rng, 20, batch_size=1)
    # what decoding sees: no cross bias
    inference = AttentionBiasBundle(src_pad=bundle.src_pad, intra=bundle.intra)
    memory = model.encode(src_ids, inference)
    full = log_softmax(model.decode(memory, tgt_in, inference).data[0], axis=-1)
    teacher_forced = sum(full[t, tgt_out[0, t]] for t in range(tgt_out.shape[1]))
    stepwise = 0.0
    for t in range(tgt_out.shape[1]):
        logits = model.decode_step(memory, tgt_in[:, :t + 1], inference).data[0]
        stepwise += log_softmax(logits)[tgt_out[0, t]]
    assert abs(teacher_forced - stepwise) < 1e-10


def test_loss_is_permutation_equivariant_across_the_batch():
    rng = np.random.default_rng(7)
    model = Transformer(tiny_config(20, layers_enc=2, layers_dec=2))
    src_ids, tgt_in, tgt_out, bundle = random_inputs(rng, 20, batch_size=4)
    order = np.array([2, 0, 3, 1])
    shuffled = AttentionBiasBundle(src_pad=bundle.src_pad[order], tgt_pad=bundle.tgt_pad[order],
                                   intra=bundle.intra[order], cross=bundle.cross[order])
    logits = model.decode(model.encode(src_ids, bundle), tgt_in, bundle).data
    shuffled_logits = model.decode(model.encode(src_ids[order], shuffled), tgt_in[order], shuffled).data
    np.testing.assert_allclose(shuffled_logits, logits[order], rtol=0, atol=1e-12)
    loss = sequence_loss(model, (src_ids, tgt_in, tgt_out, bundle)).item()
    shuffled_loss = sequence_loss(model, (src_ids[order], tgt_in[order], tgt_out[order], shuffled)).item()
    assert shuffled_loss == pytest.approx(loss, rel=1e-12)


def test_decode_step_is_last_position(tiny_model, toy_records, toy_vocab):
    batch = toy_batch(toy_records, toy_vocab, tiny_model, n=1)
    bundle = AttentionBiasBundle(src_pad=batch.bundle.src_pad, intra=batch.bundle.intra)
    memory = tiny_model.encode(batch.src_ids, bundle)
    prefix = batch.tgt_in[:, :4]
    full = tiny_model.decode(memory, prefix, bundle).data
    step = tiny_model.decode_step(memory, prefix, bundle).data
    np.testing.assert_allclose(step, full[:, -1], atol=1e-12)


def test_source_padding_does_not_change_outputs(tiny_model, toy_records, toy_vocab):
    alone = toy_batch(toy_records[5:6], toy_vocab, tiny_model, n=1)
    src = np.concatenate([alone.src_ids, np.full((1, 3), PAD_ID)], axis=1)
    n_src = src.shape[1]
    intra = np.zeros((1, n_src, n_src))
    intra[:, :alone.src_ids.shape[1], :alone.src_ids.shape[1]] = alone.bundle.intra
    padded = AttentionBiasBundle(src_pad=src == PAD_ID, intra=intra)

    short = tiny_model.decode(tiny_model.encode(alone.src_ids, alone.bundle), alone.tgt_in,
                              AttentionBiasBundle(src_pad=alone.bundle.src_pad)).data
    long = tiny_model.decode(tiny_model.encode(src, padded), alone.tgt_in, AttentionBiasBundle(src_pad=padded.src_pad))
    np.testing.assert_allclose(short, long.data, atol=1e-10)


def test_zero_lambda_matches_bias_off(toy_records, toy_vocab):
    params = ModelParams.initialise(tiny_config(len(toy_vocab)), 0)
    zero = Transformer(tiny_config(len(toy_vocab), lambda_intra=0.0), params)
    off = Transformer(tiny_config(len(toy_vocab), bias_mode=IntraBiasMode.Off), params)
    batch = toy_batch(toy_records, toy_vocab, zero)
    np.testing.assert_array_equal(zero.encode(batch.src_ids, batch.bundle).data,
                                  off.encode(batch.src_ids, batch.bundle).data)
    on = Transformer(tiny_config(len(toy_vocab), lambda_intra=2.0), params)
    assert not np.allclose(on.encode(batch.src_ids, batch.bundle).data, off.encode(batch.src_ids, batch.bundle).data)


def test_cross_bias_must_match_decoder_length(tiny_model, toy_records, toy_vocab):
    batch = toy_batch(toy_records, toy_vocab, tiny_model)
    memory = tiny_model.encode(batch.src_ids, batch.bundle)
    bundle = AttentionBiasBundle(src_pad=batch.bundle.src_pad, cross=batch.bundle.cross)
    with pytest.raises(ShapeMismatch):
        tiny_model.decode(memory, batch.tgt_in[:, :3], bundle)


def test_dropout_follows_the_seed(toy_records, toy_vocab):
    model = Transformer(tiny_config(len(toy_vocab), dropout=0.3))
    batch = toy_batch(toy_records, toy_vocab, model)
    runs = []
    for seed in (1, 1, 2):
        model.train_mode(seed)
        runs.append(model.encode(batch.src_ids, batch.bundle).data)
    np.testing.assert_array_equal(runs[0], runs[1])
    assert not np.array_equal(runs[0], runs[2])
    model.eval_mode()
    np.testing.assert_array_equal(model.encode(batch.src_ids, batch.bundle).data,
                                  model.encode(batch.src_ids, batch.bundle).data)


def test_pad_ids():
    ids, mask = transformer.pad_ids([np.array([5, 6, 7]), np.array([8])])
    assert ids.tolist() == [[5, 6, 7], [8, 0, 0]]
    assert mask.tolist() == [[False, False, False], [False, True, True]]


def central_difference(loss_fn, param, idx, step):
    old = param.data[idx]
    param.data[idx] = old + step
    with ad.no_grad():
        up = loss_fn().item()
    param.data[idx] = old - step
    with ad.no_grad():
        down = loss_fn().item()
    param.data[idx] = old
    return (up - down) / (2 * step)


def matches_finite_difference(analytic, loss_fn, param, idx):
    # a difference that straddles a relu kink is retried with a smaller step
    return any(analytic == pytest.approx(central_difference(loss_fn, param, idx, step), rel=1e-3, abs=1e-8)
               for step in (1e-5, 1e-6))


@pytest.mark.slow
@pytest.mark.parametrize('seed', range(5))
def test_model_gradients_match_finite_differences(seed):
    model = Transformer(tiny_config(20, layers_enc=2, layers_dec=2, init_seed=seed))
    inputs = random_inputs(np.random.default_rng(seed), 20)
    assert max(inputs[0].shape[1], inputs[1].shape[1]) <= 10

    model.params.zero_grad()
    ad.backward(sequence_loss(model, inputs), [t for _, t in model.params])
    failures = [(name, idx) for name, param in model.params for idx in np.ndindex(*param.data.shape)
                if not matches_finite_difference(param.grad[idx], lambda: sequence_loss(model, inputs), param, idx)]
    assert not failures


def test_zero_priors_reduce_to_a_vanilla_transformer():
    rng = np.random.default_rng(9)
    for trial in range(100):
        cfg = tiny_config(20, layers_enc=2, layers_dec=2, init_seed=trial)
        params = ModelParams.initialise(cfg)
        for name, t in params:
            if name.endswith('rel_k'):
                t.data[:] = 0.0
        biased = Transformer(dataclasses.replace(cfg, lambda_intra=0.0, lambda_cross=0.0), params)
        vanilla = Transformer(dataclasses.replace(cfg, bias_mode=IntraBiasMode.Off, relative_positions=False), params)
        src_ids, tgt_in, _, bundle = random_inputs(rng, 20, batch_size=int(rng.integers(1, 4)))
        bare = AttentionBiasBundle(src_pad=bundle.src_pad, tgt_pad=bundle.tgt_pad)

        memory, vanilla_memory = biased.encode(src_ids, bundle), vanilla.encode(src_ids, bare)
        np.testing.assert_array_equal(memory.data, vanilla_memory.data)
        np.testing.assert_array_equal(biased.decode(memory, tgt_in, bundle).data,
                                      vanilla.decode(vanilla_memory, tgt_in, bare).data)
