import math

import numpy as np
import pytest

from cubenmt.model import (
    BOS, EOS, NORMALIZED, SELF_NORMALIZED, UNK, Dims, InputError, ModelParams, SourceEncoding,
    VocabError, Vocabulary, attention, decode_step, encode, gru_step, init_decoder_state,
)
from cubenmt.numerics import DimensionError

from conftest import random_params


def gru_oracle(Wx, Wh, b, x, h):
    """Scalar-loop GRU in float64: update z, reset r, candidate n, h' = (1-z) h + z n."""
    Wx, Wh, b, x, h = (np.asarray(a, dtype=np.float64) for a in (Wx, Wh, b, x, h))
    H = h.shape[0]
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    z = [sig(sum(x[i] * Wx[i, k] for i in range(x.size)) + sum(h[i] * Wh[i, k] for i in range(H)) + b[k])
         for k in range(H)]
    r = [sig(sum(x[i] * Wx[i, H + k] for i in range(x.size)) + sum(h[i] * Wh[i, H + k] for i in range(H))
             + b[H + k]) for k in range(H)]
    out = []
    for k in range(H):
        a = sum(x[i] * Wx[i, 2 * H + k] for i in range(x.size)) + b[2 * H + k]
        a += sum(r[i] * h[i] * Wh[i, 2 * H + k] for i in range(H))
        n = math.tanh(a)
        out.append((1 - z[k]) * h[k] + z[k] * n)
    return np.array(out)


def test_vocabulary_bijection_and_reserved():
    v = Vocabulary.build(["a", "b", "a", "c"])
    assert v.tokens[:3] == ["<bos>", "<eos>", "<unk>"]
    assert (v.lookup("<bos>"), v.lookup("<eos>"), v.lookup("<unk>")) == (BOS, EOS, UNK)
    for i in range(len(v)):
        assert v.lookup(v.token(i)) == i
    assert v.lookup("zzz") == UNK
    assert v.decode(v.encode(["a", "c"]) + [EOS, 3]) == ["a", "c"]
    with pytest.raises(VocabError):
        Vocabulary(["a", "<eos>", "<unk>"])
    with pytest.raises(VocabError):
        Vocabulary(["<bos>", "<eos>", "<unk>", "x", "x"])


def test_gru_zero_weights():
    H, E = 3, 2
    W = (np.zeros((E, 3 * H), np.float32), np.zeros((H, 3 * H), np.float32), np.zeros(3 * H, np.float32))
    prev = np.array([0.4, -1.0, 2.0], np.float32)
    np.testing.assert_allclose(gru_step(W, np.ones(E, np.float32), prev), 0.5 * prev)
    np.testing.assert_array_equal(gru_step(W, np.zeros(E, np.float32), np.zeros(H, np.float32)), 0.0)


def test_gru_matches_scalar_oracle():
    rng = np.random.default_rng(11)
    E, H = 4, 5
    Wx = rng.uniform(-1, 1, (E, 3 * H)).astype(np.float32)
    Wh = rng.uniform(-1, 1, (H, 3 * H)).astype(np.float32)
    b = rng.uniform(-1, 1, 3 * H).astype(np.float32)
    x = rng.uniform(-1, 1, E).astype(np.float32)
    h = rng.uniform(-1, 1, H).astype(np.float32)
    np.testing.assert_allclose(gru_step((Wx, Wh, b), x, h), gru_oracle(Wx, Wh, b, x, h), atol=1e-5)


def test_gru_shape_error():
    W = (np.zeros((2, 9)), np.zeros((3, 9)), np.zeros(9))
    with pytest.raises(DimensionError):
        gru_step(W, np.zeros(4), np.zeros(3))


def test_params_shapes_and_immutability(tiny_params):
    d = tiny_params.dims
    assert tiny_params["src_emb"].shape == (d.src_vocab, d.d_emb)
    assert tiny_params["out_W"].shape == (d.d_out, d.tgt_vocab)
    with pytest.raises(ValueError):
        tiny_params["out_W"][0, 0] = 1.0
    bad = tiny_params.to_dict()
    bad["att_v"] = np.zeros(d.d_att + 1)
    with pytest.raises(DimensionError):
        ModelParams(d, bad)


def test_encode_shapes(tiny_params):
    enc = encode(tiny_params, [3])
    assert enc.states.shape == (1, 2 * tiny_params.dims.d_hid)
    # one step each way from a zero state
    fwd = gru_step(tiny_params.gru("enc_fwd"), tiny_params["src_emb"][3], np.zeros(5, np.float32))
    bwd = gru_step(tiny_params.gru("enc_bwd"), tiny_params["src_emb"][3], np.zeros(5, np.float32))
    np.testing.assert_array_equal(enc.states[0], np.concatenate([fwd, bwd]))
    for n in (2, 5, 9):
        assert len(encode(tiny_params, [3] * n)) == n


def test_encode_reversal_with_tied_directions():
    p = random_params(seed=3)
    t = p.to_dict()
    for k in ("Wx", "Wh", "b"):
        t[f"enc_bwd_{k}"] = t[f"enc_fwd_{k}"]
    p = ModelParams(p.dims, t)
    H = p.dims.d_hid
    src = [3, 5, 4, 6]
    a = encode(p, src).states
    b = encode(p, src[::-1]).states
    swapped = np.concatenate([a[:, H:], a[:, :H]], axis=1)[::-1]
    np.testing.assert_allclose(b, swapped, atol=1e-6)
    pal = encode(p, [3, 5, 3]).states
    np.testing.assert_allclose(pal, np.concatenate([pal[:, H:], pal[:, :H]], axis=1)[::-1], atol=1e-6)


def test_encode_errors(tiny_params):
    with pytest.raises(InputError):
        encode(tiny_params, [])
    with pytest.raises(VocabError):
        encode(tiny_params, [tiny_params.dims.src_vocab])


def test_attention_cases(tiny_params):
    p = tiny_params
    q = np.full(p.dims.d_hid, 0.3, np.float32)
    enc = encode(p, [4])
    ctx, w = attention(p, enc, q)
    np.testing.assert_allclose(w, [1.0])
    np.testing.assert_allclose(ctx, enc.states[0], atol=1e-7)

    row = enc.states[0]
    states = np.stack([row] * 4)
    same = SourceEncoding(states, states @ p["att_U"] + p["att_b"])
    _, w = attention(p, same, q)
    np.testing.assert_allclose(w, 0.25, atol=1e-7)


def test_attention_matches_direct_formula(tiny_params):
    p = tiny_params
    enc = encode(p, [3, 6, 4, 5])
    q = np.random.default_rng(2).uniform(-1, 1, p.dims.d_hid).astype(np.float32)
    h = enc.states.astype(np.float64)
    W, U, ba, v = (p[k].astype(np.float64) for k in ("att_W", "att_U", "att_b", "att_v"))
    r = np.array([v @ np.tanh(W.T @ q + U.T @ h[i] + ba) for i in range(len(h))])
    alpha = np.exp(r) / np.exp(r).sum()
    ctx, w = attention(p, enc, q)
    np.testing.assert_allclose(w, alpha, atol=1e-5)
    np.testing.assert_allclose(ctx, alpha @ h, atol=1e-5)
    assert abs(float(w.sum()) - 1.0) <= 1e-6


def test_decode_step_modes(tiny_params):
    p = tiny_params
    enc = encode(p, [3, 4, 5])
    s0 = init_decoder_state(p, enc)
    norm = decode_step(p, enc, BOS, s0, NORMALIZED)
    sn = decode_step(p, enc, BOS, s0, SELF_NORMALIZED)
    assert abs(float(np.exp(-norm.word_nll.astype(np.float64)).sum()) - 1.0) <= 1e-5
    np.testing.assert_array_equal(sn.word_nll, -sn.scores)
    np.testing.assert_array_equal(norm.scores, sn.scores)
    assert list(np.argsort(norm.word_nll, kind="stable")) == list(np.argsort(sn.word_nll, kind="stable"))
    assert abs(float(norm.attention_weights.sum()) - 1.0) <= 1e-6
    assert np.all(norm.word_nll >= 0)
    np.testing.assert_array_equal(norm.next_state, sn.next_state)
    with pytest.raises(VocabError):
        decode_step(p, enc, p.dims.tgt_vocab, s0)
    with pytest.raises(ValueError):
        decode_step(p, enc, BOS, s0, "bogus")


def test_decode_step_cgru_composition(tiny_params):
    p = tiny_params
    enc = encode(p, [3, 4])
    s0 = init_decoder_state(p, enc)
    out = decode_step(p, enc, 4, s0)
    e = p["tgt_emb"][4]
    mid = gru_step(p.gru("dec_gru1"), e, s0)
    ctx, alpha = attention(p, enc, mid)
    s = gru_step(p.gru("dec_gru2"), ctx, mid)
    o = np.concatenate([e, ctx, s]) @ p["read_W"] + p["read_b"]
    o = o @ p["out_W"] + p["out_b"]
    np.testing.assert_array_equal(out.next_state, s)
    np.testing.assert_array_equal(out.attention_weights, alpha)
    np.testing.assert_allclose(out.scores, o, rtol=1e-6)


def test_init_state_properties(tiny_params):
    enc = encode(tiny_params, [3, 5, 6])
    a = init_decoder_state(tiny_params, enc)
    b = init_decoder_state(tiny_params, encode(tiny_params, [3, 5, 6]))
    np.testing.assert_array_equal(a, b)
    assert a.shape == (tiny_params.dims.d_hid,)
    assert np.all(np.abs(a) < 1.0)
    ref = np.tanh(enc.states[0] @ tiny_params["init_W"] + tiny_params["init_b"])
    np.testing.assert_array_equal(a, ref)


def test_determinism_bitwise(tiny_params):
    def run():
        enc = encode(tiny_params, [6, 3, 4])
        s = init_decoder_state(tiny_params, enc)
        outs = []
        for w in (BOS, 4, 5):
            o = decode_step(tiny_params, enc, w, s)
            outs.append(o.word_nll.tobytes() + o.next_state.tobytes())
            s = o.next_state
        return outs
    assert run() == run()
