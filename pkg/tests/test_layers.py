import numpy as np
import pytest

from oracles import affine_loops, lstm_step_scalar
from stagger.corpus import LabeledSequence, build_vocab
from stagger.errors import ConfigError, DimensionError, DomainError
from stagger.layers import (
    GATES,
    AttentionParams,
    Embeddings,
    LstmParams,
    LstmState,
    ProjectionParams,
    attention,
    attention_backward,
    attention_forward,
    bilstm_backward,
    bilstm_encode,
    bilstm_forward,
    char_encode,
    dropout,
    embed_backward,
    embed_forward,
    embed_token,
    emission_scores,
    lstm_backward,
    lstm_forward,
    lstm_step,
    projection_backward,
)
from stagger.numeric import ParamTensor, SeededRng, finite_diff_grad, max_relative_error

GRAD_DRAWS = 20
TOL = 1e-4


@pytest.fixture
def vocab():
    seq = LabeledSequence(("Acme", "Tools", "ab", "a"), "BIOO")
    return build_vocab([seq])


def randomize(tensors, rng, scale=0.7):
    for t in tensors:
        t.value[...] = rng.normal(0.0, scale, size=t.shape)


def test_embed_token_known_and_unknown(vocab):
    emb = Embeddings(vocab.n_words, vocab.n_chars, rng=SeededRng(0))
    v = embed_token(vocab, emb, "Acme")
    assert v.shape == (125,)
    assert np.array_equal(v[:100], emb.word.value[vocab.word_id("Acme")])
    u = embed_token(vocab, emb, "Zeta")
    assert np.array_equal(u[:100], emb.word.value[vocab.UNK_ID])
    w = embed_token(vocab, emb, "bbb")
    assert np.array_equal(w[:100], u[:100])
    assert not np.allclose(u[100:], w[100:])


def test_char_encode(vocab):
    emb = Embeddings(vocab.n_words, vocab.n_chars, rng=SeededRng(1))
    table = emb.char.value
    a, b = vocab.chars["a"], vocab.chars["b"]
    assert np.array_equal(char_encode(table, vocab, "a"), table[a])
    np.testing.assert_allclose(char_encode(table, vocab, "aa"), char_encode(table, vocab, "a"), rtol=0, atol=0)
    np.testing.assert_allclose(char_encode(table, vocab, "ab"), (table[a] + table[b]) / 2, rtol=0, atol=1e-15)
    with pytest.raises(DomainError):
        char_encode(table, vocab, "")


def test_embedding_dims_and_padding_row(vocab):
    emb = Embeddings(vocab.n_words, vocab.n_chars, 100, 25, SeededRng(2))
    assert emb.word.shape == (vocab.n_words, 100)
    assert emb.char.shape == (vocab.n_chars, 25)
    assert not emb.word.value[0].any()


def test_dropout_identities():
    rng = SeededRng(0)
    v = rng.normal(size=50)
    assert np.array_equal(dropout(v, 0.0, rng, True), v)
    assert np.array_equal(dropout(v, 0.0, rng, False), v)
    assert dropout(v, 0.9, rng, False) is not None
    assert np.array_equal(dropout(v, 0.9, rng, False), v)
    with pytest.raises(ConfigError):
        dropout(v, 1.0, rng, True)


def test_dropout_law_of_large_numbers():
    rng = SeededRng(11)
    v = np.ones(100_000)
    out = dropout(v, 0.2, rng, True)
    survive = np.mean(out != 0)
    assert abs(survive - 0.8) <= 0.01
    assert abs(out.mean() - 1.0) <= 0.02
    assert set(np.unique(out)) <= {0.0, 1.25}


def test_lstm_step_all_zero():
    p = LstmParams("l", 3, 4)
    s = lstm_step(p, np.ones(3), p.zeros_state())
    assert not s.h.any() and not s.c.any()
    c0 = np.array([0.3, -1.0, 2.0, 0.0])
    s = lstm_step(p, np.ones(3), LstmState(np.zeros(4), c0))
    np.testing.assert_allclose(s.c, 0.5 * c0, rtol=0, atol=1e-15)
    np.testing.assert_allclose(s.h, 0.5 * np.tanh(0.5 * c0), rtol=0, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_lstm_step_matches_scalar_oracle(seed):
    rng = SeededRng(seed)
    D, H = 4, 3
    p = LstmParams("l", D, H)
    randomize(p.tensors(), rng)
    x, h, c = rng.normal(size=D), rng.normal(size=H), rng.normal(size=H)
    Wx = {g: p.gate(p.W_x, g).tolist() for g in GATES}
    Wh = {g: p.gate(p.W_h, g).tolist() for g in GATES}
    bias = {g: p.gate(p.b, g).tolist() for g in GATES}
    peep = {"i": p.peep[0].tolist(), "f": p.peep[1].tolist(), "o": p.peep[2].tolist()}
    h_ref, c_ref = lstm_step_scalar(Wx, Wh, peep, bias, x.tolist(), h.tolist(), c.tolist())
    s = lstm_step(p, x, LstmState(h, c))
    np.testing.assert_allclose(s.h, h_ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(s.c, c_ref, rtol=0, atol=1e-12)


def test_lstm_named_tensors_are_views():
    p = LstmParams("fwd", 2, 3)
    names = [t.name for t in p.tensors()]
    assert names[:4] == ["fwd.W_xi", "fwd.W_xf", "fwd.W_xc", "fwd.W_xo"]
    assert {"fwd.w_ci", "fwd.w_cf", "fwd.w_co", "fwd.b_f"} <= set(names)
    t = {t.name: t for t in p.tensors()}
    t["fwd.W_xf"].value[...] = 7.0
    assert np.all(p.W_x[3:6] == 7.0) and not p.W_x[:3].any()
    assert sum(x.size for x in p.tensors()) == p.W_x.size + p.W_h.size + p.b.size + p.peep.size


def test_forget_bias_init():
    p = LstmParams("l", 3, 4, SeededRng(0))
    assert np.all(p.gate(p.b, "f") == 1.0)
    assert not p.gate(p.b, "i").any()


def test_lstm_gate_ranges():
    rng = SeededRng(3)
    p = LstmParams("l", 5, 6)
    randomize(p.tensors(), rng, 2.0)
    H, cache = lstm_forward(p, rng.normal(0, 3, size=(7, 5)))
    # large pre-activations may round to exactly 0 or 1 in float64
    for i, f, g, o, tc in cache.gates:
        for gate in (i, f, o):
            assert np.all((gate >= 0) & (gate <= 1))
    assert np.all(np.abs(H) <= 1)
    for t, (_, _, _, o, _) in enumerate(cache.gates):
        assert np.all(np.abs(H[t]) <= o)
    q = LstmParams("q", 5, 6)
    randomize(q.tensors(), rng, 0.5)
    _, cache = lstm_forward(q, rng.normal(size=(7, 5)))
    for i, f, g, o, tc in cache.gates:
        for gate in (i, f, o):
            assert np.all((gate > 0) & (gate < 1))


def test_lstm_shape_errors():
    p = LstmParams("l", 3, 2)
    with pytest.raises(DimensionError):
        lstm_step(p, np.ones(4), p.zeros_state())
    with pytest.raises(DimensionError):
        lstm_forward(p, np.ones((2, 4)))


def test_bilstm_single_token():
    rng = SeededRng(0)
    f, b = LstmParams("f", 3, 2, rng), LstmParams("b", 3, 2, rng)
    x = rng.normal(size=3)
    out = bilstm_encode(f, b, [x])
    expect = np.concatenate([lstm_step(f, x, f.zeros_state()).h, lstm_step(b, x, b.zeros_state()).h])
    np.testing.assert_allclose(out[0], expect, rtol=0, atol=1e-15)
    with pytest.raises(DomainError):
        bilstm_encode(f, b, np.zeros((0, 3)))


def test_bilstm_palindrome_symmetry():
    rng = SeededRng(1)
    f = LstmParams("f", 3, 4, rng)
    b = LstmParams("b", 3, 4)
    for tf, tb in zip(f.tensors(), b.tensors()):
        tb.value[...] = tf.value
    a, c, m = rng.normal(size=(3, 3))
    xs = np.stack([a, c, m, c, a])
    out = bilstm_encode(f, b, xs)
    swapped = np.concatenate([out[:, 4:], out[:, :4]], axis=1)[::-1]
    np.testing.assert_allclose(out, swapped, rtol=0, atol=1e-14)


def test_bilstm_causality():
    rng = SeededRng(2)
    f, b = LstmParams("f", 3, 4, rng), LstmParams("b", 3, 4, rng)
    xs = rng.normal(size=(5, 3))
    base = bilstm_encode(f, b, xs)
    for t in range(5):
        later = xs.copy()
        later[t + 1:] = 0.0
        np.testing.assert_array_equal(bilstm_encode(f, b, later)[t, :4], base[t, :4])
        earlier = xs.copy()
        earlier[:t] = 0.0
        np.testing.assert_array_equal(bilstm_encode(f, b, earlier)[t, 4:], base[t, 4:])


def test_attention_single_and_uniform():
    rng = SeededRng(0)
    ap = AttentionParams(4, 3, rng)
    H1 = rng.normal(size=(1, 4))
    out, w = attention(ap, H1)
    assert w.tolist() == [[1.0]]
    np.testing.assert_allclose(out[0], ap.W_m.value @ np.concatenate([H1[0], H1[0]]), rtol=0, atol=1e-14)
    ap.v.value[...] = 0.0
    H = rng.normal(size=(5, 4))
    out, w = attention(ap, H)
    np.testing.assert_allclose(w, np.full((5, 5), 0.2), rtol=0, atol=1e-15)
    C = np.tile(H.mean(axis=0), (5, 1))
    np.testing.assert_allclose(out, np.concatenate([H, C], axis=1) @ ap.W_m.value.T, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_attention_rows_are_distributions(seed):
    rng = SeededRng(seed)
    ap = AttentionParams(6, 5)
    randomize(ap.tensors(), rng, 2.0)
    n = int(rng.integers(1, 9))
    _, w = attention(ap, rng.normal(0, 2, size=(n, 6)))
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, rtol=0, atol=1e-9)


def test_attention_shape_error():
    with pytest.raises(DimensionError):
        attention(AttentionParams(4, 2), np.ones((3, 5)))


def test_emission_scores():
    pp = ProjectionParams(4, 3)
    pp.b.value[...] = [1, 2, 3]
    M = emission_scores(pp, np.random.default_rng(0).normal(size=(5, 4)))
    assert M.tolist() == [[1, 2, 3]] * 5
    eye = ProjectionParams(3, 3)
    eye.W.value[...] = np.eye(3)
    eye.b.value[...] = [0.5, 0, -1]
    F = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(emission_scores(eye, F), F + [0.5, 0, -1])
    rng = SeededRng(4)
    randomize(pp.tensors(), rng)
    F = rng.normal(size=(3, 4))
    M = emission_scores(pp, F)
    for i in range(3):
        np.testing.assert_allclose(M[i], affine_loops(pp.W.value.tolist(), F[i].tolist(), pp.b.value.tolist()), rtol=0, atol=1e-12)
    with pytest.raises(DimensionError):
        emission_scores(pp, np.ones((2, 5)))


# -- layer gradient checks: analytic backward vs central differences on
#    loss = sum(R * output) for a fixed random R (R = 1 on the first draw)


def _weights(rng, shape, draw):
    return np.ones(shape) if draw == 0 else rng.normal(size=shape)


def _check(tensors, loss, run_backward):
    for t in tensors:
        t.zero_grad()
    run_backward()
    analytic = {t.name: t.grad.copy() for t in tensors}
    numeric = finite_diff_grad(loss, tensors, 1e-5)
    err, where = max_relative_error(analytic, numeric)
    assert err <= TOL, f"{where}: {err:.3e}"


@pytest.mark.parametrize("draw", range(GRAD_DRAWS))
def test_lstm_gradients(draw):
    rng = SeededRng(draw, 1)
    p = LstmParams("l", 3, 4)
    randomize(p.tensors(), rng)
    X = ParamTensor("x", rng.normal(size=(int(rng.integers(1, 6)), 3)))
    R = _weights(rng, (X.shape[0], 4), draw)

    def loss():
        return float(np.sum(R * lstm_forward(p, X.value)[0]))

    def back():
        _, cache = lstm_forward(p, X.value)
        X.grad += lstm_backward(p, cache, R)

    _check([*p.tensors(), X], loss, back)


@pytest.mark.parametrize("draw", range(GRAD_DRAWS))
def test_bilstm_gradients(draw):
    rng = SeededRng(draw, 2)
    f, b = LstmParams("f", 3, 2), LstmParams("b", 3, 2)
    randomize([*f.tensors(), *b.tensors()], rng)
    X = ParamTensor("x", rng.normal(size=(int(rng.integers(1, 5)), 3)))
    R = _weights(rng, (X.shape[0], 4), draw)

    def loss():
        return float(np.sum(R * bilstm_forward(f, b, X.value)[0]))

    def back():
        _, cache = bilstm_forward(f, b, X.value)
        X.grad += bilstm_backward(f, b, cache, R)

    _check([*f.tensors(), *b.tensors(), X], loss, back)


@pytest.mark.parametrize("draw", range(GRAD_DRAWS))
def test_attention_gradients(draw):
    rng = SeededRng(draw, 3)
    ap = AttentionParams(4, 3)
    randomize(ap.tensors(), rng)
    H = ParamTensor("h", rng.normal(size=(int(rng.integers(1, 6)), 4)))
    R = _weights(rng, (H.shape[0], 4), draw)

    def loss():
        return float(np.sum(R * attention_forward(ap, H.value)[0]))

    def back():
        _, cache = attention_forward(ap, H.value)
        H.grad += attention_backward(ap, cache, R)

    _check([*ap.tensors(), H], loss, back)


@pytest.mark.parametrize("draw", range(GRAD_DRAWS))
def test_projection_gradients(draw):
    rng = SeededRng(draw, 4)
    pp = ProjectionParams(5, 3)
    randomize(pp.tensors(), rng)
    F = ParamTensor("f", rng.normal(size=(4, 5)))
    R = _weights(rng, (4, 3), draw)

    def loss():
        return float(np.sum(R * emission_scores(pp, F.value)))

    def back():
        F.grad += projection_backward(pp, F.value, R)

    _check([*pp.tensors(), F], loss, back)


@pytest.mark.parametrize("draw", range(GRAD_DRAWS))
def test_embedding_gradients(draw, vocab):
    rng = SeededRng(draw, 5)
    emb = Embeddings(vocab.n_words, vocab.n_chars, 6, 3, rng)
    tokens = ["Acme", "ab", "Zed", "a", "Acme"][: int(rng.integers(1, 6))]
    R = _weights(rng, (len(tokens), 9), draw)

    def loss():
        return float(np.sum(R * embed_forward(vocab, emb, tokens)[0]))

    def back():
        _, cache = embed_forward(vocab, emb, tokens)
        embed_backward(emb, cache, R)

    _check(emb.tensors(), loss, back)
