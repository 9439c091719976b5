"""Feature extractor: embeddings, dropout, peephole LSTM, bidirectional
encoder, additive self-attention and the projection to tag scores.

Every layer has a ``*_forward`` that returns its output plus a cache and a
``*_backward`` that accumulates into the parameters' ``grad`` buffers and
returns the gradient with respect to the layer input.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import expit

from .corpus import Vocab
from .errors import ConfigError, DimensionError, DomainError
from .numeric import DTYPE, ParamTensor, SeededRng, glorot_uniform

# ---------------------------------------------------------------- embeddings


class Embeddings:
    """Word table (|V_word| x word_dim) and char table (|V_char| x char_dim).

    Row 0 of each table is the padding row and stays zero at init.
    """

    def __init__(self, n_words: int, n_chars: int, word_dim: int = 100, char_dim: int = 25,
                 rng: SeededRng | None = None):
        self.word = ParamTensor("emb.word", np.zeros((n_words, word_dim), dtype=DTYPE))
        self.char = ParamTensor("emb.char", np.zeros((n_chars, char_dim), dtype=DTYPE))
        if rng is not None:
            for p in (self.word, self.char):
                rows, dim = p.shape
                lim = np.sqrt(3.0 / dim)
                p.value[1:] = rng.uniform(-lim, lim, size=(rows - 1, dim))

    @property
    def word_dim(self) -> int:
        return self.word.shape[1]

    @property
    def char_dim(self) -> int:
        return self.char.shape[1]

    @property
    def dim(self) -> int:
        return self.word_dim + self.char_dim

    def tensors(self) -> list[ParamTensor]:
        return [self.word, self.char]


def char_encode(char_table: np.ndarray, vocab: Vocab, word: str) -> np.ndarray:
    """Mean of the word's character-embedding rows."""
    if not word:
        raise DomainError("char_encode of an empty word")
    return char_table[vocab.char_ids(word)].mean(axis=0)


def embed_token(vocab: Vocab, emb: Embeddings, word: str) -> np.ndarray:
    return np.concatenate([emb.word.value[vocab.word_id(word)], char_encode(emb.char.value, vocab, word)])


class EmbedCache(NamedTuple):
    word_ids: list[int]
    char_ids: list[list[int]]


def embed_forward(vocab: Vocab, emb: Embeddings, tokens: Sequence[str]):
    word_ids = [vocab.word_id(t) for t in tokens]
    char_ids = [vocab.char_ids(t) for t in tokens]
    if any(not c for c in char_ids):
        raise DomainError("empty token")
    ctab = emb.char.value
    chars = np.stack([ctab[ids].mean(axis=0) for ids in char_ids])
    X = np.concatenate([emb.word.value[word_ids], chars], axis=1)
    return X, EmbedCache(word_ids, char_ids)


def embed_backward(emb: Embeddings, cache: EmbedCache, dX: np.ndarray):
    dw = emb.word_dim
    np.add.at(emb.word.grad, cache.word_ids, dX[:, :dw])
    for t, ids in enumerate(cache.char_ids):
        np.add.at(emb.char.grad, ids, dX[t, dw:] / len(ids))


# ------------------------------------------------------------------- dropout


def dropout_mask(shape, rate: float, rng: SeededRng) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype=DTYPE)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(v, rate: float, rng: SeededRng | None, train_mode: bool) -> np.ndarray:
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    v = np.asarray(v, dtype=DTYPE)
    if not train_mode or rate == 0.0:
        return v
    return v * dropout_mask(v.shape, rate, rng)


# ---------------------------------------------------------------------- LSTM

GATES = ("i", "f", "c", "o")
PEEPHOLES = ("i", "f", "o")


class LstmState(NamedTuple):
    h: np.ndarray
    c: np.ndarray


class LstmParams:
    """Peephole LSTM weights, stored stacked by gate in the order i, f, c, o.

    ``W_x`` is (4H x D), ``W_h`` is (4H x H), ``b`` is (4H,), ``peep`` is
    (3 x H) holding the diagonal peephole weights for i, f and o. The
    per-gate tensors from ``tensors()`` (``W_xi``, ``w_cf``, ...) are views
    into these arrays.
    """

    def __init__(self, prefix: str, input_size: int, hidden_size: int, rng: SeededRng | None = None,
                 forget_bias: float = 1.0):
        H, D = hidden_size, input_size
        self.prefix = prefix
        self.input_size = D
        self.hidden_size = H
        self.W_x = np.zeros((4 * H, D), dtype=DTYPE)
        self.W_h = np.zeros((4 * H, H), dtype=DTYPE)
        self.b = np.zeros(4 * H, dtype=DTYPE)
        self.peep = np.zeros((3, H), dtype=DTYPE)
        self.dW_x = np.zeros_like(self.W_x)
        self.dW_h = np.zeros_like(self.W_h)
        self.db = np.zeros_like(self.b)
        self.dpeep = np.zeros_like(self.peep)
        if rng is not None:
            for k in range(4):
                self.W_x[k * H:(k + 1) * H] = glorot_uniform(rng, H, D)
                self.W_h[k * H:(k + 1) * H] = glorot_uniform(rng, H, H)
            self.b[H:2 * H] = forget_bias

    def gate(self, arr: np.ndarray, g: str) -> np.ndarray:
        k = GATES.index(g)
        H = self.hidden_size
        return arr[k * H:(k + 1) * H]

    def tensors(self) -> list[ParamTensor]:
        p = self.prefix
        out = []
        for g in GATES:
            out.append(ParamTensor(f"{p}.W_x{g}", self.gate(self.W_x, g), self.gate(self.dW_x, g)))
        for g in GATES:
            out.append(ParamTensor(f"{p}.W_h{g}", self.gate(self.W_h, g), self.gate(self.dW_h, g)))
        for k, g in enumerate(PEEPHOLES):
            out.append(ParamTensor(f"{p}.w_c{g}", self.peep[k], self.dpeep[k]))
        for g in GATES:
            out.append(ParamTensor(f"{p}.b_{g}", self.gate(self.b, g), self.gate(self.db, g)))
        return out

    def zeros_state(self) -> LstmState:
        H = self.hidden_size
        return LstmState(np.zeros(H, dtype=DTYPE), np.zeros(H, dtype=DTYPE))


def _step(p: LstmParams, zx: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray):
    """One cell update given the precomputed input term ``zx = W_x x + b``."""
    H = p.hidden_size
    z = zx + p.W_h @ h_prev
    i = expit(z[:H] + p.peep[0] * c_prev)
    f = expit(z[H:2 * H] + p.peep[1] * c_prev)
    g = np.tanh(z[2 * H:3 * H])
    # output gate peeks at c_{t-1}, not c_t
    o = expit(z[3 * H:] + p.peep[2] * c_prev)
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (i, f, g, o, tc)


def lstm_step(p: LstmParams, x_t, prev: LstmState) -> LstmState:
    x_t = np.asarray(x_t, dtype=DTYPE)
    if x_t.shape != (p.input_size,) or prev.h.shape != (p.hidden_size,) or prev.c.shape != (p.hidden_size,):
        raise DimensionError(
            f"lstm_step: x {x_t.shape}, h {prev.h.shape}, c {prev.c.shape} "
            f"for input size {p.input_size}, hidden size {p.hidden_size}"
        )
    h, c, _ = _step(p, p.W_x @ x_t + p.b, prev.h, prev.c)
    return LstmState(h, c)


class LstmCache(NamedTuple):
    X: np.ndarray
    hs: np.ndarray  # (n+1) x H, row 0 is the initial state
    cs: np.ndarray
    gates: list


def lstm_forward(p: LstmParams, X: np.ndarray):
    """Run the cell over the rows of ``X`` from a zero state."""
    n = X.shape[0]
    if X.ndim != 2 or X.shape[1] != p.input_size:
        raise DimensionError(f"lstm input has shape {X.shape}, expected (n, {p.input_size})")
    H = p.hidden_size
    ZX = X @ p.W_x.T + p.b
    hs = np.zeros((n + 1, H), dtype=DTYPE)
    cs = np.zeros((n + 1, H), dtype=DTYPE)
    gates = []
    for t in range(n):
        h, c, gt = _step(p, ZX[t], hs[t], cs[t])
        hs[t + 1] = h
        cs[t + 1] = c
        gates.append(gt)
    return hs[1:], LstmCache(X, hs, cs, gates)


def lstm_backward(p: LstmParams, cache: LstmCache, dHs: np.ndarray) -> np.ndarray:
    """Backpropagation through time; returns dX."""
    X, hs, cs, gates = cache
    n = X.shape[0]
    H = p.hidden_size
    dZ = np.zeros((n, 4 * H), dtype=DTYPE)
    dh_next = np.zeros(H, dtype=DTYPE)
    dc_next = np.zeros(H, dtype=DTYPE)
    w_ci, w_cf, w_co = p.peep
    W_h = p.W_h
    for t in range(n - 1, -1, -1):
        i, f, g, o, tc = gates[t]
        c_prev = cs[t]
        dh = dHs[t] + dh_next
        da_o = dh * tc * o * (1.0 - o)
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da_i = dc * g * i * (1.0 - i)
        da_f = dc * c_prev * f * (1.0 - f)
        dz_c = dc * i * (1.0 - g * g)
        dz = dZ[t]
        dz[:H] = da_i
        dz[H:2 * H] = da_f
        dz[2 * H:3 * H] = dz_c
        dz[3 * H:] = da_o
        p.dpeep[0] += da_i * c_prev
        p.dpeep[1] += da_f * c_prev
        p.dpeep[2] += da_o * c_prev
        dc_next = dc * f + w_ci * da_i + w_cf * da_f + w_co * da_o
        dh_next = dz @ W_h
    p.dW_x += dZ.T @ X
    p.dW_h += dZ.T @ hs[:-1]
    p.db += dZ.sum(axis=0)
    return dZ @ p.W_x


# ------------------------------------------------------------- bidirectional


class BiLstmCache(NamedTuple):
    fwd: LstmCache
    bwd: LstmCache


def bilstm_forward(fwd: LstmParams, bwd: LstmParams, X: np.ndarray):
    if X.shape[0] < 1:
        raise DomainError("bilstm over an empty sequence")
    Hf, cf = lstm_forward(fwd, X)
    Hb, cb = lstm_forward(bwd, X[::-1])
    return np.concatenate([Hf, Hb[::-1]], axis=1), BiLstmCache(cf, cb)


def bilstm_backward(fwd: LstmParams, bwd: LstmParams, cache: BiLstmCache, dH: np.ndarray) -> np.ndarray:
    H = fwd.hidden_size
    dXf = lstm_backward(fwd, cache.fwd, dH[:, :H])
    dXb = lstm_backward(bwd, cache.bwd, dH[::-1, H:])
    return dXf + dXb[::-1]


def bilstm_encode(fwd: LstmParams, bwd: LstmParams, xs) -> np.ndarray:
    """Rows are ``[h_left_t ; h_right_t]`` for each position t."""
    X = np.asarray(xs, dtype=DTYPE)
    if X.ndim != 2 or X.shape[0] < 1:
        raise DomainError("bilstm_encode needs a non-empty list of vectors")
    return bilstm_forward(fwd, bwd, X)[0]


# ----------------------------------------------------------------- attention


class AttentionParams:
    """Additive self-attention: e_ij = v . tanh(W_q h_i + W_k h_j),
    out_i = W_m [h_i ; sum_j a_ij h_j].
    """

    def __init__(self, feature_size: int, attn_size: int, rng: SeededRng | None = None,
                 prefix: str = "attn"):
        F, A = feature_size, attn_size
        self.W_q = ParamTensor(f"{prefix}.W_q", np.zeros((A, F), dtype=DTYPE))
        self.W_k = ParamTensor(f"{prefix}.W_k", np.zeros((A, F), dtype=DTYPE))
        self.v = ParamTensor(f"{prefix}.v", np.zeros(A, dtype=DTYPE))
        self.W_m = ParamTensor(f"{prefix}.W_m", np.zeros((F, 2 * F), dtype=DTYPE))
        if rng is not None:
            self.W_q.value[...] = glorot_uniform(rng, A, F)
            self.W_k.value[...] = glorot_uniform(rng, A, F)
            self.v.value[...] = glorot_uniform(rng, 1, A)[0]
            self.W_m.value[...] = glorot_uniform(rng, F, 2 * F)

    @property
    def feature_size(self) -> int:
        return self.W_q.shape[1]

    def tensors(self) -> list[ParamTensor]:
        return [self.W_q, self.W_k, self.v, self.W_m]


class AttentionCache(NamedTuple):
    H: np.ndarray
    S: np.ndarray  # n x n x A, tanh(q_i + k_j)
    weights: np.ndarray  # n x n, rows sum to 1
    HC: np.ndarray  # n x 2F


def attention_forward(ap: AttentionParams, H: np.ndarray):
    if H.ndim != 2 or H.shape[0] < 1 or H.shape[1] != ap.feature_size:
        raise DimensionError(f"attention input has shape {H.shape}, expected (n, {ap.feature_size})")
    Q = H @ ap.W_q.value.T
    K = H @ ap.W_k.value.T
    S = np.tanh(Q[:, None, :] + K[None, :, :])
    e = S @ ap.v.value
    e = e - e.max(axis=1, keepdims=True)
    w = np.exp(e)
    w /= w.sum(axis=1, keepdims=True)
    C = w @ H
    HC = np.concatenate([H, C], axis=1)
    return HC @ ap.W_m.value.T, AttentionCache(H, S, w, HC)


def attention_backward(ap: AttentionParams, cache: AttentionCache, dOut: np.ndarray) -> np.ndarray:
    H, S, w, HC = cache
    F = H.shape[1]
    ap.W_m.grad += dOut.T @ HC
    dHC = dOut @ ap.W_m.value
    dH = dHC[:, :F].copy()
    dC = dHC[:, F:]
    dw = dC @ H.T
    dH += w.T @ dC
    de = w * (dw - np.sum(dw * w, axis=1, keepdims=True))
    ap.v.grad += np.einsum("ij,ija->a", de, S)
    dU = de[:, :, None] * ap.v.value * (1.0 - S * S)
    dQ = dU.sum(axis=1)
    dK = dU.sum(axis=0)
    ap.W_q.grad += dQ.T @ H
    ap.W_k.grad += dK.T @ H
    dH += dQ @ ap.W_q.value + dK @ ap.W_k.value
    return dH


def attention(ap: AttentionParams, H):
    """Return the augmented vectors and the n x n weight matrix a_ij."""
    out, cache = attention_forward(ap, np.asarray(H, dtype=DTYPE))
    return out, cache.weights


# ---------------------------------------------------------------- projection


class ProjectionParams:
    def __init__(self, feature_size: int, n_tags: int, rng: SeededRng | None = None):
        self.W = ParamTensor("proj.W", np.zeros((n_tags, feature_size), dtype=DTYPE))
        self.b = ParamTensor("proj.b", np.zeros(n_tags, dtype=DTYPE))
        if rng is not None:
            self.W.value[...] = glorot_uniform(rng, n_tags, feature_size)

    def tensors(self) -> list[ParamTensor]:
        return [self.W, self.b]


def emission_scores(pp: ProjectionParams, feats) -> np.ndarray:
    """n x T matrix of raw tag scores, row i = W feats_i + b."""
    F = np.asarray(feats, dtype=DTYPE)
    if F.ndim != 2 or F.shape[1] != pp.W.shape[1]:
        raise DimensionError(f"projection: features {F.shape}, W {pp.W.shape}")
    return F @ pp.W.value.T + pp.b.value


def projection_backward(pp: ProjectionParams, feats: np.ndarray, dM: np.ndarray) -> np.ndarray:
    pp.W.grad += dM.T @ feats
    pp.b.grad += dM.sum(axis=0)
    return dM @ pp.W.value

