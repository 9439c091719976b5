"""Linear-chain CRF over emission scores M (n x T) and transitions A.

A is (T+2) x (T+2): rows/columns 0..T-1 are tags, ``T`` is START and
``T+1`` is STOP, so ``A[START, y1]`` and ``A[yn, STOP]`` carry the boundary
terms of the path score. Transitions into START and out of STOP are fixed
at ``FORBIDDEN`` and never read by the recursions below.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DimensionError, DomainError
from .numeric import DTYPE, ParamTensor, log_sum_exp

FORBIDDEN = -1e9


def start_index(n_tags: int) -> int:
    return n_tags


def stop_index(n_tags: int) -> int:
    return n_tags + 1


def init_transitions(n_tags: int) -> np.ndarray:
    A = np.zeros((n_tags + 2, n_tags + 2), dtype=DTYPE)
    A[:, start_index(n_tags)] = FORBIDDEN
    A[stop_index(n_tags), :] = FORBIDDEN
    return A


def learnable_mask(n_tags: int) -> np.ndarray:
    """True where an entry of A takes part in some path score."""
    T = n_tags
    mask = np.zeros((T + 2, T + 2), dtype=bool)
    mask[:T, :T] = True
    mask[T, :T] = True
    mask[:T, T + 1] = True
    return mask


def forbid_transitions(A: np.ndarray, mask: np.ndarray, pairs) -> None:
    """Pin each (from, to) entry of A at FORBIDDEN and drop it from ``mask``."""
    for a, b in pairs:
        A[a, b] = FORBIDDEN
        mask[a, b] = False


def bio_forbidden_pairs(n_tags: int, o_id: int, i_id: int) -> list[tuple[int, int]]:
    """O -> I and START -> I: the transitions that open a span with I."""
    return [(o_id, i_id), (start_index(n_tags), i_id)]


class TransitionParams:
    def __init__(self, n_tags: int):
        self.n_tags = n_tags
        self.A = ParamTensor("crf.A", init_transitions(n_tags))

    def tensors(self) -> list[ParamTensor]:
        return [self.A]


def _check(M: np.ndarray, A: np.ndarray, y: Sequence[int] | None = None) -> int:
    if M.ndim != 2 or M.shape[0] < 1:
        raise DimensionError(f"emission matrix must be n x T with n >= 1, got {M.shape}")
    T = M.shape[1]
    if A.shape != (T + 2, T + 2):
        raise DimensionError(f"transition matrix {A.shape} does not match {T} tags")
    if y is not None:
        if len(y) != M.shape[0]:
            raise DimensionError(f"path has length {len(y)}, emission matrix has {M.shape[0]} rows")
        for t in y:
            if not 0 <= t < T:
                raise DomainError(f"tag id {t} outside [0, {T})")
    return T


def path_score(M, A, y: Sequence[int]) -> float:
    M = np.asarray(M, dtype=DTYPE)
    A = np.asarray(A, dtype=DTYPE)
    T = _check(M, A, y)
    y = [int(t) for t in y]
    s = A[T, y[0]] + A[y[-1], T + 1]
    for a, b in zip(y[:-1], y[1:]):
        s += A[a, b]
    for i, t in enumerate(y):
        s += M[i, t]
    return float(s)


def forward_scores(M: np.ndarray, A: np.ndarray) -> np.ndarray:
    """alpha[t, j]: log-sum of scores of all prefixes ending in tag j at t."""
    n, T = M.shape
    trans = A[:T, :T]
    alpha = np.empty((n, T), dtype=DTYPE)
    alpha[0] = A[T, :T] + M[0]
    for t in range(1, n):
        alpha[t] = M[t] + log_sum_exp(alpha[t - 1][:, None] + trans, axis=0)
    return alpha


def backward_scores(M: np.ndarray, A: np.ndarray) -> np.ndarray:
    """beta[t, j]: log-sum of scores of all suffixes after tag j at t
    (excluding the emission at t itself)."""
    n, T = M.shape
    trans = A[:T, :T]
    beta = np.empty((n, T), dtype=DTYPE)
    beta[n - 1] = A[:T, T + 1]
    for t in range(n - 2, -1, -1):
        beta[t] = log_sum_exp(trans + (M[t + 1] + beta[t + 1])[None, :], axis=1)
    return beta


def log_partition(M, A) -> float:
    M = np.asarray(M, dtype=DTYPE)
    A = np.asarray(A, dtype=DTYPE)
    T = _check(M, A)
    alpha = forward_scores(M, A)
    return log_sum_exp(alpha[-1] + A[:T, T + 1])


def marginals(M, A):
    """Posterior tag marginals (n x T) and expected transition counts over
    the full (T+2) x (T+2) matrix, plus log Z."""
    M = np.asarray(M, dtype=DTYPE)
    A = np.asarray(A, dtype=DTYPE)
    T = _check(M, A)
    n = M.shape[0]
    alpha = forward_scores(M, A)
    beta = backward_scores(M, A)
    logZ = log_sum_exp(alpha[-1] + A[:T, T + 1])
    unary = np.exp(alpha + beta - logZ)
    pair = np.zeros_like(A)
    if n > 1:
        # xi[t, k, j] = P(y_t = k, y_{t+1} = j)
        xi = np.exp(alpha[:-1, :, None] + A[None, :T, :T] + (M[1:] + beta[1:])[:, None, :] - logZ)
        pair[:T, :T] = xi.sum(axis=0)
    pair[T, :T] = unary[0]
    pair[:T, T + 1] = unary[-1]
    return unary, pair, logZ


def nll_loss(M, A, gold: Sequence[int]):
    """Negative log-likelihood of ``gold`` with gradients (loss, dM, dA)."""
    M = np.asarray(M, dtype=DTYPE)
    A = np.asarray(A, dtype=DTYPE)
    T = _check(M, A, gold)
    unary, pair, logZ = marginals(M, A)
    gold = [int(t) for t in gold]
    loss = logZ - path_score(M, A, gold)
    dM = unary
    dM[np.arange(len(gold)), gold] -= 1.0
    dA = pair
    dA[T, gold[0]] -= 1.0
    dA[gold[-1], T + 1] -= 1.0
    for a, b in zip(gold[:-1], gold[1:]):
        dA[a, b] -= 1.0
    # clamp round-off: the loss is non-negative by construction
    return max(float(loss), 0.0), dM, dA


def viterbi(M, A) -> tuple[list[int], float]:
    """Best path and its score; ties go to the lowest tag id."""
    M = np.asarray(M, dtype=DTYPE)
    A = np.asarray(A, dtype=DTYPE)
    T = _check(M, A)
    n = M.shape[0]
    trans = A[:T, :T]
    delta = A[T, :T] + M[0]
    back = np.zeros((n, T), dtype=np.int64)
    for t in range(1, n):
        cand = delta[:, None] + trans
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(T)] + M[t]
    last = int(np.argmax(delta + A[:T, T + 1]))
    path = [last]
    for t in range(n - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    path.reverse()
    return path, path_score(M, A, path)


def tag_sequence_no_crf(M) -> list[int]:
    M = np.asarray(M, dtype=DTYPE)
    if M.ndim != 2 or M.shape[0] < 1:
        raise DimensionError(f"emission matrix must be n x T with n >= 1, got {M.shape}")
    return [int(j) for j in np.argmax(M, axis=1)]


def token_softmax_loss(M, gold: Sequence[int]):
    """Summed per-token cross-entropy of softmax(M_i) against gold_i."""
    M = np.asarray(M, dtype=DTYPE)
    if M.ndim != 2 or len(gold) != M.shape[0]:
        raise DimensionError(f"path has length {len(gold)}, emission matrix has shape {M.shape}")
    idx = np.arange(M.shape[0])
    lse = log_sum_exp(M, axis=1)
    loss = float(np.sum(lse - M[idx, gold]))
    dM = np.exp(M - lse[:, None])
    dM[idx, gold] -= 1.0
    return max(loss, 0.0), dM
