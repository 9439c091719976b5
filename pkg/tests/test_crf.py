import math

import numpy as np
import pytest

from oracles import brute_best, brute_log_partition, brute_marginals, brute_scores, path_score_loops
from stagger import crf
from stagger.crf import (
    FORBIDDEN,
    init_transitions,
    learnable_mask,
    log_partition,
    marginals,
    nll_loss,
    path_score,
    tag_sequence_no_crf,
    token_softmax_loss,
    viterbi,
)
from stagger.errors import DimensionError, DomainError
from stagger.numeric import ParamTensor, SeededRng, finite_diff_grad, max_relative_error


def random_instance(rng, n, T, scale=2.0):
    M = rng.normal(0, scale, size=(n, T))
    A = init_transitions(T)
    A[learnable_mask(T)] = rng.normal(0, scale, size=int(learnable_mask(T).sum()))
    return M, A


def test_path_score_examples():
    A = np.zeros((4, 4))
    assert path_score([[1, 3]], A, [1]) == 3
    A[2, 1], A[1, 0], A[0, 3] = 0.1, 0.2, 0.3
    M = [[1, 2], [3, 4]]
    assert path_score(M, A, (1, 0)) == pytest.approx(5.6, abs=1e-12)
    assert path_score_loops(M, A.tolist(), (1, 0)) == pytest.approx(5.6, abs=1e-12)
    shifted = path_score(np.array(M) + 1.5, A, (1, 0))
    assert shifted == pytest.approx(5.6 + 2 * 1.5, abs=1e-12)


def test_path_score_errors():
    A = np.zeros((4, 4))
    with pytest.raises(DimensionError):
        path_score([[1, 2]], A, [0, 1])
    with pytest.raises(DomainError):
        path_score([[1, 2]], A, [2])
    with pytest.raises(DimensionError):
        path_score([[1, 2]], np.zeros((3, 3)), [0])


def test_log_partition_examples():
    A = np.zeros((4, 4))
    assert log_partition([[0, 0]], A) == pytest.approx(math.log(2), abs=1e-12)
    assert log_partition([[1, 3]], A) == pytest.approx(math.log(math.e + math.e**3), abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_log_partition_brute_force(seed):
    M, A = random_instance(SeededRng(seed), 5, 4)
    assert abs(log_partition(M, A) - brute_log_partition(M.tolist(), A.tolist())) <= 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_normalization(seed):
    rng = SeededRng(seed, 7)
    n, T = int(rng.integers(1, 6)), int(rng.integers(1, 5))
    M, A = random_instance(rng, n, T)
    logz = log_partition(M, A)
    total = sum(math.exp(s - logz) for s in brute_scores(M.tolist(), A.tolist()).values())
    assert abs(total - 1.0) <= 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_marginals_brute_force(seed):
    rng = SeededRng(seed, 8)
    n, T = int(rng.integers(1, 6)), int(rng.integers(1, 5))
    M, A = random_instance(rng, n, T)
    unary, pair, logz = marginals(M, A)
    assert np.all(unary >= 0)
    np.testing.assert_allclose(unary.sum(axis=1), 1.0, rtol=0, atol=1e-9)
    np.testing.assert_allclose(unary, brute_marginals(M.tolist(), A.tolist()), rtol=0, atol=1e-9)
    # expected transition counts: n-1 inner transitions plus the two boundaries
    assert pair.sum() == pytest.approx(n + 1, abs=1e-9)
    assert not pair[~learnable_mask(T)].any()


def test_nll_saturated():
    gold = [0, 2, 1, 1]
    M = np.full((4, 3), -50.0)
    M[np.arange(4), gold] = 50.0
    loss, dM, dA = nll_loss(M, np.zeros((5, 5)), gold)
    assert 0.0 <= loss < 1e-6
    assert np.abs(dM).max() < 1e-6
    assert np.abs(dA).max() < 1e-6


def test_nll_uniform_single_token():
    loss, dM, dA = nll_loss([[0.0, 0.0, 0.0]], np.zeros((5, 5)), [0])
    assert loss == pytest.approx(math.log(3), abs=1e-12)
    np.testing.assert_allclose(dM, [[1 / 3 - 1, 1 / 3, 1 / 3]], rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_nll_gradients_finite_difference(seed):
    rng = SeededRng(seed, 9)
    n, T = int(rng.integers(1, 6)), int(rng.integers(2, 5))
    M0, A0 = random_instance(rng, n, T, 1.0)
    gold = [int(t) for t in rng.integers(0, T, size=n)]
    Mp, Ap = ParamTensor("M", M0.copy()), ParamTensor("A", A0.copy())
    _, dM, dA = nll_loss(Mp.value, Ap.value, gold)
    # forbidden entries never take part in a path; compare the learnable ones only
    mask = learnable_mask(T)
    analytic = {"M": dM, "A": np.where(mask, dA, 0.0)}
    numeric = finite_diff_grad(lambda: nll_loss(Mp.value, Ap.value, gold)[0], [Mp, Ap])
    numeric["A"] = np.where(mask, numeric["A"], 0.0)
    err, where = max_relative_error(analytic, numeric)
    assert err <= 1e-4, where


@pytest.mark.parametrize("seed", range(20))
def test_nll_non_negative(seed):
    rng = SeededRng(seed, 10)
    n, T = int(rng.integers(1, 8)), int(rng.integers(1, 6))
    M, A = random_instance(rng, n, T, 5.0)
    gold = [int(t) for t in rng.integers(0, T, size=n)]
    assert nll_loss(M, A, gold)[0] >= 0.0


def test_viterbi_examples():
    A = np.zeros((4, 4))
    A[0, 1] = 5
    path, score = viterbi([[0, 0], [0, 0]], A)
    assert path == [0, 1] and score == 5
    M = np.array([[1.0, 3.0, 2.0], [4.0, 0.0, 1.0]])
    assert viterbi(M, np.zeros((5, 5)))[0] == [1, 0] == tag_sequence_no_crf(M)


def test_viterbi_ties_lowest_id():
    path, score = viterbi(np.zeros((3, 3)), np.zeros((5, 5)))
    assert path == [0, 0, 0] and score == 0


@pytest.mark.parametrize("seed", range(10))
def test_viterbi_brute_force(seed):
    M, A = random_instance(SeededRng(seed, 11), 6, 5)
    path, score = viterbi(M, A)
    assert abs(score - brute_best(M.tolist(), A.tolist())) <= 1e-9
    assert score == path_score(M, A, path)


def test_viterbi_beats_random_paths():
    rng = SeededRng(12)
    M, A = random_instance(rng, 8, 4)
    _, best = viterbi(M, A)
    for _ in range(1000):
        y = rng.integers(0, 4, size=8)
        assert best >= path_score(M, A, y)


@pytest.mark.parametrize("kappa", [-7.5, 0.3, 100.0])
def test_viterbi_shift_invariance(kappa):
    M, A = random_instance(SeededRng(13), 5, 3)
    path, score = viterbi(M, A)
    path2, score2 = viterbi(M + kappa, A)
    assert path2 == path
    assert score2 == pytest.approx(score + 5 * kappa, abs=1e-9)


def test_no_crf_decoding():
    assert tag_sequence_no_crf([[1, 3]]) == [1]
    assert tag_sequence_no_crf([[2, 2]]) == [0]
    with pytest.raises(DimensionError):
        tag_sequence_no_crf(np.zeros((0, 3)))


@pytest.mark.parametrize("seed", range(5))
def test_no_crf_equals_viterbi_without_transitions(seed):
    M = SeededRng(seed).normal(size=(6, 3))
    assert tag_sequence_no_crf(M) == viterbi(M, np.zeros((5, 5)))[0]


def test_forbidden_entries():
    A = init_transitions(3)
    mask = learnable_mask(3)
    assert np.all(A[:, 3] == FORBIDDEN) and np.all(A[4, :] == FORBIDDEN)
    assert not A[mask].any()
    assert mask.sum() == 3 * 3 + 3 + 3


def test_bio_constraint_pairs_block_paths():
    O, B, I = 0, 1, 2
    A = init_transitions(3)
    mask = learnable_mask(3)
    crf.forbid_transitions(A, mask, crf.bio_forbidden_pairs(3, O, I))
    M = np.zeros((3, 3))
    M[:, I] = 10.0
    path, _ = viterbi(M, A)
    assert path == [B, I, I]
    marg, _, _ = marginals(M, A)
    assert marg[0, I] < 1e-12


def test_token_softmax_loss():
    loss, dM = token_softmax_loss(np.zeros((2, 3)), [0, 2])
    assert loss == pytest.approx(2 * math.log(3), abs=1e-12)
    np.testing.assert_allclose(dM.sum(axis=1), 0.0, atol=1e-15)
    M = SeededRng(1).normal(size=(3, 4))
    gold = [3, 0, 1]
    Mp = ParamTensor("M", M.copy())
    _, dM = token_softmax_loss(M, gold)
    num = finite_diff_grad(lambda: token_softmax_loss(Mp.value, gold)[0], [Mp])
    assert max_relative_error({"M": dM}, num)[0] <= 1e-6
    with pytest.raises(DimensionError):
        token_softmax_loss(M, [0])
