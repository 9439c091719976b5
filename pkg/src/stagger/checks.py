"""Verification oracles run by ``stagger selfcheck``.

Each check returns a ``CheckResult``; a failing result carries the
offending instance as JSON-serializable data for reproduction.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import crf
from .corpus import LabeledSequence, Span, build_vocab, decode_spans, encode_bio
from .numeric import SeededRng, finite_diff_grad, max_relative_error
from .training import VARIANTS, Model, ModelConfig, accumulate_gradients, sequence_loss

GRAD_TOLERANCE = 1e-4
CRF_TOLERANCE = 1e-9


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    instance: dict = field(default_factory=dict)


def all_path_scores(M: np.ndarray, A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scores of all T**n tag paths, enumerated explicitly."""
    n, T = M.shape
    paths = np.array(list(itertools.product(range(T), repeat=n)), dtype=np.int64)
    scores = A[T, paths[:, 0]] + A[paths[:, -1], T + 1]
    for i in range(n):
        scores = scores + M[i, paths[:, i]]
    for i in range(n - 1):
        scores = scores + A[paths[:, i], paths[:, i + 1]]
    return paths, scores


def random_crf_instance(rng: SeededRng, max_n: int = 6, max_t: int = 5):
    n = int(rng.integers(1, max_n + 1))
    T = int(rng.integers(1, max_t + 1))
    M = rng.normal(0.0, 2.0, size=(n, T))
    A = crf.init_transitions(T)
    mask = crf.learnable_mask(T)
    A[mask] = rng.normal(0.0, 2.0, size=int(mask.sum()))
    return M, A


def check_crf(trials: int = 1000, seed: int = 0) -> CheckResult:
    rng = SeededRng(seed, 101)
    worst = 0.0
    for k in range(trials):
        M, A = random_crf_instance(rng)
        _, scores = all_path_scores(M, A)
        best = float(scores.max())
        m = best
        logz_brute = m + float(np.log(np.sum(np.exp(scores - m))))
        path, vscore = crf.viterbi(M, A)
        logz = crf.log_partition(M, A)
        err = max(abs(vscore - best), abs(logz - logz_brute))
        worst = max(worst, err)
        if err > CRF_TOLERANCE:
            return CheckResult(
                "crf-brute-force", False,
                f"trial {k}: viterbi {vscore} vs {best}, log Z {logz} vs {logz_brute}",
                {"M": M.tolist(), "A": A.tolist()},
            )
    return CheckResult("crf-brute-force", True, f"{trials} instances, max deviation {worst:.2e}")


def gradient_check_instance(variant: str, seed: int, n: int = 3):
    """Tiny model (hidden 5, dims 8/4, three tags) on a random n-token
    sequence, with all parameters drawn at random and dropout off."""
    rng = SeededRng(seed, 202)
    alphabet = "abcdefgh"
    tokens = tuple(
        "".join(alphabet[int(j)] for j in rng.integers(0, len(alphabet), size=int(rng.integers(1, 4))))
        for _ in range(n)
    )
    tags = tuple(rng.choice("OBI") for _ in range(n))
    seq = LabeledSequence(tokens, tags)
    vocab = build_vocab([seq])
    config = ModelConfig(variant=variant, word_dim=8, char_dim=4, hidden=5, attn_dim=4,
                         dropout=0.0, seed=seed)
    model = Model(config, vocab, SeededRng(seed, 203))
    for t in model.params:
        if t.name == "crf.A":
            mask = crf.learnable_mask(vocab.n_tags)
            t.value[mask] = rng.normal(0.0, 1.0, size=int(mask.sum()))
        elif ".b_" in t.name or t.name == "proj.b" or ".w_c" in t.name:
            t.value[...] = rng.normal(0.0, 0.5, size=t.shape)
    return model, seq


def check_gradients(variant: str, seed: int, perturb: float = 0.0) -> CheckResult:
    model, seq = gradient_check_instance(variant, seed)
    model.params.zero_grad()
    accumulate_gradients(model, seq)
    analytic = model.params.gradients()
    if perturb:
        for g in analytic.values():
            g += perturb
    numeric = finite_diff_grad(lambda: sequence_loss(model, seq), list(model.params), 1e-5)
    model.params.zero_grad()
    err, where = max_relative_error(analytic, numeric)
    name = f"gradient[{variant}]"
    if err > GRAD_TOLERANCE:
        return CheckResult(name, False, f"seed {seed}: relative error {err:.2e} in {where}",
                           {"variant": variant, "seed": seed, "tokens": list(seq.tokens),
                            "tags": [t.value for t in seq.tags]})
    return CheckResult(name, True, f"seed {seed}: max relative error {err:.2e}")


def check_bio(max_len: int = 12) -> CheckResult:
    count = 0
    for n in range(1, max_len + 1):
        toks = tuple(f"t{i}" for i in range(n))
        for start in range(n):
            for end in range(start + 1, n + 1):
                got = [s for s, _ in decode_spans(toks, encode_bio(toks, Span(start, end)))]
                count += 1
                if got != [Span(start, end)]:
                    return CheckResult("bio-round-trip", False, f"span ({start},{end}) on {n} tokens -> {got}",
                                       {"n": n, "start": start, "end": end})
        if decode_spans(toks, encode_bio(toks)) != []:
            return CheckResult("bio-round-trip", False, f"all-O tags on {n} tokens decoded to spans",
                               {"n": n})
    return CheckResult("bio-round-trip", True, f"{count} spans round-tripped")


def run_selfcheck(trials: int = 1000, seed: int = 0, grad_seeds: int = 3, perturb: float = 0.0):
    """Yield check results in order: BIO, CRF, then gradients per variant."""
    yield check_bio()
    yield check_crf(trials, seed)
    for variant in VARIANTS:
        for s in range(grad_seeds):
            yield check_gradients(variant, seed * 1000 + s, perturb)
