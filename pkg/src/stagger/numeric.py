"""Dense float64 kernel: affine maps, gate nonlinearities, log-sum-exp,
seeded randomness and a central-difference gradient checker.

Matrices and vectors are plain ``numpy.ndarray`` objects of dtype float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy.special import expit

from .errors import DimensionError, DomainError, NumericError

DTYPE = np.float64


def as_vector(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE).reshape(-1)


@dataclass
class ParamTensor:
    """A named parameter and its gradient buffer (same shape, same dtype).

    ``value`` and ``grad`` may be views into larger stacked arrays; all
    updates must therefore happen in place.
    """

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise DimensionError(
                f"gradient shape {self.grad.shape} != value shape {self.value.shape} for {self.name!r}"
            )

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self) -> int:
        return int(self.value.size)

    def zero_grad(self):
        self.grad[...] = 0.0


class SeededRng:
    """Deterministic random source (PCG64) keyed by a 64-bit seed.

    ``child(*keys)`` derives an independent stream, e.g. one per fold.
    """

    def __init__(self, seed: int, *keys: int):
        if seed < 0 or seed >= 2**64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.keys = tuple(int(k) for k in keys)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, *self.keys])))

    def child(self, *keys: int) -> "SeededRng":
        return SeededRng(self.seed, *self.keys, *keys)

    def random(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def uniform(self, low, high, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, seq, p=None):
        return seq[int(self._gen.choice(len(seq), p=p))]


def glorot_uniform(rng: SeededRng, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def affine(W: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return ``W @ x + b``."""
    W = np.asarray(W, dtype=DTYPE)
    x = as_vector(x)
    b = as_vector(b)
    if W.ndim != 2 or W.shape[1] != x.shape[0] or W.shape[0] != b.shape[0]:
        raise DimensionError(
            f"affine: W has shape {W.shape}, x has shape {x.shape}, b has shape {b.shape}"
        )
    return W @ x + b


def sigmoid(x) -> np.ndarray:
    return expit(np.asarray(x, dtype=DTYPE))


def tanh(x) -> np.ndarray:
    return np.tanh(np.asarray(x, dtype=DTYPE))


def hadamard(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard: shapes {a.shape} and {b.shape} differ")
    return a * b


def log_sum_exp(xs, axis=None):
    """Stable ``log(sum(exp(xs)))`` using the max-shift identity.

    With ``axis=None`` the whole input is reduced to a float.
    """
    xs = np.asarray(xs, dtype=DTYPE)
    if xs.size == 0:
        raise DomainError("log_sum_exp of an empty input")
    m = np.max(xs, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(xs - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def softmax(xs, axis=-1) -> np.ndarray:
    xs = np.asarray(xs, dtype=DTYPE)
    e = np.exp(xs - np.max(xs, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def finite_diff_grad(
    f: Callable[[], float],
    params: Iterable[ParamTensor],
    epsilon: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central-difference gradient of ``f`` with respect to every scalar of
    every tensor in ``params``.

    ``f`` takes no arguments and reads the parameters it closes over; each
    scalar is nudged in place and restored afterwards.
    """
    if not epsilon > 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    grads: dict[str, np.ndarray] = {}
    for p in params:
        g = np.zeros(p.value.shape, dtype=DTYPE)
        for idx in np.ndindex(*p.value.shape):
            orig = p.value[idx]
            p.value[idx] = orig + epsilon
            hi = f()
            p.value[idx] = orig - epsilon
            lo = f()
            p.value[idx] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericError(f"non-finite objective while perturbing {p.name}{list(idx)}")
            g[idx] = (hi - lo) / (2.0 * epsilon)
        grads[p.name] = g
    return grads


def max_relative_error(
    analytic: Mapping[str, np.ndarray],
    numeric: Mapping[str, np.ndarray],
    floor: float = 1e-5,
) -> tuple[float, str]:
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over all entries.

    Returns the error and the name of the tensor where it occurs. The
    default floor equals the usual probe step: central differences cannot
    resolve smaller components in relative terms, so those are effectively
    compared on an absolute scale.
    """
    worst, where = 0.0, ""
    for name, n in numeric.items():
        a = analytic[name]
        if a.shape != n.shape:
            raise DimensionError(f"{name}: analytic {a.shape} vs numeric {n.shape}")
        if a.size == 0:
            continue
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        err = float(np.max(np.abs(a - n) / denom))
        if err > worst or not where:
            worst, where = err, name
    return worst, where
