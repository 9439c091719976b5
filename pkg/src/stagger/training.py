"""Model assembly, backpropagation through the full stack, SGD training
and k-fold cross-validation for the four tagger variants."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np

from . import crf
from .corpus import BioTag, LabeledSequence, Vocab, build_vocab, kfold
from .errors import ConfigError, DataError, DimensionError, DomainError, NumericError
from .evaluation import EvalReport, aggregate, evaluate_tags
from .layers import (
    AttentionParams,
    Embeddings,
    LstmParams,
    ProjectionParams,
    attention_backward,
    attention_forward,
    bilstm_backward,
    bilstm_forward,
    dropout_mask,
    embed_backward,
    embed_forward,
    emission_scores,
    projection_backward,
)
from .numeric import DTYPE, ParamTensor, SeededRng

log = logging.getLogger(__name__)

VARIANTS = ("bilstm", "bilstm-attn", "bilstm-crf", "bilstm-crf-attn")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "bilstm-crf"
    word_dim: int = 100
    char_dim: int = 25
    hidden: int = 100
    attn_dim: int = 0  # 0 means "same as hidden"
    dropout: float = 0.2
    lr: float = 0.01
    clip: float = 5.0
    epochs: int = 200
    folds: int = 5
    seed: int = 0
    min_frequency: int = 1
    lowercase: bool = False
    bio_constraints: bool = False  # forbid O->I and START->I in the CRF

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        for name in ("word_dim", "char_dim", "hidden", "epochs", "folds", "min_frequency"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.attn_dim < 0:
            raise ConfigError(f"attn_dim must be non-negative, got {self.attn_dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.lr < 0:
            raise ConfigError(f"learning rate must be non-negative, got {self.lr}")
        if not self.clip > 0:
            raise ConfigError(f"clip norm must be positive, got {self.clip}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def uses_crf(self) -> bool:
        return "crf" in self.variant

    @property
    def uses_attention(self) -> bool:
        return self.variant.endswith("attn")

    @property
    def attention_size(self) -> int:
        return self.attn_dim or self.hidden

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class ModelParams:
    """Ordered, uniquely named parameter tensors plus the flat storage
    arrays they are views of (used for fast global updates)."""

    def __init__(self, tensors: Sequence[ParamTensor], storage: Sequence[tuple[np.ndarray, np.ndarray]]):
        self._tensors: dict[str, ParamTensor] = {}
        for t in tensors:
            if t.name in self._tensors:
                raise DomainError(f"duplicate parameter name {t.name!r}")
            self._tensors[t.name] = t
        self.storage = list(storage)

    def __iter__(self) -> Iterator[ParamTensor]:
        return iter(self._tensors.values())

    def __len__(self):
        return len(self._tensors)

    def __getitem__(self, name: str) -> ParamTensor:
        return self._tensors[name]

    def names(self) -> list[str]:
        return list(self._tensors)

    def zero_grad(self):
        for _, g in self.storage:
            g[...] = 0.0

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.vdot(g, g)) for _, g in self.storage)))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {t.name: t.value.copy() for t in self}

    def load(self, values: dict[str, np.ndarray]):
        for t in self:
            v = values[t.name]
            if v.shape != t.shape:
                raise DimensionError(f"{t.name}: stored shape {v.shape}, model expects {t.shape}")
            t.value[...] = v

    def gradients(self) -> dict[str, np.ndarray]:
        return {t.name: t.grad.copy() for t in self}


class Model:
    """A tagger: config, vocabulary and the parameter set its variant needs."""

    def __init__(self, config: ModelConfig, vocab: Vocab, rng: SeededRng | None = None):
        self.config = config
        self.vocab = vocab
        c = config
        self.emb = Embeddings(vocab.n_words, vocab.n_chars, c.word_dim, c.char_dim, rng)
        self.fwd = LstmParams("lstm.fwd", self.emb.dim, c.hidden, rng)
        self.bwd = LstmParams("lstm.bwd", self.emb.dim, c.hidden, rng)
        feat = 2 * c.hidden
        self.attn = AttentionParams(feat, c.attention_size, rng) if c.uses_attention else None
        self.proj = ProjectionParams(feat, vocab.n_tags, rng)
        self.trans = crf.TransitionParams(vocab.n_tags) if c.uses_crf else None
        self._crf_mask = crf.learnable_mask(vocab.n_tags) if c.uses_crf else None
        if c.uses_crf and c.bio_constraints:
            ids = vocab.tag_ids
            pairs = crf.bio_forbidden_pairs(vocab.n_tags, ids[BioTag.O], ids[BioTag.I])
            crf.forbid_transitions(self.trans.A.value, self._crf_mask, pairs)

        tensors = [*self.emb.tensors(), *self.fwd.tensors(), *self.bwd.tensors()]
        storage = [(t.value, t.grad) for t in self.emb.tensors()]
        for lstm in (self.fwd, self.bwd):
            storage += [(lstm.W_x, lstm.dW_x), (lstm.W_h, lstm.dW_h), (lstm.peep, lstm.dpeep), (lstm.b, lstm.db)]
        for part in (self.attn, self.proj, self.trans):
            if part is not None:
                tensors += part.tensors()
                storage += [(t.value, t.grad) for t in part.tensors()]
        self.params = ModelParams(tensors, storage)

    @property
    def n_tags(self) -> int:
        return self.vocab.n_tags

    @property
    def transitions(self) -> np.ndarray | None:
        return None if self.trans is None else self.trans.A.value

    def copy(self) -> "Model":
        other = Model(self.config, self.vocab)
        other.params.load(self.params.snapshot())
        return other


class ForwardCache(NamedTuple):
    model_id: int
    n: int
    embed: object
    mask_x: np.ndarray | None
    bilstm: object
    mask_h: np.ndarray | None
    attn: object
    feats: np.ndarray


def forward(model: Model, tokens: Sequence[str], train_mode: bool = False, rng: SeededRng | None = None):
    """Emission matrix (n x T) for one token sequence, and the cache needed
    by ``backward``. Dropout is active only with ``train_mode`` and ``rng``."""
    if len(tokens) == 0:
        raise DomainError("cannot tag an empty sequence")
    rate = model.config.dropout
    stochastic = train_mode and rate > 0.0
    if stochastic and rng is None:
        raise DomainError("train-mode dropout requires an rng")
    X, ecache = embed_forward(model.vocab, model.emb, tokens)
    mask_x = dropout_mask(X.shape, rate, rng) if stochastic else None
    if mask_x is not None:
        X = X * mask_x
    Hb, bcache = bilstm_forward(model.fwd, model.bwd, X)
    mask_h = dropout_mask(Hb.shape, rate, rng) if stochastic else None
    if mask_h is not None:
        Hb = Hb * mask_h
    acache = None
    feats = Hb
    if model.attn is not None:
        feats, acache = attention_forward(model.attn, Hb)
    M = emission_scores(model.proj, feats)
    return M, ForwardCache(id(model), len(tokens), ecache, mask_x, bcache, mask_h, acache, feats)


def backward(model: Model, cache: ForwardCache, dM: np.ndarray, dA: np.ndarray | None = None):
    """Accumulate parameter gradients for upstream gradients dM (and dA)."""
    if cache.model_id != id(model) or dM.shape != (cache.n, model.n_tags):
        raise DimensionError("backward called with a cache from a different forward pass")
    if dA is not None:
        if model.trans is None:
            raise DomainError(f"variant {model.config.variant} has no transition matrix")
        model.trans.A.grad += np.where(model._crf_mask, dA, 0.0)
    dF = projection_backward(model.proj, cache.feats, dM)
    if model.attn is not None:
        dF = attention_backward(model.attn, cache.attn, dF)
    if cache.mask_h is not None:
        dF = dF * cache.mask_h
    dX = bilstm_backward(model.fwd, model.bwd, cache.bilstm, dF)
    if cache.mask_x is not None:
        dX = dX * cache.mask_x
    embed_backward(model.emb, cache.embed, dX)


def loss_for_variant(config: ModelConfig, M: np.ndarray, A: np.ndarray | None, gold: Sequence[int]):
    """(loss, dM, dA); CRF variants use the sequence-level NLL, the others
    summed per-token softmax cross-entropy (dA is None)."""
    if config.uses_crf:
        if A is None:
            raise DomainError(f"variant {config.variant} needs a transition matrix")
        return crf.nll_loss(M, A, gold)
    loss, dM = crf.token_softmax_loss(M, gold)
    return loss, dM, None


def sgd_step(params: ModelParams, lr: float, clip: float | None) -> float:
    """Clip the global gradient norm to ``clip``, take a step, zero the
    gradients. Returns the norm of the gradient actually applied."""
    norm = params.grad_norm()
    if not np.isfinite(norm):
        bad = [t.name for t in params if not np.all(np.isfinite(t.grad))]
        params.zero_grad()
        raise NumericError(f"non-finite gradient in {', '.join(bad) or 'unknown tensor'}")
    scale = 1.0
    if clip is not None and norm > clip:
        scale = clip / norm
    if lr != 0.0:
        for value, grad in params.storage:
            value -= (lr * scale) * grad
    params.zero_grad()
    return norm * scale


def predict(model: Model, tokens: Sequence[str]) -> list[int]:
    M, _ = forward(model, tokens, train_mode=False)
    if model.trans is not None:
        return crf.viterbi(M, model.trans.A.value)[0]
    return crf.tag_sequence_no_crf(M)


def tag_tokens(model: Model, tokens: Sequence[str]):
    return model.vocab.decode_tags(predict(model, tokens))


def evaluate(model: Model, data: Sequence[LabeledSequence]) -> EvalReport:
    return evaluate_tags(data, [tag_tokens(model, seq.tokens) for seq in data])


def sequence_loss(model: Model, seq: LabeledSequence) -> float:
    """Deterministic (dropout-free) loss of one sequence."""
    M, _ = forward(model, seq.tokens, train_mode=False)
    return loss_for_variant(model.config, M, model.transitions, model.vocab.encode_tags(seq.tags))[0]


def accumulate_gradients(model: Model, seq: LabeledSequence, train_mode: bool = False,
                         rng: SeededRng | None = None, scale: float = 1.0) -> float:
    M, cache = forward(model, seq.tokens, train_mode, rng)
    loss, dM, dA = loss_for_variant(model.config, M, model.transitions, model.vocab.encode_tags(seq.tags))
    backward(model, cache, scale * dM, None if dA is None else scale * dA)
    return loss


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_loss: float
    val_f1: float | None = None
    val_accuracy: float | None = None
    grad_norm: float = 0.0

    def to_line(self) -> str:
        def fmt(x):
            return "nan" if x is None else repr(float(x))
        return (f"epoch={self.epoch}\tloss={self.mean_loss!r}\tval_f1={fmt(self.val_f1)}"
                f"\tval_accuracy={fmt(self.val_accuracy)}\tgrad_norm={self.grad_norm!r}")


@dataclass
class TrainResult:
    model: Model  # final-epoch parameters
    best_values: dict[str, np.ndarray]
    best_epoch: int
    log: list[EpochRecord] = field(default_factory=list)

    def best_model(self) -> Model:
        m = Model(self.model.config, self.model.vocab)
        m.params.load(self.best_values)
        return m


def init_model(config: ModelConfig, vocab: Vocab) -> Model:
    return Model(config, vocab, SeededRng(config.seed, 0))


def train(config: ModelConfig, train_data: Sequence[LabeledSequence],
          val_data: Sequence[LabeledSequence] | None = None, vocab: Vocab | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Per-sequence SGD for ``config.epochs`` epochs.

    The best snapshot is the epoch with the highest validation F1 (earliest
    on ties); without validation data it is the final epoch.
    """
    if not train_data:
        raise DataError("empty training set")
    if vocab is None:
        vocab = build_vocab(train_data, config.min_frequency, config.lowercase)
    model = init_model(config, vocab)
    shuffle_rng = SeededRng(config.seed, 1)
    dropout_rng = SeededRng(config.seed, 2)
    encoded = [(seq, vocab.encode_tags(seq.tags)) for seq in train_data]
    records: list[EpochRecord] = []
    best_values = model.params.snapshot()
    best_epoch, best_f1 = 0, -1.0
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        norm_sum = 0.0
        for k in shuffle_rng.permutation(len(encoded)):
            seq, gold = encoded[k]
            M, cache = forward(model, seq.tokens, True, dropout_rng)
            loss, dM, dA = loss_for_variant(config, M, model.transitions, gold)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            backward(model, cache, dM, dA)
            norm_sum += sgd_step(model.params, config.lr, config.clip)
            total += loss
        rec = EpochRecord(epoch, total / len(encoded), grad_norm=norm_sum / len(encoded))
        if val_data:
            rep = evaluate(model, val_data)
            rec = replace(rec, val_f1=rep.f1, val_accuracy=rep.label_accuracy)
            if rep.f1 > best_f1:
                best_f1, best_epoch = rep.f1, epoch
                best_values = model.params.snapshot()
        else:
            best_epoch = epoch
        records.append(rec)
        log.debug(rec.to_line())
        if on_epoch is not None:
            on_epoch(rec)
    if not val_data:
        best_values = model.params.snapshot()
    return TrainResult(model, best_values, best_epoch, records)


@dataclass
class CrossValidation:
    reports: list[EvalReport]
    aggregate: EvalReport
    logs: list[list[EpochRecord]]


def _run_fold(args):
    config, fold, train_part, held_out = args
    fold_config = replace(config, seed=int(np.random.SeedSequence([config.seed, 1000 + fold]).generate_state(1, np.uint64)[0]))
    result = train(fold_config, train_part, None)
    return evaluate(result.model, held_out), result.log


def cross_validate(config: ModelConfig, data: Sequence[LabeledSequence], parallel: int = 1) -> CrossValidation:
    """Train on k-1 parts, score the final-epoch model on the held-out part.

    Each fold gets its own seed derived from (seed, fold index), so folds
    are independent and may run in parallel processes.
    """
    parts = kfold(data, config.folds, SeededRng(config.seed, 3))
    jobs = [(config, f, tr, ho) for f, (tr, ho) in enumerate(parts)]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_run_fold, jobs))
    else:
        results = [_run_fold(j) for j in jobs]
    reports = [r for r, _ in results]
    return CrossValidation(reports, aggregate(reports), [lg for _, lg in results])
