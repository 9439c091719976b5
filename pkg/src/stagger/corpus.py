"""Tokenization, BIO tagging, vocabularies, dataset files and splits."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, DataError, DimensionError, DomainError, ParseError
from .numeric import SeededRng

DEFAULT_ATTRIBUTE = "attribute"


class BioTag(str, Enum):
    B = "B"
    I = "I"  # noqa: E741
    O = "O"  # noqa: E741

    def label(self, attribute: str = DEFAULT_ATTRIBUTE) -> str:
        return "O" if self is BioTag.O else f"{self.value}-{attribute}"

    @classmethod
    def parse(cls, text: str, attribute: str = DEFAULT_ATTRIBUTE) -> "BioTag":
        if text == "O":
            return cls.O
        if text == f"B-{attribute}":
            return cls.B
        if text == f"I-{attribute}":
            return cls.I
        raise ValueError(f"unknown tag {text!r} (attribute {attribute!r})")


# Tag ids: O first so all-tied scores decode to "no extraction".
TAG_SET: tuple[BioTag, ...] = (BioTag.O, BioTag.B, BioTag.I)


@dataclass(frozen=True)
class Span:
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise DomainError(f"invalid span [{self.start}, {self.end})")

    def __len__(self):
        return self.end - self.start


@dataclass(frozen=True)
class LabeledSequence:
    tokens: tuple[str, ...]
    tags: tuple[BioTag, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "tags", tuple(BioTag(t) for t in self.tags))
        if len(self.tokens) != len(self.tags):
            raise DimensionError(f"{len(self.tokens)} tokens but {len(self.tags)} tags")

    def __len__(self):
        return len(self.tokens)

    def spans(self) -> list[Span]:
        return [s for s, _ in decode_spans(self.tokens, self.tags)]


def tokenize(title: str) -> tuple[str, ...]:
    tokens = tuple(title.split())
    if not tokens:
        raise DomainError("empty title")
    return tokens


def encode_bio(tokens: Sequence[str], span: Span | None = None) -> tuple[BioTag, ...]:
    n = len(tokens)
    tags = [BioTag.O] * n
    if span is not None:
        if span.end > n:
            raise DomainError(f"span [{span.start}, {span.end}) out of range for {n} tokens")
        tags[span.start] = BioTag.B
        for i in range(span.start + 1, span.end):
            tags[i] = BioTag.I
    return tuple(tags)


def decode_spans(tokens: Sequence[str], tags: Sequence[BioTag | str]) -> list[tuple[Span, str]]:
    """Collect ``B I*`` runs as spans with their joined text.

    An ``I`` that follows ``O`` (or starts the sequence) opens a new span,
    as in IOB2-lenient scoring.
    """
    if len(tokens) != len(tags):
        raise DimensionError(f"{len(tokens)} tokens but {len(tags)} tags")
    out = []
    start = None
    for i, tag in enumerate(tags):
        tag = BioTag(tag)
        if tag is BioTag.B or (tag is BioTag.I and start is None):
            if start is not None:
                out.append(Span(start, i))
            start = i
        elif tag is BioTag.O and start is not None:
            out.append(Span(start, i))
            start = None
    if start is not None:
        out.append(Span(start, len(tags)))
    return [(s, " ".join(tokens[s.start:s.end])) for s in out]


def read_conll(path, attribute: str = DEFAULT_ATTRIBUTE) -> list[LabeledSequence]:
    """Read ``token<TAB>tag`` lines, one blank line between sequences."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"no such dataset file: {path}") from None
    data: list[LabeledSequence] = []
    tokens: list[str] = []
    tags: list[BioTag] = []
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r")
        if line == "":
            if tokens:
                data.append(LabeledSequence(tuple(tokens), tuple(tags)))
                tokens, tags = [], []
            else:
                # leading blank line or a second consecutive one
                raise ParseError("empty record (extra blank line)", path, lineno)
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(f"expected 2 tab-separated fields, got {len(fields)}", path, lineno)
        token, tag = fields
        if not token or any(c.isspace() for c in token):
            raise ParseError(f"invalid token {token!r}", path, lineno)
        try:
            tags.append(BioTag.parse(tag, attribute))
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from None
        tokens.append(token)
    if tokens:
        data.append(LabeledSequence(tuple(tokens), tuple(tags)))
    return data


def write_conll(path, data: Iterable[LabeledSequence], attribute: str = DEFAULT_ATTRIBUTE):
    chunks = []
    for seq in data:
        chunks.append("".join(f"{tok}\t{tag.label(attribute)}\n" for tok, tag in zip(seq.tokens, seq.tags)))
    Path(path).write_text("\n".join(chunks), encoding="utf-8")


def read_titles(path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise DataError(f"no such titles file: {path}") from None


def split_dataset(data: Sequence, ratios=(0.6, 0.2, 0.2), rng: SeededRng | None = None):
    """Shuffle with ``rng`` and cut into train/val/test.

    Val and test sizes are floored; the remainder goes to train.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    if not data:
        raise DataError("cannot split an empty dataset")
    n = len(data)
    order = rng.permutation(n) if rng is not None else range(n)
    shuffled = [data[i] for i in order]
    n_val = math.floor(n * ratios[1] + 1e-9)
    n_test = math.floor(n * ratios[2] + 1e-9)
    n_train = n - n_val - n_test
    return (
        shuffled[:n_train],
        shuffled[n_train:n_train + n_val],
        shuffled[n_train + n_val:],
    )


def kfold(data: Sequence, k: int, rng: SeededRng | None = None):
    """Return ``k`` (train, held_out) pairs; held-out parts differ in size by at most one."""
    if k < 2:
        raise ConfigError(f"k must be at least 2, got {k}")
    if k > len(data):
        raise ConfigError(f"k={k} exceeds dataset size {len(data)}")
    n = len(data)
    order = list(rng.permutation(n)) if rng is not None else list(range(n))
    base, extra = divmod(n, k)
    folds = []
    pos = 0
    for f in range(k):
        size = base + (1 if f < extra else 0)
        folds.append(order[pos:pos + size])
        pos += size
    out = []
    for f in range(k):
        held = set(folds[f])
        out.append((
            [data[i] for i in order if i not in held],
            [data[i] for i in folds[f]],
        ))
    return out


@dataclass
class Vocab:
    """Symbol tables. ``words`` and ``chars`` hold real symbols only, with
    ids starting at 2; ids 0 and 1 are the padding and unknown rows.
    """

    words: dict[str, int]
    chars: dict[str, int]
    tags: tuple[BioTag, ...] = TAG_SET
    lowercase: bool = False
    min_frequency: int = 1
    tag_ids: dict[BioTag, int] = field(init=False, repr=False)

    PAD_ID = 0
    UNK_ID = 1
    N_RESERVED = 2

    def __post_init__(self):
        self.tags = tuple(BioTag(t) for t in self.tags)
        self.tag_ids = {t: i for i, t in enumerate(self.tags)}
        for table in (self.words, self.chars):
            if sorted(table.values()) != list(range(self.N_RESERVED, self.N_RESERVED + len(table))):
                raise DataError("vocabulary ids must be dense and start after the reserved rows")

    @property
    def n_words(self) -> int:
        return len(self.words) + self.N_RESERVED

    @property
    def n_chars(self) -> int:
        return len(self.chars) + self.N_RESERVED

    @property
    def n_tags(self) -> int:
        return len(self.tags)

    def word_id(self, word: str) -> int:
        if self.lowercase:
            word = word.lower()
        return self.words.get(word, self.UNK_ID)

    def char_ids(self, word: str) -> list[int]:
        return [self.chars.get(c, self.UNK_ID) for c in word]

    def encode_tags(self, tags: Sequence[BioTag]) -> list[int]:
        return [self.tag_ids[BioTag(t)] for t in tags]

    def decode_tags(self, ids: Sequence[int]) -> tuple[BioTag, ...]:
        return tuple(self.tags[i] for i in ids)


def build_vocab(train: Sequence[LabeledSequence], min_frequency: int = 1, lowercase: bool = False) -> Vocab:
    """Word table from tokens seen at least ``min_frequency`` times; every
    seen character gets an id. Symbols are numbered in sorted order.
    """
    if not train:
        raise DataError("cannot build a vocabulary from an empty training set")
    if min_frequency < 1:
        raise ConfigError(f"min_frequency must be >= 1, got {min_frequency}")
    counts: Counter[str] = Counter()
    chars: set[str] = set()
    for seq in train:
        for tok in seq.tokens:
            counts[tok.lower() if lowercase else tok] += 1
            chars.update(tok)
    kept = sorted(w for w, c in counts.items() if c >= min_frequency)
    words = {w: i + Vocab.N_RESERVED for i, w in enumerate(kept)}
    char_table = {c: i + Vocab.N_RESERVED for i, c in enumerate(sorted(chars))}
    return Vocab(words, char_table, TAG_SET, lowercase, min_frequency)
