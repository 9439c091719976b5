"""Versioned single-file model container.

Layout::

    STAGGER-MODEL <version>\\n
    <header byte length>\\n
    <JSON header: config, vocab, tensor names and shapes, metadata>\\n
    for each tensor, in header order:
        uint32 ndim, ndim x uint64 dims, prod(dims) x float64   (little-endian, row-major)

The header is written with sorted keys, so equal models give equal bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .corpus import DEFAULT_ATTRIBUTE, BioTag, Vocab
from .errors import ModelFormatError
from .training import Model, ModelConfig

MAGIC = b"STAGGER-MODEL"
FORMAT_VERSION = 1


def _vocab_to_json(vocab: Vocab) -> dict:
    return {
        "words": sorted(vocab.words, key=vocab.words.__getitem__),
        "chars": sorted(vocab.chars, key=vocab.chars.__getitem__),
        "tags": [t.value for t in vocab.tags],
        "lowercase": vocab.lowercase,
        "min_frequency": vocab.min_frequency,
    }


def _vocab_from_json(d: dict) -> Vocab:
    off = Vocab.N_RESERVED
    return Vocab(
        words={w: i + off for i, w in enumerate(d["words"])},
        chars={c: i + off for i, c in enumerate(d["chars"])},
        tags=tuple(BioTag(t) for t in d["tags"]),
        lowercase=bool(d["lowercase"]),
        min_frequency=int(d["min_frequency"]),
    )


def dumps(model: Model, metadata: dict | None = None, attribute: str = DEFAULT_ATTRIBUTE) -> bytes:
    header = {
        "format_version": FORMAT_VERSION,
        "attribute": attribute,
        "config": model.config.to_dict(),
        "vocab": _vocab_to_json(model.vocab),
        "tensors": [{"name": t.name, "shape": list(t.shape)} for t in model.params],
        "metadata": metadata or {},
    }
    head = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8") + b"\n"
    parts = [MAGIC + f" {FORMAT_VERSION}\n".encode(), f"{len(head)}\n".encode(), head]
    for t in model.params:
        parts.append(struct.pack("<I", t.value.ndim))
        parts.append(struct.pack(f"<{t.value.ndim}Q", *t.shape))
        parts.append(np.ascontiguousarray(t.value, dtype="<f8").tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> tuple[Model, dict]:
    """Parse a model file; returns the model and the header dict."""
    try:
        first, rest = blob.split(b"\n", 1)
        magic, version = first.split(b" ")
    except ValueError:
        raise ModelFormatError("not a model file (bad first line)") from None
    if magic != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    if version != str(FORMAT_VERSION).encode():
        raise ModelFormatError(f"unsupported model format version {version.decode(errors='replace')!r}; "
                               f"this build reads version {FORMAT_VERSION}")
    try:
        size_line, rest = rest.split(b"\n", 1)
        size = int(size_line)
        header = json.loads(rest[:size].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"corrupt model header: {exc}") from None
    body = memoryview(rest)[size:]
    try:
        config = ModelConfig.from_dict(header["config"])
        model = Model(config, _vocab_from_json(header["vocab"]))
        stored = [(t["name"], t["shape"]) for t in header["tensors"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"corrupt model header: {exc!r}") from None
    expected = [(t.name, list(t.shape)) for t in model.params]
    if expected != stored:
        raise ModelFormatError("tensor names or shapes do not match the stored configuration")
    pos = 0
    for t in model.params:
        try:
            (ndim,) = struct.unpack_from("<I", body, pos)
            pos += 4
            dims = struct.unpack_from(f"<{ndim}Q", body, pos)
            pos += 8 * ndim
        except struct.error:
            raise ModelFormatError(f"truncated model file at tensor {t.name}") from None
        if tuple(dims) != t.shape:
            raise ModelFormatError(f"{t.name}: stored shape {dims}, expected {t.shape}")
        count = int(np.prod(dims, dtype=np.int64))
        if pos + 8 * count > len(body):
            raise ModelFormatError(f"truncated model file at tensor {t.name}")
        t.value[...] = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(dims)
        pos += 8 * count
    if pos != len(body):
        raise ModelFormatError("trailing bytes after the last tensor")
    return model, header


def save(path, model: Model, metadata: dict | None = None, attribute: str = DEFAULT_ATTRIBUTE):
    Path(path).write_bytes(dumps(model, metadata, attribute))


def load(path) -> tuple[Model, dict]:
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError:
        raise ModelFormatError(f"no such model file: {path}") from None
    return loads(blob)
