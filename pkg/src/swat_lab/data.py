"""Corpus ingestion, byte-level tokenization, and block batching.

Tokens are raw bytes (ids 0..255), so the vocabulary is closed and the
tokenizer is a bijection. Three special ids above the byte range are reserved
and documented but never emitted by the tokenizer; the start-of-sequence id
anchors every training block and evaluation stream, mirroring how models with
a BOS token consume text. Splits are contiguous 8:1:1 by document; batching
tiles the train split with fixed-size blocks so training sequence length can
exceed the attention window, which is the whole point of window-restricted
training.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, DataError
from .rng import substream

BYTE_VOCAB = 256
# Reserved, never produced by tokenize_bytes; models size their vocab to include them.
SPECIALS = {"bos": 256, "eos": 257, "pad": 258}
BOS_ID = SPECIALS["bos"]
DEFAULT_VOCAB_SIZE = BYTE_VOCAB + len(SPECIALS)

SPLIT_RATIOS = (8, 1, 1)


def tokenize_bytes(data: bytes | str) -> np.ndarray:
    """Identity byte -> id mapping; str input is encoded as UTF-8 first."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    return np.frombuffer(bytes(data), dtype=np.uint8).astype(np.int64)


def detokenize(ids: np.ndarray) -> bytes:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= BYTE_VOCAB):
        raise DataError("detokenize accepts byte ids 0..255 only")
    return ids.astype(np.uint8).tobytes()


def anchor_stream(tokens: np.ndarray) -> np.ndarray:
    """Prepend the start-of-sequence id, the shape every model input takes."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1:
        raise DataError("anchor_stream expects a 1-d token stream")
    return np.concatenate([np.array([BOS_ID], dtype=np.int64), tokens])


@dataclass
class Corpus:
    """Token stream split 8:1:1 into train/val/test, contiguous by document."""

    paths: tuple[str, ...]
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    split_manifest: dict

    @property
    def total_tokens(self) -> int:
        return int(self.train.size + self.val.size + self.test.size)


def _split_offsets(doc_lengths: list[int]) -> tuple[int, int]:
    """Byte offsets of the train/val and val/test boundaries.

    With >= 3 documents the boundaries snap to the document edges closest to
    the 8:1:1 targets; otherwise they fall at the exact byte fractions.
    """
    total = sum(doc_lengths)
    t_train = total * SPLIT_RATIOS[0] / sum(SPLIT_RATIOS)
    t_val = total * (SPLIT_RATIOS[0] + SPLIT_RATIOS[1]) / sum(SPLIT_RATIOS)
    if len(doc_lengths) < 3:
        return int(t_train), int(t_val)
    edges = np.cumsum(doc_lengths)
    # Interior edges only, keeping all three splits nonempty.
    cut1 = int(edges[np.abs(edges[:-2] - t_train).argmin()])
    later = edges[(edges > cut1) & (edges < total)]
    if later.size == 0:
        return int(t_train), int(t_val)
    cut2 = int(later[np.abs(later - t_val).argmin()])
    return cut1, cut2


def corpus_from_bytes(data: bytes, name: str = "<memory>", seed: int = 0) -> Corpus:
    return _build_corpus([(name, data)], seed)


def load_corpus(source, seed: int = 0) -> Corpus:
    """Load UTF-8 text from a file, a directory of files, or a list of paths."""
    if isinstance(source, (str, Path)):
        src = Path(source)
        if src.is_dir():
            paths = sorted(p for p in src.iterdir() if p.is_file())
        else:
            paths = [src]
    else:
        paths = [Path(p) for p in source]
    if not paths:
        raise DataError("no corpus files found")
    docs = []
    for p in paths:
        if not p.exists():
            raise DataError(f"corpus path does not exist: {p}")
        docs.append((str(p), p.read_bytes()))
    return _build_corpus(docs, seed)


def _build_corpus(docs: list[tuple[str, bytes]], seed: int) -> Corpus:
    stream = b"".join(d for _, d in docs)
    if len(stream) < 10:
        raise DataError("corpus too small to split 8:1:1")
    cut1, cut2 = _split_offsets([len(d) for _, d in docs])
    tokens = tokenize_bytes(stream)
    manifest = {
        "documents": [{"path": name, "bytes": len(d)} for name, d in docs],
        "splits": {
            "train": {"start_byte": 0, "end_byte": cut1},
            "val": {"start_byte": cut1, "end_byte": cut2},
            "test": {"start_byte": cut2, "end_byte": len(stream)},
        },
        "ratios": "8:1:1",
        "seed": seed,
    }
    return Corpus(
        paths=tuple(name for name, _ in docs),
        train=tokens[:cut1],
        val=tokens[cut1:cut2],
        test=tokens[cut2:],
        split_manifest=manifest,
    )


@dataclass(frozen=True)
class BatchSpec:
    """Block geometry: a start marker plus train_length content ids per block.

    Inputs are block[:-1] and targets block[1:], so every content token is
    predicted and position 0 is always the start marker.
    """

    batch_size_tokens: int
    train_length: int
    train_window: int

    def __post_init__(self):
        if self.train_window < 1 or self.train_length < 1 or self.batch_size_tokens < 1:
            raise ConfigError("batch spec counts must be >= 1")
        if self.train_length < self.train_window:
            raise ConfigError(
                f"train_length {self.train_length} must be >= train_window {self.train_window}"
            )
        if self.train_length % self.train_window:
            raise ConfigError(
                "train_length must be a multiple of train_window (the chunk granularity)"
            )
        if self.batch_size_tokens < self.train_length:
            raise ConfigError("batch_size_tokens must fit at least one block")

    @property
    def blocks_per_batch(self) -> int:
        return self.batch_size_tokens // self.train_length


def epoch_blocks(corpus: Corpus, spec: BatchSpec, seed: int, epoch: int) -> np.ndarray:
    """All train blocks for one epoch in deterministic shuffled order, [n_blocks, L+1].

    Each block is the start-of-sequence id followed by train_length corpus
    tokens; blocks tile the train split end to end with stride train_length
    and the tail shorter than one block is dropped.
    """
    stride = spec.train_length
    n_blocks = corpus.train.size // stride
    if n_blocks == 0:
        raise DataError(
            f"train split of {corpus.train.size} tokens is smaller than one "
            f"block of {stride}"
        )
    content = corpus.train[: n_blocks * stride].reshape(n_blocks, stride)
    bos = np.full((n_blocks, 1), BOS_ID, dtype=np.int64)
    blocks = np.concatenate([bos, content.astype(np.int64)], axis=1)
    order = substream(seed, f"epoch:{epoch}").permutation(n_blocks)
    return blocks[order]


def make_batches(corpus: Corpus, spec: BatchSpec, seed: int) -> Iterator[np.ndarray]:
    """Endless batches [B, L+1], reshuffled each epoch; partial tail batches dropped."""
    b = spec.blocks_per_batch
    epoch = 0
    while True:
        blocks = epoch_blocks(corpus, spec, seed, epoch)
        for start in range(0, blocks.shape[0] - b + 1, b):
            yield blocks[start : start + b]
        epoch += 1


# ---------------------------------------------------------------------------
# synthetic sample corpus

_NOUNS = (
    "river delta glacier canyon meadow forest harbor island prairie summit valley "
    "reef lagoon dune tundra marsh orchard quarry ridge basin plateau grove cliff "
    "estuary fjord moraine atoll savanna steppe foothill headland strait"
).split()
_ADJS = (
    "quiet ancient narrow bright frozen distant shallow fertile rugged misty calm "
    "windswept remote verdant arid stony golden silent broad pale dim restless"
).split()
_VERBS = (
    "borders shelters overlooks feeds drains shadows circles crosses guards splits "
    "joins frames warms cools hides reveals shapes erodes nourishes divides"
).split()
_ADVS = "slowly quietly steadily gradually barely rarely often gently abruptly".split()


_HEX = "0123456789abcdef"


def synthetic_text(n_bytes: int, seed: int = 0) -> bytes:
    """Deterministic English-like survey prose for CI and desk-scale runs.

    Paragraphs keep a small active vocabulary so byte models see local
    spelling structure and paragraph-scale lexical coherence. Most paragraphs
    also carry a random survey code that is introduced once and cited again
    later, giving attention a genuine within-context retrieval job: the code
    is unpredictable at first sight and copyable afterwards. One-off grid
    codes add irreducible entropy with nothing to retrieve.
    """
    if n_bytes < 1:
        raise DataError("n_bytes must be >= 1")
    rng = substream(seed, "synthetic-text")

    def hex_code(n: int) -> str:
        return "".join(rng.choice(list(_HEX), size=n))

    pieces: list[str] = []
    size = 0
    while size < n_bytes:
        nouns = rng.choice(_NOUNS, size=8, replace=False)
        adjs = rng.choice(_ADJS, size=5, replace=False)
        verbs = rng.choice(_VERBS, size=5, replace=False)
        code = hex_code(6) if rng.random() < 0.7 else None
        sentences = []
        if code is not None:
            sentences.append(
                f"Survey {code} charts the {rng.choice(adjs)} {rng.choice(nouns)}."
            )
        for _ in range(int(rng.integers(4, 9))):
            a, b = rng.choice(nouns, size=2, replace=False)
            form = int(rng.integers(0, 3))
            if form == 0:
                s = f"The {rng.choice(adjs)} {a} {rng.choice(verbs)} the {b}"
            elif form == 1:
                s = f"A {a} {rng.choice(verbs)} the {rng.choice(adjs)} {b} {rng.choice(_ADVS)}"
            else:
                s = f"Beyond the {b}, the {a} {rng.choice(verbs)} the {rng.choice(adjs)} {rng.choice(nouns)}"
            if rng.random() < 0.2:
                s += f" near grid {hex_code(4)}"
            if code is not None and rng.random() < 0.35:
                s += f" under survey {code}"
            sentences.append(s + ".")
        para = " ".join(sentences) + "\n\n"
        pieces.append(para)
        size += len(para)
    return "".join(pieces).encode("ascii")[:n_bytes]
