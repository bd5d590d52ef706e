"""Parallel corpora, synthetic error injection and sentence minibatches."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CorpusError
from .lexicon import PAD_ID, UNK_ID, Lexicon

logger = logging.getLogger(__name__)

MAX_LEN = 128


@dataclass(frozen=True)
class SentencePair:
    source: tuple[int, ...]
    target: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.source) != len(self.target):
            raise CorpusError(
                f"source/target length mismatch ({len(self.source)} vs {len(self.target)})"
            )
        if not self.source:
            raise CorpusError("empty sentence")

    def __len__(self) -> int:
        return len(self.source)

    @property
    def error_positions(self) -> set[int]:
        return {i for i, (s, t) in enumerate(zip(self.source, self.target)) if s != t}


@dataclass(frozen=True, eq=False)
class Batch:
    """Sentences of one minibatch plus the flat character view used by RCL.

    ``anchors[k] = (pair_index, position)`` in (pair, position) order.
    """

    pairs: tuple[SentencePair, ...]
    anchors: tuple[tuple[int, int], ...] = field(init=False)

    def __post_init__(self) -> None:
        anchors = tuple(
            (p, i)
            for p, pair in enumerate(self.pairs)
            for i, tok in enumerate(pair.source)
            if tok != PAD_ID
        )
        object.__setattr__(self, "anchors", anchors)

    @property
    def K(self) -> int:
        return len(self.anchors)

    @property
    def lengths(self) -> list[int]:
        return [len(p) for p in self.pairs]

    @cached_property
    def source_ids(self) -> np.ndarray:
        ids = np.fromiter((self.pairs[p].source[i] for p, i in self.anchors), np.int64, self.K)
        ids.setflags(write=False)
        return ids

    @cached_property
    def target_ids(self) -> np.ndarray:
        ids = np.fromiter((self.pairs[p].target[i] for p, i in self.anchors), np.int64, self.K)
        ids.setflags(write=False)
        return ids

    def padded_sources(self) -> tuple[np.ndarray, np.ndarray]:
        """(ids, mask) of shape (B, N_max); mask is True on real tokens."""
        n = max(self.lengths)
        ids = np.full((len(self.pairs), n), PAD_ID, dtype=np.int64)
        for b, pair in enumerate(self.pairs):
            ids[b, : len(pair)] = pair.source
        return ids, ids != PAD_ID


def tokenize(text: str, lex: Lexicon) -> tuple[list[int], int]:
    """Return ids and the number of unknown characters mapped to UNK."""
    ids = lex.encode(text)
    return ids, sum(1 for i in ids if i == UNK_ID)


def detokenize(ids: Iterable[int], lex: Lexicon) -> str:
    return lex.decode(ids)


def pair_from_text(source: str, target: str, lex: Lexicon) -> SentencePair:
    src, _ = tokenize(lex.simplify(source), lex)
    tgt, _ = tokenize(lex.simplify(target), lex)
    return SentencePair(tuple(src), tuple(tgt))


def read_tsv_pairs(path: str | Path) -> list[tuple[int, str, str]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise CorpusError(f"{path}:{lineno}: expected source<TAB>target, got {len(cols)} columns")
            out.append((lineno, cols[0], cols[1]))
    return out


def load_corpus(path: str | Path, lex: Lexicon, *, max_len: int = MAX_LEN) -> list[SentencePair]:
    pairs = []
    unk = 0
    missing: set[str] = set()
    for lineno, source, target in read_tsv_pairs(path):
        source, target = lex.simplify(source), lex.simplify(target)
        if len(source) != len(target):
            raise CorpusError(
                f"{path}:{lineno}: length mismatch between source ({len(source)}) "
                f"and target ({len(target)})"
            )
        if len(source) > max_len:
            raise CorpusError(f"{path}:{lineno}: sentence longer than {max_len} characters")
        if not lex.allow_missing_pinyin:
            missing |= lex.missing_pinyin(source) | lex.missing_pinyin(target)
        src, n1 = tokenize(source, lex)
        tgt, n2 = tokenize(target, lex)
        unk += n1 + n2
        try:
            pairs.append(SentencePair(tuple(src), tuple(tgt)))
        except CorpusError as exc:
            raise CorpusError(f"{path}:{lineno}: {exc}") from None
    if missing:
        raise CorpusError(
            f"{path}: characters without pinyin: {''.join(sorted(missing))} "
            "(use --allow-missing-pinyin to accept them)"
        )
    if unk:
        logger.warning("%s: %d unknown characters mapped to UNK", path, unk)
    return pairs


def write_corpus(path: str | Path, pairs: Sequence[SentencePair], lex: Lexicon) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pair in pairs:
            fh.write(f"{lex.decode(pair.source)}\t{lex.decode(pair.target)}\n")


@dataclass
class InjectionStats:
    sentences: int = 0
    chars: int = 0
    corrupted: int = 0
    pinyin: int = 0
    confusion: int = 0
    no_candidate: int = 0


def inject_errors(
    targets: Sequence[str],
    lex: Lexicon,
    error_rate: float,
    mix: tuple[float, float] = (0.5, 0.5),
    seed: int = 0,
    *,
    stats: InjectionStats | None = None,
) -> list[SentencePair]:
    """Corrupt clean sentences with homophone / confusion-set substitutions.

    Every character is selected independently with probability ``error_rate``.
    A selected character is replaced by a uniformly drawn homophone with
    probability ``mix[0]``, otherwise by a uniformly drawn confusion-set member.
    If the chosen channel has no candidates the other channel is used; with no
    candidates at all the character is left as is.
    """
    p_pinyin, p_confusion = mix
    if not 0.0 <= error_rate <= 1.0:
        raise ValueError("error_rate must lie in [0, 1]")
    if min(mix) < 0 or abs(p_pinyin + p_confusion - 1.0) > 1e-9:
        raise ValueError("mix probabilities must be non-negative and sum to 1")
    stats = stats if stats is not None else InjectionStats()
    rng = np.random.default_rng(seed)
    out = []
    for text in targets:
        tgt, _ = tokenize(lex.simplify(text), lex)
        src = list(tgt)
        u = rng.random(len(tgt))
        for pos, cid in enumerate(tgt):
            if u[pos] >= error_rate:
                continue
            homo = lex.homophones(cid)
            conf = sorted(lex.confusion_of(cid))
            use_pinyin = rng.random() < p_pinyin
            pool = homo if use_pinyin else conf
            if not pool:
                use_pinyin = not use_pinyin
                pool = homo if use_pinyin else conf
            if not pool:
                stats.no_candidate += 1
                continue
            src[pos] = int(pool[rng.integers(len(pool))])
            stats.corrupted += 1
            if use_pinyin:
                stats.pinyin += 1
            else:
                stats.confusion += 1
        stats.sentences += 1
        stats.chars += len(tgt)
        out.append(SentencePair(tuple(src), tuple(tgt)))
    return out


def write_sidecar(
    path: str | Path, *, seed: int, error_rate: float, mix: tuple[float, float], stats: InjectionStats
) -> None:
    payload = {
        "seed": seed,
        "error_rate": error_rate,
        "mix": {"pinyin": mix[0], "confusion": mix[1]},
        "counts": vars(stats),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


def make_batches(
    pairs: Sequence[SentencePair], batch_size: int, shuffle_seed: int | None = None
) -> list[Batch]:
    """Group sentences into batches. ``shuffle_seed=None`` keeps corpus order."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not pairs:
        raise CorpusError("cannot batch an empty corpus")
    order = np.arange(len(pairs))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(pairs))
    return [
        Batch(tuple(pairs[j] for j in order[k : k + batch_size]))
        for k in range(0, len(pairs), batch_size)
    ]
