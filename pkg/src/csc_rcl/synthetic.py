"""Toy lexicon and clean-text generator for desk-scale experiments.

The toy language draws sentences from a fixed word list, so that a corrupted
character can be recovered from its word context. Characters are real CJK
codepoints with invented toneless readings and confusion sets.

    python -m csc_rcl.synthetic --out toy/ --chars 500 --sentences 2000
"""

from __future__ import annotations

import argparse
import itertools
from pathlib import Path

import numpy as np

from .lexicon import Lexicon

_INITIALS = ["b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q", "x",
             "zh", "ch", "sh", "r", "z", "c", "s", "y", "w"]
_FINALS = ["a", "o", "e", "i", "u", "ai", "ei", "ao", "ou", "an", "en", "ang", "eng", "ong"]
PUNCT = "，。"


def make_toy_lexicon(n_chars: int = 500, seed: int = 0, *, mean_homophones: float = 3.0,
                     confusion_size: tuple[int, int] = (1, 3)) -> Lexicon:
    rng = np.random.default_rng(seed)
    chars = [chr(0x4E00 + 7 * i) for i in range(n_chars)]
    syllables = ["".join(p) for p in itertools.product(_INITIALS, _FINALS)]
    n_keys = max(1, int(round(n_chars / mean_homophones)))
    keys = rng.choice(len(syllables), size=n_keys, replace=False)
    # every key gets at least one character
    assign = np.concatenate([np.arange(n_keys), rng.integers(0, n_keys, n_chars - n_keys)])
    rng.shuffle(assign)
    pinyin = {ch: syllables[keys[a]] for ch, a in zip(chars, assign)}
    confusion = {}
    lo, hi = confusion_size
    for i, ch in enumerate(chars):
        size = int(rng.integers(lo, hi + 1))
        # visually similar neighbours: nearby codepoint slots
        cand = [j for j in range(max(0, i - 6), min(n_chars, i + 7)) if j != i]
        pick = rng.choice(cand, size=min(size, len(cand)), replace=False)
        confusion[ch] = "".join(chars[j] for j in sorted(pick))
    return Lexicon.from_tables(chars + list(PUNCT), pinyin, confusion)


def make_word_list(lex: Lexicon, n_words: int, seed: int = 0) -> list[str]:
    rng = np.random.default_rng(seed + 1)
    chinese = [c for c in lex.chars[2:] if lex.char_id(c) in lex.pinyin]
    order = list(rng.permutation(len(chinese)))
    words = []
    while len(words) < n_words:
        n = int(rng.choice([2, 2, 3]))
        if len(order) < n:
            order.extend(rng.permutation(len(chinese)))
        words.append("".join(chinese[order.pop()] for _ in range(n)))
    return words


def make_sentences(lex: Lexicon, n_sentences: int, seed: int = 0, *, n_words: int = 200,
                   words_per_sentence: tuple[int, int] = (3, 6)) -> list[str]:
    words = make_word_list(lex, n_words, seed)
    rng = np.random.default_rng(seed + 2)
    out = []
    lo, hi = words_per_sentence
    for _ in range(n_sentences):
        k = int(rng.integers(lo, hi + 1))
        picks = rng.integers(0, len(words), k)
        body = "".join(words[j] for j in picks)
        out.append(body + PUNCT[int(rng.integers(0, 2))])
    return out


def write_lexicon_files(lex: Lexicon, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"vocab": out / "vocab.txt", "pinyin": out / "pinyin.tsv",
             "confusion": out / "confusion.tsv"}
    with open(paths["vocab"], "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(ch + "\n" for ch in lex.chars[2:])
    with open(paths["pinyin"], "w", encoding="utf-8", newline="\n") as fh:
        for cid in sorted(lex.pinyin):
            fh.write(f"{lex.char(cid)}\t{lex.pinyin[cid]}\n")
    with open(paths["confusion"], "w", encoding="utf-8", newline="\n") as fh:
        for cid in sorted(lex.confusion):
            members = "".join(lex.char(m) for m in sorted(lex.confusion[cid]))
            fh.write(f"{lex.char(cid)}\t{members}\n")
    return paths


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description="write a toy lexicon and clean sentences")
    ap.add_argument("--out", required=True)
    ap.add_argument("--chars", type=int, default=500)
    ap.add_argument("--sentences", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    lex = make_toy_lexicon(args.chars, args.seed)
    write_lexicon_files(lex, args.out)
    with open(Path(args.out) / "clean.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(s + "\n" for s in make_sentences(lex, args.sentences, args.seed))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
