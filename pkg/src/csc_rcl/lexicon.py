"""Character vocabulary, toneless pinyin, confusion sets and the trad->simp map.

File formats (all UTF-8):

* vocab: one character per line; line ``n`` (1-based) gets id ``n + 1``.
  Ids 0 and 1 are the implicit ``<pad>`` and ``<unk>`` entries.
* pinyin: ``char<TAB>reading``. Tone digits and tone marks are stripped. When
  several readings are listed (separated by spaces, commas, ``/`` or ``|``)
  the first one is used.
* confusion: ``char<TAB>members``; members is a run of characters, e.g.
  ``欢\t观欣``.
* simp map: ``trad<TAB>simp``.
"""

from __future__ import annotations

import hashlib
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import LexiconError

logger = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1
NO_PINYIN = -1

_READING_SPLIT = re.compile(r"[\s,/|;]+")
_KEY_RE = re.compile(r"[a-z]+")


def strip_tone(reading: str) -> str:
    """Reduce a pinyin reading to its bare letter cluster.

    >>> strip_tone("xi3"), strip_tone("xǐ"), strip_tone("lü4"), strip_tone("Nu:")
    ('xi', 'xi', 'lv', 'nv')
    """
    s = reading.strip().lower()
    s = s.replace("u:", "v").replace("ü", "v").replace("ǖ", "v").replace("ǘ", "v")
    s = s.replace("ǚ", "v").replace("ǜ", "v")
    s = unicodedata.normalize("NFD", s)
    s = "".join(ch for ch in s if not unicodedata.combining(ch))
    s = s.rstrip("012345")
    if not _KEY_RE.fullmatch(s):
        raise ValueError(f"not a pinyin reading: {reading!r}")
    return s


def is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return (
        0x4E00 <= cp <= 0x9FFF
        or 0x3400 <= cp <= 0x4DBF
        or 0x20000 <= cp <= 0x2EBEF
        or 0xF900 <= cp <= 0xFAFF
    )


def _tsv_lines(path: Path) -> Iterator[tuple[int, list[str]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            yield lineno, line.split("\t")


def _single(value: str, path: Path, lineno: int) -> str:
    if len(value) != 1:
        raise LexiconError(f"{path}:{lineno}: expected a single character, got {value!r}")
    return value


@dataclass(frozen=True, eq=False)
class Lexicon:
    """Immutable after construction. Build through :func:`load_lexicon` or
    :meth:`Lexicon.from_tables`."""

    chars: tuple[str, ...]
    char_to_id: dict[str, int]
    pinyin: dict[int, str]
    confusion: dict[int, frozenset[int]]
    simp_map: dict[str, str] = field(default_factory=dict)
    allow_missing_pinyin: bool = False
    duplicates: int = 0

    def __post_init__(self) -> None:
        keys = sorted(set(self.pinyin.values()))
        key_index = {k: n for n, k in enumerate(keys)}
        pin = np.full(len(self.chars), NO_PINYIN, dtype=np.int64)
        for cid, key in self.pinyin.items():
            pin[cid] = key_index[key]
        pin.setflags(write=False)
        object.__setattr__(self, "pinyin_ids", pin)

        indptr = np.zeros(len(self.chars) + 1, dtype=np.int64)
        members: list[int] = []
        for cid in range(len(self.chars)):
            conf = sorted(self.confusion.get(cid, ()))
            members.extend(conf)
            indptr[cid + 1] = len(members)
        indices = np.asarray(members, dtype=np.int64)
        indptr.setflags(write=False)
        indices.setflags(write=False)
        object.__setattr__(self, "confusion_indptr", indptr)
        object.__setattr__(self, "confusion_indices", indices)

        homophones: dict[str, list[int]] = {}
        for cid in sorted(self.pinyin):
            homophones.setdefault(self.pinyin[cid], []).append(cid)
        object.__setattr__(self, "_homophones", {k: tuple(v) for k, v in homophones.items()})

    # construction -----------------------------------------------------------

    @classmethod
    def from_tables(
        cls,
        chars: Iterable[str],
        pinyin: dict[str, str] | None = None,
        confusion: dict[str, Iterable[str]] | None = None,
        simp_map: dict[str, str] | None = None,
        *,
        allow_missing_pinyin: bool = False,
        symmetrize_confusion: bool = False,
    ) -> "Lexicon":
        """Build a lexicon from in-memory tables (keys are characters)."""
        table = [PAD, UNK]
        c2i: dict[str, int] = {}
        dup = 0
        for ch in chars:
            if ch in c2i:
                dup += 1
            c2i[ch] = len(table)
            table.append(ch)
        pin = {}
        for ch, reading in (pinyin or {}).items():
            if ch in c2i:
                pin[c2i[ch]] = strip_tone(reading)
        conf: dict[int, set[int]] = {}
        for ch, members in (confusion or {}).items():
            if ch not in c2i:
                raise LexiconError(f"confusion owner {ch!r} not in vocabulary")
            for m in members:
                if m not in c2i:
                    raise LexiconError(f"confusion member {m!r} of {ch!r} not in vocabulary")
                if m != ch:
                    conf.setdefault(c2i[ch], set()).add(c2i[m])
        if symmetrize_confusion:
            conf = _symmetrize(conf)
        smap = dict(simp_map or {})
        _check_simp_map(smap, "<memory>")
        return cls(
            chars=tuple(table),
            char_to_id=c2i,
            pinyin=pin,
            confusion={k: frozenset(v) for k, v in conf.items() if v},
            simp_map=smap,
            allow_missing_pinyin=allow_missing_pinyin,
            duplicates=dup,
        )

    # queries ----------------------------------------------------------------

    @property
    def vocab_size(self) -> int:
        return len(self.chars)

    def char_id(self, ch: str) -> int:
        return self.char_to_id.get(ch, UNK_ID)

    def char(self, cid: int) -> str:
        return self.chars[cid]

    def pinyin_of(self, cid: int) -> str | None:
        return self.pinyin.get(cid)

    def confusion_of(self, cid: int) -> frozenset[int]:
        return self.confusion.get(cid, frozenset())

    def homophones(self, cid: int) -> tuple[int, ...]:
        """Vocabulary members sharing ``cid``'s key, excluding ``cid`` itself."""
        key = self.pinyin.get(cid)
        if key is None:
            return ()
        return tuple(c for c in self._homophones[key] if c != cid)

    def same_pinyin(self, a: int, b: int) -> bool:
        return same_pinyin(a, b, self)

    def in_confusion(self, anchor: int, other: int) -> bool:
        return in_confusion(anchor, other, self)

    def simplify(self, text: str) -> str:
        return simplify(text, self)

    def encode(self, text: str) -> list[int]:
        return [self.char_to_id.get(ch, UNK_ID) for ch in text]

    def decode(self, ids: Iterable[int]) -> str:
        return "".join(self.chars[i] if i > UNK_ID else "�" for i in ids)

    def missing_pinyin(self, text: str) -> set[str]:
        """Chinese characters of ``text`` that are in the vocabulary but have no key."""
        out = set()
        for ch in text:
            cid = self.char_to_id.get(ch)
            if cid is not None and cid not in self.pinyin and is_cjk(ch):
                out.add(ch)
        return out

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update("\n".join(self.chars).encode("utf-8"))
        h.update(b"\x00")
        for cid in sorted(self.pinyin):
            h.update(f"{cid}:{self.pinyin[cid]};".encode())
        h.update(b"\x00")
        for cid in sorted(self.confusion):
            h.update(f"{cid}:{','.join(map(str, sorted(self.confusion[cid])))};".encode())
        return h.hexdigest()[:16]


def _symmetrize(conf: dict[int, set[int]]) -> dict[int, set[int]]:
    out = {k: set(v) for k, v in conf.items()}
    for owner, members in conf.items():
        for m in members:
            out.setdefault(m, set()).add(owner)
    return out


def _check_simp_map(smap: dict[str, str], where: str) -> None:
    for k in [k for k, v in smap.items() if k == v]:
        del smap[k]
    clash = set(smap.values()) & set(smap)
    if clash:
        raise LexiconError(
            f"{where}: simplification map is not idempotent; "
            f"characters used both as source and image: {''.join(sorted(clash))}"
        )


def load_lexicon(
    vocab_path: str | Path,
    pinyin_path: str | Path,
    confusion_path: str | Path,
    simp_map_path: str | Path | None = None,
    *,
    allow_missing_pinyin: bool = False,
    symmetrize_confusion: bool = False,
) -> Lexicon:
    vocab_path, pinyin_path, confusion_path = map(Path, (vocab_path, pinyin_path, confusion_path))
    dup = 0

    chars = [PAD, UNK]
    c2i: dict[str, int] = {}
    with open(vocab_path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            ch = raw.rstrip("\n").rstrip("\r")
            _single(ch, vocab_path, lineno)
            if ch in c2i:
                dup += 1
            # dense ids follow line numbers, so a duplicate still occupies its slot
            c2i[ch] = lineno + 1
            chars.append(ch)

    pinyin: dict[int, str] = {}
    for lineno, cols in _tsv_lines(pinyin_path):
        if len(cols) != 2:
            raise LexiconError(f"{pinyin_path}:{lineno}: expected 2 columns, got {len(cols)}")
        ch = _single(cols[0], pinyin_path, lineno)
        readings = [r for r in _READING_SPLIT.split(cols[1].strip()) if r]
        if not readings:
            raise LexiconError(f"{pinyin_path}:{lineno}: empty pinyin")
        try:
            key = strip_tone(readings[0])
        except ValueError as exc:
            raise LexiconError(f"{pinyin_path}:{lineno}: {exc}") from None
        cid = c2i.get(ch)
        if cid is None:
            continue
        if cid in pinyin:
            dup += 1
        pinyin[cid] = key

    confusion: dict[int, set[int]] = {}
    for lineno, cols in _tsv_lines(confusion_path):
        if len(cols) != 2:
            raise LexiconError(f"{confusion_path}:{lineno}: expected 2 columns, got {len(cols)}")
        ch = _single(cols[0], confusion_path, lineno)
        if ch not in c2i:
            raise LexiconError(f"{confusion_path}:{lineno}: character {ch!r} not in vocabulary")
        owner = c2i[ch]
        members = set()
        for m in cols[1].strip():
            if m not in c2i:
                raise LexiconError(
                    f"{confusion_path}:{lineno}: confusion member {m!r} not in vocabulary"
                )
            if m != ch:
                members.add(c2i[m])
        if owner in confusion:
            dup += 1
        confusion[owner] = members
    if symmetrize_confusion:
        confusion = _symmetrize(confusion)

    simp: dict[str, str] = {}
    if simp_map_path is not None:
        simp_map_path = Path(simp_map_path)
        for lineno, cols in _tsv_lines(simp_map_path):
            if len(cols) != 2:
                raise LexiconError(f"{simp_map_path}:{lineno}: expected 2 columns, got {len(cols)}")
            trad = _single(cols[0], simp_map_path, lineno)
            if trad in simp:
                dup += 1
            simp[trad] = _single(cols[1], simp_map_path, lineno)
        _check_simp_map(simp, str(simp_map_path))

    if dup:
        logger.warning("lexicon: %d duplicate entries (last one wins)", dup)
    return Lexicon(
        chars=tuple(chars),
        char_to_id=c2i,
        pinyin=pinyin,
        confusion={k: frozenset(v) for k, v in confusion.items() if v},
        simp_map=simp,
        allow_missing_pinyin=allow_missing_pinyin,
        duplicates=dup,
    )


def same_pinyin(a: int, b: int, lex: Lexicon) -> bool:
    """True iff both characters carry a pinyin key and the keys are equal."""
    ka = lex.pinyin.get(a)
    return ka is not None and ka == lex.pinyin.get(b)


def in_confusion(anchor: int, other: int, lex: Lexicon) -> bool:
    """Directional: ``other`` listed in ``anchor``'s confusion set."""
    return other in lex.confusion.get(anchor, ())


def simplify(text: str, lex: Lexicon) -> str:
    if not lex.simp_map:
        return text
    return "".join(lex.simp_map.get(ch, ch) for ch in text)
