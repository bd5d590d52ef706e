"""Detection / correction metrics, the 的/地/得 post-filter and case diffs.

Sequences may be strings or id tuples; only element equality is used.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Sequence, TextIO

from .errors import DataError

DE_PARTICLES = frozenset("的地得")

METRIC_COLUMNS = ("granularity", "d_p", "d_r", "d_f", "c_p", "c_r", "c_f")


def _prf(tp: int, flagged: int, gold: int) -> tuple[float, float, float]:
    p = 100.0 * tp / flagged if flagged else 0.0
    r = 100.0 * tp / gold if gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


@dataclass(frozen=True)
class EvalReport:
    granularity: str
    d_p: float
    d_r: float
    d_f: float
    c_p: float
    c_r: float
    c_f: float
    detection_counts: tuple[int, int, int]   # (true_positive, flagged, gold_positive)
    correction_counts: tuple[int, int, int]

    @classmethod
    def from_counts(cls, granularity: str, det: tuple[int, int, int],
                    cor: tuple[int, int, int]) -> "EvalReport":
        return cls(granularity, *_prf(*det), *_prf(*cor), det, cor)

    def row(self) -> dict[str, str]:
        vals = {k: f"{getattr(self, k):.1f}" for k in METRIC_COLUMNS[1:]}
        return {"granularity": self.granularity, **vals}

    def __add__(self, other: "EvalReport") -> "EvalReport":
        """Pool the counts of two shards of the same granularity."""
        if self.granularity != other.granularity:
            raise ValueError("cannot merge reports of different granularity")
        det = tuple(a + b for a, b in zip(self.detection_counts, other.detection_counts))
        cor = tuple(a + b for a, b in zip(self.correction_counts, other.correction_counts))
        return EvalReport.from_counts(self.granularity, det, cor)


def _unpack(pair) -> tuple[Sequence[Hashable], Sequence[Hashable]]:
    if hasattr(pair, "source"):
        return pair.source, pair.target
    return pair[0], pair[1]


def evaluate(pairs: Iterable, predictions: Sequence[Sequence[Hashable]],
             granularity: str = "sentence") -> EvalReport:
    """Score predictions against (source, target) pairs.

    Sentence level: a sentence is flagged when the prediction differs from the
    source anywhere. Detection is a hit when the set of edited positions equals
    the gold error positions; correction is a hit when the prediction equals
    the target. Hits only count on sentences that contain errors.

    Character level: the same definitions per position.
    """
    if granularity not in ("sentence", "character"):
        raise ValueError(f"unknown granularity {granularity!r}")
    pairs = list(pairs)
    if len(pairs) != len(predictions):
        raise DataError(f"{len(pairs)} sentence pairs but {len(predictions)} predictions")
    d_tp = c_tp = flagged = gold = 0
    for n, (pair, pred) in enumerate(zip(pairs, predictions)):
        src, tgt = _unpack(pair)
        if not len(src) == len(tgt) == len(pred):
            raise DataError(f"sentence {n}: source, target and prediction lengths differ")
        gold_pos = [i for i in range(len(src)) if src[i] != tgt[i]]
        pred_pos = [i for i in range(len(src)) if pred[i] != src[i]]
        if granularity == "sentence":
            gold += bool(gold_pos)
            flagged += bool(pred_pos)
            if gold_pos:
                d_tp += pred_pos == gold_pos
                c_tp += all(pred[i] == tgt[i] for i in range(len(src)))
        else:
            gold_set = set(gold_pos)
            gold += len(gold_pos)
            flagged += len(pred_pos)
            d_tp += sum(1 for i in pred_pos if i in gold_set)
            c_tp += sum(1 for i in pred_pos if pred[i] == tgt[i])
    return EvalReport.from_counts(granularity, (d_tp, flagged, gold), (c_tp, flagged, gold))


def postfilter_de(predictions: Sequence[Sequence], sources: Sequence[Sequence],
                  particles: Iterable = DE_PARTICLES) -> list:
    """Undo every edit that touches 的, 地 or 得 on either side."""
    particles = frozenset(particles)
    if len(predictions) != len(sources):
        raise DataError("predictions and sources are not aligned")
    out = []
    for pred, src in zip(predictions, sources):
        if len(pred) != len(src):
            raise DataError("prediction and source lengths differ")
        fixed = [
            s if p != s and (s in particles or p in particles) else p
            for p, s in zip(pred, src)
        ]
        out.append("".join(fixed) if isinstance(pred, str) else type(pred)(fixed))
    return out


CORRECT_FIX, MISSED, WRONG_FIX, FALSE_ALARM = "correct-fix", "missed", "wrong-fix", "false-alarm"


def position_marks(src: Sequence, tgt: Sequence, pred: Sequence) -> dict[int, str]:
    marks = {}
    for i, (s, t, p) in enumerate(zip(src, tgt, pred)):
        if s != t:
            marks[i] = CORRECT_FIX if p == t else (MISSED if p == s else WRONG_FIX)
        elif p != s:
            marks[i] = FALSE_ALARM
    return marks


@dataclass(frozen=True)
class CaseDiff:
    index: int
    input: Sequence
    gold: Sequence
    prediction_a: Sequence
    prediction_b: Sequence
    marks_a: dict[int, str] = field(default_factory=dict)
    marks_b: dict[int, str] = field(default_factory=dict)


def case_report(pairs: Iterable, predictions_a: Sequence[Sequence],
                predictions_b: Sequence[Sequence]) -> list[CaseDiff]:
    """Sentences on which the two systems disagree, with per-position marks."""
    pairs = list(pairs)
    if not len(pairs) == len(predictions_a) == len(predictions_b):
        raise DataError("pairs and predictions are not aligned")
    out = []
    for n, (pair, a, b) in enumerate(zip(pairs, predictions_a, predictions_b)):
        src, tgt = _unpack(pair)
        if not len(src) == len(tgt) == len(a) == len(b):
            raise DataError(f"sentence {n}: lengths differ")
        if list(a) == list(b):
            continue
        out.append(CaseDiff(n, src, tgt, a, b,
                            position_marks(src, tgt, a), position_marks(src, tgt, b)))
    return out


def _fmt_marks(marks: dict[int, str]) -> str:
    return ", ".join(f"{i}:{m}" for i, m in sorted(marks.items())) or "-"


def render_case_report(cases: Sequence[CaseDiff], name_a: str = "A", name_b: str = "B") -> str:
    def text(seq) -> str:
        s = seq if isinstance(seq, str) else "".join(map(str, seq))
        return s.replace("|", "\\|")

    lines = [
        f"| # | input | gold | {name_a} | {name_a} marks | {name_b} | {name_b} marks |",
        "|---|---|---|---|---|---|---|",
    ]
    for c in cases:
        lines.append(
            f"| {c.index} | {text(c.input)} | {text(c.gold)} | {text(c.prediction_a)} | "
            f"{_fmt_marks(c.marks_a)} | {text(c.prediction_b)} | {_fmt_marks(c.marks_b)} |"
        )
    return "\n".join(lines) + "\n"


def write_metrics_csv(dest: str | Path | TextIO, reports: Iterable[EvalReport]) -> None:
    """Write ``granularity,d_p,d_r,d_f,c_p,c_r,c_f`` rows to a path or open stream."""
    if hasattr(dest, "write"):
        _write_metrics(dest, reports)
        return
    with open(dest, "w", encoding="utf-8", newline="") as fh:
        _write_metrics(fh, reports)


def _write_metrics(fh: TextIO, reports: Iterable[EvalReport]) -> None:
    w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.row())
