"""Reverse contrastive loss over in-batch negatives.

For anchor ``i`` with negatives ``N`` (homophones ``S_i`` or confusion-set
members ``W_i`` found in the same batch)::

    L_i = -1/|N| * sum_{n in N} log( exp(cos(h_i, h_n)/tau) / sum_{k != i} exp(cos(h_i, h_k)/tau) )

The denominator always runs over every other anchor in the batch. The
training objective subtracts the weighted sum of these terms from the
correction loss, so minimising it drives negatives apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .corpus import Batch
from .errors import NumericalError
from .lexicon import Lexicon


@dataclass(frozen=True)
class RclConfig:
    tau: float = 0.1
    alpha: float = 0.0005
    use_pinyin: bool = True
    use_confusion: bool = True
    exclude_identical: bool = True

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.alpha > 0 and not (self.use_pinyin or self.use_confusion):
            raise ValueError("alpha > 0 needs at least one of use_pinyin / use_confusion")


@dataclass(frozen=True, eq=False)
class NegativeSets:
    """``s_mask[i, j]``: j is a same-pinyin negative of i; ``w_mask`` likewise
    for confusion-set negatives."""

    s_mask: np.ndarray
    w_mask: np.ndarray

    def __post_init__(self) -> None:
        k = self.s_mask.shape[0]
        if self.s_mask.shape != (k, k) or self.w_mask.shape != (k, k):
            raise ValueError("negative masks must be square and of equal size")
        if self.s_mask.diagonal().any() or self.w_mask.diagonal().any():
            raise ValueError("an anchor cannot be its own negative")

    @classmethod
    def from_lists(cls, k: int, S: dict[int, set[int]] | None = None,
                   W: dict[int, set[int]] | None = None) -> "NegativeSets":
        s = np.zeros((k, k), dtype=bool)
        w = np.zeros((k, k), dtype=bool)
        for i, members in (S or {}).items():
            s[i, list(members)] = True
        for i, members in (W or {}).items():
            w[i, list(members)] = True
        return cls(s, w)

    @property
    def K(self) -> int:
        return self.s_mask.shape[0]

    def S(self, i: int) -> set[int]:
        return set(np.flatnonzero(self.s_mask[i]).tolist())

    def W(self, i: int) -> set[int]:
        return set(np.flatnonzero(self.w_mask[i]).tolist())

    def is_empty(self) -> bool:
        return not (self.s_mask.any() or self.w_mask.any())


@dataclass(frozen=True)
class LossBreakdown:
    l_correct: float
    l_p: np.ndarray
    l_c: np.ndarray
    l_rcl: float
    total: float


def mine_pairs(ids: Batch | np.ndarray, lex: Lexicon, cfg: RclConfig) -> NegativeSets:
    """Find same-pinyin and confusion-set negatives among the anchors of a batch."""
    if isinstance(ids, Batch):
        ids = ids.source_ids
    s, w = kernels.mine_masks(
        np.asarray(ids, dtype=np.int64),
        lex.pinyin_ids,
        lex.confusion_indptr,
        lex.confusion_indices,
        cfg.use_pinyin,
        cfg.use_confusion,
        cfg.exclude_identical,
    )
    return NegativeSets(s, w)


def _unit_rows(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt(np.einsum("ij,ij->i", h, h))
    if not np.all(norms > 0):
        bad = np.flatnonzero(~(norms > 0)).tolist()
        raise NumericalError(f"cosine similarity undefined for zero hidden rows {bad}")
    return h / norms[:, None], norms


def cosine_matrix(h: np.ndarray) -> np.ndarray:
    u, _ = _unit_rows(np.asarray(h, dtype=np.float64))
    return u @ u.T


def rcl_terms(h: np.ndarray, sets: NegativeSets, tau: float
              ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-anchor pinyin/confusion terms and d(sum of both)/dh."""
    h = np.asarray(h, dtype=np.float64)
    k = h.shape[0]
    if k != sets.K:
        raise ValueError(f"hidden states have {k} rows, negative sets cover {sets.K}")
    if sets.is_empty():
        return np.zeros(k), np.zeros(k), np.zeros_like(h)
    u, norms = _unit_rows(h)
    sim = u @ u.T
    l_p, l_c, d_sim = kernels.rcl_rows(sim, sets.s_mask, sets.w_mask, float(tau))
    d_u = (d_sim + d_sim.T) @ u
    # back through u = h / |h|
    d_h = (d_u - u * np.einsum("ij,ij->i", d_u, u)[:, None]) / norms[:, None]
    return l_p, l_c, d_h


def _single_anchor_loss(h: np.ndarray, members: set[int] | list[int], i: int, tau: float) -> float:
    h = np.asarray(h, dtype=np.float64)
    k = h.shape[0]
    if k < 2:
        raise ValueError("need at least two anchors")
    members = sorted(members)
    if i in members:
        raise ValueError("an anchor cannot be its own negative")
    if not members:
        return 0.0
    u, _ = _unit_rows(h)
    z = (u @ u[i]) / tau
    others = np.delete(z, i)
    m = others.max()
    lse = m + math.log(np.exp(others - m).sum())
    return float(lse - z[members].mean())


def rcl_pinyin_loss(h: np.ndarray, S_i: set[int] | list[int], i: int, tau: float) -> float:
    """Pinyin term for one anchor; 0 when ``S_i`` is empty."""
    return _single_anchor_loss(h, S_i, i, tau)


def rcl_confusion_loss(h: np.ndarray, W_i: set[int] | list[int], i: int, tau: float) -> float:
    """Confusion-set term for one anchor; 0 when ``W_i`` is empty."""
    return _single_anchor_loss(h, W_i, i, tau)


def total_loss(l_correct: float, h: np.ndarray, sets: NegativeSets, cfg: RclConfig) -> LossBreakdown:
    l_p, l_c, _ = rcl_terms(h, sets, cfg.tau)
    return _breakdown(l_correct, l_p, l_c, cfg.alpha)


def _breakdown(l_correct: float, l_p: np.ndarray, l_c: np.ndarray, alpha: float) -> LossBreakdown:
    l_rcl = float(np.sum(l_p + l_c))
    total = float(l_correct) - alpha * l_rcl
    if not (math.isfinite(total) and math.isfinite(l_rcl) and math.isfinite(float(l_correct))):
        raise NumericalError(f"non-finite loss: l_correct={l_correct} l_rcl={l_rcl}")
    return LossBreakdown(float(l_correct), l_p, l_c, l_rcl, total)


def rcl_gradients(h: np.ndarray, sets: NegativeSets, cfg: RclConfig) -> np.ndarray:
    """Gradient of ``-alpha * L_RCL`` with respect to the hidden states."""
    _, _, d_h = rcl_terms(h, sets, cfg.tau)
    grad = -cfg.alpha * d_h
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite RCL gradient")
    return grad


def rcl_objective(l_correct: float, h: np.ndarray, sets: NegativeSets, cfg: RclConfig
                  ) -> tuple[LossBreakdown, np.ndarray]:
    """Breakdown plus d(total)/dh in one pass (the training path)."""
    l_p, l_c, d_h = rcl_terms(h, sets, cfg.tau)
    br = _breakdown(l_correct, l_p, l_c, cfg.alpha)
    grad = -cfg.alpha * d_h
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite RCL gradient")
    return br, grad


def dump_pairs(ids: np.ndarray, sets: NegativeSets, lex: Lexicon) -> list[dict]:
    """JSON-ready per-anchor view of the mined negatives."""
    out = []
    for i, cid in enumerate(np.asarray(ids).tolist()):
        out.append({
            "anchor_index": i,
            "char": lex.char(cid),
            "pinyin": lex.pinyin_of(cid),
            "S": sorted(sets.S(i)),
            "W": sorted(sets.W(i)),
        })
    return out
