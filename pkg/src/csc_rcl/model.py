"""Reference correction backbone: a small post-LN transformer encoder with a
linear correction head, forward and reverse mode written out in NumPy.

Anything exposing ``params``, ``forward``, ``backward``, ``encode`` and
``correct_logits`` (see :class:`Backbone`) can be trained by :mod:`csc_rcl.train`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .corpus import Batch, SentencePair
from .errors import NumericalError
from .lexicon import UNK_ID, Lexicon

LN_EPS = 1e-10
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class BackboneConfig:
    vocab_size: int
    d: int = 32
    L: int = 2
    heads: int = 1
    seed: int = 0
    d_ff: int | None = None
    representation_tap: int | None = None  # layer whose output feeds RCL; None = last

    def __post_init__(self) -> None:
        if self.vocab_size < 3:
            raise ValueError("vocab_size must cover PAD, UNK and at least one character")
        if self.d < 2:
            raise ValueError("d must be >= 2")
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.heads < 1 or self.d % self.heads:
            raise ValueError("d must be divisible by heads")
        if self.representation_tap is not None and not 0 <= self.representation_tap <= self.L:
            raise ValueError("representation_tap must lie in [0, L]")

    @property
    def ff(self) -> int:
        return self.d_ff if self.d_ff is not None else 4 * self.d

    @property
    def tap(self) -> int:
        return self.L if self.representation_tap is None else self.representation_tap

    def to_dict(self) -> dict:
        return asdict(self)


class Backbone(Protocol):
    config: BackboneConfig
    params: dict[str, np.ndarray]

    def forward(self, batch: Batch) -> "ForwardState": ...
    def backward(self, state: "ForwardState", d_logits: np.ndarray,
                 d_tap: np.ndarray | None = None) -> dict[str, np.ndarray]: ...
    def encode(self, batch: Batch) -> np.ndarray: ...
    def correct_logits(self, h: np.ndarray) -> np.ndarray: ...


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def init_params(cfg: BackboneConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    d, ff, V = cfg.d, cfg.ff, cfg.vocab_size

    def uni(fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    p = {"embedding": uni(d, (V, d))}
    for l in range(cfg.L):
        pre = f"layers.{l}."
        for name in ("wq", "wk", "wv", "wo"):
            p[pre + name] = uni(d, (d, d))
            p[pre + "b" + name[1]] = np.zeros(d)
        p[pre + "ln1.g"] = np.ones(d)
        p[pre + "ln1.b"] = np.zeros(d)
        p[pre + "ff.w1"] = uni(d, (d, ff))
        p[pre + "ff.b1"] = np.zeros(ff)
        p[pre + "ff.w2"] = uni(ff, (ff, d))
        p[pre + "ff.b2"] = np.zeros(d)
        p[pre + "ln2.g"] = np.ones(d)
        p[pre + "ln2.b"] = np.zeros(d)
    p["head.w"] = uni(d, (d, V))
    p["head.b"] = np.zeros(V)
    return p


# primitive ops: forward returns (out, cache); backward maps d_out -> grads

def layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def layer_norm_backward(dy: np.ndarray, cache):
    xhat, inv, g = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axis=axes)
    db = dy.sum(axis=axes)
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def gelu(x: np.ndarray):
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_backward(dy: np.ndarray, cache):
    x, t = cache
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def _split_heads(x: np.ndarray, h: int) -> np.ndarray:
    B, N, d = x.shape
    return x.reshape(B, N, h, d // h).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    B, h, N, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, N, h * dh)


def attention(x: np.ndarray, mask: np.ndarray, p: dict, pre: str, heads: int):
    """Scaled dot-product self-attention; keys outside a sentence are masked."""
    q = _split_heads(x @ p[pre + "wq"] + p[pre + "bq"], heads)
    k = _split_heads(x @ p[pre + "wk"] + p[pre + "bk"], heads)
    v = _split_heads(x @ p[pre + "wv"] + p[pre + "bv"], heads)
    scale = 1.0 / math.sqrt(q.shape[-1])
    s = (q @ k.transpose(0, 1, 3, 2)) * scale
    s = np.where(mask[:, None, None, :], s, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    a = np.exp(s)
    a /= a.sum(axis=-1, keepdims=True)
    ctx = _merge_heads(a @ v)
    out = ctx @ p[pre + "wo"] + p[pre + "bo"]
    return out, (x, q, k, v, a, ctx, scale)


def attention_backward(d_out: np.ndarray, cache, p: dict, pre: str, heads: int):
    x, q, k, v, a, ctx, scale = cache
    g = {}
    axes = (0, 1)
    g[pre + "wo"] = np.einsum("bni,bnj->ij", ctx, d_out)
    g[pre + "bo"] = d_out.sum(axis=axes)
    d_ctx = _split_heads(d_out @ p[pre + "wo"].T, heads)
    d_a = d_ctx @ v.transpose(0, 1, 3, 2)
    d_v = a.transpose(0, 1, 3, 2) @ d_ctx
    d_s = a * (d_a - (d_a * a).sum(axis=-1, keepdims=True)) * scale
    d_q = d_s @ k
    d_k = d_s.transpose(0, 1, 3, 2) @ q
    dx = np.zeros_like(x)
    for name, d_proj in (("q", d_q), ("k", d_k), ("v", d_v)):
        d_proj = _merge_heads(d_proj)
        g[pre + "w" + name] = np.einsum("bni,bnj->ij", x, d_proj)
        g[pre + "b" + name] = d_proj.sum(axis=axes)
        dx += d_proj @ p[pre + "w" + name].T
    return dx, g


@dataclass
class ForwardState:
    hidden: np.ndarray          # K x d, output of the last layer
    tap: np.ndarray             # K x d, representation fed to RCL
    logits: np.ndarray          # K x V
    mask: np.ndarray            # B x N
    ids: np.ndarray             # B x N
    caches: list = field(default_factory=list, repr=False)


class TransformerBackbone:
    def __init__(self, config: BackboneConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        self.params = params if params is not None else init_params(config)
        missing = set(init_params_shapes(config)) - set(self.params)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")

    def _check_params(self, layer: int) -> None:
        pre = f"layers.{layer}."
        for name, value in self.params.items():
            if name.startswith(pre) and not np.all(np.isfinite(value)):
                raise NumericalError(f"non-finite parameter {name} in layer {layer + 1}")

    def forward(self, batch: Batch) -> ForwardState:
        cfg, p = self.config, self.params
        ids, mask = batch.padded_sources()
        if ids.max() >= cfg.vocab_size:
            raise ValueError("character id outside the model vocabulary")
        if not np.all(np.isfinite(p["embedding"])):
            raise NumericalError("non-finite parameter in embedding layer")
        x = p["embedding"][ids] + sinusoidal_positions(ids.shape[1], cfg.d)[None]
        outs = [x]
        caches = []
        for l in range(cfg.L):
            self._check_params(l)
            pre = f"layers.{l}."
            att, c_att = attention(x, mask, p, pre, cfg.heads)
            x1, c_ln1 = layer_norm(x + att, p[pre + "ln1.g"], p[pre + "ln1.b"])
            u = x1 @ p[pre + "ff.w1"] + p[pre + "ff.b1"]
            a, c_gelu = gelu(u)
            f = a @ p[pre + "ff.w2"] + p[pre + "ff.b2"]
            x, c_ln2 = layer_norm(x1 + f, p[pre + "ln2.g"], p[pre + "ln2.b"])
            if not np.all(np.isfinite(x[mask])):
                raise NumericalError(f"non-finite activation in layer {l + 1}")
            caches.append((c_att, c_ln1, x1, a, c_gelu, c_ln2))
            outs.append(x)
        hidden = x[mask]
        tap = outs[cfg.tap][mask]
        logits = self.correct_logits(hidden)
        return ForwardState(hidden, tap, logits, mask, ids, caches)

    def encode(self, batch: Batch) -> np.ndarray:
        return self.forward(batch).tap

    def correct_logits(self, h: np.ndarray) -> np.ndarray:
        return h @ self.params["head.w"] + self.params["head.b"]

    def backward(self, state: ForwardState, d_logits: np.ndarray,
                 d_tap: np.ndarray | None = None) -> dict[str, np.ndarray]:
        cfg, p = self.config, self.params
        grads: dict[str, np.ndarray] = {}
        grads["head.w"] = state.hidden.T @ d_logits
        grads["head.b"] = d_logits.sum(axis=0)

        B, N = state.mask.shape
        dx = np.zeros((B, N, cfg.d))
        dx[state.mask] = d_logits @ p["head.w"].T
        if d_tap is not None and cfg.tap == cfg.L:
            dx[state.mask] += d_tap
        for l in reversed(range(cfg.L)):
            pre = f"layers.{l}."
            c_att, c_ln1, x1, a, c_gelu, c_ln2 = state.caches[l]
            dr2, grads[pre + "ln2.g"], grads[pre + "ln2.b"] = layer_norm_backward(dx, c_ln2)
            grads[pre + "ff.w2"] = np.einsum("bni,bnj->ij", a, dr2)
            grads[pre + "ff.b2"] = dr2.sum(axis=(0, 1))
            du = gelu_backward(dr2 @ p[pre + "ff.w2"].T, c_gelu)
            grads[pre + "ff.w1"] = np.einsum("bni,bnj->ij", x1, du)
            grads[pre + "ff.b1"] = du.sum(axis=(0, 1))
            dx1 = dr2 + du @ p[pre + "ff.w1"].T
            dr1, grads[pre + "ln1.g"], grads[pre + "ln1.b"] = layer_norm_backward(dx1, c_ln1)
            dx_att, g_att = attention_backward(dr1, c_att, p, pre, cfg.heads)
            grads.update(g_att)
            dx = dr1 + dx_att
            if d_tap is not None and cfg.tap == l:
                dx[state.mask] += d_tap
        g_emb = np.zeros_like(p["embedding"])
        np.add.at(g_emb, state.ids, dx)
        grads["embedding"] = g_emb
        return grads


def init_params_shapes(cfg: BackboneConfig) -> dict[str, tuple[int, ...]]:
    d, ff, V = cfg.d, cfg.ff, cfg.vocab_size
    shapes = {"embedding": (V, d), "head.w": (d, V), "head.b": (V,)}
    for l in range(cfg.L):
        pre = f"layers.{l}."
        for name in ("wq", "wk", "wv", "wo"):
            shapes[pre + name] = (d, d)
            shapes[pre + "b" + name[1]] = (d,)
        shapes.update({
            pre + "ln1.g": (d,), pre + "ln1.b": (d,),
            pre + "ff.w1": (d, ff), pre + "ff.b1": (ff,),
            pre + "ff.w2": (ff, d), pre + "ff.b2": (d,),
            pre + "ln2.g": (d,), pre + "ln2.b": (d,),
        })
    return shapes


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean token cross-entropy and its gradient w.r.t. the logits."""
    k = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    tot = e.sum(axis=1, keepdims=True)
    rows = np.arange(k)
    loss = float(np.mean(np.log(tot[:, 0]) - z[rows, targets]))
    d = e / tot
    d[rows, targets] -= 1.0
    return loss, d / k


def correction_loss(logits: np.ndarray, batch: Batch) -> float:
    targets = batch.target_ids
    if targets.max() >= logits.shape[1]:
        raise ValueError("target id outside the vocabulary")
    return cross_entropy(logits, targets)[0]


def predict_ids(model: Backbone, pairs: Sequence[SentencePair], batch_size: int = 64) -> list[tuple[int, ...]]:
    out: list[tuple[int, ...]] = []
    for start in range(0, len(pairs), batch_size):
        batch = Batch(tuple(pairs[start:start + batch_size]))
        logits = model.forward(batch).logits
        best = logits.argmax(axis=1)
        # never emit the reserved ids; keep the source character instead
        src = batch.source_ids
        best = np.where(best <= UNK_ID, src, best)
        offset = 0
        for n in batch.lengths:
            out.append(tuple(int(t) for t in best[offset:offset + n]))
            offset += n
    return out


def predict(sources: Sequence[str], model: Backbone, lex: Lexicon, batch_size: int = 64) -> list[str]:
    """Correct each sentence position by position; output length equals input length."""
    texts = [lex.simplify(s) for s in sources]
    pairs = []
    for text in texts:
        if text:
            ids = tuple(lex.encode(text))
            pairs.append(SentencePair(ids, ids))
    preds = iter(predict_ids(model, pairs, batch_size)) if pairs else iter(())
    out = []
    for text in texts:
        if not text:
            out.append("")
            continue
        pred = next(preds)
        # unknown input characters pass through untouched
        out.append("".join(
            ch if lex.char_to_id.get(ch) is None else lex.char(cid)
            for ch, cid in zip(text, pred)
        ))
    return out
