import math

import numpy as np
import pytest

from csc_rcl import kernels
from csc_rcl.lexicon import Lexicon

SAMPLE_PINYIN = {
    "我": "wo3", "喜": "xi3", "希": "xi1", "欢": "huan1", "观": "guan1", "欣": "xin1",
    "跳": "tiao4", "舞": "wu3", "无": "wu2", "望": "wang4", "好": "hao3", "书": "shu1",
    "学": "xue2", "的": "de5", "地": "di4", "得": "de2", "称": "cheng1", "程": "cheng2",
    "式": "shi4", "你": "ni3", "吗": "ma5", "看": "kan4", "教": "jiao4", "室": "shi4",
    "师": "shi1", "懂": "dong3", "动": "dong4", "惯": "guan4", "习": "xi2",
}
SAMPLE_CHARS = "我喜希欢观欣跳舞无望好书学的地得称程式你吗看教室师懂动惯习，。ab"


@pytest.fixture
def sample_lex():
    return Lexicon.from_tables(SAMPLE_CHARS, SAMPLE_PINYIN, {"欢": "观欣", "望": "惯"})


@pytest.fixture
def lexicon_files(tmp_path):
    vocab = tmp_path / "vocab.txt"
    vocab.write_text("".join(ch + "\n" for ch in SAMPLE_CHARS), encoding="utf-8")
    pinyin = tmp_path / "pinyin.tsv"
    pinyin.write_text("".join(f"{c}\t{p}\n" for c, p in SAMPLE_PINYIN.items()), encoding="utf-8")
    conf = tmp_path / "confusion.tsv"
    conf.write_text("欢\t观欣\n望\t惯\n", encoding="utf-8")
    simp = tmp_path / "simp.tsv"
    simp.write_text("學\t学\n師\t师\n", encoding="utf-8")
    return {"vocab": vocab, "pinyin": pinyin, "confusion": conf, "simp": simp}


@pytest.fixture(params=sorted(kernels.available_backends()))
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    impl = kernels.available_backends()[request.param]
    monkeypatch.setattr(kernels, "mine_masks", impl.mine_masks)
    monkeypatch.setattr(kernels, "rcl_rows", impl.rcl_rows)
    return request.param


# independent oracles -------------------------------------------------------

def oracle_cos(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def oracle_anchor_loss(h, members, i, tau):
    """Direct transcription of the per-anchor loss; no stabilisation tricks."""
    h = [list(map(float, row)) for row in np.asarray(h)]
    if not members:
        return 0.0
    denom = sum(math.exp(oracle_cos(h[i], h[k]) / tau) for k in range(len(h)) if k != i)
    return -sum(math.log(math.exp(oracle_cos(h[i], h[s]) / tau) / denom) for s in members) / len(members)


def oracle_mine(ids, lex, use_pinyin=True, use_confusion=True, exclude_identical=True):
    k = len(ids)
    S = {i: set() for i in range(k)}
    W = {i: set() for i in range(k)}
    for i in range(k):
        a = int(ids[i])
        if a <= 1:
            continue
        for j in range(k):
            b = int(ids[j])
            if j == i or b <= 1:
                continue
            if use_pinyin and lex.same_pinyin(a, b) and not (exclude_identical and a == b):
                S[i].add(j)
            if use_confusion and lex.in_confusion(a, b):
                W[i].add(j)
    return S, W


def rel_error(analytic, numeric, floor=1e-7):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def central_diff(f, x, step=1e-4):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        ix = it.multi_index
        old = x[ix]
        x[ix] = old + step
        up = f()
        x[ix] = old - step
        down = f()
        x[ix] = old
        g[ix] = (up - down) / (2 * step)
    return g
