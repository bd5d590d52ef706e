"""NumPy implementation of the in-batch kernels (fallback for ``_kernels``).

Both backends expose the same two functions:

``mine_masks(ids, pinyin_ids, conf_indptr, conf_indices, use_pinyin, use_confusion,
exclude_identical) -> (s_mask, w_mask)``
    Boolean K x K matrices; row i holds the same-pinyin / confusion-set negatives
    of anchor i. Anchors with id <= UNK_ID have empty rows and never appear as
    members.

``rcl_rows(sim, s_mask, w_mask, tau) -> (l_p, l_c, grad)``
    Per-anchor pinyin and confusion losses from a cosine-similarity matrix and
    the gradient of their sum with respect to ``sim``.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"

_RESERVED = 1  # ids 0 (PAD) and 1 (UNK)


def mine_masks(ids, pinyin_ids, conf_indptr, conf_indices, use_pinyin, use_confusion,
               exclude_identical):
    ids = np.asarray(ids, dtype=np.int64)
    k = ids.shape[0]
    real = ids > _RESERVED
    valid = real[:, None] & real[None, :] & ~np.eye(k, dtype=bool)

    if use_pinyin:
        key = np.asarray(pinyin_ids)[ids]
        s_mask = (key[:, None] == key[None, :]) & (key[:, None] >= 0) & valid
        if exclude_identical:
            s_mask &= ids[:, None] != ids[None, :]
    else:
        s_mask = np.zeros((k, k), dtype=bool)

    w_mask = np.zeros((k, k), dtype=bool)
    if use_confusion:
        for i in np.flatnonzero(real):
            members = conf_indices[conf_indptr[ids[i]]:conf_indptr[ids[i] + 1]]
            if members.size:
                w_mask[i] = np.isin(ids, members)
        w_mask &= valid
    return s_mask, w_mask


def rcl_rows(sim, s_mask, w_mask, tau):
    sim = np.asarray(sim, dtype=np.float64)
    k = sim.shape[0]
    n_s = s_mask.sum(axis=1)
    n_w = w_mask.sum(axis=1)
    l_p = np.zeros(k)
    l_c = np.zeros(k)
    grad = np.zeros((k, k))
    rows = np.flatnonzero((n_s > 0) | (n_w > 0))
    if rows.size == 0:
        return l_p, l_c, grad

    z = sim[rows] / tau
    z[np.arange(rows.size), rows] = -np.inf
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    tot = e.sum(axis=1, keepdims=True)
    lse = (m + np.log(tot))[:, 0]
    prob = e / tot

    s, w = s_mask[rows], w_mask[rows]
    ns, nw = n_s[rows], n_w[rows]
    has_s, has_w = ns > 0, nw > 0
    ns_safe, nw_safe = np.maximum(ns, 1), np.maximum(nw, 1)
    zs = np.where(s, z, 0.0).sum(axis=1)
    zw = np.where(w, z, 0.0).sum(axis=1)
    l_p[rows] = np.where(has_s, lse - zs / ns_safe, 0.0)
    l_c[rows] = np.where(has_w, lse - zw / nw_safe, 0.0)

    coef = has_s.astype(float) + has_w.astype(float)
    g = coef[:, None] * prob - s / ns_safe[:, None] - w / nw_safe[:, None]
    grad[rows] = g / tau
    return l_p, l_c, grad
