# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled in-batch kernels. Same contract as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()

BACKEND = "cython"

cdef Py_ssize_t _RESERVED = 1


cdef inline bint _contains(const long long[::1] arr, Py_ssize_t lo, Py_ssize_t hi,
                           long long value) nogil:
    # arr[lo:hi] is sorted ascending
    cdef Py_ssize_t mid, end = hi
    while lo < hi:
        mid = (lo + hi) >> 1
        if arr[mid] < value:
            lo = mid + 1
        else:
            hi = mid
    return lo < end and arr[lo] == value


def mine_masks(ids, pinyin_ids, conf_indptr, conf_indices, bint use_pinyin,
               bint use_confusion, bint exclude_identical):
    cdef const long long[::1] cid = np.ascontiguousarray(ids, dtype=np.int64)
    cdef const long long[::1] pin = np.ascontiguousarray(pinyin_ids, dtype=np.int64)
    cdef const long long[::1] ptr = np.ascontiguousarray(conf_indptr, dtype=np.int64)
    cdef const long long[::1] idx = np.ascontiguousarray(conf_indices, dtype=np.int64)
    cdef Py_ssize_t k = cid.shape[0]
    s_arr = np.zeros((k, k), dtype=np.bool_)
    w_arr = np.zeros((k, k), dtype=np.bool_)
    cdef cnp.npy_bool[:, ::1] s = s_arr
    cdef cnp.npy_bool[:, ::1] w = w_arr
    cdef Py_ssize_t i, j, lo, hi
    cdef long long a, b, key

    with nogil:
        for i in range(k):
            a = cid[i]
            if a <= _RESERVED:
                continue
            key = pin[a]
            lo = ptr[a]
            hi = ptr[a + 1]
            for j in range(k):
                if j == i:
                    continue
                b = cid[j]
                if b <= _RESERVED:
                    continue
                if use_pinyin and key >= 0 and pin[b] == key:
                    if not (exclude_identical and a == b):
                        s[i, j] = 1
                if use_confusion and hi > lo and _contains(idx, lo, hi, b):
                    w[i, j] = 1
    return s_arr, w_arr


def rcl_rows(sim, s_mask, w_mask, double tau):
    cdef const double[:, ::1] z = np.ascontiguousarray(sim, dtype=np.float64)
    cdef const cnp.npy_bool[:, ::1] s = np.ascontiguousarray(s_mask, dtype=np.bool_)
    cdef const cnp.npy_bool[:, ::1] w = np.ascontiguousarray(w_mask, dtype=np.bool_)
    cdef Py_ssize_t k = z.shape[0]
    l_p_arr = np.zeros(k)
    l_c_arr = np.zeros(k)
    grad_arr = np.zeros((k, k))
    cdef double[::1] l_p = l_p_arr
    cdef double[::1] l_c = l_c_arr
    cdef double[:, ::1] g = grad_arr
    cdef Py_ssize_t i, j, ns, nw
    cdef double inv_tau = 1.0 / tau
    cdef double m, tot, lse, zs, zw, v, coef, p

    with nogil:
        for i in range(k):
            ns = 0
            nw = 0
            for j in range(k):
                ns += s[i, j]
                nw += w[i, j]
            if ns == 0 and nw == 0:
                continue
            m = -INFINITY
            for j in range(k):
                if j != i:
                    v = z[i, j] * inv_tau
                    if v > m:
                        m = v
            tot = 0.0
            zs = 0.0
            zw = 0.0
            for j in range(k):
                if j == i:
                    continue
                v = z[i, j] * inv_tau
                tot += exp(v - m)
                if s[i, j]:
                    zs += v
                if w[i, j]:
                    zw += v
            lse = m + log(tot)
            coef = 0.0
            if ns > 0:
                l_p[i] = lse - zs / ns
                coef += 1.0
            if nw > 0:
                l_c[i] = lse - zw / nw
                coef += 1.0
            for j in range(k):
                if j == i:
                    continue
                p = exp(z[i, j] * inv_tau - m) / tot
                v = coef * p
                if s[i, j]:
                    v -= 1.0 / ns
                if w[i, j]:
                    v -= 1.0 / nw
                g[i, j] = v * inv_tau
    return l_p_arr, l_c_arr, grad_arr
