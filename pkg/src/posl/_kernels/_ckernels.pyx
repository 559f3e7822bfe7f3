# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled generator recursions.

Operation order matches ``_pykernels`` term by term so both backends agree
to the last bit on IEEE-754 hardware without fused multiply-add.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def arma_filter(double[::1] eps, double[:, ::1] ar, double[:, ::1] ma,
                long long[::1] regime, double[::1] level):
    cdef Py_ssize_t n = eps.shape[0]
    cdef Py_ssize_t p = ar.shape[1]
    cdef Py_ssize_t q = ma.shape[1]
    cdef Py_ssize_t t, j
    cdef long long r
    cdef double acc
    y_arr = np.empty(n)
    truth_arr = np.empty(n)
    dev_arr = np.zeros(n)
    cdef double[::1] y = y_arr
    cdef double[::1] truth = truth_arr
    cdef double[::1] dev = dev_arr
    for t in range(n):
        r = regime[t]
        acc = 0.0
        for j in range(1, p + 1):
            if t - j < 0:
                break
            acc = acc + ar[r, j - 1] * dev[t - j]
        for j in range(1, q + 1):
            if t - j < 0:
                break
            acc = acc + ma[r, j - 1] * eps[t - j]
        truth[t] = level[t] + acc
        dev[t] = acc + eps[t]
        y[t] = level[t] + dev[t]
    return y_arr, truth_arr


def mar_filter(double[::1] z, long long[::1] comp, double[:, ::1] ar,
               double[::1] sd, double[::1] probs, double[::1] level):
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t K = ar.shape[0]
    cdef Py_ssize_t p = ar.shape[1]
    cdef Py_ssize_t t, j, k
    cdef long long c
    cdef double acc, mix, own
    y_arr = np.empty(n)
    truth_arr = np.empty(n)
    dev_arr = np.zeros(n)
    cdef double[::1] y = y_arr
    cdef double[::1] truth = truth_arr
    cdef double[::1] dev = dev_arr
    for t in range(n):
        c = comp[t]
        mix = 0.0
        own = 0.0
        for k in range(K):
            acc = 0.0
            for j in range(1, p + 1):
                if t - j < 0:
                    break
                acc = acc + ar[k, j - 1] * dev[t - j]
            mix = mix + probs[k] * acc
            if k == c:
                own = acc
        truth[t] = level[t] + mix
        dev[t] = own + sd[c] * z[t]
        y[t] = level[t] + dev[t]
    return y_arr, truth_arr
