# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled row-wise hot kernels: top-k selection, masked softmax, row
gather/scatter. Contracts mirror ``_pykernels.py``."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def topk_mask(double[:, ::1] logits, Py_ssize_t k):
    """Boolean mask of the k largest entries per row, ties to the lowest index."""
    cdef Py_ssize_t d = logits.shape[0]
    cdef Py_ssize_t n = logits.shape[1]
    if k > n:
        k = n
    out = np.zeros((d, n), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] mask = out
    cdef double[::1] scratch = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t r, c, pick, best
    cdef double best_val
    for r in range(d):
        for c in range(n):
            scratch[c] = logits[r, c]
        for pick in range(k):
            best = 0
            best_val = scratch[0]
            for c in range(1, n):
                # strict > keeps the first (lowest-index) maximum on ties
                if scratch[c] > best_val:
                    best_val = scratch[c]
                    best = c
            mask[r, best] = 1
            scratch[best] = -np.inf
    return out


def masked_softmax_fwd(double[:, ::1] logits, cnp.uint8_t[:, ::1] mask):
    """Row softmax over mask==1 entries, max-subtracted; exact zeros elsewhere."""
    cdef Py_ssize_t d = logits.shape[0]
    cdef Py_ssize_t n = logits.shape[1]
    out = np.zeros((d, n), dtype=np.float64)
    cdef double[:, ::1] probs = out
    cdef Py_ssize_t r, c
    cdef double m, s
    cdef bint seen
    for r in range(d):
        seen = False
        m = 0.0
        for c in range(n):
            if mask[r, c]:
                if not seen or logits[r, c] > m:
                    m = logits[r, c]
                seen = True
        s = 0.0
        for c in range(n):
            if mask[r, c]:
                probs[r, c] = exp(logits[r, c] - m)
                s += probs[r, c]
        for c in range(n):
            if mask[r, c]:
                probs[r, c] /= s
    return out


def masked_softmax_bwd(double[:, ::1] probs, cnp.uint8_t[:, ::1] mask,
                       double[:, ::1] grad_out):
    """Gradient of masked_softmax_fwd w.r.t. the logits."""
    cdef Py_ssize_t d = probs.shape[0]
    cdef Py_ssize_t n = probs.shape[1]
    out = np.zeros((d, n), dtype=np.float64)
    cdef double[:, ::1] grad = out
    cdef Py_ssize_t r, c
    cdef double dot
    for r in range(d):
        dot = 0.0
        for c in range(n):
            dot += grad_out[r, c] * probs[r, c]
        for c in range(n):
            if mask[r, c]:
                grad[r, c] = probs[r, c] * (grad_out[r, c] - dot)
    return out


def gather_rows(double[:, ::1] src, cnp.intp_t[::1] rows):
    """Copy of src[rows]."""
    cdef Py_ssize_t d = rows.shape[0]
    cdef Py_ssize_t s = src.shape[1]
    out = np.empty((d, s), dtype=np.float64)
    cdef double[:, ::1] dst = out
    cdef Py_ssize_t i, c
    for i in range(d):
        for c in range(s):
            dst[i, c] = src[rows[i], c]
    return out


def scatter_add_rows(double[:, ::1] dst, cnp.intp_t[::1] rows,
                     double[:, ::1] src):
    """In-place dst[rows] += src."""
    cdef Py_ssize_t d = rows.shape[0]
    cdef Py_ssize_t s = dst.shape[1]
    cdef Py_ssize_t i, c
    for i in range(d):
        for c in range(s):
            dst[rows[i], c] += src[i, c]
