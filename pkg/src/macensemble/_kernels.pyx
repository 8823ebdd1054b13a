# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Fixed-order dense matrix products.

Every output element is accumulated as ``((0 + p0) + p1) + ... + p_{K-1}``
with the products taken in ascending ``k``. Vectorisation only runs across
output columns, so the result is independent of SIMD width and matches
``macensemble._fallback`` bit for bit.
"""
import numpy as np

cdef Py_ssize_t KBLOCK = 256


def matmul(const double[:, ::1] a, const double[:, ::1] b):
    """Return ``a @ b`` with left-to-right accumulation over the inner axis."""
    cdef Py_ssize_t n = a.shape[0], kk = a.shape[1], m = b.shape[1]
    if b.shape[0] != kk:
        raise ValueError("inner dimensions differ")
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] c = out
    cdef Py_ssize_t i, k, j, k0, k1
    cdef double aik
    with nogil:
        k0 = 0
        while k0 < kk:
            k1 = k0 + KBLOCK
            if k1 > kk:
                k1 = kk
            for i in range(n):
                for k in range(k0, k1):
                    aik = a[i, k]
                    for j in range(m):
                        c[i, j] = c[i, j] + aik * b[k, j]
            k0 = k1
    return out


def matmul_tn(const double[:, ::1] a, const double[:, ::1] b):
    """Return ``a.T @ b`` accumulating over the shared row axis in order."""
    cdef Py_ssize_t kk = a.shape[0], n = a.shape[1], m = b.shape[1]
    if b.shape[0] != kk:
        raise ValueError("row counts differ")
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] c = out
    cdef Py_ssize_t i, k, j
    cdef double aki
    with nogil:
        for k in range(kk):
            for i in range(n):
                aki = a[k, i]
                for j in range(m):
                    c[i, j] = c[i, j] + aki * b[k, j]
    return out


def relu_inplace(double[:, ::1] x):
    """Clamp negatives (and -0.0) to +0.0 in place."""
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    with nogil:
        for i in range(n):
            for j in range(m):
                if not x[i, j] > 0.0:
                    x[i, j] = 0.0
