"""Pure numpy versions of the compiled kernels.

Same accumulation order as ``_kernels.pyx``: one rank-1 update per inner
index, ascending. Slower, but bit-identical.
"""
import numpy as np


def matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise ValueError("inner dimensions differ")
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += a[:, k, None] * b[k]
    return out


def matmul_tn(a, b):
    if a.shape[0] != b.shape[0]:
        raise ValueError("row counts differ")
    out = np.zeros((a.shape[1], b.shape[1]))
    for k in range(a.shape[0]):
        out += a[k, :, None] * b[k]
    return out


def relu_inplace(x):
    x[~(x > 0.0)] = 0.0
