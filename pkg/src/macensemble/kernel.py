"""Dense float64 matrix arithmetic used by every other module.

Matrices are plain 2-D, C-contiguous ``numpy.float64`` arrays. Products use
a fixed accumulation order so repeated runs are bit-identical. Two backends
provide the products: the compiled ``_kernels`` extension and a numpy
fallback with the same summation order. The compiled one is selected at
import when it is importable; set ``MACENSEMBLE_BACKEND=python`` to force
the fallback.
"""
import os

import numpy as np

from . import _fallback
from .errors import DomainError, ShapeError

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _fallback}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

_impl = _fallback
BACKEND = "python"


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    """Select the product backend (``"compiled"`` or ``"python"``)."""
    global _impl, BACKEND
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    _impl = _BACKENDS[name]
    BACKEND = name


def get_backend():
    return BACKEND


_requested = os.environ.get("MACENSEMBLE_BACKEND")
if _requested:
    set_backend(_requested)
elif _compiled is not None:
    set_backend("compiled")


def as_matrix(x, name="matrix"):
    """Coerce ``x`` to a 2-D C-contiguous float64 array."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D", arr.shape)
    return arr


def matmul(a, b):
    """Matrix product ``a @ b`` with fixed left-to-right accumulation."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul dimension mismatch", a.shape, b.shape)
    return _impl.matmul(a, b)


def matmul_tn(a, b):
    """``a.T @ b`` without materialising the transpose."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[0] != b.shape[0]:
        raise ShapeError("matmul_tn row mismatch", a.shape, b.shape)
    return _impl.matmul_tn(a, b)


def relu(x):
    out = np.array(x, dtype=np.float64, order="C", copy=True)
    _impl.relu_inplace(out)
    return out


def sigmoid(x):
    """Logistic function, evaluated separately on each sign so exp never overflows."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _first_bad(mask, x):
    idx = np.argwhere(mask)[0]
    return idx, float(x[tuple(idx)])


def _ln(a):
    bad = ~(a > 0)
    if bad.any():
        idx, val = _first_bad(bad, a)
        raise DomainError("ln requires strictly positive input", idx, val)
    return np.log(a)


def _reciprocal(a):
    bad = a == 0
    if bad.any():
        idx, val = _first_bad(bad, a)
        raise DomainError("reciprocal of zero", idx, val)
    return 1.0 / a


_UNARY = {
    "relu": relu,
    "sigmoid": sigmoid,
    "ln": _ln,
    "exp": np.exp,
    "reciprocal": _reciprocal,
}
_BINARY = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(op, a, b=None):
    """Apply a named elementwise operation.

    Unary ops: ``relu``, ``sigmoid``, ``ln``, ``exp``, ``reciprocal``.
    Binary ops (``b`` required, same shape): ``add``, ``sub``, ``mul``.
    """
    a = as_matrix(a, "a")
    if op in _BINARY:
        if b is None:
            raise ValueError(f"{op} needs two operands")
        b = as_matrix(b, "b")
        if a.shape != b.shape:
            raise ShapeError(f"{op} shape mismatch", a.shape, b.shape)
        return _BINARY[op](a, b)
    if op in _UNARY:
        if b is not None:
            raise ValueError(f"{op} takes one operand")
        return _UNARY[op](a)
    raise ValueError(f"unknown elementwise op {op!r}")
