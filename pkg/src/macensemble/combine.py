"""Permutation-invariant combination of sub-model predictions.

A :class:`MacModel` maps every individual prediction through ``f`` into a
latent space, reduces the ensemble there with a size-agnostic reducer and
maps the result back with ``g``. Each class column is combined on its own
through the same ``f`` and ``g``.
"""
import csv
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, EmptyEnsembleError, ModelFormatError, ShapeError, VersionError
from .metric import clip_probabilities
from .mlp import Mlp, init_mlp

REDUCERS = ("mean", "weighted_mean", "median", "min", "max", "majority_vote")
CLOSED_FORMS = ("arithmetic", "geometric", "harmonic", "median", "min", "max")

MODEL_FORMAT_VERSION = 1
_MODEL_MAGIC = b"MACM"
_MODEL_PREFIX = struct.Struct("<4sHI")
_LEN = struct.Struct("<Q")


class AnalyticTransform:
    """Closed-form stand-in for ``f`` or ``g`` (identity, ln, exp, 1/x)."""

    _FUNCS = {
        "identity": lambda x: x.copy(),
        "ln": np.log,
        "exp": np.exp,
        "reciprocal": lambda x: 1.0 / x,
    }

    def __init__(self, name):
        if name not in self._FUNCS:
            raise ValueError(f"unknown analytic transform {name!r}")
        self.name = name
        self.input_dim = 1
        self.output_dim = 1

    def forward(self, x):
        return self._FUNCS[self.name](np.asarray(x, dtype=np.float64))

    def __repr__(self):
        return f"AnalyticTransform({self.name!r})"


_ANALYTIC_PAIRS = {
    "arithmetic": ("identity", "identity"),
    "geometric": ("ln", "exp"),
    "harmonic": ("reciprocal", "reciprocal"),
}


@dataclass
class MacModel:
    """Learned combiner: ``g(reduce({f(x_i)}))`` applied per class."""

    f: object
    g: object
    reducer: str = "mean"
    latent_dim: int = 1

    def __post_init__(self):
        if self.reducer not in REDUCERS:
            raise ValueError(f"reducer must be one of {REDUCERS}, got {self.reducer!r}")
        if self.f.output_dim != self.latent_dim or self.g.input_dim != self.latent_dim:
            raise ShapeError("f output and g input must both equal latent_dim",
                             (self.f.output_dim,), (self.latent_dim,), (self.g.input_dim,))
        if self.g.output_dim != self.f.input_dim:
            raise ShapeError("g must map back to the prediction space of f",
                             (self.g.output_dim,), (self.f.input_dim,))

    @classmethod
    def initialize(cls, seed=0, latent_dim=1, trunk=None, block=None, reducer="mean"):
        """Fresh ``f``/``g`` pair with independent seeded initialisations."""
        kw = {}
        if trunk is not None:
            kw["trunk"] = tuple(trunk)
        if block is not None:
            kw["block"] = block
        seeds = np.random.SeedSequence(seed).spawn(2)
        f = init_mlp(1, latent_dim, "none", seed=seeds[0], **kw)
        g = init_mlp(latent_dim, 1, "sigmoid", seed=seeds[1], **kw)
        return cls(f, g, reducer, latent_dim)

    @classmethod
    def analytic(cls, kind):
        """Closed-form special case: ``arithmetic``, ``geometric`` or ``harmonic``."""
        fname, gname = _ANALYTIC_PAIRS[kind]
        return cls(AnalyticTransform(fname), AnalyticTransform(gname), "mean", 1)

    def copy(self):
        return MacModel(self.f.copy(), self.g.copy(), self.reducer, self.latent_dim)

    def to_bytes(self):
        """Container: magic, version, JSON header, then length-prefixed f and g."""
        if not (isinstance(self.f, Mlp) and isinstance(self.g, Mlp)):
            raise TypeError("only network-backed models can be serialized")
        header = json.dumps({"reducer": self.reducer, "latent_dim": self.latent_dim},
                            sort_keys=True).encode()
        fb, gb = self.f.to_bytes(), self.g.to_bytes()
        return b"".join([
            _MODEL_PREFIX.pack(_MODEL_MAGIC, MODEL_FORMAT_VERSION, len(header)), header,
            _LEN.pack(len(fb)), fb, _LEN.pack(len(gb)), gb,
        ])

    @classmethod
    def from_bytes(cls, data):
        data = bytes(data)
        if len(data) < _MODEL_PREFIX.size:
            raise ModelFormatError("truncated model file (no prefix)")
        magic, version, hlen = _MODEL_PREFIX.unpack_from(data, 0)
        if magic != _MODEL_MAGIC:
            raise ModelFormatError(f"bad magic {magic!r}, not a MAC model file")
        if version != MODEL_FORMAT_VERSION:
            raise VersionError(f"unsupported model format version {version} "
                               f"(expected {MODEL_FORMAT_VERSION})")
        pos = _MODEL_PREFIX.size
        if pos + hlen > len(data):
            raise ModelFormatError(f"header length {hlen} overruns file of {len(data)} bytes")
        try:
            header = json.loads(data[pos:pos + hlen].decode())
        except ValueError as exc:
            raise ModelFormatError(f"invalid model header: {exc}") from exc
        pos += hlen
        nets = []
        for name in ("f", "g"):
            if pos + _LEN.size > len(data):
                raise ModelFormatError(f"truncated model file before network {name}")
            (n,) = _LEN.unpack_from(data, pos)
            pos += _LEN.size
            if pos + n > len(data):
                raise ModelFormatError(f"network {name} length {n} overruns file")
            nets.append(Mlp.from_bytes(data[pos:pos + n]))
            pos += n
        if pos != len(data):
            raise ModelFormatError(f"{len(data) - pos} trailing bytes after model")
        try:
            return cls(nets[0], nets[1], header["reducer"], header["latent_dim"])
        except (KeyError, ValueError) as exc:
            raise ModelFormatError(f"inconsistent model: {exc}") from exc

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _as_tensor(predictions):
    x = np.asarray(predictions, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError("prediction tensor must be samples x sub-models x classes", x.shape)
    if x.shape[1] == 0:
        raise EmptyEnsembleError("cannot combine an empty ensemble (N = 0)")
    bad = ~((x >= 0.0) & (x <= 1.0))
    if bad.any():
        idx = np.argwhere(bad)[0]
        raise DomainError("predictions must lie in [0, 1]", idx, float(x[tuple(idx)]))
    return x


def _as_matrix(predictions):
    x = np.asarray(predictions, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("predictions must be sub-models x classes", x.shape)
    return x


def reduce_latent(kind, z, weights=None, axis=1):
    """Collapse the sub-model ``axis`` of ``z`` with reducer ``kind``.

    ``median`` averages the two middle order statistics for even counts.
    ``majority_vote`` returns +1/-1 when a strict majority of members is
    positive/non-positive and 0 on a tie.
    """
    z = np.moveaxis(np.asarray(z, dtype=np.float64), axis, 0)
    n = z.shape[0]
    if n == 0:
        raise EmptyEnsembleError("cannot reduce an empty ensemble")
    if kind == "mean":
        # running mean: exact when all members are equal
        out = z[0].copy()
        for k in range(1, n):
            out += (z[k] - out) / (k + 1)
    elif kind == "weighted_mean":
        w = _check_weights(weights, n)
        out = np.tensordot(w, z, axes=(0, 0)) / w.sum()
    elif kind == "median":
        s = np.sort(z, axis=0)
        if n % 2:
            out = s[n // 2]
        else:
            out = (s[n // 2 - 1] + s[n // 2]) / 2.0
    elif kind == "min":
        out = z.min(axis=0)
    elif kind == "max":
        out = z.max(axis=0)
    elif kind == "majority_vote":
        out = np.sign((z > 0).sum(axis=0) - (z <= 0).sum(axis=0)).astype(np.float64)
    else:
        raise ValueError(f"unknown reducer {kind!r}")
    return out


def _check_weights(weights, n):
    if weights is None:
        raise ValueError("weighted_mean requires weights")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ShapeError("need one weight per sub-model", w.shape, (n,))
    if (w < 0).any():
        raise DomainError("weights must be nonnegative", (int(np.argmax(w < 0)),), float(w[w < 0][0]))
    if not w.sum() > 0:
        raise ValueError("weights must not all be zero")
    return w


def encode(model, x):
    """Apply ``f`` to every prediction of an ``(S, N, C)`` tensor -> ``(S, N, C, L)``."""
    s, n, c = x.shape
    z = model.f.forward(x.reshape(-1, 1))
    return z.reshape(s, n, c, model.latent_dim)


def decode(model, zbar):
    """Apply ``g`` to reduced latents ``(S, C, L)`` -> probabilities ``(S, C)``."""
    s, c, lat = zbar.shape
    return model.g.forward(zbar.reshape(-1, lat)).reshape(s, c)


def combine_batch(model, predictions, weights=None):
    """Combine an ``(S, N, C)`` tensor sample by sample -> ``(S, C)``."""
    x = _as_tensor(predictions)
    reducer = model.reducer if weights is None else "weighted_mean"
    zbar = reduce_latent(reducer, encode(model, x), weights)
    return decode(model, zbar)


def combine(model, predictions):
    """Combine one sample's ``(N, C)`` predictions into a length-``C`` vector."""
    return combine_batch(model, _as_matrix(predictions)[None])[0]


def combine_weighted(model, predictions, weights):
    """Weighted latent mean ``sum(w_i f(x_i)) / sum(w_i)`` followed by ``g``."""
    x = _as_matrix(predictions)
    return combine_batch(model, x[None], weights=weights)[0]


def combine_hierarchical(model, groups):
    """Combine each group, then combine the group outputs as new sub-models."""
    if len(groups) == 0:
        raise EmptyEnsembleError("no groups to combine")
    inner = []
    for i, group in enumerate(groups):
        group = _as_matrix(group)
        if group.shape[0] == 0:
            raise EmptyEnsembleError(f"group {i} is empty")
        inner.append(combine(model, group))
    return combine(model, np.stack(inner))


def combine_hierarchical_batch(model, tensors):
    """Batched version over ``(S, N_j, C)`` group tensors."""
    if len(tensors) == 0:
        raise EmptyEnsembleError("no groups to combine")
    inner = [combine_batch(model, t) for t in tensors]
    return combine_batch(model, np.stack(inner, axis=1))


def closed_form_batch(kind, predictions):
    """Closed-form mean of an ``(S, N, C)`` tensor over sub-models -> ``(S, C)``."""
    x = _as_tensor(predictions)
    n = x.shape[1]
    if kind == "arithmetic":
        return np.add.reduce(x, axis=1) / n
    if kind == "geometric":
        return np.exp(np.add.reduce(np.log(clip_probabilities(x)), axis=1) / n)
    if kind == "harmonic":
        return n / np.add.reduce(1.0 / clip_probabilities(x), axis=1)
    if kind in ("median", "min", "max"):
        return reduce_latent(kind, x, axis=1)
    raise ValueError(f"unknown closed-form combiner {kind!r}; have {CLOSED_FORMS}")


def combine_closed_form(kind, predictions):
    return closed_form_batch(kind, _as_matrix(predictions)[None])[0]


@dataclass
class FunctionTrace:
    """Sampled curves of ``f``, ``g`` and ``g o f`` (first latent component)."""

    inputs: np.ndarray
    f_values: np.ndarray
    latents: np.ndarray
    g_values: np.ndarray
    gf_values: np.ndarray = field(repr=False)

    def rows(self):
        for x, y in zip(self.inputs, self.f_values):
            yield "f", float(x), float(y)
        for x, y in zip(self.latents, self.g_values):
            yield "g", float(x), float(y)
        for x, y in zip(self.inputs, self.gf_values):
            yield "g_of_f", float(x), float(y)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["curve", "input", "output"])
        for curve, x, y in self.rows():
            w.writerow([curve, repr(x), repr(y)])
        return buf.getvalue()

    def f_increasing_fraction(self):
        """Share of adjacent input-grid pairs on which ``f`` increases."""
        if len(self.f_values) < 2:
            return float("nan")
        return float(np.mean(np.diff(self.f_values) > 0))

    def identity_gap(self, lo=0.05, hi=0.95):
        """Max ``|g(f(x)) - x|`` over grid points in ``[lo, hi]``."""
        m = (self.inputs >= lo) & (self.inputs <= hi)
        if not m.any():
            return float("nan")
        return float(np.max(np.abs(self.gf_values[m] - self.inputs[m])))

    def identity_crossings(self, lo=0.05, hi=0.95):
        """Number of sign changes of ``g(f(x)) - x`` over ``[lo, hi]``."""
        m = (self.inputs >= lo) & (self.inputs <= hi)
        d = np.sign(self.gf_values[m] - self.inputs[m])
        d = d[d != 0]
        return int(np.count_nonzero(np.diff(d)))

    def summary(self):
        return {
            "f_increasing_fraction": self.f_increasing_fraction(),
            "identity_gap_05_95": self.identity_gap(),
            "identity_crossings_05_95": self.identity_crossings(),
        }


def trace_functions(model, input_points=None, latent_points=None, grid=101):
    """Evaluate ``f`` on an input grid, ``g`` on a latent grid and ``g o f``.

    Defaults: ``grid`` evenly spaced inputs on ``[0, 1]`` and the same number
    of latent points spanning the range ``f`` attains on those inputs.
    """
    if input_points is None:
        if grid < 1:
            raise ValueError("grid must contain at least one point")
        input_points = np.linspace(0.0, 1.0, grid) if grid > 1 else np.array([0.5])
    xs = np.asarray(input_points, dtype=np.float64).ravel()
    if xs.size == 0:
        raise ValueError("input grid is empty")
    fx = model.f.forward(xs[:, None])
    if latent_points is None:
        lo, hi = float(fx[:, 0].min()), float(fx[:, 0].max())
        latent_points = np.linspace(lo, hi, xs.size) if xs.size > 1 else np.array([lo])
    zs = np.asarray(latent_points, dtype=np.float64).ravel()
    if zs.size == 0:
        raise ValueError("latent grid is empty")
    zin = np.zeros((zs.size, model.latent_dim))
    zin[:, 0] = zs
    gz = model.g.forward(zin)[:, 0]
    gf = model.g.forward(fx)[:, 0]
    return FunctionTrace(xs, fx[:, 0].copy(), zs, gz, gf)


__all__ = [
    "AnalyticTransform", "MacModel", "Mlp", "FunctionTrace", "REDUCERS", "CLOSED_FORMS",
    "combine", "combine_batch", "combine_weighted", "combine_hierarchical",
    "combine_hierarchical_batch", "combine_closed_form", "closed_form_batch",
    "reduce_latent", "trace_functions", "encode", "decode",
]
