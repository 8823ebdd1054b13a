"""Residual MLP used for the per-prediction transforms and their gradients.

Layout (widths shown for the default shape)::

    x -> dense 200, ReLU -> dense 200, ReLU          (trunk)
      -> dense 600, ReLU                             (projection, u)
      -> dense 600, ReLU -> dense 600, ReLU          (residual block, r)
      -> u + r                                       (skip)
      -> dense output_dim [-> sigmoid]               (head)

The projection layer exists so the 200-wide trunk can feed a 600-wide block
whose input and output are summed.
"""
import io
import json
import math
import struct

import numpy as np

from . import kernel
from .errors import ModelFormatError, ShapeError, VersionError

HEADS = ("none", "sigmoid")
DEFAULT_TRUNK = (200, 200)
DEFAULT_BLOCK = 600

FORMAT_VERSION = 1
_MAGIC = b"MLPN"
_PREFIX = struct.Struct("<4sHI")  # magic, version, header length
_COUNT = struct.Struct("<Q")


class Mlp:
    """Parameter container plus forward/backward passes.

    Parameters are held as a flat list ``[W0, b0, W1, b1, ...]`` in layer
    order (trunk..., proj, res0, res1, head). Weights have shape
    ``(fan_in, fan_out)`` and biases ``(fan_out,)``.
    """

    def __init__(self, input_dim, output_dim, head="none", trunk=DEFAULT_TRUNK,
                 block=DEFAULT_BLOCK, params=None):
        if head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {head!r}")
        trunk = tuple(int(w) for w in trunk)
        if input_dim < 1 or output_dim < 1 or block < 1 or not trunk or min(trunk) < 1:
            raise ValueError("all layer dimensions must be positive")
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self.head = head
        self.trunk = trunk
        self.block = int(block)
        if params is None:
            params = [np.zeros(s) for s in self.param_shapes()]
        self.params = [np.ascontiguousarray(p, dtype=np.float64) for p in params]
        shapes = [p.shape for p in self.params]
        if shapes != self.param_shapes():
            raise ShapeError("parameter shapes do not match the layout", *shapes)

    # -- layout -----------------------------------------------------------

    def layer_dims(self):
        """``(fan_in, fan_out)`` of each dense layer, in order."""
        dims = []
        prev = self.input_dim
        for w in self.trunk:
            dims.append((prev, w))
            prev = w
        dims.append((prev, self.block))
        dims.append((self.block, self.block))
        dims.append((self.block, self.block))
        dims.append((self.block, self.output_dim))
        return dims

    def param_shapes(self):
        shapes = []
        for fan_in, fan_out in self.layer_dims():
            shapes.append((fan_in, fan_out))
            shapes.append((fan_out,))
        return shapes

    @property
    def n_params(self):
        return sum(p.size for p in self.params)

    def copy(self):
        return Mlp(self.input_dim, self.output_dim, self.head, self.trunk, self.block,
                   [p.copy() for p in self.params])

    def config(self):
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "head": self.head,
            "trunk": list(self.trunk),
            "block": self.block,
        }

    # -- passes -----------------------------------------------------------

    def _check_input(self, x):
        x = kernel.as_matrix(x, "x")
        if x.shape[1] != self.input_dim:
            raise ShapeError(f"expected {self.input_dim} input columns", x.shape)
        return x

    def _dense(self, i, h):
        out = kernel.matmul(h, self.params[2 * i])
        out += self.params[2 * i + 1]
        return out

    def _forward(self, x):
        n_trunk = len(self.trunk)
        acts = [x]  # input of every dense layer, in order
        h = x
        for i in range(n_trunk + 1):
            h = self._dense(i, h)
            kernel._impl.relu_inplace(h)
            acts.append(h)
        u = h
        r = u
        for i in (n_trunk + 1, n_trunk + 2):
            r = self._dense(i, r)
            kernel._impl.relu_inplace(r)
            acts.append(r)
        s = u + r
        acts.append(s)
        out = self._dense(n_trunk + 3, s)
        if self.head == "sigmoid":
            out = kernel.sigmoid(out)
        return out, acts

    def forward(self, x):
        """Evaluate the network on a ``(batch, input_dim)`` matrix."""
        out, _ = self._forward(self._check_input(x))
        return out

    def forward_with_cache(self, x):
        """Forward pass that also returns the activations ``backward`` needs."""
        out, acts = self._forward(self._check_input(x))
        return out, (acts, out)

    def backward(self, x, upstream, cache=None, input_grad=True):
        """Reverse-mode gradients of ``sum(upstream * forward(x))``.

        Returns ``(grads, dx)`` where ``grads`` matches ``self.params``
        and ``dx`` is the gradient with respect to ``x`` (``None`` when
        ``input_grad`` is false). ReLU uses subgradient 0 at 0.
        """
        x = self._check_input(x)
        if cache is None:
            cache = self.forward_with_cache(x)[1]
        acts, out = cache
        upstream = kernel.as_matrix(upstream, "upstream")
        if upstream.shape != out.shape:
            raise ShapeError("upstream gradient must match the output", upstream.shape, out.shape)

        n_trunk = len(self.trunk)
        n_layers = n_trunk + 4
        grads = [None] * (2 * n_layers)

        def dense_back(i, layer_in, d_out, need_dx=True):
            grads[2 * i] = kernel.matmul_tn(layer_in, d_out)
            grads[2 * i + 1] = d_out.sum(axis=0)
            if not need_dx:
                return None
            return kernel.matmul(d_out, np.ascontiguousarray(self.params[2 * i].T))

        d = upstream
        if self.head == "sigmoid":
            d = d * (out * (1.0 - out))
        # acts: [x, trunk..., u, r1, r2, s]
        s = acts[-1]
        ds = dense_back(n_layers - 1, s, d)
        # residual block; the skip adds ds straight onto du
        r1, r2, u = acts[-3], acts[-2], acts[n_trunk + 1]
        dz = ds * (r2 > 0)
        dr1 = dense_back(n_trunk + 2, r1, dz)
        dz = dr1 * (r1 > 0)
        du = dense_back(n_trunk + 1, u, dz)
        du += ds
        # projection and trunk
        d = du
        for i in range(n_trunk, -1, -1):
            dz = d * (acts[i + 1] > 0)
            d = dense_back(i, acts[i], dz, need_dx=(i > 0 or input_grad))
        return grads, d

    # -- serialization ----------------------------------------------------

    def to_bytes(self):
        """Versioned binary container: header JSON + raw little-endian float64."""
        header = json.dumps(self.config(), sort_keys=True).encode()
        flat = np.concatenate([p.ravel() for p in self.params]).astype("<f8")
        buf = io.BytesIO()
        buf.write(_PREFIX.pack(_MAGIC, FORMAT_VERSION, len(header)))
        buf.write(header)
        buf.write(_COUNT.pack(flat.size))
        buf.write(flat.tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data):
        data = bytes(data)
        if len(data) < _PREFIX.size:
            raise ModelFormatError("truncated network payload (no prefix)")
        magic, version, header_len = _PREFIX.unpack_from(data, 0)
        if magic != _MAGIC:
            raise ModelFormatError(f"bad magic {magic!r}, not a network payload")
        if version != FORMAT_VERSION:
            raise VersionError(f"unsupported network format version {version} "
                               f"(expected {FORMAT_VERSION})")
        pos = _PREFIX.size
        if pos + header_len + _COUNT.size > len(data):
            raise ModelFormatError(f"header length {header_len} overruns payload of {len(data)} bytes")
        try:
            cfg = json.loads(data[pos:pos + header_len].decode())
            net = cls(cfg["input_dim"], cfg["output_dim"], cfg["head"], cfg["trunk"], cfg["block"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ModelFormatError(f"invalid network header: {exc}") from exc
        pos += header_len
        (count,) = _COUNT.unpack_from(data, pos)
        pos += _COUNT.size
        if count != net.n_params:
            raise ModelFormatError(f"parameter count {count} inconsistent with dims "
                                   f"(expected {net.n_params})")
        if len(data) - pos != 8 * count:
            raise ModelFormatError(f"expected {8 * count} parameter bytes, found {len(data) - pos}")
        flat = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
        params = []
        off = 0
        for shape in net.param_shapes():
            size = math.prod(shape)
            params.append(flat[off:off + size].reshape(shape).copy())
            off += size
        net.params = params
        return net

    def __repr__(self):
        return (f"Mlp(input_dim={self.input_dim}, output_dim={self.output_dim}, "
                f"head={self.head!r}, trunk={self.trunk}, block={self.block})")


def init_mlp(input_dim, output_dim, head="none", seed=0, trunk=DEFAULT_TRUNK, block=DEFAULT_BLOCK):
    """He-uniform weights (std ``sqrt(2/fan_in)``), zero biases, fixed by ``seed``."""
    net = Mlp(input_dim, output_dim, head, trunk, block)
    rng = np.random.default_rng(seed)
    params = []
    for fan_in, fan_out in net.layer_dims():
        bound = math.sqrt(6.0 / fan_in)
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    net.params = params
    return net


class Adam:
    """Adam with bias correction and a constant learning rate.

    ``step`` updates the parameter arrays in place.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def step(self, params, grads):
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ShapeError("Adam got a different number of tensors than it was built for")
        for p, g, m in zip(params, grads, self.m):
            if p.shape != m.shape or np.shape(g) != m.shape:
                raise ShapeError("Adam tensor shape mismatch", p.shape, np.shape(g), m.shape)
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** t
        corr2 = 1.0 - b2 ** t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            m_hat = m / corr1
            v_hat = v / corr2
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
