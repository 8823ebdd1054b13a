import math

import numpy as np
import pytest

from helpers import central_difference, max_relative_error, scalar_adam
from macensemble.errors import ModelFormatError, ShapeError, VersionError
from macensemble.mlp import Adam, Mlp, init_mlp

SMALL = dict(trunk=(4, 5), block=6)


def small_net(head="none", seed=0, input_dim=1, output_dim=1):
    return init_mlp(input_dim, output_dim, head, seed=seed, **SMALL)


def reference_forward(net, x):
    """Straightforward re-implementation with numpy ``@``."""
    relu = lambda v: np.maximum(v, 0.0)
    p = net.params
    h = x
    n_trunk = len(net.trunk)
    for i in range(n_trunk + 1):
        h = relu(h @ p[2 * i] + p[2 * i + 1])
    u = h
    r = relu(u @ p[2 * n_trunk + 2] + p[2 * n_trunk + 3])
    r = relu(r @ p[2 * n_trunk + 4] + p[2 * n_trunk + 5])
    out = (u + r) @ p[-2] + p[-1]
    if net.head == "sigmoid":
        out = 1.0 / (1.0 + np.exp(-out))
    return out


def test_default_layout_widths():
    net = Mlp(1, 1)
    assert net.layer_dims() == [(1, 200), (200, 200), (200, 600), (600, 600), (600, 600), (600, 1)]
    assert net.n_params == sum(a * b + b for a, b in net.layer_dims())


@pytest.mark.parametrize("head", ["none", "sigmoid"])
def test_forward_matches_reference(head, backend, rng):
    net = init_mlp(2, 3, head, seed=3, **SMALL)
    for p in net.params[1::2]:
        p[:] = rng.standard_normal(p.shape) * 0.1
    x = rng.standard_normal((9, 2))
    np.testing.assert_allclose(net.forward(x), reference_forward(net, x), rtol=1e-12, atol=1e-14)


def test_skip_connection_is_active():
    net = small_net()
    # zeroing the residual block leaves only the skip path
    n_trunk = len(net.trunk)
    for i in (n_trunk + 1, n_trunk + 2):
        net.params[2 * i][:] = 0.0
        net.params[2 * i + 1][:] = 0.0
    x = np.linspace(0, 1, 5)[:, None]
    np.testing.assert_allclose(net.forward(x), reference_forward(net, x))
    assert np.ptp(net.forward(x)) > 0


@pytest.mark.parametrize("head", ["none", "sigmoid"])
def test_backward_matches_finite_differences(head, rng):
    net = init_mlp(2, 2, head, seed=11, **SMALL)
    for p in net.params[1::2]:
        p[:] = rng.standard_normal(p.shape) * 0.1
    x = rng.uniform(0, 1, (3, 2))
    up = rng.standard_normal((3, 2))
    loss = lambda: float(np.sum(net.forward(x) * up))
    grads, dx = net.backward(x, up)
    numeric = central_difference(loss, net.params)
    assert max_relative_error(grads, numeric) < 1e-4
    (ndx,) = central_difference(loss, [x])
    assert max_relative_error([dx], [ndx]) < 1e-4


def test_backward_without_input_grad(rng):
    net = small_net()
    x = rng.uniform(0, 1, (4, 1))
    grads, dx = net.backward(x, np.ones((4, 1)), input_grad=False)
    assert dx is None
    full, _ = net.backward(x, np.ones((4, 1)))
    for a, b in zip(grads, full):
        np.testing.assert_array_equal(a, b)


def test_backward_rejects_wrong_upstream():
    net = small_net()
    with pytest.raises(ShapeError):
        net.backward(np.zeros((3, 1)), np.zeros((2, 1)))


def test_forward_rejects_wrong_width():
    with pytest.raises(ShapeError):
        small_net().forward(np.zeros((3, 2)))


def test_init_is_he_uniform_and_seeded():
    net = init_mlp(1, 1, seed=5)
    again = init_mlp(1, 1, seed=5)
    other = init_mlp(1, 1, seed=6)
    for (fan_in, _), w, b in zip(net.layer_dims(), net.params[::2], net.params[1::2]):
        bound = math.sqrt(6.0 / fan_in)
        assert np.abs(w).max() <= bound
        assert not b.any()
        if w.size > 10000:
            assert w.std() == pytest.approx(math.sqrt(2.0 / fan_in), rel=0.02)
    assert all(np.array_equal(a, b) for a, b in zip(net.params, again.params))
    assert not np.array_equal(net.params[0], other.params[0])


def test_invalid_constructor_arguments():
    with pytest.raises(ValueError):
        Mlp(1, 1, head="softmax")
    with pytest.raises(ValueError):
        Mlp(0, 1)
    with pytest.raises(ShapeError):
        Mlp(1, 1, params=[np.zeros((1, 1))])


def test_serialization_round_trip_is_exact(rng):
    net = init_mlp(2, 3, "sigmoid", seed=9, **SMALL)
    data = net.to_bytes()
    back = Mlp.from_bytes(data)
    assert back.config() == net.config()
    assert all(np.array_equal(a, b) for a, b in zip(back.params, net.params))
    assert back.to_bytes() == data
    x = rng.uniform(0, 1, (4, 2))
    np.testing.assert_array_equal(back.forward(x), net.forward(x))


def test_deserialization_errors():
    data = small_net().to_bytes()
    with pytest.raises(ModelFormatError, match="truncated"):
        Mlp.from_bytes(data[:5])
    with pytest.raises(ModelFormatError, match="magic"):
        Mlp.from_bytes(b"XXXX" + data[4:])
    bumped = bytearray(data)
    bumped[4] = 99
    with pytest.raises(VersionError):
        Mlp.from_bytes(bytes(bumped))
    with pytest.raises(ModelFormatError, match="parameter bytes"):
        Mlp.from_bytes(data[:-8])
    with pytest.raises(ModelFormatError):
        Mlp.from_bytes(data + b"\0" * 8)


def test_copy_is_independent():
    net = small_net()
    twin = net.copy()
    twin.params[0][:] += 1.0
    assert not np.array_equal(net.params[0], twin.params[0])


def test_adam_matches_scalar_oracle(rng):
    params = [rng.standard_normal((2, 3)), rng.standard_normal(3)]
    ref = [p.copy() for p in params]
    ms = [np.zeros_like(p) for p in params]
    vs = [np.zeros_like(p) for p in params]
    opt = Adam(params, lr=0.01)
    for t in range(1, 6):
        grads = [rng.standard_normal(p.shape) for p in params]
        opt.step(params, grads)
        for p, g, m, v in zip(ref, grads, ms, vs):
            for idx in np.ndindex(p.shape):
                p[idx], m[idx], v[idx] = scalar_adam(p[idx], g[idx], m[idx], v[idx], t, lr=0.01)
        for a, b in zip(params, ref):
            np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-15)
    assert opt.step_count == 5


def test_adam_first_step_moves_by_lr():
    p = [np.array([1.0, -2.0])]
    Adam(p, lr=0.1).step(p, [np.array([3.0, -0.5])])
    np.testing.assert_allclose(p[0], [0.9, -1.9], rtol=1e-6)


def test_adam_rejects_mismatched_gradients():
    p = [np.zeros(3)]
    opt = Adam(p)
    with pytest.raises(ShapeError):
        opt.step(p, [np.zeros(4)])
    with pytest.raises(ShapeError):
        opt.step(p, [])
