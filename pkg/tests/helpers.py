"""Oracles shared by several test modules."""
import numpy as np


def central_difference(fn, arrays, h=1e-5):
    """Numerical gradient of scalar ``fn()`` with respect to each array, perturbed in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up = fn()
            arr[idx] = orig - h
            down = fn()
            arr[idx] = orig
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-8):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a)
        n = np.asarray(n)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)) if a.size else 0.0)
    return worst


def scalar_adam(p, g, m, v, t, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam on a single float; returns (p, m, v)."""
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    return p - lr * m_hat / (v_hat ** 0.5 + eps), m, v


def hand_composed_step(model, x, y, weights, lr=1e-3):
    """Trainer step built from the public pieces with plain numpy glue.

    Returns the updated flat parameter list (the model is not modified).
    """
    from macensemble.metric import weighted_bce_grad

    f, g = model.f.copy(), model.g.copy()
    b, k, c = x.shape
    flat = x.reshape(-1, 1)
    z = f.forward(flat)
    zbar = z.reshape(b, k, c).mean(axis=1).reshape(-1, 1)
    p = g.forward(zbar).reshape(b, c)
    dp = weighted_bce_grad(p, y, weights)
    g_grads, dzbar = g.backward(zbar, dp.reshape(-1, 1))
    dz = np.repeat((dzbar.reshape(b, 1, c) / k), k, axis=1).reshape(-1, 1)
    f_grads, _ = f.backward(flat, dz)
    params = f.params + g.params
    grads = f_grads + g_grads
    out = []
    for prm, grd in zip(params, grads):
        new = np.empty_like(prm)
        for idx in np.ndindex(prm.shape):
            new[idx], _, _ = scalar_adam(float(prm[idx]), float(grd[idx]), 0.0, 0.0, 1, lr=lr)
        out.append(new)
    return out


ACCEPTANCE_LINES = []


def record(line):
    """Keep an acceptance verdict for the end-of-run summary."""
    ACCEPTANCE_LINES.append(line)
    print(line)


def reference_loss(model, x, y, weights, dtype=np.longdouble):
    """Mean-reducer MAC loss in extended precision, independent of the kernels.

    Finite differences of this function are free of the float64 round-off
    that swamps small gradients at ``h = 1e-5``.
    """
    params = [np.asarray(p, dtype=dtype) for p in model.f.params + model.g.params]
    nf = len(model.f.params)

    def net(ps, h, trunk, head):
        n_trunk = len(trunk)
        for i in range(n_trunk + 1):
            h = np.maximum(h @ ps[2 * i] + ps[2 * i + 1], 0)
        u = h
        r = np.maximum(u @ ps[2 * n_trunk + 2] + ps[2 * n_trunk + 3], 0)
        r = np.maximum(r @ ps[2 * n_trunk + 4] + ps[2 * n_trunk + 5], 0)
        out = (u + r) @ ps[-2] + ps[-1]
        return 1 / (1 + np.exp(-out)) if head == "sigmoid" else out

    b, k, c = x.shape
    z = net(params[:nf], np.asarray(x, dtype=dtype).reshape(-1, 1), model.f.trunk, "none")
    zbar = z.reshape(b, k, c, -1).sum(axis=1).reshape(b * c, -1) / k
    p = net(params[nf:], zbar, model.g.trunk, "sigmoid").reshape(b, c)
    eps = dtype(1e-7)
    p = np.clip(p, eps, 1 - eps)
    yl = np.asarray(y, dtype=dtype)
    w = np.asarray(weights.as_array(), dtype=dtype)
    per = -(yl * np.log(p) + (1 - yl) * np.log1p(-p))
    return (per @ w).mean()


def reference_gradient(model, x, y, weights, coords, h=1e-5):
    """Central differences of :func:`reference_loss` at ``[(tensor, index), ...]``."""
    params = model.f.params + model.g.params
    out = []
    for j, idx in coords:
        p = params[j]
        orig = p[idx]
        p[idx] = orig + h
        up = reference_loss(model, x, y, weights)
        p[idx] = orig - h
        down = reference_loss(model, x, y, weights)
        p[idx] = orig
        out.append(float((up - down) / (2 * h)))
    return np.array(out)
