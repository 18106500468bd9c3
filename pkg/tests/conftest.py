import numpy as np
import pytest

from cbflearn import forward, init_network


def central_jacobian(fn, x, eps=1e-5):
    """Central finite-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fn(x))
    jac = np.empty((f0.size, x.size))
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = eps
        jac[:, i] = (np.atleast_1d(fn(x + step))
                     - np.atleast_1d(fn(x - step))) / (2 * eps)
    return jac


def fd_param_gradient(net, loss_fn, eps=1e-5, max_per_array=30, rng=None):
    """Central-difference gradient of loss_fn(net) for a parameter sample.

    Returns a list of (indices, grads) per parameter array in layer order
    (weight then bias per layer).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    out = []
    for layer in net.layers:
        for arr in (layer.weight, layer.bias):
            flat = arr.reshape(-1)
            count = min(max_per_array, flat.size)
            idxs = rng.choice(flat.size, size=count, replace=False)
            grads = np.empty(count)
            for k, idx in enumerate(idxs):
                old = flat[idx]
                flat[idx] = old + eps
                up = loss_fn(net)
                flat[idx] = old - eps
                down = loss_fn(net)
                flat[idx] = old
                grads[k] = (up - down) / (2 * eps)
            out.append((idxs, grads))
    return out


def rel_err(a, b, floor=1e-8):
    return abs(a - b) / max(floor, abs(a), abs(b))


@pytest.fixture
def small_net():
    return init_network(11, [2, 8, 8, 1])


@pytest.fixture
def bob_net():
    return init_network(13, [4, 8, 8, 1])
