"""Feedforward network with exact input Jacobians and a scalar linear head.

The network is a plain list of dense layers.  Besides the usual value
forward pass it exposes the input Jacobian in closed form (chained
diag(activation')(a) @ W products) and a backward pass that accepts
cotangents for both the value and the Jacobian.  The Jacobian cotangent
requires differentiating through the activation derivative, i.e. the
second derivative of softplus shows up; that path is implemented exactly
and checked against finite differences in the tests.
"""

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("softplus", "identity")


def _softplus(a):
    return np.logaddexp(0.0, a)


def _sigmoid(a):
    return np.exp(-np.logaddexp(0.0, -a))


def _act(a, kind):
    if kind == "softplus":
        d = _sigmoid(a)
        return _softplus(a), d, d * (1.0 - d)
    if kind == "identity":
        return a.copy(), np.ones_like(a), np.zeros_like(a)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class Layer:
    """Dense layer y' = g(W y + b)."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ValueError("weight/bias row mismatch")


@dataclass
class Network:
    """Ordered dense layers; consecutive dimensions must chain."""

    layers: list

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.weight.shape[1] != prev.weight.shape[0]:
                raise ValueError("layer dimensions do not chain")

    @property
    def input_dim(self):
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self):
        return self.layers[-1].weight.shape[0]

    @property
    def sizes(self):
        return [self.input_dim] + [l.weight.shape[0] for l in self.layers]

    def copy(self):
        return Network([Layer(l.weight.copy(), l.bias.copy(), l.activation)
                        for l in self.layers])

    def is_standard_head(self):
        """True for the [n -> h -> h -> 1] softplus/softplus/identity shape
        handled by the fused kernels."""
        if len(self.layers) != 3 or self.output_dim != 1:
            return False
        acts = [l.activation for l in self.layers]
        return acts == ["softplus", "softplus", "identity"]

    def kernel_weights(self):
        """Flat weight views for the fused three-layer kernels."""
        l1, l2, l3 = self.layers
        return (l1.weight, l1.bias, l2.weight, l2.bias,
                l3.weight[0], float(l3.bias[0]))


@dataclass
class ForwardCache:
    """Per-layer pre/post activations from one forward pass."""

    x: np.ndarray
    pre: list = field(default_factory=list)     # a_l = W y + b
    post: list = field(default_factory=list)    # y_l = g(a_l)
    dact: list = field(default_factory=list)    # g'(a_l)
    ddact: list = field(default_factory=list)   # g''(a_l)


def forward(net, x):
    """Evaluate the network; returns (output vector, cache)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (net.input_dim,):
        raise ValueError(f"input has shape {x.shape}, expected ({net.input_dim},)")
    cache = ForwardCache(x=x)
    y = x
    for layer in net.layers:
        a = layer.weight @ y + layer.bias
        y, d, dd = _act(a, layer.activation)
        cache.pre.append(a)
        cache.post.append(y)
        cache.dact.append(d)
        cache.ddact.append(dd)
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("network forward produced non-finite values")
    return y, cache


def forward_batch(net, xs):
    """Vectorised forward over rows of ``xs``; returns (B, output_dim)."""
    ys = np.asarray(xs, dtype=float)
    for layer in net.layers:
        a = ys @ layer.weight.T + layer.bias
        if layer.activation == "softplus":
            ys = _softplus(a)
        else:
            ys = a
    return ys


def input_jacobian(net, cache):
    """Exact d(output)/d(input) from a forward cache, shape (n_out, n_in)."""
    jac = None
    for layer, d in zip(net.layers, cache.dact):
        factor = d[:, None] * layer.weight
        jac = factor if jac is None else factor @ jac
    return jac


def backward(net, cache, d_value, d_jacobian=None):
    """Parameter gradients of d_value * output + <d_jacobian, input Jacobian>.

    Only scalar-output networks are supported (that is all the barrier
    needs).  ``d_jacobian`` may be None or zeros when the loss term uses the
    value alone.  Returns a list of (grad_weight, grad_bias) per layer.
    """
    if net.output_dim != 1:
        raise ValueError("backward supports scalar-output networks only")
    n_layers = len(net.layers)
    xs = [cache.x] + cache.post[:-1]           # layer inputs
    grads = [(np.zeros_like(l.weight), np.zeros_like(l.bias))
             for l in net.layers]

    if d_jacobian is None:
        d_jacobian = np.zeros(net.input_dim)
    d_jacobian = np.asarray(d_jacobian, dtype=float).reshape(net.input_dim)

    # prefix products q_l = J_{l-1} ... J_1 @ d_jacobian, suffix rows
    # p_l = row of J_L ... J_{l+1} (scalar head, so rows are vectors)
    q = [None] * n_layers
    vec = d_jacobian
    for l in range(n_layers):
        q[l] = vec
        vec = cache.dact[l] * (net.layers[l].weight @ vec)
    p = [None] * n_layers
    row = np.ones(1)
    for l in range(n_layers - 1, -1, -1):
        p[l] = row
        row = (row * cache.dact[l]) @ net.layers[l].weight

    e = np.asarray([float(d_value)])           # cotangent on the output y_L
    for l in range(n_layers - 1, -1, -1):
        layer = net.layers[l]
        c = cache.ddact[l] * p[l] * (layer.weight @ q[l])
        ca = cache.dact[l] * e + c
        gw, gb = grads[l]
        gw += np.outer(ca, xs[l]) + np.outer(p[l] * cache.dact[l], q[l])
        gb += ca
        e = layer.weight.T @ ca
    return grads


def init_network(seed, sizes, activations=None):
    """Deterministic init: uniform +-1/sqrt(fan_in) weights, zero biases.

    ``sizes`` lists [n_in, hidden..., n_out]; the default activation stack
    is softplus on every layer except an identity output head.
    """
    sizes = list(sizes)
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    if activations is None:
        activations = ["softplus"] * (len(sizes) - 2) + ["identity"]
    if len(activations) != len(sizes) - 1:
        raise ValueError("one activation per layer required")
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out, act in zip(sizes, sizes[1:], activations):
        bound = 1.0 / np.sqrt(n_in)
        w = rng.uniform(-bound, bound, size=(n_out, n_in))
        layers.append(Layer(w, np.zeros(n_out), act))
    return Network(layers)


class AdamState:
    """Adaptive-moment optimiser state for one network.

    Default moment decays 0.9/0.999 and epsilon 1e-8; the learning rate is
    the experiment-level knob.
    """

    def __init__(self, net, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [(np.zeros_like(l.weight), np.zeros_like(l.bias))
                  for l in net.layers]
        self.v = [(np.zeros_like(l.weight), np.zeros_like(l.bias))
                  for l in net.layers]


def adam_step(state, net, grads):
    """Apply one optimiser update in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for layer, (gw, gb), (mw, mb), (vw, vb) in zip(net.layers, grads,
                                                   state.m, state.v):
        for param, g, m, v in ((layer.weight, gw, mw, vw),
                               (layer.bias, gb, mb, vb)):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            param -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
