"""Barrier functions, constraint sets, and boundary distances.

A learned barrier is the sum of an analytically constructed conservative
barrier and a network correction.  Constraint sets are stacked linear
coordinate bounds c(x) <= b, which covers both benchmarks: the integrator
velocity bound and the ball-on-beam angle/angular-rate bounds.  Boundary
distance functions are derived directly from the constraint rows: the
signed closest-margin (min) and farthest-margin (max).
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .network import forward, forward_batch, input_jacobian


class HandcraftedBarrier:
    """Closed-form barrier with an exact gradient."""

    def __init__(self, kind, value_fn, grad_fn, params):
        self.kind = kind
        self._value = value_fn
        self._grad = grad_fn
        self.params = dict(params)

    def value(self, x):
        return self._value(np.asarray(x, dtype=float))

    def gradient(self, x):
        return self._grad(np.asarray(x, dtype=float))

    def value_batch(self, xs):
        xs = np.asarray(xs, dtype=float)
        return np.array([self._value(row) for row in xs])

    def grad_batch(self, xs):
        xs = np.asarray(xs, dtype=float)
        return np.array([self._grad(row) for row in xs])


def make_hand_barrier(kind, **params):
    """Handcrafted barriers by id.

    ``integrator_vel``: cap - xdot (default cap 2.0; the true-constraint
    reference uses cap 3.0).
    ``ballbeam_angle``: -betadot + gamma0 * (beta_bar - beta).
    """
    if kind == "integrator_vel":
        cap = float(params.pop("cap", 2.0))
        if params:
            raise ValueError(f"unknown parameters {sorted(params)}")
        grad = np.array([0.0, -1.0])
        return HandcraftedBarrier(
            kind,
            lambda x: cap - x[1],
            lambda x: grad.copy(),
            {"cap": cap},
        )
    if kind == "ballbeam_angle":
        gamma0 = float(params.pop("gamma0", 1.0))
        beta_bar = float(params.pop("beta_bar", 0.5))
        if params:
            raise ValueError(f"unknown parameters {sorted(params)}")
        if gamma0 <= 0.0:
            raise ValueError("gamma0 must be positive")
        grad = np.array([0.0, -gamma0, 0.0, -1.0])
        return HandcraftedBarrier(
            kind,
            lambda x: -x[3] + gamma0 * (beta_bar - x[1]),
            lambda x: grad.copy(),
            {"gamma0": gamma0, "beta_bar": beta_bar},
        )
    raise ValueError(f"unknown handcrafted barrier {kind!r}")


class LearnedBarrier:
    """Handcrafted barrier plus scalar network correction.

    ``net`` may be None for the handcrafted-only case.  The fused kernels
    are used when the network has the standard three-layer shape.
    """

    def __init__(self, hand, net=None):
        self.hand = hand
        self.net = net
        self._fast = net is not None and net.is_standard_head()

    def value(self, x):
        x = np.asarray(x, dtype=float)
        base = self.hand.value(x)
        if self.net is None:
            return base
        if self._fast:
            v, _ = kernels.mlp3_value_jac(x, *self.net.kernel_weights())
            return base + v
        y, _ = forward(self.net, x)
        return base + float(y[0])

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        base = self.hand.gradient(x)
        if self.net is None:
            return base
        if self._fast:
            _, jac = kernels.mlp3_value_jac(x, *self.net.kernel_weights())
            return base + jac
        y, cache = forward(self.net, x)
        return base + input_jacobian(self.net, cache)[0]

    def value_and_gradient(self, x):
        x = np.asarray(x, dtype=float)
        base = self.hand.value(x)
        base_g = self.hand.gradient(x)
        if self.net is None:
            return base, base_g
        if self._fast:
            v, jac = kernels.mlp3_value_jac(x, *self.net.kernel_weights())
            return base + v, base_g + jac
        y, cache = forward(self.net, x)
        return base + float(y[0]), base_g + input_jacobian(self.net, cache)[0]

    def value_batch(self, xs):
        xs = np.asarray(xs, dtype=float)
        base = self.hand.value_batch(xs)
        if self.net is None:
            return base
        if self._fast:
            return base + kernels.mlp3_batch_value(xs, *self.net.kernel_weights())
        return base + forward_batch(self.net, xs)[:, 0]


class LinearClassK:
    """alpha(h) = gamma * h with gamma > 0."""

    def __init__(self, gamma):
        gamma = float(gamma)
        if gamma <= 0.0:
            raise ValueError("gamma must be positive")
        self.gamma = gamma

    def __call__(self, h):
        return self.gamma * h


@dataclass(frozen=True)
class LieDerivatives:
    """Directional derivatives of the barrier along drift and input maps."""

    lf: float
    lg: np.ndarray


def lie_derivatives(bar, system, x):
    """L_F h = grad h . F(x), L_G h = grad h . G(x)."""
    x = np.asarray(x, dtype=float)
    grad = bar.gradient(x)
    lf = float(grad @ system.drift(x))
    lg = grad @ system.influence(x)
    return LieDerivatives(lf, lg)


class ConstraintSet:
    """Stacked coordinate bounds sign * x[index] <= bound (c(x) <= b)."""

    def __init__(self, rows, labels=None):
        # rows: iterable of (state_index, sign, bound)
        self.rows = [(int(i), float(s), float(b)) for i, s, b in rows]
        if not self.rows:
            raise ValueError("need at least one constraint row")
        self.labels = tuple(labels) if labels else tuple(
            f"c{k}" for k in range(len(self.rows)))

    def margins(self, x):
        """c(x) - b, elementwise; safe iff all entries <= 0."""
        x = np.asarray(x, dtype=float)
        return np.array([s * x[i] - b for i, s, b in self.rows])

    def margins_batch(self, xs):
        xs = np.asarray(xs, dtype=float)
        out = np.empty((xs.shape[0], len(self.rows)))
        for k, (i, s, b) in enumerate(self.rows):
            out[:, k] = s * xs[:, i] - b
        return out

    def is_safe(self, x):
        return bool(np.all(self.margins(x) <= 0.0))

    def safe_mask(self, xs):
        return np.all(self.margins_batch(xs) <= 0.0, axis=1)

    def near_boundary(self, x, eps_c):
        """True iff max_i (c_i(x) - b_i) > -eps_c."""
        if eps_c <= 0.0:
            raise ValueError("eps_c must be positive")
        return bool(np.max(self.margins(x)) > -eps_c)


def integrator_constraints(vel_max=3.0):
    """Velocity bound xdot <= vel_max."""
    return ConstraintSet([(1, 1.0, vel_max)], labels=("xdot_max",))


def ballbeam_constraints(beta_max=0.75, betadot_min=-2.5):
    """Beam angle bound beta <= beta_max and rate bound betadot >= betadot_min."""
    return ConstraintSet(
        [(1, 1.0, beta_max), (3, -1.0, -betadot_min)],
        labels=("beta_max", "betadot_min"),
    )


class DistanceFunctions:
    """Signed distances to the constraint boundary, from the margin rows.

    d_plus is the closest boundary distance (min over -margins) and is
    nonnegative on safe states; d_minus is the farthest one (max over
    -margins) and is nonpositive where every constraint is violated.  With
    a single constraint row the two coincide.
    """

    def __init__(self, constraints):
        self.constraints = constraints

    def d_plus(self, x):
        return float(np.min(-self.constraints.margins(x)))

    def d_minus(self, x):
        return float(np.max(-self.constraints.margins(x)))

    def d_plus_batch(self, xs):
        return np.min(-self.constraints.margins_batch(xs), axis=1)

    def d_minus_batch(self, xs):
        return np.max(-self.constraints.margins_batch(xs), axis=1)
