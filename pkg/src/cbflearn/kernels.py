"""Hot numeric kernels.

Every function here is written so it runs identically as plain NumPy or
compiled with numba (see :mod:`cbflearn._backend`).  The kernels cover the
inner loops that dominate training time: the three-layer softplus network
(value, input Jacobian, batched loss gradients), the benchmark system
dynamics with classical RK4 stepping, and full closed-loop rollouts of the
barrier-filtered controller.

Shapes use float64 throughout.  Network weights are passed as the flat
tuple ``(w1, b1, w2, b2, w3, b3)`` with ``w3`` a 1-D vector and ``b3`` a
scalar (the output layer is a scalar linear head).
"""

import numpy as np

from ._backend import jit_kernel


# ---------------------------------------------------------------------------
# three-layer network: softplus, softplus, identity
# ---------------------------------------------------------------------------

@jit_kernel
def mlp3_value_jac(x, w1, b1, w2, b2, w3, b3):
    """Scalar network output and its exact input Jacobian at one point.

    Returns ``(value, jac)`` with ``jac`` of shape ``(n,)``.  The Jacobian
    is the chained per-layer product diag(sigmoid(a)) @ W, evaluated in
    closed form from the forward pre-activations.
    """
    a1 = np.dot(w1, x) + b1
    d1 = np.exp(-np.logaddexp(0.0, -a1))      # sigmoid = d softplus
    y1 = np.logaddexp(0.0, a1)                # softplus
    a2 = np.dot(w2, y1) + b2
    d2 = np.exp(-np.logaddexp(0.0, -a2))
    y2 = np.logaddexp(0.0, a2)
    value = np.dot(w3, y2) + b3
    r2 = d2 * w3
    r1 = d1 * np.dot(r2, w2)
    jac = np.dot(r1, w1)
    return value, jac


@jit_kernel
def mlp3_batch_value(xs, w1, b1, w2, b2, w3, b3):
    """Network values for a batch of inputs ``xs`` of shape ``(B, n)``."""
    a1 = np.dot(xs, w1.T) + b1
    y1 = np.logaddexp(0.0, a1)
    a2 = np.dot(y1, w2.T) + b2
    y2 = np.logaddexp(0.0, a2)
    return np.dot(y2, w3) + b3


@jit_kernel
def mlp3_loss_grad(w1, b1, w2, b2, w3, b3,
                   xs, fgu, hand_h, hand_g, dplus,
                   xd, hand_hd, dminus,
                   gamma, lam1, lam2):
    """Loss terms and parameter gradients for one minibatch.

    Safe batch (``xs`` of shape ``(B, n)``): hinge on the barrier value
    versus the boundary distance ``dplus``, hinge on the barrier-constraint
    slack (which needs the input Jacobian, hence the second-order terms
    through the softplus derivative), and the squared network correction.
    ``fgu`` holds the state derivative F(x) + G(x)u per sample.  Unsafe
    batch (``xd``): hinge pushing the barrier value below ``dminus``.

    Returns ``(gw1, gb1, gw2, gb2, gw3, gb3, l_h, l_d, l_grad, l_reg)``
    with the loss terms unweighted (the caller applies lam1/lam2 when
    totalling; the gradients already include them).
    """
    nb = xs.shape[0]
    inv_b = 1.0 / nb

    a1 = np.dot(xs, w1.T) + b1
    d1 = np.exp(-np.logaddexp(0.0, -a1))
    dd1 = d1 * (1.0 - d1)
    y1 = np.logaddexp(0.0, a1)
    a2 = np.dot(y1, w2.T) + b2
    d2 = np.exp(-np.logaddexp(0.0, -a2))
    dd2 = d2 * (1.0 - d2)
    y2 = np.logaddexp(0.0, a2)
    v = np.dot(y2, w3) + b3

    w3_row = w3.reshape(1, -1)
    r2 = d2 * w3_row                     # (B, h2)
    p1 = np.dot(r2, w2)                  # (B, h1)
    jn = np.dot(d1 * p1, w1)             # (B, n) network input Jacobians

    h = hand_h + v
    grad_rows = hand_g + jn
    s = np.sum(grad_rows * fgu, axis=1) + gamma * h

    ind_h = np.where(h < dplus, 1.0, 0.0)
    ind_g = np.where(s < 0.0, 1.0, 0.0)

    l_h = np.sum(np.maximum(0.0, dplus - h)) * inv_b
    l_grad = np.sum(np.maximum(0.0, -s)) * inv_b
    l_reg = np.sum(v * v) * inv_b

    dv = (-ind_h + lam2 * 2.0 * v - gamma * ind_g) * inv_b
    djac = (-ind_g * inv_b).reshape(-1, 1) * fgu   # (B, n)

    # backward through value and Jacobian paths
    t1 = np.dot(djac, w1.T)              # (B, h1)
    q2 = d1 * t1
    t2 = np.dot(q2, w2.T)                # (B, h2)
    c2 = dd2 * w3_row * t2
    c1 = dd1 * p1 * t1

    dv_col = dv.reshape(-1, 1)
    gw3 = np.dot(y2.T, dv) + np.sum(d2 * t2, axis=0)
    gb3 = np.sum(dv)
    ca2 = d2 * (dv_col * w3_row) + c2
    gw2 = np.dot(ca2.T, y1) + np.dot(r2.T, q2)
    gb2 = np.sum(ca2, axis=0)
    e1 = np.dot(ca2, w2)
    ca1 = d1 * e1 + c1
    gw1 = np.dot(ca1.T, xs) + np.dot((d1 * p1).T, djac)
    gb1 = np.sum(ca1, axis=0)

    # unsafe batch: value path only
    l_d = 0.0
    nd = xd.shape[0]
    if nd > 0:
        inv_d = 1.0 / nd
        a1d = np.dot(xd, w1.T) + b1
        d1d = np.exp(-np.logaddexp(0.0, -a1d))
        y1d = np.logaddexp(0.0, a1d)
        a2d = np.dot(y1d, w2.T) + b2
        d2d = np.exp(-np.logaddexp(0.0, -a2d))
        y2d = np.logaddexp(0.0, a2d)
        vd = np.dot(y2d, w3) + b3
        hd = hand_hd + vd
        ind_d = np.where(hd > dminus, 1.0, 0.0)
        l_d = np.sum(np.maximum(0.0, hd - dminus)) * inv_d
        dvd = lam1 * ind_d * inv_d
        gw3 = gw3 + np.dot(y2d.T, dvd)
        gb3 = gb3 + np.sum(dvd)
        ca2d = d2d * (dvd.reshape(-1, 1) * w3_row)
        gw2 = gw2 + np.dot(ca2d.T, y1d)
        gb2 = gb2 + np.sum(ca2d, axis=0)
        ca1d = d1d * np.dot(ca2d, w2)
        gw1 = gw1 + np.dot(ca1d.T, xd)
        gb1 = gb1 + np.sum(ca1d, axis=0)

    return gw1, gb1, gw2, gb2, gw3, gb3, l_h, l_d, l_grad, l_reg


# ---------------------------------------------------------------------------
# benchmark system dynamics
# ---------------------------------------------------------------------------

@jit_kernel
def deriv_integrator(x, u):
    """Double integrator: position/velocity state, acceleration input."""
    out = np.empty(2)
    out[0] = x[1]
    out[1] = u
    return out


@jit_kernel
def deriv_ballbeam(x, u, mb, grav, ib):
    """Ball-on-beam: state [r, beta, rdot, betadot], torque input."""
    r = x[0]
    beta = x[1]
    rdot = x[2]
    betadot = x[3]
    out = np.empty(4)
    out[0] = rdot
    out[1] = betadot
    out[2] = (5.0 / 7.0) * (r * betadot * betadot - grav * np.sin(beta))
    den = ib + mb * r * r
    out[3] = (u - 2.0 * mb * r * rdot * betadot - mb * grav * r * np.cos(beta)) / den
    return out


@jit_kernel
def rk4_integrator(x, u, dt):
    """Classical RK4 step with the input held constant (exact here)."""
    k1 = deriv_integrator(x, u)
    k2 = deriv_integrator(x + 0.5 * dt * k1, u)
    k3 = deriv_integrator(x + 0.5 * dt * k2, u)
    k4 = deriv_integrator(x + dt * k3, u)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@jit_kernel
def rk4_ballbeam(x, u, dt, mb, grav, ib):
    """Classical RK4 step for the ball-on-beam, zero-order-hold input."""
    k1 = deriv_ballbeam(x, u, mb, grav, ib)
    k2 = deriv_ballbeam(x + 0.5 * dt * k1, u, mb, grav, ib)
    k3 = deriv_ballbeam(x + 0.5 * dt * k2, u, mb, grav, ib)
    k4 = deriv_ballbeam(x + dt * k3, u, mb, grav, ib)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# ---------------------------------------------------------------------------
# closed-loop rollouts (model-based prediction inside the training loop)
# ---------------------------------------------------------------------------

_STATE_BOUND = 1.0e9


@jit_kernel
def rollout_filter_integrator(x0, steps, dt, k_gain, gamma, cap,
                              w1, b1, w2, b2, w3, b3, use_net):
    """Roll the barrier-filtered LQR forward on the integrator model.

    Returns ``(states, n_valid, qp_fail)``: ``states[:n_valid]`` are the
    valid rows (a non-finite blow-up truncates), ``qp_fail`` flags a step
    where the filter constraint was infeasible (vanishing input gain with
    a positive requirement).
    """
    states = np.empty((steps + 1, 2))
    states[0] = x0
    x = x0.copy()
    n_valid = steps + 1
    qp_fail = False
    for t in range(steps):
        u_ref = -(k_gain[0] * x[0] + k_gain[1] * x[1])
        if use_net:
            v, jac = mlp3_value_jac(x, w1, b1, w2, b2, w3, b3)
            h = cap - x[1] + v
            g0 = jac[0]
            g1 = -1.0 + jac[1]
        else:
            h = cap - x[1]
            g0 = 0.0
            g1 = -1.0
        lf = g0 * x[1]
        lg = g1
        rhs = -lf - gamma * h
        au = lg * u_ref
        if au >= rhs:
            u = u_ref
        elif lg * lg < 1.0e-24:
            if rhs <= 0.0:
                u = u_ref
            else:
                qp_fail = True
                n_valid = t + 1
                break
        else:
            u = u_ref + lg * (rhs - au) / (lg * lg)
        x = rk4_integrator(x, u, dt)
        if not (np.isfinite(x[0]) and np.isfinite(x[1])) \
                or abs(x[0]) > _STATE_BOUND or abs(x[1]) > _STATE_BOUND:
            n_valid = t + 1
            break
        states[t + 1] = x
    return states, n_valid, qp_fail


@jit_kernel
def rollout_filter_ballbeam(x0, steps, dt, k_gain, gamma, gamma0, beta_bar,
                            mb, grav, ib, w1, b1, w2, b2, w3, b3, use_net):
    """Roll the barrier-filtered LQR forward on the ball-on-beam model."""
    states = np.empty((steps + 1, 4))
    states[0] = x0
    x = x0.copy()
    n_valid = steps + 1
    qp_fail = False
    for t in range(steps):
        u_ref = -(k_gain[0] * x[0] + k_gain[1] * x[1]
                  + k_gain[2] * x[2] + k_gain[3] * x[3])
        if use_net:
            v, jac = mlp3_value_jac(x, w1, b1, w2, b2, w3, b3)
            h = -x[3] + gamma0 * (beta_bar - x[1]) + v
            g0 = jac[0]
            g1 = -gamma0 + jac[1]
            g2 = jac[2]
            g3 = -1.0 + jac[3]
        else:
            h = -x[3] + gamma0 * (beta_bar - x[1])
            g0 = 0.0
            g1 = -gamma0
            g2 = 0.0
            g3 = -1.0
        f = deriv_ballbeam(x, 0.0, mb, grav, ib)
        lf = g0 * f[0] + g1 * f[1] + g2 * f[2] + g3 * f[3]
        lg = g3 / (ib + mb * x[0] * x[0])
        rhs = -lf - gamma * h
        au = lg * u_ref
        if au >= rhs:
            u = u_ref
        elif lg * lg < 1.0e-24:
            if rhs <= 0.0:
                u = u_ref
            else:
                qp_fail = True
                n_valid = t + 1
                break
        else:
            u = u_ref + lg * (rhs - au) / (lg * lg)
        x = rk4_ballbeam(x, u, dt, mb, grav, ib)
        ok = True
        for j in range(4):
            if not np.isfinite(x[j]) or abs(x[j]) > _STATE_BOUND:
                ok = False
        if not ok:
            n_valid = t + 1
            break
        states[t + 1] = x
    return states, n_valid, qp_fail


@jit_kernel
def rollout_lqr_integrator(x0, steps, dt, k_gain):
    """Unfiltered LQR rollout on the integrator model."""
    states = np.empty((steps + 1, 2))
    states[0] = x0
    x = x0.copy()
    n_valid = steps + 1
    for t in range(steps):
        u = -(k_gain[0] * x[0] + k_gain[1] * x[1])
        x = rk4_integrator(x, u, dt)
        if not (np.isfinite(x[0]) and np.isfinite(x[1])) \
                or abs(x[0]) > _STATE_BOUND or abs(x[1]) > _STATE_BOUND:
            n_valid = t + 1
            break
        states[t + 1] = x
    return states, n_valid


@jit_kernel
def rollout_lqr_ballbeam(x0, steps, dt, k_gain, mb, grav, ib):
    """Unfiltered LQR rollout on the ball-on-beam model."""
    states = np.empty((steps + 1, 4))
    states[0] = x0
    x = x0.copy()
    n_valid = steps + 1
    for t in range(steps):
        u = -(k_gain[0] * x[0] + k_gain[1] * x[1]
              + k_gain[2] * x[2] + k_gain[3] * x[3])
        x = rk4_ballbeam(x, u, dt, mb, grav, ib)
        ok = True
        for j in range(4):
            if not np.isfinite(x[j]) or abs(x[j]) > _STATE_BOUND:
                ok = False
        if not ok:
            n_valid = t + 1
            break
        states[t + 1] = x
    return states, n_valid
